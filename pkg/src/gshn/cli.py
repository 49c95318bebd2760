"""Command-line entry point.

Every subcommand writes its artifacts under ``--out`` together with a
``manifest.json`` that lists them and records the config hash.  Exit codes:
0 on success, 1 on a usage error, 2 when the run itself fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ablation import DEFAULT_CELLS, FIELDS as ABLATION_FIELDS, ablate, directional_checks
from .batching import make_items
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import Config, load_config
from .data import DatasetParseError, generate_dataset, load_dataset, write_dataset
from .model import NonFiniteError
from .numerics import ConfigurationError
from .plotting import plot_ablation, plot_retrieval, plot_spike_counts, plot_training_curves
from .train import (
    METRIC_FIELDS,
    SPIKE_FIELDS,
    evaluate_model,
    spike_stats,
    train,
    write_csv,
    write_timing,
)
from .verify import FIELDS as GRADCHECK_FIELDS, gradcheck_suite

log = logging.getLogger("gshn")

RUNTIME_ERRORS = (ConfigurationError, DatasetParseError, CheckpointError, NonFiniteError,
                  OSError, KeyError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _write_manifest(out: Path, command: str, artifacts, cfg: Config | None, seed) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config_hash": cfg.digest() if cfg is not None else None,
        "artifacts": sorted(str(a) for a in artifacts) + ["manifest.json"],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def _config(args) -> Config:
    return load_config(args.config) if args.config else Config()


def _dataset(cfg: Config, path: str | None):
    path = path or cfg["data.path"]
    if path:
        return load_dataset(path)
    return generate_dataset(cfg["data.seed"], cfg["data.n_train"], cfg["data.n_val"],
                            cfg["data.n_test"], cfg["data.d"], cfg["data.noise_sigma"])


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate_data(args, out: Path) -> int:
    cfg = _config(args)
    seed = cfg["data.seed"] if args.seed is None else args.seed
    ds = generate_dataset(seed, cfg["data.n_train"], cfg["data.n_val"], cfg["data.n_test"],
                          cfg["data.d"], cfg["data.noise_sigma"])
    write_dataset(out / "dataset.jsonl", ds)
    ds.vocab.save(out / "vocab.txt")
    _write_manifest(out, "generate-data", ["dataset.jsonl", "vocab.txt"], cfg, seed)
    log.info("wrote %d records to %s", len(ds.records), out / "dataset.jsonl")
    return 0


def cmd_train(args, out: Path) -> int:
    cfg = load_config(args.config)
    seed = args.seed or 0
    ds = _dataset(cfg, args.data)
    result = train(cfg, ds, seed)
    epochs = cfg["train.epochs"]
    save_checkpoint(out / "checkpoint.gshn", result.model, cfg, seed, epochs, ds.vocab.tokens)
    ds.vocab.save(out / "vocab.txt")
    (out / "config.txt").write_text("\n".join(cfg.lines()) + "\n", encoding="utf-8")
    write_csv(out / "metrics.csv", result.metrics, METRIC_FIELDS)
    write_csv(out / "spike_stats.csv", result.spike_stats, SPIKE_FIELDS)
    write_timing(out / "timing.csv", result.seconds)
    plot_training_curves(result.metrics, out / "training_curves.png")
    _write_manifest(out, "train", ["checkpoint.gshn", "vocab.txt", "config.txt", "metrics.csv",
                                   "spike_stats.csv", "timing.csv", "training_curves.png"],
                    cfg, seed)
    return 0


def cmd_eval(args, out: Path) -> int:
    model, cfg, header = load_checkpoint(args.checkpoint)
    seed = header["seed"] if args.seed is None else args.seed
    ds = _dataset(cfg, args.data)
    if ds.vocab.tokens != header["vocab"]:
        raise ConfigurationError("dataset vocabulary does not match the checkpoint")
    ret = evaluate_model(model, ds, args.split, seed)
    fields = ["split"] + sorted(ret)
    write_csv(out / "retrieval.csv", [{"split": args.split, **ret}], fields)
    plot_retrieval(ret, out / "retrieval.png")
    _write_manifest(out, "eval", ["retrieval.csv", "retrieval.png"], cfg, seed)
    log.info("%s R@1 tr %.4f ir %.4f", args.split, ret["tr_r1"], ret["ir_r1"])
    return 0


def cmd_ablate(args, out: Path) -> int:
    cfg = _config(args)
    ds = _dataset(cfg, args.data)
    seeds = [int(s) for s in args.seeds.split(",")]
    names = args.cells.split(",") if args.cells else list(DEFAULT_CELLS)
    unknown = [n for n in names if n not in DEFAULT_CELLS]
    if unknown:
        raise UsageError(f"unknown ablation cells: {', '.join(unknown)}")
    rows = ablate(cfg, ds, seeds, {n: DEFAULT_CELLS[n] for n in names}, args.split)
    write_csv(out / "ablation.csv", rows, ABLATION_FIELDS)
    plot_ablation(rows, out / "ablation.png")
    checks = directional_checks(rows)
    write_csv(out / "ablation_checks.csv",
              [{"claim": c, "holds": ok, "detail": d} for c, ok, d in checks],
              ["claim", "holds", "detail"])
    for claim, ok, detail in checks:
        log.info("%s %s: %s", "HOLDS " if ok else "FAILS ", claim, detail)
    _write_manifest(out, "ablate", ["ablation.csv", "ablation.png", "ablation_checks.csv"],
                    cfg, seeds)
    return 0


def cmd_gradcheck(args, out: Path) -> int:
    seed = args.seed or 0
    rows, seconds = gradcheck_suite(seed)
    write_csv(out / "gradcheck.csv", [r.as_dict() for r in rows], GRADCHECK_FIELDS)
    _write_manifest(out, "gradcheck", ["gradcheck.csv"], None, seed)
    failed = [r for r in rows if not r.passed]
    worst = max(rows, key=lambda r: r.max_rel_error / r.tolerance)
    log.info("%d checks in %.1fs, %d failed; worst %s/%s rel err %.2e (tol %.0e)",
             len(rows), seconds, len(failed), worst.check, worst.parameter,
             worst.max_rel_error, worst.tolerance)
    return 0 if not failed else 2


def cmd_spike_stats(args, out: Path) -> int:
    model, cfg, header = load_checkpoint(args.checkpoint)
    seed = header["seed"] if args.seed is None else args.seed
    ds = _dataset(cfg, args.data)
    stats = spike_stats(model, ds, args.split, seed, header["epoch"])
    write_csv(out / "spike_stats.csv", [stats], SPIKE_FIELDS)
    enc = model.encode_items(make_items(ds.split(args.split), ds.vocab), seed)
    plot_spike_counts(np.concatenate(enc.counts), cfg["snn.T"], out / "spike_counts.png")
    _write_manifest(out, "spike-stats", ["spike_stats.csv", "spike_counts.png"], cfg, seed)
    log.info("firing rate %.4f, sparsity %.4f", stats["mean_firing_rate"], stats["sparsity"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gshn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gshn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_, config_required=False):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=config_required,
                       help="key=value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True, help="output directory")
        p.set_defaults(fn=fn)
        return p

    add("generate-data", cmd_generate_data, "write the synthetic scene/caption dataset")
    p = add("train", cmd_train, "train a model and write metrics", config_required=True)
    p.add_argument("--data", help="dataset JSONL (default: config data.path or regenerate)")
    for name, fn, help_ in (("eval", cmd_eval, "retrieval R@K from a checkpoint"),
                            ("spike-stats", cmd_spike_stats, "firing statistics of a checkpoint")):
        p = add(name, fn, help_)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data")
        p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p = add("ablate", cmd_ablate, "paired-seed ablation grid")
    p.add_argument("--data")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--cells", default="", help=f"comma list from {','.join(DEFAULT_CELLS)}")
    p.add_argument("--split", default="test", choices=["val", "test"])
    add("gradcheck", cmd_gradcheck, "finite-difference check of every gradient")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        return args.fn(args, out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gshn: error: {exc}", file=sys.stderr)
        return 1
    except RUNTIME_ERRORS as exc:
        print(f"gshn: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
