"""Paired-seed ablation grid over fusion modes, memory training and T."""

from __future__ import annotations

import logging

import numpy as np

from .config import Config
from .data import Dataset
from .train import evaluate_model, train

log = logging.getLogger(__name__)

DEFAULT_CELLS: dict[str, dict] = {
    "trainable": {"fusion.mode": "trainable"},
    "fixed_r1": {"fusion.mode": "fixed:1"},
    "gat_only": {"fusion.mode": "gat_only"},
    "snn_only": {"fusion.mode": "snn_only"},
    "smu_off": {"fusion.mode": "trainable", "smu.trainable": False},
    "T20": {"fusion.mode": "trainable", "snn.T": 20},
}
METRICS = ["r1", "tr_r1", "ir_r1", "tr_r5", "ir_r5", "tr_r10", "ir_r10"]
FIELDS = ["cell", "seed", "changed_keys"] + METRICS


def run_cell(base: Config, overrides: dict, dataset: Dataset, seed: int,
             split: str = "test") -> dict:
    cfg = base.with_overrides(overrides)
    result = train(cfg, dataset, seed)
    ret = evaluate_model(result.model, dataset, split, seed)
    ret["r1"] = 0.5 * (ret["tr_r1"] + ret["ir_r1"])
    ret["changed_keys"] = ";".join(cfg.diff(base))
    return ret


def ablate(base: Config, dataset: Dataset, seeds, cells: dict | None = None,
           split: str = "test") -> list[dict]:
    """One row per (cell, seed) followed by mean and std rows per cell."""
    cells = cells or DEFAULT_CELLS
    rows = []
    for name, overrides in cells.items():
        per_seed = []
        for seed in seeds:
            r = run_cell(base, overrides, dataset, seed, split)
            r.update(cell=name, seed=seed)
            log.info("ablation %s seed %d: R@1 %.4f", name, seed, r["r1"])
            per_seed.append(r)
        rows.extend(per_seed)
        for stat, fn in (("mean", np.mean), ("std", lambda v: np.std(v, ddof=1))):
            agg = {"cell": name, "seed": stat,
                   "changed_keys": per_seed[0]["changed_keys"]}
            for m in METRICS:
                vals = [r[m] for r in per_seed]
                agg[m] = float(fn(vals)) if len(vals) > 1 or stat == "mean" else 0.0
            rows.append(agg)
    return rows


def cell_means(rows, metric: str = "r1") -> dict[str, float]:
    return {r["cell"]: float(r[metric]) for r in rows if r["seed"] == "mean"}


def directional_checks(rows) -> list[tuple[str, bool, str]]:
    """Orderings expected from the ablation grid, evaluated on seed means."""
    m = cell_means(rows)
    out = []

    def chain(label, names):
        if not all(n in m for n in names):
            return
        vals = [m[n] for n in names]
        ok = all(a >= b for a, b in zip(vals, vals[1:]))
        out.append((label, ok, " >= ".join(f"{n}={m[n]:.4f}" for n in names)))

    chain("fusion modes", ["trainable", "fixed_r1", "gat_only", "snn_only"])
    chain("with r vs without r", ["trainable", "fixed_r1"])
    chain("memory trained vs fixed", ["trainable", "smu_off"])
    if "trainable" in m and "T20" in m:
        gap = abs(m["trainable"] - m["T20"])
        out.append(("T=10 vs T=20 gap < 3 points", gap < 0.03,
                    f"|{m['trainable']:.4f} - {m['T20']:.4f}| = {gap:.4f}"))
    return out
