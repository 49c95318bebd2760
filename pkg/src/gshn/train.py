"""Training loop with the SNN freeze schedule, retrieval metrics and CSV output."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .batching import (
    assemble_stream,
    build_recall_index,
    itm_scorer,
    make_items,
    plan_epoch,
)
from .config import Config
from .data import Dataset
from .model import GSHN
from .numerics import ConfigurationError, RngStream
from .optim import SGD, AdamW

log = logging.getLogger(__name__)

METRIC_FIELDS = [
    "epoch", "phase", "loss_total", "loss_itm", "loss_mlm", "loss_cl", "loss_stl",
    "stl_empty_batches", "tr_r1", "tr_r5", "tr_r10", "ir_r1", "ir_r5", "ir_r10",
    "mean_firing_rate",
]
SPIKE_FIELDS = ["epoch", "mean_firing_rate", "sparsity", "spikes_per_node"]


@dataclass
class TrainResult:
    model: GSHN
    metrics: list[dict] = field(default_factory=list)
    spike_stats: list[dict] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)


def evaluate_retrieval(image_vecs, text_vecs, ks=(1, 5, 10), ids=None) -> dict:
    """Recall@K for image->text (tr) and text->image (ir) by cosine.

    Ties rank the lower id first.
    """
    a = np.asarray(image_vecs, dtype=float)
    b = np.asarray(text_vecs, dtype=float)
    N = a.shape[0]
    if N == 0:
        raise ConfigurationError("retrieval needs at least one pair")
    ids = np.arange(N) if ids is None else np.asarray(ids)
    a = a / np.maximum(np.linalg.norm(a, axis=1, keepdims=True), 1e-300)
    b = b / np.maximum(np.linalg.norm(b, axis=1, keepdims=True), 1e-300)
    sim = a @ b.T
    out = {}
    for tag, S in (("tr", sim), ("ir", sim.T)):
        diag = np.diag(S)[:, None]
        better = (S > diag) | ((S == diag) & (ids[None, :] < ids[:, None]))
        rank = better.sum(axis=1)
        for k in ks:
            out[f"{tag}_r{k}"] = float((rank < k).mean())
    return out


def make_optimizers(model: GSHN, cfg: Config):
    vis = SGD(model.visual_parameters(), cfg["opt.visual_lr"], cfg["opt.momentum"],
              cfg["opt.visual_wd"])
    if cfg["opt.text_optimizer"] == "adamw":
        txt = AdamW(model.text_parameters(), cfg["opt.text_lr"], cfg["opt.text_wd"])
    else:
        txt = SGD(model.text_parameters(), cfg["opt.text_lr"], cfg["opt.momentum"],
                  cfg["opt.text_wd"])
    return vis, txt


def split_items(dataset: Dataset, cfg: Config, split: str):
    recs = dataset.split(split)
    if split == "train" and cfg["train.max_items"] > 0:
        recs = recs[:cfg["train.max_items"]]
    return make_items(recs, dataset.vocab)


def train(cfg: Config, dataset: Dataset, seed: int, *, callback=None) -> TrainResult:
    """Run the full schedule; ``callback(epoch, model)`` fires after each epoch."""
    items = split_items(dataset, cfg, "train")
    eval_items = split_items(dataset, cfg, cfg["train.eval_split"])
    if not items:
        raise ConfigurationError("training split is empty")
    B = cfg["batch.size"]
    model = GSHN(cfg.model_config(), len(dataset.vocab), seed)
    vis_opt, txt_opt = make_optimizers(model, cfg)
    weights = cfg.loss_weights()
    snn_names = frozenset(p.name for p in model.snn_parameters())
    root = RngStream(seed, 2)
    result = TrainResult(model)
    index = None
    for epoch in range(1, cfg["train.epochs"] + 1):
        t0 = time.perf_counter()
        frozen = epoch <= cfg["train.freeze_epochs"]
        if index is None or (epoch - 1) % cfg["batch.refresh_every"] == 0:
            index = build_recall_index(model, items, seed)
        scorer = None
        if cfg["batch.similarity"] == "itm" and epoch > 1:
            scorer = itm_scorer(model, index, items, cfg["batch.shortlist"])
        batches = plan_epoch(index, items, B, root.child(1, epoch), scorer)
        sums = {"total": 0.0, "itm": 0.0, "mlm": 0.0, "cl": 0.0, "stl": 0.0}
        spikes = np.zeros(3)
        n_slots = 0
        stl_empty = 0
        for bi, batch in enumerate(batches):
            stream = assemble_stream(batch)
            model.zero_grad()
            res = model.train_step(stream.graphs, stream.caption_ids,
                                   root.child(2, epoch, bi), weights=weights,
                                   use_stl=not frozen)
            if frozen:
                for p in model.snn_parameters():
                    p.zero_grad()
            skip = snn_names if frozen else frozenset()
            vis_opt.step(skip)
            txt_opt.step(skip)
            sums["total"] += res.total
            for k, v in res.losses.items():
                sums[k] += v
            if not frozen and res.stl_masked == 0:
                stl_empty += 1
            c = res.spikes.counts
            spikes += (c.sum(), (c == 0).sum(), c.shape[0])
            n_slots += c.size
        nb = len(batches)
        enc = model.encode_items(eval_items, seed)
        ret = evaluate_retrieval(enc.image_vecs, enc.text_vecs,
                                 ids=[it.id for it in eval_items])
        T = cfg["snn.T"]
        rate = spikes[0] / (T * n_slots)
        row = {
            "epoch": epoch, "phase": "frozen" if frozen else "full",
            "loss_total": sums["total"] / nb, "loss_itm": sums["itm"] / nb,
            "loss_mlm": sums["mlm"] / nb, "loss_cl": sums["cl"] / nb,
            "loss_stl": sums["stl"] / nb, "stl_empty_batches": stl_empty,
            **ret, "mean_firing_rate": rate,
        }
        result.metrics.append(row)
        result.spike_stats.append({
            "epoch": epoch, "mean_firing_rate": rate,
            "sparsity": spikes[1] / n_slots, "spikes_per_node": spikes[0] / spikes[2],
        })
        result.seconds.append(time.perf_counter() - t0)
        log.info("epoch %d %s loss %.4f (itm %.3f mlm %.3f cl %.3f stl %.3f) "
                 "R@1 tr %.3f ir %.3f rate %.3f [%.1fs]", epoch, row["phase"],
                 row["loss_total"], row["loss_itm"], row["loss_mlm"], row["loss_cl"],
                 row["loss_stl"], row["tr_r1"], row["ir_r1"], rate, result.seconds[-1])
        if callback is not None:
            callback(epoch, model)
    return result


def evaluate_model(model: GSHN, dataset: Dataset, split: str, seed: int) -> dict:
    items = make_items(dataset.split(split), dataset.vocab)
    if not items:
        raise ConfigurationError(f"split {split!r} is empty")
    enc = model.encode_items(items, seed)
    return evaluate_retrieval(enc.image_vecs, enc.text_vecs, ids=[it.id for it in items])


def spike_stats(model: GSHN, dataset: Dataset, split: str, seed: int, epoch: int) -> dict:
    items = make_items(dataset.split(split), dataset.vocab)
    enc = model.encode_items(items, seed)
    counts = np.concatenate(enc.counts)
    return {
        "epoch": epoch,
        "mean_firing_rate": float(counts.sum() / (model.cfg.T * counts.size)),
        "sparsity": float((counts == 0).mean()),
        "spikes_per_node": float(counts.sum() / counts.shape[0]),
    }


def _cell(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_csv(path, rows, fields) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_cell(r[f]) for f in fields])


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_timing(path, seconds) -> None:
    Path(path).write_text("epoch,seconds\n" + "".join(
        f"{k},{s:.3f}\n" for k, s in enumerate(seconds, start=1)), encoding="utf-8")
