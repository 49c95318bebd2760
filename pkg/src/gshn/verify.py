"""Finite-difference verification of every parameterized block.

Each check builds a tiny problem (three-node scenes, T=4, width 8), wraps
the forward and backward passes in a closure and hands it to
:func:`gshn.numerics.gradcheck`.  Checks that route gradients through the
spiking layer run its relaxed dynamics, where the surrogate derivative is
the exact derivative, and use the looser tolerance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .graph import GatLayerParams, SceneGraph, gat_backward, gat_forward
from .memory import smu_init, smu_readout, smu_readout_backward
from .model import GSHN, ModelConfig
from .numerics import RngStream, gradcheck
from .fusion import FusionParams, hybrid_backward, hybrid_forward
from .spiking import LifConfig, SnnParams, encode_rates, run_snn, run_snn_backward
from .stl import StlConfig

SMOOTH_TOL = 1e-6
SPIKE_TOL = 1e-4
FIELDS = ["check", "parameter", "size", "max_rel_error", "max_abs_error",
          "grad_norm", "tolerance", "passed"]


@dataclass
class CheckRow:
    check: str
    parameter: str
    size: int
    max_rel_error: float
    max_abs_error: float
    grad_norm: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def as_dict(self) -> dict:
        return {f: getattr(self, f) for f in FIELDS}


def tiny_scenes(rng: RngStream, d: int = 4, n_nodes=(3, 2)) -> list[SceneGraph]:
    out = []
    for n in n_nodes:
        edges = [(i, j) for i in range(n) for j in range(n) if i != j][: 2 * n - 1]
        out.append(SceneGraph(rng.normal((n, d)), edges))
    return out


def tiny_model(seed: int, fusion_mode: str = "trainable", vocab_size: int = 10) -> GSHN:
    cfg = ModelConfig(d_in=4, d_model=8, gat_layers=2, capacity=6, T=4,
                      lif=LifConfig(), tdbn=True, fusion_mode=fusion_mode,
                      n_layers=1, n_heads=2, ffn_dim=8, max_text=6, seq_cap=16,
                      mlm_ratio=0.5, stl=StlConfig(mask_prob=0.5, gamma=2.0, alpha=0.25))
    model = GSHN(cfg, vocab_size, seed)
    # fresh heads are near zero; widen them so their gradients are informative
    r = RngStream(seed, 9)
    model.itm_head.value[:] = r.normal(model.itm_head.shape, 0.0, 0.5)
    model.stl_head.value[:] = r.normal(model.stl_head.shape, 0.0, 0.5)
    return model


def _rows(name, report, tol) -> list[CheckRow]:
    return [CheckRow(name, p, r["size"], r["max_rel_error"], r["max_abs_error"],
                     r["grad_norm"], tol) for p, r in report.items()]


def check_gat(seed: int) -> list[CheckRow]:
    rng = RngStream(seed, 11)
    g = tiny_scenes(rng)[0]
    layers = [GatLayerParams.init(4, 8, rng.child(1), "gat0"),
              GatLayerParams.init(8, 8, rng.child(2), "gat1")]
    U = rng.normal((g.n_nodes, 8))

    def f():
        F, caches = gat_forward(g, layers)
        gat_backward(U, g.edges, layers, caches)
        return float((U * F).sum())

    params = [p for layer in layers for p in layer.parameters()]
    return _rows("gat", gradcheck(f, params), SMOOTH_TOL)


def check_snn(seed: int) -> list[CheckRow]:
    rng = RngStream(seed, 12)
    snn = SnnParams(8, 6, rng.child(1), LifConfig(), tdbn=True)
    snn.gamma.value[:] = 1.0 + 0.3 * rng.normal(6)
    snn.beta.value[:] = 0.3 * rng.normal(6)
    F = rng.normal((3, 8))
    U = rng.normal((3, 6))

    def f():
        P, slope = encode_rates(F, 4, None, relaxed=True)
        rec, cache = run_snn(P, snn, relaxed=True)
        run_snn_backward(U, snn, cache)
        return float((U * rec.counts).sum())

    return _rows("snn", gradcheck(f, snn.parameters()), SPIKE_TOL)


def check_smu(seed: int) -> list[CheckRow]:
    rng = RngStream(seed, 13)
    mem = smu_init(8, 6, rng.child(1))
    counts = rng.integers(0, 5, (3, 6)).astype(float)
    counts[0, :] = 0.0
    counts[1, :] = 0.0
    counts[1, 2] = 1.0
    U = rng.normal((3, 8))

    def f():
        E, denom = smu_readout(counts, mem)
        smu_readout_backward(U, counts, denom, mem)
        return float((U * E).sum())

    return _rows("smu", gradcheck(f, mem.parameters()), SMOOTH_TOL)


def check_fusion(seed: int) -> list[CheckRow]:
    rng = RngStream(seed, 14)
    params = FusionParams(8, rng.child(1), "trainable")
    F = rng.normal((5, 8))
    E = rng.normal((5, 8))
    gid = np.array([0, 0, 0, 1, 1])
    U = rng.normal((5, 8))

    def f():
        V, cache = hybrid_forward(F, E, params, gid, 2)
        hybrid_backward(U, params, cache)
        return float((U * V).sum())

    return _rows("fusion", gradcheck(f, params.parameters()), SMOOTH_TOL)


def _full(name, seed, fusion_mode, tol, skip=()) -> list[CheckRow]:
    model = tiny_model(seed, fusion_mode)
    rng = RngStream(seed, 15)
    graphs = tiny_scenes(rng.child(1))
    captions = [[5, 7, 8, 9], [6, 9, 7]]

    def f():
        res = model.train_step(graphs, captions, rng.child(2), use_stl=True,
                               relaxed=True, update_stats=False)
        return res.total

    params = [p for p in model.parameters() if p.name not in skip]
    return _rows(name, gradcheck(f, params), tol)


def check_full_smooth(seed: int) -> list[CheckRow]:
    """Full objective with the spiking branch switched off by the fusion mode."""
    skip = ("snn.W", "snn.gamma", "snn.beta", "smu.M", "fusion.W_fc")
    return _full("full_gat_only", seed, "gat_only", SMOOTH_TOL, skip)


def check_full_spiking(seed: int) -> list[CheckRow]:
    """Full objective through the relaxed spiking branch."""
    return _full("full_hybrid", seed, "trainable", SPIKE_TOL)


CHECKS = [check_gat, check_snn, check_smu, check_fusion, check_full_smooth, check_full_spiking]


def gradcheck_suite(seed: int = 0) -> tuple[list[CheckRow], float]:
    """Run every check; returns the rows and the elapsed seconds."""
    t0 = time.perf_counter()
    rows = []
    for check in CHECKS:
        rows.extend(check(seed))
    return rows, time.perf_counter() - t0
