"""Hybrid transmission: squeeze the GAT output into a gate and fuse branches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import DTYPE, ConfigurationError, DimensionError, Parameter, RngStream, sigmoid

MODES = ("trainable", "fixed", "gat_only", "snn_only")


@dataclass(frozen=True)
class FusionMode:
    kind: str = "trainable"
    value: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in MODES:
            raise ConfigurationError(f"unknown fusion mode {self.kind!r}")
        if self.kind == "fixed":
            if self.value is None or not 0.0 <= self.value <= 1.0:
                raise ConfigurationError("fixed r must lie in [0, 1]")

    @classmethod
    def parse(cls, text: str) -> "FusionMode":
        """Parse ``trainable``, ``fixed:<float>``, ``gat_only`` or ``snn_only``."""
        text = text.strip()
        if text.startswith("fixed"):
            _, _, v = text.partition(":")
            try:
                return cls("fixed", float(v))
            except ValueError:
                raise ConfigurationError(f"bad fixed ratio in {text!r}") from None
        return cls(text)

    def __str__(self) -> str:
        return f"fixed:{self.value:g}" if self.kind == "fixed" else self.kind


class FusionParams:
    def __init__(self, d: int, rng: RngStream, mode: FusionMode | str = "trainable") -> None:
        self.W_fc = Parameter("fusion.W_fc", rng.normal((d, d), 0.0, 1.0 / np.sqrt(d)))
        self.mode = mode if isinstance(mode, FusionMode) else FusionMode.parse(mode)

    def parameters(self) -> list[Parameter]:
        return [self.W_fc]


def squeeze(F_gat, graph_id=None, n_graphs: int = 1) -> np.ndarray:
    """Mean over each graph's nodes; ``(n_graphs, d)``."""
    F_gat = np.asarray(F_gat, dtype=DTYPE)
    if graph_id is None:
        return F_gat.mean(axis=0, keepdims=True)
    sums = np.zeros((n_graphs, F_gat.shape[1]))
    np.add.at(sums, graph_id, F_gat)
    return sums / np.bincount(graph_id, minlength=n_graphs)[:, None]


def squeeze_ratio(F_gat, params: FusionParams, graph_id=None, n_graphs: int = 1):
    """Per-graph, per-channel information weight ratio in (0, 1)."""
    z = squeeze(F_gat, graph_id, n_graphs)
    return sigmoid(z @ params.W_fc.value), z


def fuse(F_gat, E_snn, r, mode: FusionMode | str, graph_id=None) -> np.ndarray:
    """Combine branches; ``r`` is ``(d,)`` or per-graph ``(n_graphs, d)``."""
    mode = mode if isinstance(mode, FusionMode) else FusionMode.parse(mode)
    F_gat = np.asarray(F_gat, dtype=DTYPE)
    E_snn = np.asarray(E_snn, dtype=DTYPE)
    if F_gat.shape != E_snn.shape:
        raise ConfigurationError(
            f"branch shapes differ: {F_gat.shape} vs {E_snn.shape}")
    if mode.kind == "gat_only":
        return F_gat.copy()
    if mode.kind == "snn_only":
        return E_snn.copy()
    return _rows(r, graph_id, F_gat.shape) * E_snn + F_gat


def _rows(r, graph_id, shape):
    r = np.asarray(r, dtype=DTYPE)
    if r.ndim == 1:
        if r.shape[0] != shape[1]:
            raise DimensionError(f"ratio of size {r.shape[0]} vs width {shape[1]}")
        return np.broadcast_to(r, shape)
    if graph_id is None:
        graph_id = np.zeros(shape[0], dtype=np.int64)
    return r[graph_id]


def hybrid_forward(F_gat, E_snn, params: FusionParams, graph_id, n_graphs: int):
    """Gate and fuse; returns ``(V', cache)`` honouring ``params.mode``."""
    mode = params.mode
    if mode.kind == "trainable":
        r, z = squeeze_ratio(F_gat, params, graph_id, n_graphs)
    elif mode.kind == "fixed":
        r, z = np.full((n_graphs, F_gat.shape[1]), mode.value), None
    else:
        r, z = np.zeros((n_graphs, F_gat.shape[1])), None
    V = fuse(F_gat, E_snn, r, mode, graph_id)
    return V, (r, z, E_snn, graph_id, n_graphs)


def hybrid_backward(dV, params: FusionParams, cache):
    """Returns ``(dF_gat, dE_snn)``; accumulates into ``W_fc``."""
    r, z, E_snn, graph_id, n_graphs = cache
    kind = params.mode.kind
    if kind == "gat_only":
        return dV, np.zeros_like(dV)
    if kind == "snn_only":
        return np.zeros_like(dV), dV
    dE = r[graph_id] * dV
    dF = dV
    if kind == "trainable":
        dr = np.zeros((n_graphs, dV.shape[1]))
        np.add.at(dr, graph_id, dV * E_snn)
        dpre = dr * r * (1.0 - r)
        params.W_fc.accumulate(z.T @ dpre)
        dz = dpre @ params.W_fc.value.T
        counts = np.bincount(graph_id, minlength=n_graphs)[:, None]
        dF = dF + (dz / counts)[graph_id]
    return dF, dE
