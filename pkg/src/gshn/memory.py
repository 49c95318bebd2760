"""Selectable semantic memory: spike counts pick and average memory columns."""

from __future__ import annotations

import numpy as np

from .numerics import DTYPE, ConfigurationError, DimensionError, Parameter, RngStream

COUNT_FLOOR = 1.0


class SemanticMemory:
    """``M`` of shape ``(d_model, capacity)``; column j is one basic semantic."""

    def __init__(self, M: Parameter) -> None:
        self.M = M

    @property
    def capacity(self) -> int:
        return self.M.shape[1]

    def parameters(self) -> list[Parameter]:
        return [self.M]


def smu_init(d_model: int, capacity: int, rng: RngStream) -> SemanticMemory:
    if d_model < 1 or capacity < 1:
        raise ConfigurationError("memory dimensions must be positive")
    M = rng.normal((d_model, capacity), 0.0, 1.0 / np.sqrt(d_model))
    return SemanticMemory(Parameter("smu.M", M))


def smu_readout(counts, mem: SemanticMemory):
    """Count-weighted mean of memory columns per node.

    Returns ``(E, denom)``; rows without spikes come out as exact zeros.
    """
    counts = np.asarray(counts, dtype=DTYPE)
    if counts.ndim != 2 or counts.shape[1] != mem.capacity:
        raise DimensionError(
            f"spike counts {counts.shape} do not match memory capacity {mem.capacity}")
    denom = np.maximum(counts.sum(axis=1, keepdims=True), COUNT_FLOOR)
    # normalize before the product so a single active channel returns its column bit-exactly
    return (counts / denom) @ mem.M.value.T, denom


def smu_readout_backward(dE, counts, denom, mem: SemanticMemory, frozen: bool = False):
    """Returns ``dcounts``; accumulates into ``M`` unless ``frozen``."""
    W = counts / denom
    if not frozen:
        mem.M.accumulate(dE.T @ W)
    dW = dE @ mem.M.value
    # d(c_j / max(sum c, 1)) only couples through the sum when it exceeds the floor
    active = (counts.sum(axis=1, keepdims=True) > COUNT_FLOOR)
    coupling = (dW * W).sum(axis=1, keepdims=True)
    return (dW - np.where(active, coupling, 0.0)) / denom
