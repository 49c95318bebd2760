"""Spiked text learning: predict masked spike activations from text alone."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import DTYPE, ConfigurationError, Parameter, RngStream, sigmoid
from .spiking import SpikeRecord

LOG_EPS = 1e-12


@dataclass
class StlConfig:
    mask_prob: float = 0.05
    gamma: float = 2.0
    alpha: float = 0.25

    def __post_init__(self) -> None:
        if not 0.0 < self.mask_prob < 1.0:
            raise ConfigurationError("stl.mask_prob must lie in (0, 1)")
        if self.gamma < 0:
            raise ConfigurationError("stl.gamma must be >= 0")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigurationError("stl.alpha must lie in (0, 1]")


@dataclass
class StlTarget:
    Y: np.ndarray
    mask_positions: np.ndarray


def stl_mask(S: SpikeRecord, mask_prob: float, rng: RngStream):
    """Hide a random subset of (node, channel) counts and label them."""
    if not 0.0 < mask_prob < 1.0:
        raise ConfigurationError("mask_prob must lie in (0, 1)")
    sel = rng.uniform(S.counts.shape) < mask_prob
    masked = np.where(sel, 0.0, S.counts)
    Y = ((S.counts > 0) & sel).astype(DTYPE)
    return SpikeRecord(masked, S.T), StlTarget(Y, sel)


def focal_loss(logits, targets, gamma: float, alpha: float):
    """Mean focal loss; returns ``(loss, dlogits)``.

    With ``gamma=0`` and ``alpha=1`` this is plain binary cross-entropy.
    """
    z = np.asarray(logits, dtype=DTYPE)
    y = np.asarray(targets, dtype=DTYPE)
    if z.size == 0:
        return 0.0, np.zeros_like(z)
    sign = np.where(y > 0.5, 1.0, -1.0)
    pt = sigmoid(sign * z)
    logpt = np.log(np.maximum(pt, LOG_EPS))
    w = (1.0 - pt) ** gamma
    loss = float((-alpha * w * logpt).mean())
    # d/dpt of -(1-pt)^g log pt, then dpt/dz = +-pt(1-pt)
    if gamma == 0:
        dpt = -1.0 / np.maximum(pt, LOG_EPS)
    else:
        dpt = gamma * (1.0 - pt) ** (gamma - 1) * logpt - w / np.maximum(pt, LOG_EPS)
    dz = alpha * dpt * sign * pt * (1.0 - pt) / z.size
    return loss, dz


def stl_logits(text_vec, head: Parameter, n_nodes: int) -> np.ndarray:
    """Shared head: pooled text vector to per-channel logits, one row per node."""
    row = np.asarray(text_vec, dtype=DTYPE) @ head.value
    return np.broadcast_to(row, (n_nodes, row.shape[-1]))


def stl_step(text_vec, S: SpikeRecord, cfg: StlConfig, head: Parameter, rng: RngStream):
    """One STL evaluation for one item.

    Returns ``(loss, n_masked, dtext_vec)`` and accumulates the head gradient.
    """
    _, target = stl_mask(S, cfg.mask_prob, rng)
    sel = target.mask_positions
    n_masked = int(sel.sum())
    if n_masked == 0:
        return 0.0, 0, np.zeros_like(np.asarray(text_vec, dtype=DTYPE))
    logits = stl_logits(text_vec, head, S.counts.shape[0])
    loss, dz = focal_loss(logits[sel], target.Y[sel], cfg.gamma, cfg.alpha)
    dlog = np.zeros(S.counts.shape)
    dlog[sel] = dz
    drow = dlog.sum(axis=0)
    head.accumulate(np.outer(text_vec, drow))
    return loss, n_masked, head.value @ drow
