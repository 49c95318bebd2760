"""Discrete semantic encoder: rate coding, LIF dynamics and spike counting.

The forward pass emits binary spikes.  Backward uses the tanh surrogate
``ds/dU = (k/2) * (1 - tanh(k (U - v_th))**2)``, which is the exact
derivative of the relaxed spike ``(1 + tanh(k (U - v_th))) / 2``.  Running
with ``relaxed=True`` swaps in that relaxation and the expected input rate,
so the relaxed network is a smooth function whose true gradient equals the
surrogate gradient of the spiking one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import DTYPE, ConfigurationError, Parameter, RngStream, sigmoid

TDBN_EPS = 1e-5


@dataclass(frozen=True)
class LifConfig:
    v_threshold: float = 1.0
    v_rest: float = 0.0
    v_reset: float = 0.0
    decay: float = 0.5
    reset_mode: str = "hard"
    surrogate_scale: float = 2.0

    def __post_init__(self) -> None:
        if not self.v_threshold > self.v_rest:
            raise ConfigurationError("v_threshold must exceed v_rest")
        if not 0.0 < self.decay <= 1.0:
            raise ConfigurationError("decay must lie in (0, 1]")
        if self.surrogate_scale <= 0:
            raise ConfigurationError("surrogate_scale must be positive")
        if self.reset_mode not in ("hard", "soft"):
            raise ConfigurationError(f"unknown reset mode {self.reset_mode!r}")


@dataclass
class SpikeRecord:
    counts: np.ndarray
    T: int
    per_step: np.ndarray | None = None

    @property
    def mean_firing_rate(self) -> float:
        if self.counts.size == 0:
            return 0.0
        return float(self.counts.sum() / (self.T * self.counts.size))

    @property
    def sparsity(self) -> float:
        """Fraction of (node, channel) slots that never fired."""
        if self.counts.size == 0:
            return 1.0
        return float((self.counts == 0).mean())

    @property
    def spikes_per_node(self) -> float:
        return float(self.counts.sum() / max(self.counts.shape[0], 1))


def encode_bernoulli(F_gat, T: int, rng: RngStream) -> np.ndarray:
    """Binary ``(T, n, d)`` train; each step fires with p = sigmoid(F_gat)."""
    if T < 1:
        raise ConfigurationError("time window T must be >= 1")
    p = sigmoid(F_gat)
    return rng.bernoulli(np.broadcast_to(p, (T,) + p.shape))


# ---------------------------------------------------------------------------
# LIF neuron


def spike_fn(U_pre, cfg: LifConfig, relaxed: bool = False) -> np.ndarray:
    if relaxed:
        return 0.5 * (1.0 + np.tanh(cfg.surrogate_scale * (U_pre - cfg.v_threshold)))
    return (U_pre >= cfg.v_threshold).astype(DTYPE)


def surrogate_grad(U_pre, cfg: LifConfig) -> np.ndarray:
    k = cfg.surrogate_scale
    t = np.tanh(k * (U_pre - cfg.v_threshold))
    return 0.5 * k * (1.0 - t * t)


def surrogate_backward(U_pre, cfg: LifConfig, upstream) -> np.ndarray:
    return surrogate_grad(U_pre, cfg) * upstream


def _lif_step(U, inp, cfg: LifConfig, relaxed: bool):
    U_pre = cfg.decay * (U - cfg.v_rest) + cfg.v_rest + inp
    s = spike_fn(U_pre, cfg, relaxed)
    if cfg.reset_mode == "hard":
        U_next = U_pre * (1.0 - s) + cfg.v_reset * s
    else:
        U_next = U_pre - cfg.v_threshold * s
    return s, U_next, U_pre


def lif_step(U, inp, cfg: LifConfig, relaxed: bool = False):
    """One membrane update; returns ``(spikes, U_next)``."""
    U = np.asarray(U, dtype=DTYPE)
    inp = np.asarray(inp, dtype=DTYPE)
    if U.shape != inp.shape:
        raise ConfigurationError(f"membrane {U.shape} and input {inp.shape} differ")
    s, U_next, _ = _lif_step(U, inp, cfg, relaxed)
    return s, U_next


def _lif_step_backward(dU_next, ds, U_pre, s, cfg: LifConfig):
    """Returns ``(dU_prev, dinput)`` for one step."""
    surr = surrogate_grad(U_pre, cfg)
    if cfg.reset_mode == "hard":
        ds_total = ds + dU_next * (cfg.v_reset - U_pre)
        dU_pre = dU_next * (1.0 - s) + ds_total * surr
    else:
        dU_pre = dU_next + (ds - cfg.v_threshold * dU_next) * surr
    return cfg.decay * dU_pre, dU_pre


# ---------------------------------------------------------------------------
# threshold-dependent batch normalization


def tdbn_normalize(x, gamma, beta, v_threshold: float, eps: float = TDBN_EPS):
    """Normalize each channel over the (time x node) population.

    Returns ``(y, cache)`` with ``y = gamma * v_threshold * xhat + beta``.
    """
    x = np.asarray(x, dtype=DTYPE)
    axes = tuple(range(x.ndim - 1))
    mu = x.mean(axis=axes)
    var = x.var(axis=axes)
    # variance floor rather than an additive eps: exact unit variance for any
    # channel above the floor, damped output for (near) constant channels
    inv = 1.0 / np.sqrt(np.maximum(var, eps))
    xhat = (x - mu) * inv
    y = gamma * v_threshold * xhat + beta
    return y, (xhat, inv, mu, var, var > eps)


def tdbn_backward(dy, gamma, v_threshold: float, cache):
    xhat, inv, _, _, live = cache
    axes = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axis=axes) * v_threshold
    dbeta = dy.sum(axis=axes)
    dxhat = dy * (gamma * v_threshold)
    proj = np.where(live, (dxhat * xhat).mean(axis=axes), 0.0)
    dx = inv * (dxhat - dxhat.mean(axis=axes) - xhat * proj)
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# whole SNN


class SnnParams:
    """Trainable SNN parameters plus tdBN running statistics."""

    def __init__(self, d_in: int, d_out: int, rng: RngStream,
                 cfg: LifConfig | None = None, tdbn: bool = True,
                 stats_momentum: float = 0.1) -> None:
        self.cfg = cfg or LifConfig()
        self.tdbn = tdbn
        self.W = Parameter("snn.W", rng.normal((d_in, d_out), 0.0, 1.0 / np.sqrt(d_in)))
        self.gamma = Parameter("snn.gamma", np.ones(d_out))
        self.beta = Parameter("snn.beta", np.zeros(d_out))
        self.running_mean = np.zeros(d_out)
        self.running_var = np.ones(d_out)
        self.stats_momentum = stats_momentum

    def parameters(self) -> list[Parameter]:
        return [self.W, self.gamma, self.beta] if self.tdbn else [self.W]

    def buffers(self) -> dict[str, np.ndarray]:
        return {"snn.running_mean": self.running_mean,
                "snn.running_var": self.running_var}


def run_snn(P, snn: SnnParams, *, segments=None, relaxed: bool = False,
            training: bool = True, update_stats: bool = False,
            retain_steps: bool = False):
    """Drive input trains through the projection, tdBN and LIF layer.

    ``P`` is ``(T, N, d_in)``.  ``segments`` lists ``(start, stop)`` node
    ranges processed one after another; membrane state is kept per node
    slot and carried from one segment to the next, so a batch behaves as a
    continuous stream.  ``None`` means one segment holding every node.
    Returns ``(SpikeRecord, cache)``.
    """
    P = np.asarray(P, dtype=DTYPE)
    T, N, _ = P.shape
    cfg = snn.cfg
    I = P @ snn.W.value
    bn_cache = None
    if snn.tdbn:
        if training:
            I, bn_cache = tdbn_normalize(I, snn.gamma.value, snn.beta.value, cfg.v_threshold)
            if update_stats:
                m = snn.stats_momentum
                _, _, mu, var, _ = bn_cache
                snn.running_mean[:] = (1 - m) * snn.running_mean + m * mu
                snn.running_var[:] = (1 - m) * snn.running_var + m * var
        else:
            xhat = (I - snn.running_mean) / np.sqrt(np.maximum(snn.running_var, TDBN_EPS))
            I = snn.gamma.value * cfg.v_threshold * xhat + snn.beta.value
    if segments is None:
        segments = [(0, N)]
    width = max(b - a for a, b in segments)
    c = I.shape[2]
    U = np.full((width, c), cfg.v_rest)
    counts = np.zeros((N, c))
    S_all = np.zeros((T, N, c))
    Upre_all = np.zeros((T, N, c))
    for a, b in segments:
        n = b - a
        for t in range(T):
            s, U[:n], U_pre = _lif_step(U[:n], I[t, a:b], cfg, relaxed)
            S_all[t, a:b] = s
            Upre_all[t, a:b] = U_pre
        counts[a:b] = S_all[:, a:b].sum(axis=0)
    rec = SpikeRecord(counts, T, S_all if retain_steps else None)
    cache = (P, S_all, Upre_all, bn_cache, list(segments), width)
    return rec, cache


def run_snn_backward(dcounts, snn: SnnParams, cache) -> np.ndarray:
    """Backprop through time; accumulates into ζ and returns ``dP``."""
    P, S_all, Upre_all, bn_cache, segments, width = cache
    cfg = snn.cfg
    T, N, c = S_all.shape
    dI = np.zeros((T, N, c))
    dU = np.zeros((width, c))
    for a, b in reversed(segments):
        n = b - a
        ds = dcounts[a:b]
        for t in reversed(range(T)):
            dU[:n], dI[t, a:b] = _lif_step_backward(
                dU[:n], ds, Upre_all[t, a:b], S_all[t, a:b], cfg)
    if snn.tdbn:
        dI, dgamma, dbeta = tdbn_backward(dI, snn.gamma.value, cfg.v_threshold, bn_cache)
        snn.gamma.accumulate(dgamma)
        snn.beta.accumulate(dbeta)
    snn.W.accumulate(P.reshape(T * N, -1).T @ dI.reshape(T * N, c))
    return dI @ snn.W.value.T


def encode_rates(F_gat, T: int, rng: RngStream | None, relaxed: bool = False):
    """Input trains for the SNN plus the sigmoid slope for straight-through."""
    p = sigmoid(F_gat)
    if relaxed:
        P = np.broadcast_to(p, (T,) + p.shape).copy()
    else:
        P = rng.bernoulli(np.broadcast_to(p, (T,) + p.shape))
    return P, p * (1.0 - p)


def encode_rates_backward(dP, slope) -> np.ndarray:
    """Straight-through: every step's gradient flows to the firing rate."""
    return dP.sum(axis=0) * slope
