"""Dense float64 kernels with explicit vector-Jacobian products.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.  Every
differentiable kernel in the package comes as a forward function plus a
matching backward function that maps an upstream gradient to input
gradients; there is no tape.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64
_MASK64 = (1 << 64) - 1


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DegenerateRowError(ValueError):
    """A normalization row has no admissible entry."""


class DeterminismError(RuntimeError):
    """A function expected to be deterministic returned different values."""


class ConfigurationError(ValueError):
    """Invalid configuration or argument combination."""


class Parameter:
    """A trainable array with its gradient accumulator."""

    __slots__ = ("name", "value", "grad", "frozen")

    def __init__(self, name: str, value) -> None:
        self.name = name
        self.value = np.array(value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)
        self.frozen = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def accumulate(self, g) -> None:
        g = np.asarray(g, dtype=DTYPE)
        if g.shape != self.value.shape:
            raise DimensionError(
                f"gradient shape {g.shape} does not match parameter "
                f"{self.name!r} of shape {self.value.shape}")
        self.grad += g

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class RngStream:
    """Counter-based random stream keyed by ``(seed, stream_id)``.

    Draws come from a Philox generator whose 128-bit key is the pair, so
    two streams with the same key replay the same sequence.  Children are
    derived by hashing the parent key with integer labels, which makes them
    independent of how many draws the parent has already made.
    """

    def __init__(self, seed: int, stream_id: int = 0) -> None:
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = self.seed | (self.stream_id << 64)
        self._gen = np.random.Generator(np.random.Philox(key=key))
        self._n_splits = 0

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def child(self, *labels: int) -> "RngStream":
        """Deterministic substream addressed by ``labels``."""
        entropy = [self.seed, self.stream_id] + [int(x) & _MASK64 for x in labels]
        sid = np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0]
        return RngStream(self.seed, int(sid))

    def split(self) -> "RngStream":
        """Next child stream; successive calls give distinct children."""
        self._n_splits += 1
        return self.child(0x5EED, self._n_splits)

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        return self._gen.uniform(low, high, size)

    def normal(self, size=None, loc: float = 0.0, scale: float = 1.0):
        return self._gen.normal(loc, scale, size)

    def integers(self, low: int, high: int | None = None, size=None):
        return self._gen.integers(low, high, size)

    def bernoulli(self, p, size=None) -> np.ndarray:
        p = np.asarray(p, dtype=DTYPE)
        shape = p.shape if size is None else size
        return (self._gen.random(shape) < p).astype(DTYPE)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


# ---------------------------------------------------------------------------
# matrix products and softmax


def _check_matmul(A: np.ndarray, B: np.ndarray) -> None:
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
        raise DimensionError(
            f"cannot multiply shapes {A.shape} and {B.shape}")


def matmul(A, B) -> np.ndarray:
    A = np.asarray(A, dtype=DTYPE)
    B = np.asarray(B, dtype=DTYPE)
    _check_matmul(A, B)
    return A @ B


def matmul_vjp(A, B, upstream) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``sum(upstream * (A @ B))`` with respect to A and B."""
    A = np.asarray(A, dtype=DTYPE)
    B = np.asarray(B, dtype=DTYPE)
    upstream = np.asarray(upstream, dtype=DTYPE)
    _check_matmul(A, B)
    if upstream.shape != (A.shape[0], B.shape[1]):
        raise DimensionError(
            f"upstream shape {upstream.shape} does not match product of "
            f"{A.shape} and {B.shape}")
    return upstream @ B.T, A.T @ upstream


def softmax_rows(X, mask=None) -> np.ndarray:
    """Row-wise softmax; entries where ``mask`` is False are exactly zero.

    Works on the last axis, so stacked ``(..., m, n)`` inputs are accepted.
    """
    X = np.asarray(X, dtype=DTYPE)
    if mask is None:
        Z = X - X.max(axis=-1, keepdims=True)
        E = np.exp(Z)
        return E / E.sum(axis=-1, keepdims=True)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), X.shape)
    if not mask.any(axis=-1).all():
        raise DegenerateRowError("softmax row has no unmasked entry")
    Z = np.where(mask, X, -np.inf)
    Z = Z - Z.max(axis=-1, keepdims=True)
    E = np.where(mask, np.exp(Z), 0.0)
    return E / E.sum(axis=-1, keepdims=True)


def softmax_rows_backward(out: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    return out * (upstream - (out * upstream).sum(axis=-1, keepdims=True))


def log_softmax(X: np.ndarray, axis: int = -1) -> np.ndarray:
    Z = X - X.max(axis=axis, keepdims=True)
    return Z - np.log(np.exp(Z).sum(axis=axis, keepdims=True))


# ---------------------------------------------------------------------------
# element-wise activations


def sigmoid(x):
    x = np.asarray(x, dtype=DTYPE)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def leaky_relu(x, slope: float):
    return np.where(x > 0, x, slope * x)


def leaky_relu_grad(x, slope: float):
    return np.where(x > 0, 1.0, slope)


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x):
    """Tanh-approximated GELU; returns ``(y, t)`` with ``t`` kept for backward."""
    t = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    return 0.5 * x * (1.0 + t), t


def gelu_grad(x, t):
    du = _GELU_C * (1.0 + 3 * 0.044715 * (x * x))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du


def layer_norm(x, gain, bias, eps: float = 1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv)


def layer_norm_backward(dout, gain, cache):
    xhat, inv = cache
    dgain = (dout * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    dbias = dout.reshape(-1, xhat.shape[-1]).sum(axis=0)
    dxhat = dout * gain
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgain, dbias


# ---------------------------------------------------------------------------
# segment reductions over a sorted or unsorted group index


def segment_sum(values: np.ndarray, segment: np.ndarray, n_segments: int) -> np.ndarray:
    """Sum rows of ``values`` into ``n_segments`` buckets in index order."""
    out = np.zeros((n_segments,) + values.shape[1:], dtype=DTYPE)
    np.add.at(out, segment, values)
    return out


def segment_max(values: np.ndarray, segment: np.ndarray, n_segments: int) -> np.ndarray:
    out = np.full(n_segments, -np.inf, dtype=DTYPE)
    np.maximum.at(out, segment, values)
    return out


# ---------------------------------------------------------------------------
# finite-difference gradient verification


def gradcheck(f, params, eps: float = 1e-5, check_determinism: bool = True):
    """Compare analytic gradients with central differences.

    ``f`` is a zero-argument callable returning a scalar loss and, as a
    side effect, accumulating analytic gradients into ``param.grad``.  The
    report maps each parameter name to a dict with the max relative error,
    measured as ``max|analytic - numeric| / max(max|analytic|, max|numeric|)``.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ConfigurationError(f"eps must lie in [1e-6, 1e-3], got {eps}")
    for p in params:
        p.zero_grad()
    base = float(f())
    analytic = {p.name: p.grad.copy() for p in params}
    if check_determinism:
        for p in params:
            p.zero_grad()
        again = float(f())
        if again != base or any(
                not np.array_equal(p.grad, analytic[p.name]) for p in params):
            raise DeterminismError(
                f"function is not deterministic: {base!r} vs {again!r}")

    report = {}
    for p in params:
        flat = p.value.reshape(-1)
        numeric = np.zeros(flat.size, dtype=DTYPE)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            fp = float(f())
            flat[k] = orig - eps
            fm = float(f())
            flat[k] = orig
            numeric[k] = (fp - fm) / (2.0 * eps)
        numeric = numeric.reshape(p.value.shape)
        a = analytic[p.name]
        scale = max(np.abs(a).max(initial=0.0), np.abs(numeric).max(initial=0.0))
        diff = np.abs(a - numeric).max(initial=0.0)
        report[p.name] = {
            "max_rel_error": 0.0 if scale == 0.0 else float(diff / scale),
            "max_abs_error": float(diff),
            "grad_norm": float(np.linalg.norm(a)),
            "size": int(flat.size),
        }
    for p in params:
        p.zero_grad()
    return report
