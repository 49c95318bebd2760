"""Graph attention encoder over mask-instance node features.

Edges are stored as an ``(E, 2)`` integer array of ``(i, j)`` pairs meaning
"node i attends to neighbour j"; every node carries a self-loop.  Several
scene graphs are encoded together as one disjoint union, so attention never
crosses graph boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    DTYPE,
    DegenerateRowError,
    DimensionError,
    Parameter,
    RngStream,
    elu,
    elu_grad,
    leaky_relu,
    leaky_relu_grad,
    segment_max,
    segment_sum,
)

THING, STUFF = "thing", "stuff"


@dataclass
class SceneGraph:
    X: np.ndarray
    edges: np.ndarray
    node_kind: list = field(default_factory=list)

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=DTYPE)
        self.edges = normalize_edges(self.edges, self.X.shape[0])
        if not self.node_kind:
            self.node_kind = [THING] * self.n_nodes

    @property
    def n_nodes(self) -> int:
        return self.X.shape[0]


def normalize_edges(edges, n: int) -> np.ndarray:
    """Deduplicate edges, add missing self-loops and sort by (i, j)."""
    if n < 1:
        raise DimensionError("a scene graph needs at least one node")
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= n):
        raise IndexError(f"edge endpoint out of range for {n} nodes")
    loops = np.stack([np.arange(n), np.arange(n)], axis=1)
    e = np.unique(np.concatenate([e, loops]), axis=0)
    return e


@dataclass
class GatLayerParams:
    W: Parameter
    a: Parameter
    leaky_slope: float = 0.2

    @classmethod
    def init(cls, d_in: int, d_out: int, rng: RngStream, name: str = "gat",
             leaky_slope: float = 0.2) -> "GatLayerParams":
        limit = np.sqrt(6.0 / (d_in + d_out))
        W = Parameter(f"{name}.W", rng.uniform((d_in, d_out), -limit, limit))
        a = Parameter(f"{name}.a", rng.normal((1, 2 * d_out), 0.0, 1.0 / np.sqrt(d_out)))
        return cls(W, a, leaky_slope)

    @property
    def d_out(self) -> int:
        return self.W.shape[1]

    def parameters(self) -> list[Parameter]:
        return [self.W, self.a]


def batch_graphs(graphs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Disjoint union: stacked features, offset edges and node->graph ids."""
    offsets = np.cumsum([0] + [g.n_nodes for g in graphs])
    X = np.concatenate([g.X for g in graphs], axis=0)
    edges = np.concatenate([g.edges + off for g, off in zip(graphs, offsets)], axis=0)
    graph_id = np.repeat(np.arange(len(graphs)), [g.n_nodes for g in graphs])
    return X, edges, graph_id


# ---------------------------------------------------------------------------
# single-step operations


def project_nodes(X, W) -> np.ndarray:
    W = W.value if isinstance(W, Parameter) else np.asarray(W, dtype=DTYPE)
    X = np.asarray(X, dtype=DTYPE)
    if X.ndim != 2 or X.shape[1] != W.shape[0]:
        raise DimensionError(
            f"node features {X.shape} do not match projection {W.shape}")
    return X @ W


def _edge_preactivation(F, edges, a):
    a = a.value if isinstance(a, Parameter) else np.asarray(a, dtype=DTYPE)
    a = a.reshape(-1)
    d = F.shape[1]
    if a.size != 2 * d:
        raise DimensionError(f"attention vector of size {a.size} needs 2*{d}")
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= F.shape[0]):
        raise IndexError(f"edge endpoint out of range for {F.shape[0]} nodes")
    src = F @ a[:d]
    dst = F @ a[d:]
    return src[edges[:, 0]] + dst[edges[:, 1]]


def edge_scores(F, edges, a, leaky_slope: float = 0.2) -> np.ndarray:
    """LeakyReLU of ``[f_i || f_j] . a`` for every edge ``(i, j)``."""
    return leaky_relu(_edge_preactivation(np.asarray(F, dtype=DTYPE), edges, a),
                      leaky_slope)


def attention_normalize(scores, edges, n: int) -> np.ndarray:
    """Softmax of edge scores over each node's neighbourhood."""
    scores = np.asarray(scores, dtype=DTYPE)
    tgt = np.asarray(edges, dtype=np.int64).reshape(-1, 2)[:, 0]
    counts = np.bincount(tgt, minlength=n)
    if (counts == 0).any():
        raise DegenerateRowError(
            f"node {int(np.argmin(counts))} has an empty neighbourhood")
    m = segment_max(scores, tgt, n)
    ex = np.exp(scores - m[tgt])
    z = np.bincount(tgt, weights=ex, minlength=n)
    return ex / z[tgt]


def aggregate(F, alpha, edges) -> np.ndarray:
    """ELU of the attention-weighted neighbour sum."""
    return elu(_weighted_sum(F, alpha, edges))


def _weighted_sum(F, alpha, edges):
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return segment_sum(alpha[:, None] * F[edges[:, 1]], edges[:, 0], F.shape[0])


# ---------------------------------------------------------------------------
# full encoder with backward


def gat_layer_forward(X, edges, layer: GatLayerParams):
    F = project_nodes(X, layer.W)
    pre = _edge_preactivation(F, edges, layer.a)
    e = leaky_relu(pre, layer.leaky_slope)
    alpha = attention_normalize(e, edges, F.shape[0])
    h = _weighted_sum(F, alpha, edges)
    return elu(h), (X, F, pre, alpha, h)


def gat_layer_backward(dout, edges, layer: GatLayerParams, cache):
    X, F, pre, alpha, h = cache
    n, d = F.shape
    i, j = edges[:, 0], edges[:, 1]
    dh = dout * elu_grad(h)
    dF = segment_sum(alpha[:, None] * dh[i], j, n)
    dalpha = np.einsum("ek,ek->e", dh[i], F[j])
    s = np.bincount(i, weights=alpha * dalpha, minlength=n)
    de = alpha * (dalpha - s[i])
    dpre = de * leaky_relu_grad(pre, layer.leaky_slope)
    a = layer.a.value.reshape(-1)
    dsrc = np.bincount(i, weights=dpre, minlength=n)
    ddst = np.bincount(j, weights=dpre, minlength=n)
    dF += np.outer(dsrc, a[:d]) + np.outer(ddst, a[d:])
    da = np.concatenate([F.T @ dsrc, F.T @ ddst]).reshape(1, -1)
    layer.W.accumulate(X.T @ dF)
    layer.a.accumulate(da)
    return dF @ layer.W.value.T


def gat_forward(graph_or_X, layers, edges=None):
    """Run the layer stack; returns ``(F_GAT, caches)``.

    Accepts either a :class:`SceneGraph` or raw ``(X, edges)``.
    """
    if isinstance(graph_or_X, SceneGraph):
        X, edges = graph_or_X.X, graph_or_X.edges
    else:
        X = np.asarray(graph_or_X, dtype=DTYPE)
    h = X
    caches = []
    for layer in layers:
        h, c = gat_layer_forward(h, edges, layer)
        caches.append(c)
    return h, caches


def gat_backward(dout, edges, layers, caches) -> np.ndarray:
    g = dout
    for layer, c in zip(reversed(layers), reversed(caches)):
        g = gat_layer_backward(g, edges, layer, c)
    return g


def dense_attention_matrix(F, edges, a, leaky_slope: float = 0.2) -> np.ndarray:
    """Dense ``n x n`` attention via masked row softmax (reference path)."""
    from .numerics import softmax_rows

    a = a.value if isinstance(a, Parameter) else np.asarray(a, dtype=DTYPE)
    a = a.reshape(-1)
    d = F.shape[1]
    n = F.shape[0]
    S = (F @ a[:d])[:, None] + (F @ a[d:])[None, :]
    S = leaky_relu(S, leaky_slope)
    mask = np.zeros((n, n), dtype=bool)
    mask[edges[:, 0], edges[:, 1]] = True
    return softmax_rows(S, mask)
