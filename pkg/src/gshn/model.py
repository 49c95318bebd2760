"""The hybrid visual encoder wired to the alignment stack.

:class:`GSHN` owns every parameter and runs one training step (forward,
losses, backward) over a batch of scene/caption pairs, as well as the
gradient-free embedding pass used for retrieval and batch recall.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fusion import FusionMode, FusionParams, hybrid_backward, hybrid_forward
from .graph import GatLayerParams, batch_graphs, gat_backward, gat_forward
from .memory import SemanticMemory, smu_init, smu_readout, smu_readout_backward
from .numerics import DTYPE, ConfigurationError, Parameter, RngStream, sigmoid
from .spiking import (
    LifConfig,
    SnnParams,
    SpikeRecord,
    encode_rates,
    encode_rates_backward,
    run_snn,
    run_snn_backward,
)
from .stl import StlConfig, focal_loss, stl_mask
from .text import (
    PAD_ID,
    TransformerConfig,
    TransformerParams,
    cl_loss,
    itm_loss,
    joint_encode,
    joint_encode_backward,
    mlm_loss,
    mlm_mask,
    pad_ids,
)


class NonFiniteError(FloatingPointError):
    """A loss or intermediate tensor stopped being finite."""


@dataclass
class ModelConfig:
    d_in: int = 16
    d_model: int = 64
    gat_layers: int = 2
    capacity: int = 256
    T: int = 10
    lif: LifConfig = field(default_factory=LifConfig)
    tdbn: bool = True
    fusion_mode: str = "trainable"
    smu_trainable: bool = True
    n_layers: int = 2
    n_heads: int = 4
    ffn_dim: int = 128
    max_text: int = 16
    seq_cap: int = 96
    temperature: float = 0.07
    mlm_ratio: float = 0.15
    stl: StlConfig = field(default_factory=StlConfig)

    def __post_init__(self) -> None:
        if self.T < 1:
            raise ConfigurationError("snn.T must be >= 1")
        FusionMode.parse(self.fusion_mode)


@dataclass
class LossWeights:
    itm: float = 1.0
    mlm: float = 1.0
    cl: float = 1.0
    stl: float = 1.0


@dataclass
class StepResult:
    total: float
    losses: dict
    spikes: SpikeRecord
    stl_masked: int


@dataclass
class Encoded:
    """Gradient-free per-item outputs of the visual encoder."""
    image_vecs: np.ndarray
    text_vecs: np.ndarray
    tokens: list
    counts: list


class GSHN:
    def __init__(self, cfg: ModelConfig, vocab_size: int, seed: int) -> None:
        self.cfg = cfg
        self.vocab_size = vocab_size
        root = RngStream(seed, 1)
        dims = [cfg.d_in] + [cfg.d_model] * cfg.gat_layers
        if cfg.gat_layers == 0 and cfg.d_in != cfg.d_model:
            raise ConfigurationError("zero GAT layers need d_in == d_model")
        self.gat = [GatLayerParams.init(dims[k], dims[k + 1], root.child(10, k), f"gat{k}")
                    for k in range(cfg.gat_layers)]
        self.snn = SnnParams(cfg.d_model, cfg.capacity, root.child(20), cfg.lif, cfg.tdbn)
        self.memory: SemanticMemory = smu_init(cfg.d_model, cfg.capacity, root.child(30))
        self.fusion = FusionParams(cfg.d_model, root.child(40), cfg.fusion_mode)
        tcfg = TransformerConfig(cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.ffn_dim,
                                 cfg.max_text, cfg.seq_cap)
        self.text = TransformerParams(tcfg, vocab_size, root.child(50))
        hr = root.child(60)
        D = cfg.d_model
        self.itm_head = Parameter("head.itm", hr.normal((D, 1), 0.0, 0.02))
        self.mlm_W = Parameter("head.mlm_W", hr.normal((D, vocab_size), 0.0, 1.0 / np.sqrt(D)))
        self.mlm_b = Parameter("head.mlm_b", np.zeros(vocab_size))
        self.stl_head = Parameter("head.stl", hr.normal((D, cfg.capacity), 0.0, 0.02))

    # -- parameter bookkeeping -------------------------------------------

    def snn_parameters(self) -> list[Parameter]:
        return self.snn.parameters()

    def visual_parameters(self) -> list[Parameter]:
        out = [p for layer in self.gat for p in layer.parameters()]
        out += self.snn_parameters()
        out += self.memory.parameters() + self.fusion.parameters()
        return out

    def text_parameters(self) -> list[Parameter]:
        return self.text.parameters() + [self.itm_head, self.mlm_W, self.mlm_b, self.stl_head]

    def parameters(self) -> list[Parameter]:
        return self.visual_parameters() + self.text_parameters()

    def buffers(self) -> dict[str, np.ndarray]:
        return self.snn.buffers()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    # -- visual encoder ---------------------------------------------------

    def _visual_forward(self, graphs, rng: RngStream | None, *, relaxed: bool,
                        stream: bool, training: bool, update_stats: bool):
        X, edges, graph_id = batch_graphs(graphs)
        F, gcache = gat_forward(X, self.gat, edges)
        P, slope = encode_rates(F, self.cfg.T, rng, relaxed)
        segments = None
        if stream:
            bounds = np.cumsum([0] + [g.n_nodes for g in graphs])
            segments = list(zip(bounds[:-1], bounds[1:]))
        rec, scache = run_snn(P, self.snn, segments=segments, relaxed=relaxed,
                              training=training, update_stats=update_stats)
        E, denom = smu_readout(rec.counts, self.memory)
        V, fcache = hybrid_forward(F, E, self.fusion, graph_id, len(graphs))
        cache = (edges, graph_id, gcache, slope, scache, rec.counts, denom, fcache)
        return V, rec, graph_id, cache

    def _visual_backward(self, dV, cache) -> None:
        edges, graph_id, gcache, slope, scache, counts, denom, fcache = cache
        dF, dE = hybrid_backward(dV, self.fusion, fcache)
        if np.any(dE):
            dcounts = smu_readout_backward(dE, counts, denom, self.memory,
                                           frozen=not self.cfg.smu_trainable)
            dP = run_snn_backward(dcounts, self.snn, scache)
            dF = dF + encode_rates_backward(dP, slope)
        gat_backward(dF, edges, self.gat, gcache)

    @staticmethod
    def _pad_visual(V, graph_id, n_graphs):
        sizes = np.bincount(graph_id, minlength=n_graphs)
        n_max = int(sizes.max())
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        local = np.arange(V.shape[0]) - starts[graph_id]
        flat = graph_id * n_max + local
        Vp = np.zeros((n_graphs * n_max, V.shape[1]))
        Vp[flat] = V
        mask = np.zeros(n_graphs * n_max, dtype=bool)
        mask[flat] = True
        return Vp.reshape(n_graphs, n_max, -1), mask.reshape(n_graphs, n_max), flat

    @staticmethod
    def _graph_mean(V, graph_id, n_graphs):
        sums = np.zeros((n_graphs, V.shape[1]))
        np.add.at(sums, graph_id, V)
        return sums / np.bincount(graph_id, minlength=n_graphs)[:, None]

    def text_vectors(self, ids: np.ndarray):
        """Mean word embedding over non-PAD positions; ``(B, D)``."""
        valid = ids != PAD_ID
        emb = self.text.tok.value[ids]
        return (emb * valid[..., None]).sum(axis=1) / valid.sum(axis=1, keepdims=True)

    def _text_vectors_backward(self, dvec, ids):
        valid = ids != PAD_ID
        w = valid / valid.sum(axis=1, keepdims=True)
        dtok = np.zeros_like(self.text.tok.value)
        np.add.at(dtok, ids.reshape(-1), (w[..., None] * dvec[:, None, :]).reshape(-1, dvec.shape[1]))
        self.text.tok.accumulate(dtok)

    # -- training step ----------------------------------------------------

    def train_step(self, graphs, caption_ids, rng: RngStream, *,
                   weights: LossWeights | None = None, use_stl: bool = False,
                   relaxed: bool = False, stream: bool = True,
                   update_stats: bool = True) -> StepResult:
        """Forward + backward on one batch; gradients accumulate into params."""
        weights = weights or LossWeights()
        B = len(graphs)
        cfg = self.cfg
        V, rec, graph_id, vcache = self._visual_forward(
            graphs, rng.child(1), relaxed=relaxed, stream=stream, training=True,
            update_stats=update_stats)
        ids = pad_ids(caption_ids)
        losses = {"itm": 0.0, "mlm": 0.0, "cl": 0.0, "stl": 0.0}

        # contrastive loss on pooled unimodal embeddings
        img_vec = self._graph_mean(V, graph_id, B)
        txt_vec = self.text_vectors(ids)
        dV = np.zeros_like(V)
        dtxt = np.zeros_like(txt_vec)
        if weights.cl > 0 and B >= 2:
            l_cl, dimg, dt = cl_loss(img_vec, txt_vec, cfg.temperature)
            losses["cl"] = l_cl
            counts = np.bincount(graph_id, minlength=B)[:, None]
            dV += weights.cl * (dimg / counts)[graph_id]
            dtxt += weights.cl * dt

        # ITM (positives + in-batch swapped negatives) and MLM in one pass
        Vp, vmask, flat = self._pad_visual(V, graph_id, B)
        neg_ids = np.roll(ids, -1, axis=0) if B >= 2 else ids
        mlm_ids, selected = mlm_mask(ids, self.vocab_size, rng.child(2), cfg.mlm_ratio)
        all_ids = np.concatenate([ids, neg_ids, mlm_ids])
        Q, cls_vec, text_states, jcache = joint_encode(
            np.concatenate([Vp, Vp, Vp]), all_ids, self.text,
            vis_mask=np.concatenate([vmask, vmask, vmask]))
        dQ = np.zeros_like(Q)
        n_vis = Vp.shape[1]
        n_itm = 2 * B if B >= 2 else B
        labels = np.r_[np.ones(B), np.zeros(n_itm - B)]
        if weights.itm > 0:
            l_itm, _, dcls = itm_loss(cls_vec[:n_itm], labels, self.itm_head)
            losses["itm"] = l_itm
            dQ[:n_itm, n_vis] += weights.itm * dcls
        if weights.mlm > 0:
            l_mlm, dts = mlm_loss(ids, selected, text_states[2 * B:], self.mlm_W, self.mlm_b)
            losses["mlm"] = l_mlm
            dQ[2 * B:, n_vis:] += weights.mlm * dts

        # STL: masked spike activations predicted from text features only
        stl_masked = 0
        if use_stl and weights.stl > 0:
            _, target = stl_mask(rec, cfg.stl.mask_prob, rng.child(3))
            sel = target.mask_positions
            stl_masked = int(sel.sum())
            if stl_masked:
                logits = txt_vec[graph_id] @ self.stl_head.value
                l_stl, dz = focal_loss(logits[sel], target.Y[sel], cfg.stl.gamma, cfg.stl.alpha)
                losses["stl"] = l_stl
                dlog = np.zeros_like(logits)
                dlog[sel] = weights.stl * dz
                self.stl_head.accumulate(txt_vec[graph_id].T @ dlog)
                drow = dlog @ self.stl_head.value.T
                np.add.at(dtxt, graph_id, drow)

        total = (weights.itm * losses["itm"] + weights.mlm * losses["mlm"]
                 + weights.cl * losses["cl"] + weights.stl * losses["stl"])
        if not np.isfinite(total):
            raise NonFiniteError(_first_nonfinite(
                {"V": V, "cls": cls_vec, "img_vec": img_vec, "txt_vec": txt_vec, **losses}))

        # backward
        dVp = joint_encode_backward(dQ, self.text, jcache)
        dVp = dVp.reshape(3, B * n_vis, -1).sum(axis=0)
        dV += dVp[flat]
        self._text_vectors_backward(dtxt, ids)
        self._visual_backward(dV, vcache)
        return StepResult(float(total), losses, rec, stl_masked)

    # -- gradient-free passes ----------------------------------------------

    def encode_items(self, items, seed: int, chunk: int = 256) -> Encoded:
        """Per-item embeddings in inference mode; each item starts from rest.

        Spike draws use a stream keyed by item id, so results depend on
        chunking or order only through floating-point rounding.
        """
        img, txt, tokens, counts = [], [], [], []
        for s in range(0, len(items), chunk):
            part = items[s:s + chunk]
            graphs = [it.graph for it in part]
            X, edges, graph_id = batch_graphs(graphs)
            F, _ = gat_forward(X, self.gat, edges)
            P = np.concatenate([
                encode_rates(F[graph_id == k], self.cfg.T, RngStream(seed, 7).child(it.id))[0]
                for k, it in enumerate(part)], axis=1)
            rec, _ = run_snn(P, self.snn, training=False)
            E, _ = smu_readout(rec.counts, self.memory)
            V, _ = hybrid_forward(F, E, self.fusion, graph_id, len(part))
            img.append(self._graph_mean(V, graph_id, len(part)))
            for k in range(len(part)):
                tokens.append(V[graph_id == k])
                counts.append(rec.counts[graph_id == k])
            txt.append(self.text_vectors(pad_ids([it.caption_ids for it in part])))
        D = self.cfg.d_model
        return Encoded(np.concatenate(img) if img else np.zeros((0, D)),
                       np.concatenate(txt) if txt else np.zeros((0, D)),
                       tokens, counts)

    def itm_scores(self, visual_tokens, caption_ids) -> np.ndarray:
        """Matching probability for each (visual tokens, caption) pair."""
        B = len(visual_tokens)
        n_max = max(v.shape[0] for v in visual_tokens)
        Vp = np.zeros((B, n_max, self.cfg.d_model))
        mask = np.zeros((B, n_max), dtype=bool)
        for k, v in enumerate(visual_tokens):
            Vp[k, :v.shape[0]] = v
            mask[k, :v.shape[0]] = True
        _, cls_vec, _, _ = joint_encode(Vp, pad_ids(caption_ids), self.text, vis_mask=mask)
        return sigmoid(cls_vec @ self.itm_head.value.reshape(-1))


def _first_nonfinite(named: dict) -> str:
    for name, val in named.items():
        arr = np.asarray(val, dtype=DTYPE)
        if not np.isfinite(arr).all():
            return f"non-finite values first seen in {name!r}"
    return "non-finite total loss"
