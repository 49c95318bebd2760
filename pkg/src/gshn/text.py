"""Toy tokenizer, joint transformer encoder and ITM / MLM / CL objectives."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import (
    DTYPE,
    ConfigurationError,
    Parameter,
    RngStream,
    gelu,
    gelu_grad,
    layer_norm,
    layer_norm_backward,
    log_softmax,
    sigmoid,
    softmax_rows,
    softmax_rows_backward,
)

PAD, MASK, CLS, SEP, UNK = "[PAD]", "[MASK]", "[CLS]", "[SEP]", "[UNK]"
SPECIALS = (PAD, MASK, CLS, SEP, UNK)
PAD_ID, MASK_ID, CLS_ID, SEP_ID, UNK_ID = range(5)


class CapacityError(ConfigurationError):
    """Sequence longer than the encoder accepts."""


class Vocabulary:
    def __init__(self, tokens) -> None:
        tokens = list(tokens)
        if tuple(tokens[:5]) != SPECIALS:
            raise ConfigurationError("vocabulary must start with the five special tokens")
        if len(set(tokens)) != len(tokens):
            raise ConfigurationError("duplicate tokens in vocabulary")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def from_corpus(cls, texts) -> "Vocabulary":
        words = sorted({w for t in texts for w in t.lower().split()})
        return cls(list(SPECIALS) + [w for w in words if w not in SPECIALS])

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln for ln in lines if ln])


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    return [CLS_ID] + [vocab.id(w) for w in text.lower().split()] + [SEP_ID]


def pad_ids(seqs, length: int | None = None) -> np.ndarray:
    length = length or max(len(s) for s in seqs)
    out = np.full((len(seqs), length), PAD_ID, dtype=np.int64)
    for k, s in enumerate(seqs):
        if len(s) > length:
            raise CapacityError(f"caption of {len(s)} tokens exceeds {length}")
        out[k, :len(s)] = s
    return out


def pool_unimodal(X, mask=None) -> np.ndarray:
    """Mean over valid positions; ``X`` is ``(L, d)`` or ``(B, L, d)``."""
    X = np.asarray(X, dtype=DTYPE)
    if mask is None:
        return X.mean(axis=-2)
    m = np.asarray(mask, dtype=DTYPE)
    return (X * m[..., None]).sum(axis=-2) / m.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# transformer


@dataclass
class TransformerConfig:
    model_dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_dim: int = 128
    max_text: int = 32
    seq_cap: int = 96

    def __post_init__(self) -> None:
        if self.model_dim % self.n_heads:
            raise ConfigurationError("model_dim must be divisible by n_heads")


class TransformerParams:
    """Embeddings plus ``n_layers`` pre-norm encoder blocks."""

    def __init__(self, cfg: TransformerConfig, vocab_size: int, rng: RngStream) -> None:
        self.cfg = cfg
        D, Fd = cfg.model_dim, cfg.ffn_dim
        s = 1.0 / np.sqrt(D)
        self.tok = Parameter("txt.tok_emb", rng.normal((vocab_size, D), 0.0, 1.0))
        self.pos = Parameter("txt.pos_emb", rng.normal((cfg.max_text, D), 0.0, 0.1))
        self.seg = Parameter("txt.seg_emb", rng.normal((2, D), 0.0, 0.1))
        self.layers = []
        for k in range(cfg.n_layers):
            p = f"txt.layer{k}."
            self.layers.append({
                "ln1_g": Parameter(p + "ln1_g", np.ones(D)),
                "ln1_b": Parameter(p + "ln1_b", np.zeros(D)),
                "Wq": Parameter(p + "Wq", rng.normal((D, D), 0.0, s)),
                "Wk": Parameter(p + "Wk", rng.normal((D, D), 0.0, s)),
                "Wv": Parameter(p + "Wv", rng.normal((D, D), 0.0, s)),
                "Wo": Parameter(p + "Wo", rng.normal((D, D), 0.0, s / np.sqrt(2 * cfg.n_layers))),
                "ln2_g": Parameter(p + "ln2_g", np.ones(D)),
                "ln2_b": Parameter(p + "ln2_b", np.zeros(D)),
                "W1": Parameter(p + "W1", rng.normal((D, Fd), 0.0, s)),
                "b1": Parameter(p + "b1", np.zeros(Fd)),
                "W2": Parameter(p + "W2", rng.normal((Fd, D), 0.0, 1.0 / np.sqrt(Fd) / np.sqrt(2 * cfg.n_layers))),
                "b2": Parameter(p + "b2", np.zeros(D)),
            })

    def parameters(self) -> list[Parameter]:
        out = [self.tok, self.pos, self.seg]
        for layer in self.layers:
            out.extend(layer.values())
        return out


def embed_inputs(V, vis_mask, ids, params: TransformerParams):
    """Build ``[visual tokens || text tokens]`` with segment and position tags."""
    B, L = ids.shape
    if L > params.cfg.max_text:
        raise CapacityError(f"text length {L} exceeds {params.cfg.max_text}")
    if V.shape[1] + L > params.cfg.seq_cap:
        raise CapacityError(
            f"sequence of {V.shape[1] + L} tokens exceeds cap {params.cfg.seq_cap}")
    seg = params.seg.value
    vis = V + seg[0]
    txt = params.tok.value[ids] + params.pos.value[:L] + seg[1]
    x = np.concatenate([vis, txt], axis=1)
    mask = np.concatenate([vis_mask, ids != PAD_ID], axis=1)
    return x, mask


def embed_inputs_backward(dx, n_vis: int, ids, vis_mask, params: TransformerParams):
    """Accumulates into embeddings; returns ``dV`` for the visual tokens."""
    L = ids.shape[1]
    dvis, dtxt = dx[:, :n_vis], dx[:, n_vis:]
    # padded visual slots still carry the segment tag as live queries
    params.seg.accumulate(np.stack([dvis.sum(axis=(0, 1)), dtxt.sum(axis=(0, 1))]))
    dpos = np.zeros_like(params.pos.value)
    dpos[:L] = dtxt.sum(axis=0)
    params.pos.accumulate(dpos)
    dtok = np.zeros_like(params.tok.value)
    np.add.at(dtok, ids.reshape(-1), dtxt.reshape(-1, dtxt.shape[-1]))
    params.tok.accumulate(dtok)
    return dvis


def _split_heads(x, H):
    B, S, D = x.shape
    return x.reshape(B, S, H, D // H).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, S, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, S, H * dh)


def encoder_forward(x, mask, params: TransformerParams):
    """Pre-norm encoder stack; returns ``(out, caches)``."""
    H = params.cfg.n_heads
    keymask = mask[:, None, None, :]
    caches = []
    for layer in params.layers:
        g = {k: p.value for k, p in layer.items()}
        h, ln1 = layer_norm(x, g["ln1_g"], g["ln1_b"])
        q = _split_heads(h @ g["Wq"], H)
        k = _split_heads(h @ g["Wk"], H)
        v = _split_heads(h @ g["Wv"], H)
        scale = 1.0 / np.sqrt(q.shape[-1])
        A = softmax_rows((q @ k.transpose(0, 1, 3, 2)) * scale, keymask)
        ctx = _merge_heads(A @ v)
        x1 = x + ctx @ g["Wo"]
        h2, ln2 = layer_norm(x1, g["ln2_g"], g["ln2_b"])
        u = h2 @ g["W1"] + g["b1"]
        gu, tu = gelu(u)
        x2 = x1 + gu @ g["W2"] + g["b2"]
        caches.append((h, ln1, q, k, v, A, ctx, h2, ln2, u, gu, tu, scale))
        x = x2
    return x, caches


def encoder_backward(dx, params: TransformerParams, caches):
    H = params.cfg.n_heads
    for layer, c in zip(reversed(params.layers), reversed(caches)):
        h, ln1, q, k, v, A, ctx, h2, ln2, u, gu, tu, scale = c
        g = {kk: p.value for kk, p in layer.items()}
        D = h.shape[-1]
        # feed-forward block
        layer["W2"].accumulate(gu.reshape(-1, gu.shape[-1]).T @ dx.reshape(-1, D))
        layer["b2"].accumulate(dx.reshape(-1, D).sum(axis=0))
        du = (dx @ g["W2"].T) * gelu_grad(u, tu)
        layer["W1"].accumulate(h2.reshape(-1, D).T @ du.reshape(-1, du.shape[-1]))
        layer["b1"].accumulate(du.reshape(-1, du.shape[-1]).sum(axis=0))
        dh2 = du @ g["W1"].T
        dx1_ln, dg2, db2 = layer_norm_backward(dh2, g["ln2_g"], ln2)
        layer["ln2_g"].accumulate(dg2)
        layer["ln2_b"].accumulate(db2)
        dx1 = dx + dx1_ln
        # attention block
        layer["Wo"].accumulate(ctx.reshape(-1, D).T @ dx1.reshape(-1, D))
        dctx = _split_heads(dx1 @ g["Wo"].T, H)
        dA = dctx @ v.transpose(0, 1, 3, 2)
        dv = A.transpose(0, 1, 3, 2) @ dctx
        dscores = softmax_rows_backward(A, dA) * scale
        dq = dscores @ k
        dk = dscores.transpose(0, 1, 3, 2) @ q
        dq, dk, dv = _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)
        hf = h.reshape(-1, D)
        layer["Wq"].accumulate(hf.T @ dq.reshape(-1, D))
        layer["Wk"].accumulate(hf.T @ dk.reshape(-1, D))
        layer["Wv"].accumulate(hf.T @ dv.reshape(-1, D))
        dh = dq @ g["Wq"].T + dk @ g["Wk"].T + dv @ g["Wv"].T
        dx0_ln, dg1, db1 = layer_norm_backward(dh, g["ln1_g"], ln1)
        layer["ln1_g"].accumulate(dg1)
        layer["ln1_b"].accumulate(db1)
        dx = dx1 + dx0_ln
    return dx


def joint_encode(V, caption_ids, params: TransformerParams, vis_mask=None):
    """Encode visual tokens and captions together.

    ``V`` is ``(n, d)`` or ``(B, n, d)``; ``caption_ids`` a sequence or a
    padded ``(B, L)`` array.  Returns ``(Q, cls_vec, text_states, cache)``.
    """
    V = np.asarray(V, dtype=DTYPE)
    single = V.ndim == 2
    if single:
        V = V[None]
        caption_ids = np.asarray(caption_ids, dtype=np.int64)[None]
    ids = np.asarray(caption_ids, dtype=np.int64)
    if vis_mask is None:
        vis_mask = np.ones(V.shape[:2], dtype=bool)
    x, mask = embed_inputs(V, vis_mask, ids, params)
    Q, caches = encoder_forward(x, mask, params)
    n = V.shape[1]
    cls_vec = Q[:, n]
    text_states = Q[:, n:]
    cache = (n, ids, vis_mask, caches)
    if single:
        return Q[0], cls_vec[0], text_states[0], cache
    return Q, cls_vec, text_states, cache


def joint_encode_backward(dQ, params: TransformerParams, cache):
    n, ids, vis_mask, caches = cache
    dx = encoder_backward(dQ, params, caches)
    return embed_inputs_backward(dx, n, ids, vis_mask, params)


# ---------------------------------------------------------------------------
# objectives


def bce(score, label):
    score = np.clip(score, 1e-12, 1 - 1e-12)
    return -(label * np.log(score) + (1 - label) * np.log(1 - score))


def itm_loss(cls_vec, match_label, head: Parameter):
    """Mean BCE of ``sigmoid(cls . head)``; returns ``(loss, scores, dcls)``.

    Accumulates the head gradient.
    """
    cls_vec = np.atleast_2d(cls_vec)
    labels = np.atleast_1d(np.asarray(match_label, dtype=DTYPE))
    w = head.value.reshape(-1)
    logit = cls_vec @ w
    score = sigmoid(logit)
    loss = float(bce(score, labels).mean())
    dlogit = (score - labels) / labels.size
    head.accumulate((cls_vec.T @ dlogit).reshape(head.shape))
    return loss, score, np.outer(dlogit, w)


def mlm_mask(ids, vocab_size: int, rng: RngStream, ratio: float = 0.15):
    """BERT-style corruption; returns ``(corrupted_ids, selected)``."""
    ids = np.asarray(ids, dtype=np.int64)
    eligible = ids >= len(SPECIALS)
    u = rng.uniform(ids.shape)
    selected = eligible & (u < ratio)
    action = rng.uniform(ids.shape)
    random_tok = rng.integers(len(SPECIALS), vocab_size, ids.shape)
    out = ids.copy()
    out[selected & (action < 0.8)] = MASK_ID
    swap = selected & (action >= 0.8) & (action < 0.9)
    out[swap] = random_tok[swap]
    return out, selected


def mlm_loss(targets, selected, text_states, head_W: Parameter, head_b: Parameter):
    """Cross-entropy on selected positions; returns ``(loss, dtext_states)``."""
    dts = np.zeros_like(text_states)
    n_sel = int(selected.sum())
    if n_sel == 0:
        return 0.0, dts
    hs = text_states[selected]
    logits = hs @ head_W.value + head_b.value
    lp = log_softmax(logits)
    tgt = np.asarray(targets)[selected]
    loss = float(-lp[np.arange(n_sel), tgt].mean())
    dlogits = np.exp(lp)
    dlogits[np.arange(n_sel), tgt] -= 1.0
    dlogits /= n_sel
    head_W.accumulate(hs.T @ dlogits)
    head_b.accumulate(dlogits.sum(axis=0))
    dts[selected] = dlogits @ head_W.value.T
    return loss, dts


def _l2n(x):
    nrm = np.sqrt((x * x).sum(axis=1, keepdims=True))
    return x / nrm, nrm


def _l2n_backward(dy, y, nrm):
    return (dy - y * (dy * y).sum(axis=1, keepdims=True)) / nrm


def cl_loss(image_vecs, text_vecs, temperature: float = 0.07):
    """Symmetric InfoNCE over cosine similarities.

    Returns ``(loss, dimage, dtext)``.
    """
    image_vecs = np.asarray(image_vecs, dtype=DTYPE)
    text_vecs = np.asarray(text_vecs, dtype=DTYPE)
    B = image_vecs.shape[0]
    if B < 2:
        raise ConfigurationError("contrastive loss needs at least two pairs")
    a, na = _l2n(image_vecs)
    b, nb = _l2n(text_vecs)
    logits = (a @ b.T) / temperature
    lr = log_softmax(logits, axis=1)
    lc = log_softmax(logits, axis=0)
    idx = np.arange(B)
    loss = float(-0.5 * (lr[idx, idx].mean() + lc[idx, idx].mean()))
    eye = np.eye(B)
    dlogits = 0.5 * ((np.exp(lr) - eye) + (np.exp(lc) - eye)) / B
    dlogits /= temperature
    da = dlogits @ b
    db = dlogits.T @ a
    return loss, _l2n_backward(da, a, na), _l2n_backward(db, b, nb)
