"""Contrastive-recall batches that form the SNN's input stream.

A batch is an anchor plus the items most similar to it, in descending
similarity.  During training the batch is fed to the SNN as one stream: the
membrane state carries from item to item and resets between batches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import SceneGraph
from .numerics import ConfigurationError, RngStream
from .text import Vocabulary, tokenize


@dataclass
class TrainItem:
    id: int
    graph: SceneGraph
    caption_ids: list[int]


def make_items(records, vocab: Vocabulary) -> list[TrainItem]:
    return [TrainItem(r.id, r.graph(), tokenize(r.caption, vocab)) for r in records]


@dataclass
class RecallIndex:
    ids: np.ndarray
    image_vecs: np.ndarray
    text_vecs: np.ndarray
    tokens: list
    itm_cache: dict

    def __len__(self) -> int:
        return len(self.ids)

    def unit_images(self) -> np.ndarray:
        n = np.linalg.norm(self.image_vecs, axis=1, keepdims=True)
        return self.image_vecs / np.maximum(n, 1e-300)

    def cosine(self, anchor: int, rows=None) -> np.ndarray:
        """Cosine similarity of the anchor row's image to ``rows`` (all by default)."""
        u = self.unit_images()
        rows = np.arange(len(self)) if rows is None else np.asarray(rows)
        return u[rows] @ u[anchor]


@dataclass
class Batch:
    items: list
    scores: np.ndarray

    @property
    def ids(self) -> list[int]:
        return [it.id for it in self.items]

    def __len__(self) -> int:
        return len(self.items)


def build_recall_index(model, items, seed: int) -> RecallIndex:
    """Pooled embeddings for every item, computed without touching parameters."""
    if not items:
        raise ConfigurationError("cannot index an empty dataset")
    enc = model.encode_items(items, seed)
    return RecallIndex(np.array([it.id for it in items]), enc.image_vecs,
                       enc.text_vecs, enc.tokens, {})


def rank_candidates(scores: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Order by descending score; equal scores go to the lower id."""
    return np.lexsort((ids, -scores))


def recall_batch(index: RecallIndex, anchor: int, B: int, rng: RngStream | None = None,
                 candidates=None, scorer=None) -> Batch:
    """Anchor first, then the ``B - 1`` most similar candidates.

    ``anchor`` and ``candidates`` are row positions in the index.  ``scorer``
    maps ``(anchor, rows) -> scores`` and defaults to image cosine.  ``rng``
    is accepted for interface symmetry; selection itself is deterministic.
    """
    if B > len(index):
        raise ConfigurationError(f"batch size {B} exceeds dataset size {len(index)}")
    if candidates is None:
        candidates = np.arange(len(index))
    rows = np.array([c for c in candidates if c != anchor], dtype=np.int64)
    if len(rows) < B - 1:
        raise ConfigurationError(
            f"only {len(rows)} candidates for a batch of {B}")
    scores = (scorer or index.cosine)(anchor, rows)
    order = rank_candidates(scores, index.ids[rows])[:B - 1]
    picked = np.concatenate([[anchor], rows[order]])
    first = scorer(anchor, [anchor]) if scorer else index.cosine(anchor, [anchor])
    return Batch(list(picked), np.concatenate([first, scores[order]]))


def itm_scorer(model, index: RecallIndex, items, shortlist: int):
    """Rerank a cosine shortlist by the matching head (anchor image vs caption)."""
    def score(anchor, rows):
        rows = np.asarray(rows)
        cos = index.cosine(anchor, rows)
        keep = rank_candidates(cos, index.ids[rows])[:shortlist]
        out = np.full(len(rows), -np.inf)
        key = [(int(anchor), int(r)) for r in rows[keep]]
        todo = [k for k in key if k not in index.itm_cache]
        if todo:
            s = model.itm_scores([index.tokens[a] for a, _ in todo],
                                 [items[r].caption_ids for _, r in todo])
            index.itm_cache.update(zip(todo, s))
        out[keep] = [index.itm_cache[k] for k in key]
        return out
    return score


def plan_epoch(index: RecallIndex, items, B: int, rng: RngStream, scorer=None) -> list[Batch]:
    """Cover the dataset with ``len // B`` recall batches (rounded up).

    Anchors are visited in a seeded order; each batch recalls from items not
    yet used this epoch, and only the final batch may top up with reused
    items, so every item is seen and the amount of work is fixed.
    """
    N = len(index)
    if B > N:
        raise ConfigurationError(f"batch size {B} exceeds dataset size {N}")
    used = np.zeros(N, dtype=bool)
    batches = []
    for anchor in rng.permutation(N):
        if used[anchor]:
            continue
        free = np.flatnonzero(~used)
        if len(free) >= B:
            batch = recall_batch(index, int(anchor), B, candidates=free, scorer=scorer)
        else:
            batch = _top_up(index, int(anchor), B, free, scorer)
        used[batch.items] = True
        batches.append(Batch([items[r] for r in batch.items], batch.scores))
    return batches


def _top_up(index: RecallIndex, anchor: int, B: int, free, scorer) -> Batch:
    """Final batch: every remaining item, then the best already-used ones."""
    batch = recall_batch(index, anchor, len(index), scorer=scorer)
    by_row = dict(zip(batch.items, batch.scores))
    fresh = set(int(r) for r in free)
    order = [r for r in batch.items if r in fresh and r != anchor]
    order += [r for r in batch.items if r not in fresh]
    picked = [anchor] + order[:B - 1]
    return Batch(picked, np.array([by_row[r] for r in picked]))


@dataclass
class Stream:
    graphs: list
    caption_ids: list
    segments: list


def assemble_stream(batch: Batch) -> Stream:
    """Graphs in batch order with the node range each occupies in the stream."""
    graphs = [it.graph for it in batch.items]
    bounds = np.cumsum([0] + [g.n_nodes for g in graphs])
    return Stream(graphs, [it.caption_ids for it in batch.items],
                  list(zip(bounds[:-1].tolist(), bounds[1:].tolist())))
