"""Synthetic scene graphs with templated captions, stored as JSONL.

Each scene holds 2-8 attributed objects ("thing" nodes) on the unit square
plus one background ("stuff") node.  Node features concatenate codebook
vectors for the attributes with the object position, so the visual side of
the alignment task is learnable at small scale.  The y axis points up:
"above" means a larger y coordinate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import STUFF, THING, SceneGraph
from .numerics import DTYPE, ConfigurationError, RngStream
from .text import Vocabulary

SHAPES = ("circle", "square", "triangle", "star")
COLORS = ("red", "blue", "green", "yellow", "black")
SIZES = ("small", "large")
BACKGROUNDS = ("sky", "grass", "water")
RELATIONS = ("left of", "right of", "above", "below")
MIN_SEPARATION = 0.05
MAX_ATTEMPTS = 1000
FORMAT_VERSION = 1


class DatasetParseError(ValueError):
    def __init__(self, line_no: int, msg: str) -> None:
        super().__init__(f"line {line_no}: {msg}")
        self.line_no = line_no


@dataclass
class SceneObject:
    shape: str
    color: str
    size: str
    position: tuple[float, float]

    def words(self) -> list[str]:
        return [self.size, self.color, self.shape]


@dataclass
class SceneSpec:
    objects: list[SceneObject]
    background: str


def generate_scene(rng: RngStream) -> SceneSpec:
    while True:
        n = int(rng.integers(2, 9))
        pts: list[np.ndarray] = []
        for _ in range(MAX_ATTEMPTS):
            p = rng.uniform(2)
            if all(np.hypot(*(p - q)) >= MIN_SEPARATION for q in pts):
                pts.append(p)
                if len(pts) == n:
                    break
        if len(pts) == n:
            break
    objects = [
        SceneObject(SHAPES[rng.integers(len(SHAPES))], COLORS[rng.integers(len(COLORS))],
                    SIZES[rng.integers(len(SIZES))], (float(p[0]), float(p[1])))
        for p in pts
    ]
    return SceneSpec(objects, BACKGROUNDS[rng.integers(len(BACKGROUNDS))])


def make_codebook(d: int, rng: RngStream) -> dict[str, list[float]]:
    """Random attribute vectors drawn from N(0, I/d)."""
    if d < 16:
        raise ConfigurationError("feature dimension d must be >= 16")
    ds, dc, dz = _code_dims(d)
    std = 1.0 / np.sqrt(d)
    book = {}
    for names, width in ((SHAPES, ds), (COLORS, dc), (SIZES, dz), (BACKGROUNDS, d - 2)):
        for name in names:
            book[name] = [float(v) for v in rng.normal(width, 0.0, std)]
    return book


def _code_dims(d: int) -> tuple[int, int, int]:
    free = d - 2
    ds = dc = (free + 2) // 3
    return ds, dc, free - ds - dc


def knn_edges(positions: np.ndarray, k: int = 3) -> set[tuple[int, int]]:
    """Symmetrized k-nearest-neighbour pairs; ties go to the lower index."""
    n = len(positions)
    k = min(k, n - 1)
    out: set[tuple[int, int]] = set()
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    for i in range(n):
        order = sorted((float(dist[i, j]), j) for j in range(n) if j != i)
        for _, j in order[:k]:
            out.add((i, j))
            out.add((j, i))
    return out


def render_features(spec: SceneSpec, d: int, noise_sigma: float, rng: RngStream,
                    codebook: dict) -> SceneGraph:
    n = len(spec.objects)
    X = np.zeros((n + 1, d))
    for i, ob in enumerate(spec.objects):
        X[i, :d - 2] = np.concatenate(
            [codebook[ob.shape], codebook[ob.color], codebook[ob.size]])
        X[i, d - 2:] = ob.position
    X[n, :d - 2] = codebook[spec.background]
    X[n, d - 2:] = (0.5, 0.5)
    if noise_sigma > 0:
        X = X + rng.normal(X.shape, 0.0, noise_sigma)
    pos = np.array([ob.position for ob in spec.objects])
    edges = knn_edges(pos)
    for i in range(n):
        edges.add((i, n))
        edges.add((n, i))
    kinds = [THING] * n + [STUFF]
    return SceneGraph(X, sorted(edges), kinds)


def relation(a: SceneObject, b: SceneObject) -> str:
    """Spatial relation of ``a`` to ``b`` along the dominant axis."""
    dx = a.position[0] - b.position[0]
    dy = a.position[1] - b.position[1]
    if abs(dx) >= abs(dy):
        return "left of" if dx < 0 else "right of"
    return "above" if dy > 0 else "below"


def caption_scene(spec: SceneSpec, rng: RngStream, corrupt: bool = False) -> str:
    i, j = (int(v) for v in rng.permutation(len(spec.objects))[:2])
    a, b = spec.objects[i], spec.objects[j]
    wa, wb = a.words(), b.words()
    if corrupt:
        target = wa if rng.uniform() < 0.5 else wb
        slot = int(rng.integers(3))
        choices = (SIZES, COLORS, SHAPES)[slot]
        wrong = [c for c in choices if c != target[slot]]
        target[slot] = wrong[int(rng.integers(len(wrong)))]
    return " ".join(["a", *wa, relation(a, b), "a", *wb])


def caption_vocabulary() -> Vocabulary:
    words = ["a", *SIZES, *COLORS, *SHAPES]
    for rel in RELATIONS:
        words.extend(rel.split())
    return Vocabulary.from_corpus([" ".join(words)])


# ---------------------------------------------------------------------------
# dataset records and JSONL files


@dataclass
class SceneRecord:
    id: int
    nodes: np.ndarray
    node_kind: list[str]
    edges: np.ndarray
    caption: str
    split: str

    def graph(self) -> SceneGraph:
        return SceneGraph(self.nodes, self.edges, list(self.node_kind))

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "nodes": self.nodes.tolist(),
            "node_kind": list(self.node_kind),
            "edges": self.edges.tolist(),
            "caption": self.caption,
            "split": self.split,
        }


@dataclass
class Dataset:
    header: dict
    records: list[SceneRecord] = field(default_factory=list)

    def split(self, name: str) -> list[SceneRecord]:
        return [r for r in self.records if r.split == name]

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(self.header["vocab"])


def generate_dataset(seed: int, n_train: int = 2000, n_val: int = 200, n_test: int = 200,
                     d: int = 16, noise_sigma: float = 0.1) -> Dataset:
    root = RngStream(seed, 0)
    codebook = make_codebook(d, root.child(1))
    vocab = caption_vocabulary()
    header = {"version": FORMAT_VERSION, "d": d, "codebook": codebook,
              "vocab": vocab.tokens, "seed": seed, "noise_sigma": noise_sigma}
    splits = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
    records = []
    for sid, split in enumerate(splits):
        rng = root.child(2, sid)
        spec = generate_scene(rng)
        g = render_features(spec, d, noise_sigma, rng, codebook)
        records.append(SceneRecord(sid, g.X, g.node_kind, g.edges,
                                   caption_scene(spec, rng), split))
    return Dataset(header, records)


def write_dataset(path, dataset: Dataset | list) -> None:
    """Optional header line, then one JSON record per scene ordered by id."""
    if isinstance(dataset, list):
        dataset = Dataset({}, dataset)
    with open(path, "w", encoding="utf-8") as fh:
        if dataset.header:
            fh.write(json.dumps({"header": dataset.header}) + "\n")
        for rec in sorted(dataset.records, key=lambda r: r.id):
            fh.write(json.dumps(rec.to_json()) + "\n")


def _parse_record(obj: dict, line_no: int) -> SceneRecord:
    try:
        nodes = np.array(obj["nodes"], dtype=DTYPE)
        kinds = list(obj["node_kind"])
        edges = np.array(obj["edges"], dtype=np.int64).reshape(-1, 2)
        rec = SceneRecord(int(obj["id"]), nodes, kinds, edges, str(obj["caption"]),
                          str(obj["split"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetParseError(line_no, f"malformed record ({exc})") from None
    if nodes.ndim != 2 or nodes.shape[0] != len(kinds):
        raise DatasetParseError(line_no, "node count does not match node_kind")
    if edges.size and (edges.min() < 0 or edges.max() >= nodes.shape[0]):
        raise DatasetParseError(line_no, "edge endpoint out of range")
    if rec.split not in ("train", "val", "test"):
        raise DatasetParseError(line_no, f"unknown split {rec.split!r}")
    return rec


def load_dataset(path) -> Dataset:
    text = Path(path).read_text(encoding="utf-8")
    header: dict = {}
    records = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetParseError(line_no, f"invalid JSON ({exc.msg})") from None
        if "header" in obj and line_no == 1:
            header = obj["header"]
            continue
        records.append(_parse_record(obj, line_no))
    return Dataset(header, records)
