import json
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gshn.data import (
    BACKGROUNDS,
    COLORS,
    RELATIONS,
    SHAPES,
    SIZES,
    DatasetParseError,
    SceneObject,
    SceneSpec,
    caption_scene,
    caption_vocabulary,
    generate_dataset,
    generate_scene,
    knn_edges,
    load_dataset,
    make_codebook,
    relation,
    render_features,
    write_dataset,
)
from gshn.graph import STUFF, THING
from gshn.numerics import ConfigurationError, RngStream
from gshn.text import UNK_ID, tokenize


def obj(x, y, shape="circle", color="red", size="small"):
    return SceneObject(shape, color, size, (x, y))


def relation_oracle(a, b):
    ax, ay = a.position
    bx, by = b.position
    if abs(ax - bx) >= abs(ay - by):
        return "left of" if ax < bx else "right of"
    return "above" if ay > by else "below"


@pytest.fixture(scope="module")
def small_dataset():
    return generate_dataset(3, n_train=60, n_val=20, n_test=20)


class TestGenerateScene:
    def test_deterministic(self):
        assert generate_scene(RngStream(4, 2)) == generate_scene(RngStream(4, 2))

    def test_separation_and_bounds_over_many_scenes(self):
        counts = np.zeros(9, dtype=int)
        for k in range(10_000):
            spec = generate_scene(RngStream(0).child(k))
            pos = np.array([o.position for o in spec.objects])
            assert 2 <= len(pos) <= 8
            assert np.all((pos >= 0) & (pos <= 1))
            for i, j in combinations(range(len(pos)), 2):
                assert np.hypot(*(pos[i] - pos[j])) >= 0.05
            counts[len(pos)] += 1
            assert spec.background in BACKGROUNDS
        # object counts uniform over 2..8: each bin within 4 sigma of 10000/7
        expect = 10_000 / 7
        assert np.all(np.abs(counts[2:] - expect) < 4 * np.sqrt(expect * 6 / 7))

    def test_attributes_from_closed_sets(self):
        for k in range(200):
            for o in generate_scene(RngStream(1).child(k)).objects:
                assert o.shape in SHAPES and o.color in COLORS and o.size in SIZES


class TestKnnEdges:
    @given(st.integers(2, 8), st.integers(0, 10**6))
    @settings(max_examples=50, deadline=None)
    def test_matches_brute_force(self, n, seed):
        pos = RngStream(seed).uniform((n, 2))
        expect = set()
        for i in range(n):
            d = [(np.sqrt((pos[i, 0] - pos[j, 0]) ** 2 + (pos[i, 1] - pos[j, 1]) ** 2), j)
                 for j in range(n) if j != i]
            d.sort()
            for _, j in d[:3]:
                expect |= {(i, j), (j, i)}
        assert knn_edges(pos) == expect

    def test_two_points(self):
        assert knn_edges(np.array([[0.0, 0.0], [1.0, 1.0]])) == {(0, 1), (1, 0)}


class TestRenderFeatures:
    def setup_method(self):
        self.book = make_codebook(16, RngStream(0))

    def test_small_dimension_rejected(self):
        with pytest.raises(ConfigurationError):
            make_codebook(8, RngStream(0))

    def test_structure(self):
        spec = generate_scene(RngStream(5))
        g = render_features(spec, 16, 0.0, RngStream(6), self.book)
        n = len(spec.objects)
        assert g.X.shape == (n + 1, 16)
        assert g.node_kind == [THING] * n + [STUFF]
        pairs = set(map(tuple, g.edges.tolist()))
        for i in range(n + 1):
            assert (i, i) in pairs
        for i in range(n):
            assert (i, n) in pairs and (n, i) in pairs
        np.testing.assert_array_equal(g.X[:n, 14:], [o.position for o in spec.objects])
        np.testing.assert_array_equal(g.X[n, :14], self.book[spec.background])

    def test_noise_free_is_reproducible(self):
        spec = generate_scene(RngStream(7))
        a = render_features(spec, 16, 0.0, RngStream(1), self.book)
        b = render_features(spec, 16, 0.0, RngStream(2), self.book)
        np.testing.assert_array_equal(a.X, b.X)

    def test_noise_level(self):
        spec = SceneSpec([obj(0.1 * k, 0.5) for k in range(1, 9)], "sky")
        clean = render_features(spec, 64, 0.0, RngStream(0), make_codebook(64, RngStream(0)))
        noisy = render_features(spec, 64, 0.1, RngStream(0), make_codebook(64, RngStream(0)))
        assert abs((noisy.X - clean.X).std() - 0.1) < 0.01


class TestCaptions:
    def test_relation_examples(self):
        assert relation(obj(0.1, 0.5), obj(0.9, 0.5)) == "left of"
        assert relation(obj(0.9, 0.5), obj(0.1, 0.5)) == "right of"
        assert relation(obj(0.5, 0.9), obj(0.5, 0.1)) == "above"
        assert relation(obj(0.5, 0.1), obj(0.5, 0.9)) == "below"

    def test_relation_matches_oracle(self):
        rng = RngStream(8)
        for _ in range(1000):
            a, b = obj(*rng.uniform(2)), obj(*rng.uniform(2))
            assert relation(a, b) == relation_oracle(a, b)

    def test_clean_captions_consistent_with_geometry(self):
        for k in range(300):
            rng = RngStream(9).child(k)
            spec = generate_scene(rng)
            words = caption_scene(spec, rng).split()
            rel = " ".join(words[4:-4])
            assert rel in RELATIONS
            a_words, b_words = words[1:4], words[-3:]
            ok = any(relation(a, b) == rel
                     for a in spec.objects for b in spec.objects
                     if a is not b and a.words() == a_words and b.words() == b_words)
            assert ok

    def test_corrupt_differs_in_one_word(self):
        for k in range(200):
            spec = generate_scene(RngStream(10).child(k))
            clean = caption_scene(spec, RngStream(11, k)).split()
            bad = caption_scene(spec, RngStream(11, k), corrupt=True).split()
            assert len(clean) == len(bad)
            assert sum(x != y for x, y in zip(clean, bad)) == 1

    def test_vocabulary_closed(self, small_dataset):
        vocab = caption_vocabulary()
        assert len(vocab.tokens) - 5 <= 40
        for rec in small_dataset.records:
            assert UNK_ID not in tokenize(rec.caption, vocab)


class TestDataset:
    def test_deterministic(self, small_dataset):
        other = generate_dataset(3, n_train=60, n_val=20, n_test=20)
        for a, b in zip(small_dataset.records, other.records):
            np.testing.assert_array_equal(a.nodes, b.nodes)
            assert a.caption == b.caption

    def test_splits_disjoint(self, small_dataset):
        ids = {s: {r.id for r in small_dataset.split(s)} for s in ("train", "val", "test")}
        assert [len(v) for v in ids.values()] == [60, 20, 20]
        assert not (ids["train"] & ids["val"] or ids["train"] & ids["test"]
                    or ids["val"] & ids["test"])

    def test_round_trip_bit_exact(self, small_dataset, tmp_path):
        path = tmp_path / "d.jsonl"
        write_dataset(path, small_dataset)
        back = load_dataset(path)
        assert back.header == small_dataset.header
        assert back.vocab.tokens == small_dataset.vocab.tokens
        for a, b in zip(small_dataset.records, back.records):
            assert a.nodes.tobytes() == b.nodes.tobytes()
            np.testing.assert_array_equal(a.edges, b.edges)
            assert (a.id, a.caption, a.split, a.node_kind) == (b.id, b.caption, b.split, b.node_kind)

    def test_empty_round_trip(self, tmp_path):
        path = tmp_path / "e.jsonl"
        write_dataset(path, [])
        assert path.read_text() == ""
        assert load_dataset(path).records == []

    def test_truncated_line_names_line(self, small_dataset, tmp_path):
        path = tmp_path / "t.jsonl"
        write_dataset(path, small_dataset)
        text = path.read_text()
        path.write_text(text[:-40])
        n_lines = len(text.splitlines())
        with pytest.raises(DatasetParseError, match=f"line {n_lines}"):
            load_dataset(path)

    @pytest.mark.parametrize("mutate,msg", [
        (lambda r: r.update(node_kind=r["node_kind"][:-1]), "node count"),
        (lambda r: r.update(edges=[[0, 99]]), "out of range"),
        (lambda r: r.update(split="dev"), "split"),
        (lambda r: r.pop("caption"), "malformed"),
    ])
    def test_invalid_records(self, small_dataset, tmp_path, mutate, msg):
        rec = small_dataset.records[0].to_json()
        mutate(rec)
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(rec) + "\n")
        with pytest.raises(DatasetParseError, match=msg) as err:
            load_dataset(path)
        assert err.value.line_no == 1
