import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gshn.fusion import (
    FusionMode,
    FusionParams,
    fuse,
    hybrid_backward,
    hybrid_forward,
    squeeze,
    squeeze_ratio,
)
from gshn.memory import SemanticMemory, smu_init, smu_readout, smu_readout_backward
from gshn.numerics import ConfigurationError, DimensionError, Parameter, RngStream, gradcheck


def memory(d=5, c=7, seed=0):
    return smu_init(d, c, RngStream(seed))


class TestSmuInit:
    def test_deterministic(self):
        np.testing.assert_array_equal(memory(seed=3).M.value, memory(seed=3).M.value)

    def test_paper_scale_shape(self):
        assert smu_init(768, 3000, RngStream(0)).M.shape == (768, 3000)

    def test_column_norms_near_one(self):
        M = smu_init(64, 256, RngStream(1)).M.value
        assert 0.9 <= np.linalg.norm(M, axis=0).mean() <= 1.1

    def test_rejects_bad_dims(self):
        with pytest.raises(ConfigurationError):
            smu_init(0, 4, RngStream(0))


class TestSmuReadout:
    @pytest.mark.parametrize("count", [1.0, 3.0, 7.0])
    def test_one_hot_selects_column(self, count):
        mem = memory()
        counts = np.zeros((1, 7))
        counts[0, 4] = count
        E, _ = smu_readout(counts, mem)
        np.testing.assert_array_equal(E[0], mem.M.value[:, 4])

    def test_zero_row_is_zero(self):
        E, _ = smu_readout(np.zeros((2, 7)), memory())
        assert np.all(E == 0.0)

    def test_weighted_mean_matches_loop(self):
        mem = memory()
        counts = np.zeros((1, 7))
        counts[0, 1], counts[0, 5] = 2.0, 1.0
        E, _ = smu_readout(counts, mem)
        M = mem.M.value
        naive = np.zeros(5)
        for j in range(7):
            naive += counts[0, j] * M[:, j]
        np.testing.assert_allclose(E[0], naive / 3, atol=1e-15)
        np.testing.assert_allclose(E[0], (2 * M[:, 1] + M[:, 5]) / 3, atol=1e-15)

    def test_capacity_mismatch(self):
        with pytest.raises(DimensionError):
            smu_readout(np.zeros((2, 3)), memory())

    @given(st.integers(0, 10**6), st.integers(1, 6))
    @settings(max_examples=40, deadline=None)
    def test_count_scaling_invariance_is_exact(self, seed, k):
        rng = RngStream(seed)
        mem = memory(seed=seed)
        # power-of-two scaling keeps every intermediate exactly representable
        counts = rng.integers(0, 11, (4, 7)).astype(float)
        E1, _ = smu_readout(counts, mem)
        E2, _ = smu_readout(counts * 2.0 ** k, mem)
        np.testing.assert_array_equal(E1, E2)

    def test_count_doubling_invariance_bit_exact(self):
        rng = RngStream(9)
        mem = smu_init(64, 256, rng.child(1))
        counts = rng.integers(0, 11, (12, 256)).astype(float)
        np.testing.assert_array_equal(smu_readout(counts, mem)[0],
                                      smu_readout(2 * counts, mem)[0])

    @given(st.integers(0, 10**6))
    @settings(max_examples=40, deadline=None)
    def test_rows_within_column_norm_bound(self, seed):
        rng = RngStream(seed)
        mem = memory(seed=seed)
        E, _ = smu_readout(rng.integers(0, 5, (6, 7)).astype(float), mem)
        bound = np.linalg.norm(mem.M.value, axis=0).max()
        assert np.all(np.linalg.norm(E, axis=1) <= bound + 1e-12)

    def test_gradient_reaches_only_active_columns(self):
        mem = memory()
        counts = np.zeros((1, 7))
        counts[0, [0, 3]] = [1.0, 2.0]
        E, denom = smu_readout(counts, mem)
        smu_readout_backward(np.ones_like(E), counts, denom, mem)
        active = np.any(mem.M.grad != 0.0, axis=0)
        np.testing.assert_array_equal(active, counts[0] > 0)

    def test_frozen_memory_gets_no_gradient(self):
        mem = memory()
        counts = np.ones((2, 7))
        E, denom = smu_readout(counts, mem)
        smu_readout_backward(np.ones_like(E), counts, denom, mem, frozen=True)
        assert np.all(mem.M.grad == 0.0)

    def test_gradcheck_memory_and_counts(self):
        rng = RngStream(4)
        mem = memory(seed=4)
        c = Parameter("counts", rng.uniform((3, 7), 0.0, 3.0))
        c.value[1] = rng.uniform(7, 0.0, 0.1)  # row below the count floor
        U = rng.normal((3, 5))

        def f():
            E, denom = smu_readout(c.value, mem)
            c.accumulate(smu_readout_backward(U, c.value, denom, mem))
            return float((U * E).sum())

        rep = gradcheck(f, [mem.M, c])
        assert max(r["max_rel_error"] for r in rep.values()) < 1e-6


class TestFusionMode:
    @pytest.mark.parametrize("text,kind,value", [
        ("trainable", "trainable", None), ("gat_only", "gat_only", None),
        ("snn_only", "snn_only", None), ("fixed:0.25", "fixed", 0.25),
    ])
    def test_parse(self, text, kind, value):
        m = FusionMode.parse(text)
        assert m.kind == kind and m.value == value

    @pytest.mark.parametrize("text", ["fixed:1.5", "fixed:x", "bogus"])
    def test_invalid(self, text):
        with pytest.raises(ConfigurationError):
            FusionMode.parse(text)


class TestSqueezeRatio:
    def test_zero_weights_half(self):
        p = FusionParams(3, RngStream(0))
        p.W_fc.value[:] = 0.0
        r, _ = squeeze_ratio(RngStream(1).normal((4, 3)), p)
        np.testing.assert_array_equal(r, 0.5)

    def test_hand_example(self):
        p = FusionParams(2, RngStream(0))
        p.W_fc.value[:] = np.eye(2)
        r, z = squeeze_ratio(np.array([[2.0, 0.0], [0.0, 2.0]]), p)
        np.testing.assert_array_equal(z, [[1.0, 1.0]])
        np.testing.assert_allclose(r, [[0.7311, 0.7311]], atol=5e-5)

    @given(st.integers(0, 10**6), st.floats(0.1, 50))
    @settings(max_examples=40, deadline=None)
    def test_strictly_inside_unit_interval(self, seed, scale):
        rng = RngStream(seed)
        p = FusionParams(4, rng.child(1))
        r, _ = squeeze_ratio(rng.normal((5, 4), 0, scale) / scale, p)
        assert np.all((r > 0) & (r < 1))

    def test_per_graph_squeeze(self):
        F = np.array([[1.0], [3.0], [10.0]])
        np.testing.assert_array_equal(squeeze(F, np.array([0, 0, 1]), 2), [[2.0], [10.0]])


class TestFuse:
    def test_zero_snn_branch_is_identity(self):
        rng = RngStream(0)
        F = rng.normal((4, 3))
        for mode in ("trainable", "fixed:1", "fixed:0.3", "gat_only"):
            V = fuse(F, np.zeros_like(F), rng.uniform(3), mode)
            np.testing.assert_array_equal(V, F)

    def test_fixed_modes(self):
        rng = RngStream(1)
        F, E = rng.normal((4, 3)), rng.normal((4, 3))
        np.testing.assert_array_equal(fuse(F, E, np.zeros(3), "fixed:0"), F)
        np.testing.assert_array_equal(fuse(F, E, np.ones(3), "fixed:1"), E + F)
        np.testing.assert_array_equal(fuse(F, E, None, "snn_only"), E)

    def test_r_zero_bit_identical_to_gat_only(self):
        rng = RngStream(2)
        F, E = rng.normal((6, 4)), rng.normal((6, 4))
        gid = np.array([0, 0, 0, 1, 1, 1])
        a, _ = hybrid_forward(F, E, FusionParams(4, rng, "fixed:0"), gid, 2)
        b, _ = hybrid_forward(F, E, FusionParams(4, rng, "gat_only"), gid, 2)
        np.testing.assert_array_equal(a, b)

    def test_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            fuse(np.zeros((2, 3)), np.zeros((3, 3)), np.zeros(3), "trainable")

    @given(st.integers(0, 10**6))
    @settings(max_examples=40, deadline=None)
    def test_perturbation_bounded_by_gate(self, seed):
        rng = RngStream(seed)
        F, E, r = rng.normal((5, 3)), rng.normal((5, 3), 0, 4.0), rng.uniform(3)
        V = fuse(F, E, r, "trainable")
        assert np.abs(V - F).max() <= r.max() * np.abs(E).max() + 1e-12

    def test_gradcheck_gate(self):
        rng = RngStream(3)
        p = FusionParams(4, rng.child(1))
        F, E = Parameter("F", rng.normal((5, 4))), Parameter("E", rng.normal((5, 4)))
        gid = np.array([0, 0, 1, 1, 1])
        U = rng.normal((5, 4))

        def f():
            V, cache = hybrid_forward(F.value, E.value, p, gid, 2)
            dF, dE = hybrid_backward(U, p, cache)
            F.accumulate(dF)
            E.accumulate(dE)
            return float((U * V).sum())

        rep = gradcheck(f, [p.W_fc, F, E])
        assert max(r["max_rel_error"] for r in rep.values()) < 1e-6

    def test_w_fc_gradient_only_through_gate(self):
        rng = RngStream(4)
        p = FusionParams(3, rng)
        F = rng.normal((4, 3))
        V, cache = hybrid_forward(F, np.zeros((4, 3)), p, np.zeros(4, dtype=int), 1)
        hybrid_backward(rng.normal((4, 3)), p, cache)
        assert np.all(p.W_fc.grad == 0.0)


def test_semantic_memory_exposes_parameter():
    mem = SemanticMemory(Parameter("smu.M", np.zeros((2, 3))))
    assert mem.capacity == 3 and mem.parameters() == [mem.M]
