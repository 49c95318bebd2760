import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gshn.numerics import ConfigurationError, Parameter, RngStream, gradcheck
from gshn.text import (
    CLS_ID,
    MASK_ID,
    PAD_ID,
    SEP_ID,
    SPECIALS,
    UNK_ID,
    CapacityError,
    TransformerConfig,
    TransformerParams,
    Vocabulary,
    bce,
    cl_loss,
    encoder_forward,
    itm_loss,
    joint_encode,
    joint_encode_backward,
    mlm_loss,
    mlm_mask,
    pad_ids,
    pool_unimodal,
    tokenize,
)

VOCAB = Vocabulary.from_corpus(["a red circle left of a blue square"])


def small_params(n_layers=2, seed=0, vocab=12, max_text=8):
    cfg = TransformerConfig(model_dim=8, n_layers=n_layers, n_heads=2, ffn_dim=12,
                            max_text=max_text, seq_cap=20)
    return TransformerParams(cfg, vocab, RngStream(seed))


def cl_oracle(a, b, tau):
    """Symmetric InfoNCE by explicit loops."""
    a = a / np.linalg.norm(a, axis=1, keepdims=True)
    b = b / np.linalg.norm(b, axis=1, keepdims=True)
    B = len(a)
    S = [[float(a[i] @ b[j]) / tau for j in range(B)] for i in range(B)]
    row = sum(-S[i][i] + np.log(sum(np.exp(S[i][j]) for j in range(B))) for i in range(B))
    col = sum(-S[j][j] + np.log(sum(np.exp(S[i][j]) for i in range(B))) for j in range(B))
    return 0.5 * (row + col) / B


class TestVocabulary:
    def test_specials_first(self):
        assert tuple(VOCAB.tokens[:5]) == SPECIALS
        assert (PAD_ID, MASK_ID, CLS_ID, SEP_ID, UNK_ID) == (0, 1, 2, 3, 4)

    def test_round_trip(self, tmp_path):
        VOCAB.save(tmp_path / "v.txt")
        assert Vocabulary.load(tmp_path / "v.txt").tokens == VOCAB.tokens
        lines = (tmp_path / "v.txt").read_text().splitlines()
        assert lines.index("red") == VOCAB.id("red")

    def test_rejects_bad_vocab(self):
        with pytest.raises(ConfigurationError):
            Vocabulary(["a", "b"])
        with pytest.raises(ConfigurationError):
            Vocabulary(list(SPECIALS) + ["x", "x"])


class TestTokenize:
    def test_empty(self):
        assert tokenize("", VOCAB) == [CLS_ID, SEP_ID]

    def test_known_words(self):
        assert tokenize("Red circle", VOCAB) == [CLS_ID, VOCAB.id("red"), VOCAB.id("circle"), SEP_ID]

    def test_unknown_word(self):
        assert tokenize("red zzz", VOCAB) == [CLS_ID, VOCAB.id("red"), UNK_ID, SEP_ID]

    def test_pad_ids_overflow(self):
        with pytest.raises(CapacityError):
            pad_ids([[1, 2, 3]], length=2)


class TestPoolUnimodal:
    def test_single_token(self):
        np.testing.assert_array_equal(pool_unimodal(np.array([[1.0, 2.0]])), [1.0, 2.0])

    def test_known_mean(self):
        np.testing.assert_array_equal(pool_unimodal(np.array([[1.0, 3.0], [5.0, 7.0]])), [3.0, 5.0])

    def test_duplicated_set(self):
        X = RngStream(0).normal((3, 4))
        np.testing.assert_allclose(pool_unimodal(np.vstack([X, X])), pool_unimodal(X), atol=1e-15)

    def test_mask_ignores_padding(self):
        X = np.array([[1.0], [3.0], [99.0]])
        assert pool_unimodal(X, np.array([1, 1, 0]))[0] == 2.0


class TestJointEncode:
    def test_zero_layers_is_embedding(self):
        p = small_params(n_layers=0)
        V = RngStream(1).normal((3, 8))
        ids = [CLS_ID, 6, 7, SEP_ID]
        Q, cls, ts, _ = joint_encode(V, ids, p)
        seg = p.seg.value
        np.testing.assert_allclose(Q[:3], V + seg[0], atol=1e-15)
        np.testing.assert_allclose(Q[3:], p.tok.value[ids] + p.pos.value[:4] + seg[1], atol=1e-15)
        np.testing.assert_array_equal(cls, Q[3])
        np.testing.assert_array_equal(ts, Q[3:])

    def test_attention_rows_normalized(self):
        p = small_params()
        ids = pad_ids([[CLS_ID, 6, SEP_ID], [CLS_ID, 6, 7, 8, SEP_ID]])
        V = RngStream(2).normal((2, 3, 8))
        vis_mask = np.array([[True, True, False], [True, True, True]])
        from gshn.text import embed_inputs

        x, mask = embed_inputs(V, vis_mask, ids, p)
        _, caches = encoder_forward(x, mask, p)
        for c in caches:
            A = c[5]
            np.testing.assert_allclose(A.sum(axis=-1), 1.0, atol=1e-10)
            assert np.all(A[..., ~mask[0]][0] == 0.0)

    def test_pad_tail_does_not_change_cls(self):
        p = small_params()
        V = RngStream(3).normal((1, 3, 8))
        ids = [CLS_ID, 6, 7, SEP_ID]
        _, a, _, _ = joint_encode(V, pad_ids([ids]), p)
        _, b, _, _ = joint_encode(V, pad_ids([ids], length=8), p)
        assert np.abs(a - b).max() < 1e-10

    def test_sequence_overflow(self):
        p = small_params()
        with pytest.raises(CapacityError):
            joint_encode(np.zeros((15, 8)), [CLS_ID] * 7, p)

    def test_heads_must_divide_width(self):
        with pytest.raises(ConfigurationError):
            TransformerConfig(model_dim=10, n_heads=4)

    def test_gradcheck_through_encoder(self):
        p = small_params(seed=4)
        rng = RngStream(5)
        V = Parameter("V", rng.normal((2, 3, 8)))
        ids = pad_ids([[CLS_ID, 6, 7, SEP_ID], [CLS_ID, 9, SEP_ID]])
        vis_mask = np.array([[True, True, True], [True, True, False]])
        U = rng.normal((2, 7, 8))

        def f():
            Q, _, _, cache = joint_encode(V.value, ids, p, vis_mask=vis_mask)
            V.accumulate(joint_encode_backward(U, p, cache))
            return float((U * Q).sum())

        rep = gradcheck(f, p.parameters() + [V])
        assert max(r["max_rel_error"] for r in rep.values()) < 1e-6


class TestItmLoss:
    def test_zero_head(self):
        loss, score, _ = itm_loss(np.ones(4), 1.0, Parameter("h", np.zeros((4, 1))))
        assert score[0] == 0.5 and loss == pytest.approx(np.log(2))

    @pytest.mark.parametrize("label,expect", [(1.0, 0.1054), (0.0, 2.3026)])
    def test_bce_values(self, label, expect):
        assert bce(0.9, label) == pytest.approx(expect, abs=5e-5)

    def test_gradient(self):
        rng = RngStream(6)
        head = Parameter("h", rng.normal((5, 1)))
        c = Parameter("c", rng.normal((4, 5)))
        labels = np.array([1.0, 0.0, 1.0, 0.0])

        def f():
            loss, _, dcls = itm_loss(c.value, labels, head)
            c.accumulate(dcls)
            return loss

        rep = gradcheck(f, [head, c])
        assert max(r["max_rel_error"] for r in rep.values()) < 1e-6


class TestMlm:
    def test_only_specials_gives_zero(self):
        ids = np.array([[CLS_ID, SEP_ID, PAD_ID]])
        _, sel = mlm_mask(ids, 12, RngStream(0), ratio=0.99)
        assert not sel.any()
        loss, d = mlm_loss(ids, sel, np.ones((1, 3, 8)), Parameter("W", np.ones((8, 12))),
                           Parameter("b", np.zeros(12)))
        assert loss == 0.0 and np.all(d == 0.0)

    def test_uniform_logits(self):
        ids = np.array([[CLS_ID, 7, 8, SEP_ID]])
        sel = np.array([[False, True, True, False]])
        loss, _ = mlm_loss(ids, sel, np.zeros((1, 4, 8)), Parameter("W", np.zeros((8, 50))),
                           Parameter("b", np.zeros(50)))
        assert loss == pytest.approx(np.log(50))

    def test_mask_reproducible_and_bert_split(self):
        ids = np.full((200, 50), 9)
        a, sa = mlm_mask(ids, 20, RngStream(3), 0.15)
        b, sb = mlm_mask(ids, 20, RngStream(3), 0.15)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(sa, sb)
        n = sa.sum()
        assert abs(n / ids.size - 0.15) < 3 * np.sqrt(0.15 * 0.85 / ids.size)
        frac_mask = (a[sa] == MASK_ID).mean()
        frac_same = (a[sa] == 9).mean()
        assert abs(frac_mask - 0.8) < 0.03
        # unchanged = the 10% keep branch plus random draws that hit the same token
        assert abs(frac_same - (0.1 + 0.1 / 15)) < 0.03
        assert np.all(a[~sa] == 9)


class TestClLoss:
    def test_equal_similarities_give_log_b(self):
        B = 5
        v = np.ones((B, 3))
        assert cl_loss(v, v, 0.07)[0] == pytest.approx(np.log(B), abs=1e-12)

    def test_two_pair_oracle(self):
        a = np.array([[1.0, 0.0], [0.0, 1.0]])
        b = np.array([[1.0, 0.0], [0.0, 1.0]])
        for tau in (0.07, 1.0, 100.0):
            assert cl_loss(a, b, tau)[0] == pytest.approx(cl_oracle(a, b, tau), rel=1e-12)
        assert cl_loss(a, b, 1e6)[0] == pytest.approx(np.log(2), abs=1e-5)

    def test_perfect_alignment_limit(self):
        v = np.eye(4)
        assert cl_loss(v, v, 0.01)[0] < 1e-10

    @given(st.integers(2, 8), st.integers(0, 10**6), st.floats(0.01, 100.0))
    @settings(max_examples=30, deadline=None)
    def test_matches_oracle_and_scale_invariant(self, B, seed, scale):
        rng = RngStream(seed)
        a, b = rng.normal((B, 4)), rng.normal((B, 4))
        loss = cl_loss(a, b, 0.07)[0]
        assert loss >= 0
        assert loss == pytest.approx(cl_oracle(a, b, 0.07), rel=1e-10)
        assert cl_loss(a * scale, b, 0.07)[0] == pytest.approx(loss, rel=1e-10)

    def test_rejects_single_pair(self):
        with pytest.raises(ConfigurationError):
            cl_loss(np.ones((1, 3)), np.ones((1, 3)))

    def test_gradient(self):
        rng = RngStream(7)
        a, b = Parameter("a", rng.normal((4, 3))), Parameter("b", rng.normal((4, 3)))

        def f():
            loss, da, db = cl_loss(a.value, b.value, 0.07)
            a.accumulate(da)
            b.accumulate(db)
            return loss

        rep = gradcheck(f, [a, b])
        assert max(r["max_rel_error"] for r in rep.values()) < 1e-6


def test_gradcheck_encoder_with_all_losses():
    cfg = TransformerConfig(model_dim=8, n_layers=2, n_heads=4, ffn_dim=16, max_text=8, seq_cap=20)
    p = TransformerParams(cfg, 12, RngStream(20))
    rng = RngStream(21)
    V = Parameter("V", rng.normal((2, 3, 8)))
    ids = pad_ids([[CLS_ID, 6, 7, 8, SEP_ID], [CLS_ID, 9, 10, SEP_ID]])
    vis_mask = np.ones((2, 3), dtype=bool)
    selected = np.zeros(ids.shape, dtype=bool)
    selected[:, 1:3] = True
    itm_head = Parameter("itm", rng.normal((8, 1), 0, 0.5))
    W, b = Parameter("mlm_W", rng.normal((8, 12), 0, 0.3)), Parameter("mlm_b", np.zeros(12))
    txt = Parameter("txt", rng.normal((2, 8)))

    def f():
        Q, cls, states, cache = joint_encode(V.value, ids, p, vis_mask=vis_mask)
        l_itm, _, dcls = itm_loss(cls, np.array([1.0, 0.0]), itm_head)
        l_mlm, dts = mlm_loss(ids, selected, states, W, b)
        img = V.value.mean(axis=1)
        l_cl, dimg, dtxt = cl_loss(img, txt.value, 0.07)
        dQ = np.zeros_like(Q)
        dQ[:, 3] += dcls
        dQ[:, 3:] += dts
        dV = joint_encode_backward(dQ, p, cache) + dimg[:, None, :] / 3
        V.accumulate(dV)
        txt.accumulate(dtxt)
        return l_itm + l_mlm + l_cl

    rep = gradcheck(f, p.parameters() + [V, txt, itm_head, W, b])
    assert max(r["max_rel_error"] for r in rep.values()) < 1e-5
