import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from regembed.core import RandomSource
from regembed.models import EmbeddingTable, Gradients
from regembed.regularizers import (
    DROPOUT,
    L2_EMBEDDINGS,
    L2_WEIGHTS,
    REEMBED,
    RegularizerSet,
    RegularizerSpec,
    dropout_mask,
    penalty_gradient,
    penalty_value,
    test_scale,
)


def small_params():
    return {"W_a": np.array([[1.0, 2.0], [3.0, 4.0]]), "b_a": np.array([5.0, 6.0])}


class TestPenaltyValues:
    def test_weight_norm(self):
        assert penalty_value(RegularizerSpec(L2_WEIGHTS, 1.0), small_params(), None) == 30.0

    def test_biases_optional(self):
        spec = RegularizerSpec(L2_WEIGHTS, 1.0, include_biases=True)
        assert penalty_value(spec, small_params(), None) == 30.0 + 61.0

    def test_reembed_zero_at_snapshot(self):
        emb = EmbeddingTable(np.arange(12.0).reshape(4, 3))
        assert penalty_value(RegularizerSpec(REEMBED, 1.0), {}, emb) == 0.0

    def test_embedding_norms_against_loop(self):
        rng = np.random.default_rng(0)
        phi = rng.normal(size=(5, 3))
        phi0 = rng.normal(size=(5, 3))
        emb = EmbeddingTable(phi, phi0=phi0)
        l2 = sum(emb.phi[r, j] ** 2 for r in range(1, 5) for j in range(3))
        re = sum((emb.phi[r, j] - phi0[r, j]) ** 2 for r in range(1, 5) for j in range(3))
        assert penalty_value(RegularizerSpec(L2_EMBEDDINGS, 1.0), {}, emb) == pytest.approx(l2, rel=1e-12)
        assert penalty_value(RegularizerSpec(REEMBED, 1.0), {}, emb) == pytest.approx(re, rel=1e-12)

    def test_gradient_of_half_lambda(self):
        params = {"W_x": np.array([1.0, 2.0])}
        grads = Gradients.zeros_like(params)
        penalty_gradient(RegularizerSpec(L2_WEIGHTS, 0.5), params, None, grads)
        np.testing.assert_array_equal(grads.params["W_x"], [1.0, 2.0])

    def test_dropout_has_no_penalty(self):
        with pytest.raises(ValueError):
            penalty_value(RegularizerSpec(DROPOUT, 0.5), {}, None)

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, (3, 4), elements=st.floats(-1e6, 1e6)),
           arrays(np.float64, (3, 4), elements=st.floats(-1e6, 1e6)))
    def test_nonnegative(self, phi, phi0):
        emb = EmbeddingTable(phi, phi0=phi0)
        params = {"W_x": phi}
        for kind in (L2_WEIGHTS, L2_EMBEDDINGS, REEMBED):
            assert penalty_value(RegularizerSpec(kind, 1.0), params, emb) >= 0.0

    @pytest.mark.parametrize("kind", [L2_WEIGHTS, L2_EMBEDDINGS, REEMBED])
    def test_gradient_finite_differences(self, kind):
        rng = np.random.default_rng(1)
        params = {"W_x": rng.normal(size=(3, 2)), "b_x": rng.normal(size=2)}
        emb = EmbeddingTable(rng.normal(size=(4, 2)), phi0=rng.normal(size=(4, 2)))
        spec = RegularizerSpec(kind, 0.3)
        grads = Gradients.zeros_like(params)
        dense = np.zeros_like(emb.phi)
        penalty_gradient(spec, params, emb, grads, emb_grad=dense)
        target = params["W_x"] if kind == L2_WEIGHTS else emb.phi
        analytic = grads.params["W_x"] if kind == L2_WEIGHTS else dense
        numeric = np.zeros_like(target)
        eps = 1e-5
        for idx in np.ndindex(target.shape):
            old = target[idx]
            target[idx] = old + eps
            up = spec.value * penalty_value(spec, params, emb)
            target[idx] = old - eps
            down = spec.value * penalty_value(spec, params, emb)
            target[idx] = old
            numeric[idx] = (up - down) / (2 * eps)
        err = np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-7)
        assert err < 1e-6
        if kind == L2_WEIGHTS:
            assert np.all(grads.params["b_x"] == 0)
        else:
            assert np.all(dense[0] == 0)

    def test_sparse_rows_match_dense(self):
        rng = np.random.default_rng(2)
        emb = EmbeddingTable(rng.normal(size=(6, 2)), phi0=rng.normal(size=(6, 2)))
        spec = RegularizerSpec(REEMBED, 0.7)
        dense = np.zeros_like(emb.phi)
        penalty_gradient(spec, {}, emb, Gradients({}), emb_grad=dense)
        grads = penalty_gradient(spec, {}, emb, Gradients({}), active_rows=[0, 2, 5])
        assert set(grads.rows) == {2, 5}
        for r in (2, 5):
            np.testing.assert_array_equal(grads.rows[r], dense[r])


class TestSpecs:
    @pytest.mark.parametrize("kind,value", [(DROPOUT, 1.0), (DROPOUT, -0.1), (L2_WEIGHTS, -1.0),
                                            ("nonsense", 0.1)])
    def test_rejects_bad_values(self, kind, value):
        with pytest.raises(ValueError):
            RegularizerSpec(kind, value)

    def test_set_rejects_duplicates(self):
        with pytest.raises(ValueError):
            RegularizerSet([RegularizerSpec(L2_WEIGHTS, 1.0), RegularizerSpec(L2_WEIGHTS, 2.0)])

    def test_active_at(self):
        regs = RegularizerSet([RegularizerSpec(L2_WEIGHTS, 1.0, activation_epoch=3),
                               RegularizerSpec(DROPOUT, 0.5)])
        assert [s.kind for s in regs.active_at(2)] == [DROPOUT]
        assert len(regs.active_at(3)) == 2


class TestDropout:
    def test_zero_rate_is_identity(self):
        rng = RandomSource(0)
        state = list(rng._s)
        np.testing.assert_array_equal(dropout_mask(7, 0.0, rng), np.ones(7))
        assert rng._s == state

    def test_keep_fraction(self):
        mask = dropout_mask(100_000, 0.5, RandomSource(1))
        assert set(np.unique(mask)) <= {0.0, 1.0}
        assert abs(mask.mean() - 0.5) <= 0.01

    def test_deterministic(self):
        a = dropout_mask(50, 0.3, RandomSource(2))
        np.testing.assert_array_equal(a, dropout_mask(50, 0.3, RandomSource(2)))

    def test_test_scale(self):
        np.testing.assert_array_equal(test_scale([2.0, 4.0], 0.5), [1.0, 2.0])

    def test_rejects_rate_one(self):
        with pytest.raises(ValueError):
            dropout_mask(3, 1.0, RandomSource(0))
