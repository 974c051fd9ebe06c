import math

import numpy as np
import pytest

from regembed.core import RandomSource
from regembed.data import SentenceExample, TreeExample
from regembed.models import (
    DropoutPlan,
    EmbeddingTable,
    ModelDims,
    WindowCNN,
    build_model,
    cnn_backward,
    cnn_forward,
    init_params,
    load_checkpoint,
    rnn_backward,
    rnn_forward,
    save_checkpoint,
)


def random_table(rng, vocab, d):
    phi = rng.normal(size=(vocab, d))
    return EmbeddingTable(phi, phi0=phi + 0.1 * rng.normal(size=(vocab, d)))


def random_params(kind, dims, seed):
    rng = np.random.default_rng(seed)
    params = init_params(kind, dims, RandomSource(seed))
    for k in params:
        params[k] = params[k] + 0.1 * rng.normal(size=params[k].shape)
    return params


def numeric(f, x, eps=1e-5):
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * eps)
    return g


def rel(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-7)


class TestWindowCNNForward:
    def test_zero_params_give_uniform(self):
        dims = ModelDims(vocab_size=6, embed_dim=3, hidden_dim=4, num_classes=10)
        params = {k: np.zeros_like(v) for k, v in init_params("cnn", dims, RandomSource(0)).items()}
        emb = EmbeddingTable(np.ones((6, 3)))
        probs, _ = cnn_forward(params, emb, SentenceExample((2, 3, 4), 0))
        np.testing.assert_allclose(probs, 0.1, atol=1e-15)

    def test_short_sentence_windows_and_padding(self):
        # 3 tokens, window 5: window i covers tokens i..i+4, so it holds 2+i pads
        emb = EmbeddingTable(np.arange(1, 13, dtype=float).reshape(4, 3) + 1.0)
        dims = ModelDims(vocab_size=4, embed_dim=3, hidden_dim=2, num_classes=2)
        params = init_params("cnn", dims, RandomSource(1))
        _, cache = cnn_forward(params, emb, SentenceExample((1, 2, 3), 0))
        X = cache["X"].reshape(3, 5, 3)
        assert X.shape[0] == 3
        pads = [int(np.sum(np.all(X[i] == 0, axis=1))) for i in range(3)]
        assert pads == [2, 3, 4]
        np.testing.assert_array_equal(X[1, 0], emb.phi[2])

    def test_max_pool_matches_brute_force(self):
        rng = np.random.default_rng(4)
        dims = ModelDims(vocab_size=9, embed_dim=3, hidden_dim=5, num_classes=4, window=3)
        params = random_params("cnn", dims, 4)
        emb = random_table(rng, 9, 3)
        x = SentenceExample((3, 4, 5, 6, 7, 8), 1)
        _, cache = cnn_forward(params, emb, x, window=3)
        n, d = 6, 3
        for j in range(5):
            best = -np.inf
            for i in range(n):
                win = []
                for s in range(3):
                    win.extend(emb.phi[x.tokens[i + s]] if i + s < n else np.zeros(d))
                best = max(best, float(np.dot(params["W_conv"][j], win) + params["b_conv"][j]))
            assert cache["pooled"][j] == pytest.approx(best, abs=1e-12)

    def test_tie_break_takes_first_position(self):
        dims = ModelDims(vocab_size=4, embed_dim=2, hidden_dim=2, num_classes=2, window=1)
        params = init_params("cnn", dims, RandomSource(0))
        emb = EmbeddingTable(np.array([[0, 0], [1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]))
        _, cache = cnn_forward(params, emb, SentenceExample((1, 2, 3), 0), window=1)
        np.testing.assert_array_equal(cache["argmax"], [0, 0])


class TestWindowCNNBackward:
    def setup(self, seed=0):
        rng = np.random.default_rng(seed)
        dims = ModelDims(vocab_size=8, embed_dim=3, hidden_dim=4, num_classes=3, window=3)
        params = random_params("cnn", dims, seed)
        emb = random_table(rng, 8, 3)
        return params, emb

    def loss(self, params, emb, x, dropout=None):
        probs, _ = cnn_forward(params, emb, x, dropout, 3)
        return -math.log(probs[x.label])

    def test_parameter_gradients(self):
        params, emb = self.setup()
        x = SentenceExample((2, 5, 2, 7), 1)
        _, cache = cnn_forward(params, emb, x, window=3)
        g = cnn_backward(cache, x.label, params, emb)
        for name, w in params.items():
            n = numeric(lambda: self.loss(params, emb, x), w)
            assert rel(g.params[name], n) < 1e-6, name

    def test_embedding_gradient_is_row_local_and_accumulates(self):
        params, emb = self.setup(1)
        x = SentenceExample((2, 5, 2, 7), 1)
        _, cache = cnn_forward(params, emb, x, window=3)
        g = cnn_backward(cache, x.label, params, emb)
        assert set(g.rows) == {2, 5, 7}
        n = numeric(lambda: self.loss(params, emb, x), emb.phi)
        assert rel(g.dense_embeddings(emb.phi.shape), n) < 1e-6
        # token 2 appears twice; its row is the sum of both position gradients
        assert np.any(n[2] != 0)

    def test_pad_row_receives_nothing(self):
        params, emb = self.setup(2)
        x = SentenceExample((0, 3, 0), 2)
        _, cache = cnn_forward(params, emb, x, window=3)
        assert 0 not in cnn_backward(cache, x.label, params, emb).rows

    def test_dropout_gradients(self):
        params, emb = self.setup(3)
        x = SentenceExample((1, 4, 6), 0)
        plan = DropoutPlan(hidden_mask=np.array([1.0, 0.0, 1.0, 1.0]),
                           input_mask=np.array([1.0, 0.0, 1.0])[:, None])
        _, cache = cnn_forward(params, emb, x, plan, 3)
        g = cnn_backward(cache, x.label, params, emb)
        assert 4 not in g.rows or np.all(g.rows[4] == 0)
        n = numeric(lambda: self.loss(params, emb, x, plan), params["W_hid"])
        assert rel(g.params["W_hid"], n) < 1e-6

    def test_zero_upstream_gives_zero_gradients(self):
        params, emb = self.setup(4)
        x = SentenceExample((1, 2, 3), 0)
        _, cache = cnn_forward(params, emb, x, window=3)
        g = cnn_backward(cache, 0, params, emb, dlogits=np.zeros(3))
        assert all(np.all(v == 0) for v in g.params.values())
        assert all(np.all(v == 0) for v in g.rows.values())

    def test_batched_predict_matches_single(self):
        rng = np.random.default_rng(9)
        dims = ModelDims(vocab_size=12, embed_dim=4, hidden_dim=5, num_classes=6)
        model = WindowCNN(random_params("cnn", dims, 9))
        emb = random_table(rng, 12, 4)
        examples = [SentenceExample(tuple(rng.integers(0, 12, size=rng.integers(1, 9))), 0)
                    for _ in range(40)]
        plan = DropoutPlan(hidden_scale=0.7, input_scale=0.8)
        single = [model.predict(emb, x, plan) for x in examples]
        np.testing.assert_array_equal(model.predict_many(emb, examples, plan), single)


def recursive_root(params, emb, nested):
    if not isinstance(nested, tuple):
        return emb.phi[nested]
    left = recursive_root(params, emb, nested[0])
    right = recursive_root(params, emb, nested[1])
    return np.tanh(params["W_comp"] @ np.concatenate([left, right]) + params["b_comp"])


class TestTreeRNN:
    def setup(self, seed=0):
        rng = np.random.default_rng(seed)
        dims = ModelDims(vocab_size=10, embed_dim=3, num_classes=5)
        return random_params("rnn", dims, seed), random_table(rng, 10, 3)

    def seven_leaf_tree(self):
        # ((a b) ((c d) (e (f g))))
        merges = ((0, 1), (2, 3), (5, 6), (4, 9), (8, 10), (7, 11))
        return TreeExample((1, 2, 3, 4, 5, 6, 7), merges, 3)

    def test_root_matches_recursive_oracle(self):
        params, emb = self.setup()
        x = self.seven_leaf_tree()
        probs, cache = rnn_forward(params, emb, x)
        root = recursive_root(params, emb, x.to_nested())
        np.testing.assert_allclose(cache["vecs"][-1], root, atol=1e-12)
        logits = params["W_out"] @ root + params["b_out"]
        expected = np.exp(logits - logits.max())
        np.testing.assert_allclose(probs, expected / expected.sum(), atol=1e-12)

    def test_single_leaf_tree(self):
        params, emb = self.setup()
        _, cache = rnn_forward(params, emb, TreeExample((4,), (), 0))
        np.testing.assert_array_equal(cache["vecs"][-1], emb.phi[4])

    def test_gradients(self):
        params, emb = self.setup(1)
        x = self.seven_leaf_tree()

        def loss():
            probs, _ = rnn_forward(params, emb, x)
            return -math.log(probs[x.label])

        _, cache = rnn_forward(params, emb, x)
        g = rnn_backward(cache, x.label, params, emb)
        for name, w in params.items():
            assert rel(g.params[name], numeric(loss, w)) < 1e-6, name
        assert rel(g.dense_embeddings(emb.phi.shape), numeric(loss, emb.phi)) < 1e-6
        assert set(g.rows) == set(x.leaves)


class TestInitAndCheckpoint:
    def test_init_is_deterministic_and_bounded(self):
        dims = ModelDims(vocab_size=5, embed_dim=50, hidden_dim=50, num_classes=10)
        a = init_params("cnn", dims, RandomSource(3))
        b = init_params("cnn", dims, RandomSource(3))
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])
        # 50x250 convolution: bound sqrt(6 / 300)
        assert np.max(np.abs(a["W_conv"])) < math.sqrt(6 / 300)
        assert np.max(np.abs(a["W_conv"])) > 0.9 * math.sqrt(6 / 300)
        assert np.all(a["b_conv"] == 0)

    def test_prediction_invariant_to_vocab_permutation(self):
        rng = np.random.default_rng(5)
        dims = ModelDims(vocab_size=8, embed_dim=3, hidden_dim=4, num_classes=3)
        params = random_params("cnn", dims, 5)
        emb = random_table(rng, 8, 3)
        perm = np.concatenate(([0], 1 + rng.permutation(7)))
        inverse = np.argsort(perm)
        emb2 = EmbeddingTable(emb.phi[perm])
        x = SentenceExample((1, 2, 5, 7), 0)
        x2 = SentenceExample(tuple(int(inverse[t]) for t in x.tokens), 0)
        p1, _ = cnn_forward(params, emb, x)
        p2, _ = cnn_forward(params, emb2, x2)
        np.testing.assert_array_equal(p1, p2)

    @pytest.mark.parametrize("kind", ["cnn", "rnn"])
    def test_checkpoint_round_trip(self, tmp_path, kind):
        dims = ModelDims(vocab_size=7, embed_dim=3, hidden_dim=4, num_classes=5, window=3)
        model = build_model(kind, dims, RandomSource(0))
        emb = random_table(np.random.default_rng(0), 7, 3)
        save_checkpoint(tmp_path / "c.npz", model, emb)
        model2, emb2 = load_checkpoint(tmp_path / "c.npz")
        assert model2.kind == kind and getattr(model2, "window", None) == getattr(model, "window", None)
        for k, v in model.params.items():
            np.testing.assert_array_equal(model2.params[k], v)
        np.testing.assert_array_equal(emb2.phi, emb.phi)
        np.testing.assert_array_equal(emb2.phi0, emb.phi0)

    def test_pad_row_is_zeroed(self):
        emb = EmbeddingTable(np.ones((3, 2)))
        np.testing.assert_array_equal(emb.phi[0], 0.0)
        assert not emb.phi0.flags.writeable
