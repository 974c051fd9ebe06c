"""Window CNN and tree RNN with hand-written forward and backward passes.

Parameters live in plain ``dict[str, ndarray]`` bundles. Weight matrices
are named ``W_*`` and biases ``b_*``; regularizers rely on that split.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import softmax, softmax_cross_entropy, tanh_backward
from .data import PAD_INDEX

CHECKPOINT_FORMAT = "regembed-checkpoint-v1"


class EmbeddingTable:
    """Fine-tuned embeddings ``phi`` plus the frozen snapshot ``phi0``.

    ``phi0`` is copied at construction and made read-only. Row ``pad`` is
    forced to zero and never updated.
    """

    def __init__(self, phi, pad=PAD_INDEX, phi0=None):
        phi = np.array(phi, dtype=np.float64)
        if phi.ndim != 2:
            raise ValueError("embedding table must be 2-d")
        if pad is not None:
            phi[pad] = 0.0
        self.phi = phi
        self.phi0 = np.array(phi if phi0 is None else phi0, dtype=np.float64)
        if self.phi0.shape != phi.shape:
            raise ValueError("phi and phi0 shapes differ")
        self.phi0.setflags(write=False)
        self.pad = pad

    @property
    def vocab_size(self):
        return self.phi.shape[0]

    @property
    def dim(self):
        return self.phi.shape[1]

    def copy(self):
        return EmbeddingTable(self.phi.copy(), self.pad, self.phi0)

    def row_mask(self):
        """Boolean mask of rows subject to updates and penalties."""
        keep = np.ones(self.vocab_size, dtype=bool)
        if self.pad is not None:
            keep[self.pad] = False
        return keep


@dataclass
class DropoutPlan:
    """Noise applied during one forward pass.

    Train mode passes 0/1 masks; test mode passes the ``1 - p`` scales.
    """

    hidden_mask: np.ndarray = None
    hidden_scale: float = 1.0
    input_mask: np.ndarray = None
    input_scale: float = 1.0

    def hidden_factor(self):
        return self.hidden_mask if self.hidden_mask is not None else self.hidden_scale

    def input_factor(self):
        return self.input_mask if self.input_mask is not None else self.input_scale


@dataclass
class Gradients:
    params: dict
    rows: dict = field(default_factory=dict)
    loss: float = 0.0

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(v) for k, v in params.items()})

    def accumulate(self, other):
        for k, g in other.params.items():
            self.params[k] += g
        for r, g in other.rows.items():
            if r in self.rows:
                self.rows[r] = self.rows[r] + g
            else:
                self.rows[r] = g.copy()
        self.loss += other.loss

    def scale(self, c):
        for k in self.params:
            self.params[k] *= c
        for r in self.rows:
            self.rows[r] *= c
        self.loss *= c

    def dense_embeddings(self, shape):
        out = np.zeros(shape)
        for r, g in self.rows.items():
            out[r] += g
        return out


def _rows_from_positions(tokens, dE, pad):
    rows = {}
    uniq, inv = np.unique(tokens, return_inverse=True)
    summed = np.zeros((len(uniq), dE.shape[1]))
    np.add.at(summed, inv, dE)
    for tok, g in zip(uniq.tolist(), summed):
        if tok != pad:
            rows[tok] = g
    return rows


# -- window CNN ------------------------------------------------------------

def cnn_forward(params, emb, x, dropout=None, window=5):
    """Score one sentence; returns ``(probs, cache)``.

    Window ``i`` concatenates tokens ``i..i+window-1`` with zero vectors past
    the end, so a sentence of length n yields exactly n windows.
    """
    tokens = np.asarray(x.tokens, dtype=np.intp)
    n, d = len(tokens), emb.dim
    E = emb.phi[tokens]
    if dropout is not None:
        E = E * dropout.input_factor()
    padded = np.zeros((n + window - 1, d))
    padded[:n] = E
    X = sliding_window_view(padded, (window, d)).reshape(n, window * d)
    Z = X @ params["W_conv"].T + params["b_conv"]
    argmax = Z.argmax(axis=0)
    pooled = Z[argmax, np.arange(Z.shape[1])]
    hidden = np.tanh(params["W_hid"] @ pooled + params["b_hid"])
    used = hidden * dropout.hidden_factor() if dropout is not None else hidden
    logits = params["W_out"] @ used + params["b_out"]
    cache = {
        "tokens": tokens, "E": E, "X": X, "argmax": argmax, "pooled": pooled,
        "hidden": hidden, "used": used, "logits": logits, "dropout": dropout,
        "window": window,
    }
    return softmax(logits), cache


def cnn_predict(params, emb, examples, dropout=None, window=5):
    """Argmax classes for many sentences at once (test-mode scales only)."""
    lengths = np.array([len(x.tokens) for x in examples], dtype=np.intp)
    offsets = np.concatenate(([0], np.cumsum(lengths)[:-1]))
    tokens = np.concatenate([np.asarray(x.tokens, dtype=np.intp) for x in examples])
    total, d = len(tokens), emb.dim
    E = np.zeros((total + 1, d))
    E[:total] = emb.phi[tokens]
    if dropout is not None:
        E[:total] *= dropout.input_scale
    start = np.repeat(offsets, lengths)
    rel = np.arange(total) - start
    shift = np.arange(window)
    idx = rel[:, None] + shift[None, :]
    idx = np.where(idx < np.repeat(lengths, lengths)[:, None], start[:, None] + idx, total)
    X = E[idx].reshape(total, window * d)
    Z = X @ params["W_conv"].T + params["b_conv"]
    pooled = np.maximum.reduceat(Z, offsets, axis=0)
    hidden = np.tanh(pooled @ params["W_hid"].T + params["b_hid"])
    if dropout is not None:
        hidden = hidden * dropout.hidden_scale
    logits = hidden @ params["W_out"].T + params["b_out"]
    return logits.argmax(axis=1)


def cnn_backward(cache, label, params, emb, dlogits=None):
    loss, _, dl = softmax_cross_entropy(cache["logits"], label)
    if dlogits is None:
        dlogits = dl
    dropout = cache["dropout"]
    window = cache["window"]
    X, tokens = cache["X"], cache["tokens"]
    n, d = len(tokens), emb.dim

    g = {}
    g["W_out"] = np.outer(dlogits, cache["used"])
    g["b_out"] = dlogits.copy()
    dused = params["W_out"].T @ dlogits
    dhidden = dused * dropout.hidden_factor() if dropout is not None else dused
    dpre = tanh_backward(cache["hidden"], dhidden)
    g["W_hid"] = np.outer(dpre, cache["pooled"])
    g["b_hid"] = dpre
    dpooled = params["W_hid"].T @ dpre
    dZ = np.zeros((n, dpooled.shape[0]))
    dZ[cache["argmax"], np.arange(dpooled.shape[0])] = dpooled
    g["W_conv"] = dZ.T @ X
    g["b_conv"] = dpooled.copy()
    dX = (dZ @ params["W_conv"]).reshape(n, window, d)
    dpadded = np.zeros((n + window - 1, d))
    for s in range(window):
        dpadded[s:s + n] += dX[:, s]
    dE = dpadded[:n]
    if dropout is not None:
        dE = dE * dropout.input_factor()
    return Gradients(g, _rows_from_positions(tokens, dE, emb.pad), loss)


# -- tree RNN --------------------------------------------------------------

def rnn_forward(params, emb, x, dropout=None):
    """Compose a binarized tree bottom-up; classify the root vector."""
    leaves = np.asarray(x.leaves, dtype=np.intp)
    nl, d = len(leaves), emb.dim
    vecs = np.empty((x.num_nodes, d))
    vecs[:nl] = emb.phi[leaves]
    if dropout is not None:
        vecs[:nl] *= dropout.input_factor()
    W, b = params["W_comp"], params["b_comp"]
    for i, (a, c) in enumerate(x.merges):
        vecs[nl + i] = np.tanh(W[:, :d] @ vecs[a] + W[:, d:] @ vecs[c] + b)
    root = vecs[-1]
    used = root * dropout.hidden_factor() if dropout is not None else root
    logits = params["W_out"] @ used + params["b_out"]
    cache = {"tree": x, "vecs": vecs, "used": used, "logits": logits, "dropout": dropout}
    return softmax(logits), cache


def rnn_backward(cache, label, params, emb, dlogits=None):
    loss, _, dl = softmax_cross_entropy(cache["logits"], label)
    if dlogits is None:
        dlogits = dl
    x, vecs, dropout = cache["tree"], cache["vecs"], cache["dropout"]
    nl, d = len(x.leaves), emb.dim
    W = params["W_comp"]

    g = {
        "W_out": np.outer(dlogits, cache["used"]),
        "b_out": dlogits.copy(),
        "W_comp": np.zeros_like(W),
        "b_comp": np.zeros(d),
    }
    dvecs = np.zeros_like(vecs)
    droot = params["W_out"].T @ dlogits
    dvecs[-1] = droot * dropout.hidden_factor() if dropout is not None else droot
    for i in range(len(x.merges) - 1, -1, -1):
        a, c = x.merges[i]
        node = nl + i
        dpre = tanh_backward(vecs[node], dvecs[node])
        g["W_comp"][:, :d] += np.outer(dpre, vecs[a])
        g["W_comp"][:, d:] += np.outer(dpre, vecs[c])
        g["b_comp"] += dpre
        dchildren = W.T @ dpre
        dvecs[a] += dchildren[:d]
        dvecs[c] += dchildren[d:]
    dE = dvecs[:nl]
    if dropout is not None:
        dE = dE * dropout.input_factor()
    return Gradients(g, _rows_from_positions(np.asarray(x.leaves), dE, emb.pad), loss)


# -- parameters and model wrappers -------------------------------------------

@dataclass(frozen=True)
class ModelDims:
    vocab_size: int
    embed_dim: int = 50
    hidden_dim: int = 50
    num_classes: int = 10
    window: int = 5

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "hidden_dim", "num_classes", "window"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


def init_range(rows, cols):
    return math.sqrt(6.0 / (rows + cols))


def param_shapes(kind, dims):
    d, h, c = dims.embed_dim, dims.hidden_dim, dims.num_classes
    if kind == "cnn":
        return {
            "W_conv": (h, dims.window * d), "b_conv": (h,),
            "W_hid": (h, h), "b_hid": (h,),
            "W_out": (c, h), "b_out": (c,),
        }
    if kind == "rnn":
        return {"W_comp": (d, 2 * d), "b_comp": (d,), "W_out": (c, d), "b_out": (c,)}
    raise ValueError(f"unknown model kind {kind!r}")


def init_params(kind, dims, rng):
    """Uniform Glorot-style weights, zero biases, drawn in a fixed order."""
    params = {}
    for name, shape in param_shapes(kind, dims).items():
        if name.startswith("W_"):
            params[name] = rng.symmetric(init_range(*shape), shape)
        else:
            params[name] = np.zeros(shape)
    return params


class Model:
    kind = None

    def __init__(self, params):
        self.params = params

    @property
    def weight_names(self):
        return tuple(k for k in self.params if k.startswith("W_"))

    @property
    def bias_names(self):
        return tuple(k for k in self.params if k.startswith("b_"))

    @property
    def num_classes(self):
        return self.params["W_out"].shape[0]

    @property
    def hidden_size(self):
        """Length of the vector dropout acts on."""
        return self.params["W_out"].shape[1]

    def copy(self):
        return type(self)(**self._ctor_args({k: v.copy() for k, v in self.params.items()}))

    def _ctor_args(self, params):
        return {"params": params}

    def predict(self, emb, x, dropout=None):
        probs, _ = self.forward(emb, x, dropout)
        return int(np.argmax(probs))

    def predict_many(self, emb, examples, dropout=None):
        return np.array([self.predict(emb, x, dropout) for x in examples])


class WindowCNN(Model):
    kind = "cnn"

    def __init__(self, params, window=5):
        super().__init__(params)
        self.window = window

    def _ctor_args(self, params):
        return {"params": params, "window": self.window}

    def num_inputs(self, x):
        return len(x.tokens)

    def forward(self, emb, x, dropout=None):
        return cnn_forward(self.params, emb, x, dropout, self.window)

    def backward(self, cache, label, emb, dlogits=None):
        return cnn_backward(cache, label, self.params, emb, dlogits)

    def predict_many(self, emb, examples, dropout=None):
        return cnn_predict(self.params, emb, examples, dropout, self.window)


class TreeRNN(Model):
    kind = "rnn"

    def num_inputs(self, x):
        return len(x.leaves)

    def forward(self, emb, x, dropout=None):
        return rnn_forward(self.params, emb, x, dropout)

    def backward(self, cache, label, emb, dlogits=None):
        return rnn_backward(cache, label, self.params, emb, dlogits)


def build_model(kind, dims, rng):
    params = init_params(kind, dims, rng)
    if kind == "cnn":
        return WindowCNN(params, dims.window)
    return TreeRNN(params)


def save_checkpoint(path, model, emb):
    """Write an ``.npz`` container; see README for the key layout."""
    arrays = {
        "format": np.array(CHECKPOINT_FORMAT),
        "kind": np.array(model.kind),
        "window": np.array(getattr(model, "window", 0)),
        "pad": np.array(-1 if emb.pad is None else emb.pad),
        "emb/phi": emb.phi,
        "emb/phi0": np.asarray(emb.phi0),
    }
    for name, value in model.params.items():
        arrays[f"param/{name}"] = value
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as z:
        if str(z["format"]) != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unsupported checkpoint format {z['format']}")
        kind = str(z["kind"])
        params = {k[len("param/"):]: z[k].copy() for k in z.files if k.startswith("param/")}
        pad = int(z["pad"])
        emb = EmbeddingTable(z["emb/phi"], None if pad < 0 else pad, z["emb/phi0"])
        model = WindowCNN(params, int(z["window"])) if kind == "cnn" else TreeRNN(params)
    return model, emb
