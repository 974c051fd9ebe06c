"""Penalties added to the cross-entropy objective, and dropout noise.

The training objective is ``J = E + sum(coef * R)`` where each ``R`` is an
unnormalized squared Frobenius norm:

* ``l2_weights``: connection weight matrices (biases optional)
* ``l2_embeddings``: the embedding table, PAD row excluded
* ``reembed``: distance of the table from its frozen snapshot
"""

from dataclasses import dataclass

import numpy as np

L2_WEIGHTS = "l2_weights"
L2_EMBEDDINGS = "l2_embeddings"
REEMBED = "reembed"
DROPOUT = "dropout"
PENALTY_KINDS = (L2_WEIGHTS, L2_EMBEDDINGS, REEMBED)
KINDS = PENALTY_KINDS + (DROPOUT,)


@dataclass(frozen=True)
class RegularizerSpec:
    kind: str
    value: float
    activation_epoch: int = 0
    include_biases: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if self.kind == DROPOUT:
            if not 0.0 <= self.value < 1.0:
                raise ValueError(f"dropout rate must lie in [0, 1), got {self.value}")
        elif not self.value >= 0.0:
            raise ValueError(f"{self.kind} coefficient must be >= 0, got {self.value}")
        if self.activation_epoch < 0:
            raise ValueError("activation_epoch must be >= 0")

    @property
    def is_penalty(self):
        return self.kind != DROPOUT

    def active(self, epoch):
        return epoch >= self.activation_epoch


class RegularizerSet(tuple):
    """Immutable collection holding at most one spec per kind."""

    def __new__(cls, specs=()):
        specs = tuple(specs)
        kinds = [s.kind for s in specs]
        if len(set(kinds)) != len(kinds):
            raise ValueError(f"duplicate regularizer kinds in {kinds}")
        return super().__new__(cls, specs)

    def get(self, kind):
        for s in self:
            if s.kind == kind:
                return s
        return None

    def replace(self, spec):
        return RegularizerSet([s for s in self if s.kind != spec.kind] + [spec])

    def without(self, kind):
        return RegularizerSet([s for s in self if s.kind != kind])

    def active_at(self, epoch):
        return RegularizerSet(s for s in self if s.active(epoch))


def active_regularizers(regs, epoch):
    return RegularizerSet(regs).active_at(epoch)


def _penalized_weights(spec, params):
    for name, value in params.items():
        if name.startswith("W_") or (spec.include_biases and name.startswith("b_")):
            yield name, value


def _check_penalty(spec):
    if not spec.is_penalty:
        raise ValueError("dropout has no penalty term")


def penalty_value(spec, params, emb):
    """The bare ``R`` for a penalty spec (not multiplied by the coefficient)."""
    _check_penalty(spec)
    if spec.kind == L2_WEIGHTS:
        return float(sum(np.sum(w * w) for _, w in _penalized_weights(spec, params)))
    rows = emb.row_mask()
    if spec.kind == L2_EMBEDDINGS:
        diff = emb.phi[rows]
    else:
        diff = emb.phi[rows] - emb.phi0[rows]
    return float(np.sum(diff * diff))


def penalty_gradient(spec, params, emb, grads, active_rows=None, emb_grad=None):
    """Add ``coef * dR/dtheta`` into ``grads``.

    Weight terms go to ``grads.params``. Embedding terms go to the dense
    ``emb_grad`` array when given, otherwise into the sparse ``grads.rows``
    restricted to ``active_rows`` (all non-PAD rows if ``None``).
    """
    _check_penalty(spec)
    lam = spec.value
    if spec.kind == L2_WEIGHTS:
        for name, w in _penalized_weights(spec, params):
            grads.params[name] += 2.0 * lam * w
        return grads

    def row_grad(r):
        if spec.kind == L2_EMBEDDINGS:
            return 2.0 * lam * emb.phi[r]
        return 2.0 * lam * (emb.phi[r] - emb.phi0[r])

    if emb_grad is not None:
        rows = emb.row_mask()
        if spec.kind == L2_EMBEDDINGS:
            emb_grad[rows] += 2.0 * lam * emb.phi[rows]
        else:
            emb_grad[rows] += 2.0 * lam * (emb.phi[rows] - emb.phi0[rows])
        return grads
    if active_rows is None:
        active_rows = np.flatnonzero(emb.row_mask()).tolist()
    for r in active_rows:
        if r == emb.pad:
            continue
        if r in grads.rows:
            grads.rows[r] = grads.rows[r] + row_grad(r)
        else:
            grads.rows[r] = row_grad(r)
    return grads


def dropout_mask(length, p, rng):
    """0/1 keep mask; each unit is kept independently with probability 1-p.

    ``p == 0`` returns ones without consuming random draws.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
    if p == 0.0:
        return np.ones(length)
    return np.fromiter((1.0 if rng.random() >= p else 0.0 for _ in range(length)),
                       dtype=np.float64, count=length)


def test_scale(activations, p):
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
    return np.asarray(activations, dtype=np.float64) * (1.0 - p)


# pytest would otherwise try to collect this as a test function
test_scale.__test__ = False
