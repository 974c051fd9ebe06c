"""Central finite-difference verification of the full training objective.

For each architecture and each subset of the four regularizers, a tiny random
instance is built and the analytic gradient of

    J = mean cross-entropy over a small batch + sum(coef * R)

is compared against ``(J(t + eps) - J(t - eps)) / (2 eps)`` for every weight,
bias and embedding entry. Dropout masks are drawn once and held fixed, which
makes J a deterministic function of the parameters.
"""

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .core import RandomSource
from .data import SentenceExample, TreeExample
from .models import DropoutPlan, EmbeddingTable, Gradients, ModelDims, build_model
from .regularizers import (
    DROPOUT,
    KINDS,
    L2_WEIGHTS,
    RegularizerSpec,
    dropout_mask,
    penalty_gradient,
    penalty_value,
)

DEFAULT_TOLERANCE = 1e-4
DEFAULT_EPS = 1e-5
# entries where both gradients are below this are compared absolutely
ERROR_FLOOR = 1e-7


def relative_error(analytic, numeric, floor=ERROR_FLOOR):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``, reduced by max."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def numeric_gradient(f, x, eps=DEFAULT_EPS):
    """Central differences of scalar ``f()`` w.r.t. array ``x``, perturbed in place."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        out[i] = (up - down) / (2.0 * eps)
    return grad


def random_sentence(rng, vocab_size, max_len=7):
    n = 1 + rng.randbelow(max_len)
    return [2 + rng.randbelow(vocab_size - 2) for _ in range(n)]


def random_tree(rng, vocab_size, num_leaves, label):
    """Random binary bracketing over ``num_leaves`` random tokens."""
    leaves = tuple(2 + rng.randbelow(vocab_size - 2) for _ in range(num_leaves))
    frontier = list(range(num_leaves))
    merges = []
    while len(frontier) > 1:
        i = rng.randbelow(len(frontier) - 1)
        merges.append((frontier[i], frontier[i + 1]))
        frontier[i:i + 2] = [num_leaves + len(merges) - 1]
    return TreeExample(leaves, tuple(merges), label)


def make_instance(kind, dims, rng, batch=3):
    """Model, embeddings (phi != phi0) and a small labelled batch."""
    model = build_model(kind, dims, rng.fork("params"))
    for name in model.bias_names:
        model.params[name] = rng.symmetric(0.5, model.params[name].shape)
    shape = (dims.vocab_size, dims.embed_dim)
    phi0 = rng.symmetric(1.0, shape)
    phi0[0] = 0.0
    emb = EmbeddingTable(phi0 + rng.symmetric(0.3, shape), phi0=phi0)
    examples = []
    for i in range(batch):
        label = rng.randbelow(dims.num_classes)
        if kind == "cnn":
            examples.append(SentenceExample(tuple(random_sentence(rng, dims.vocab_size)), label))
        else:
            examples.append(random_tree(rng, dims.vocab_size, 5 if i == 0 else 1 + rng.randbelow(6), label))
    return model, emb, examples


def fixed_plans(model, examples, p, input_dropout, rng):
    if p == 0.0:
        return [None] * len(examples)
    plans = []
    for x in examples:
        inputs = None
        if input_dropout:
            n = model.num_inputs(x)
            inputs = dropout_mask(n * _embed_dim(model), p, rng).reshape(n, -1)
        plans.append(DropoutPlan(hidden_mask=dropout_mask(model.hidden_size, p, rng), input_mask=inputs))
    return plans


def _embed_dim(model):
    if model.kind == "cnn":
        return model.params["W_conv"].shape[1] // model.window
    return model.params["W_comp"].shape[0]


def objective(model, emb, examples, regs, plans):
    total = 0.0
    for x, plan in zip(examples, plans):
        _, cache = model.forward(emb, x, plan)
        total += model.backward(cache, x.label, emb).loss
    value = total / len(examples)
    for spec in regs:
        if spec.is_penalty:
            value += spec.value * penalty_value(spec, model.params, emb)
    return value


def analytic_gradient(model, emb, examples, regs, plans):
    """``(param_grads, dense_embedding_grad)`` of the objective."""
    grads = Gradients.zeros_like(model.params)
    for x, plan in zip(examples, plans):
        _, cache = model.forward(emb, x, plan)
        grads.accumulate(model.backward(cache, x.label, emb))
    grads.scale(1.0 / len(examples))
    emb_grad = grads.dense_embeddings(emb.phi.shape)
    for spec in regs:
        if spec.is_penalty:
            penalty_gradient(spec, model.params, emb, grads, emb_grad=emb_grad)
    return grads.params, emb_grad


@dataclass
class CheckResult:
    model: str
    combo: str
    component: str
    error: float


@dataclass
class GradcheckReport:
    results: list = field(default_factory=list)
    tolerance: float = DEFAULT_TOLERANCE

    @property
    def failures(self):
        return [r for r in self.results if not r.error < self.tolerance]

    @property
    def passed(self):
        return not self.failures

    def by_component(self):
        """Max error per ``(model, component)`` across regularizer combos."""
        out = {}
        for r in self.results:
            key = (r.model, r.component)
            out[key] = max(out.get(key, 0.0), r.error)
        return out


def regularizer_combos(value=0.05, rate=0.3):
    """Every subset of the four strategies, plus the all-on variant that also
    penalizes biases and drops embedding inputs."""
    specs = {k: RegularizerSpec(k, rate if k == DROPOUT else value) for k in KINDS}
    combos = []
    for r in range(len(KINDS) + 1):
        for subset in combinations(KINDS, r):
            combos.append(("+".join(subset) or "none", [specs[k] for k in subset], False))
    everything = [specs[k] for k in KINDS if k != L2_WEIGHTS]
    everything.append(RegularizerSpec(L2_WEIGHTS, value, include_biases=True))
    combos.append(("all+biases+input_dropout", everything, True))
    return combos


def check_one(kind, regs, input_dropout, dims, rng, eps=DEFAULT_EPS, corrupt=None):
    """Max relative error per component for one random instance."""
    model, emb, examples = make_instance(kind, dims, rng)
    drop = next((s for s in regs if s.kind == DROPOUT), None)
    plans = fixed_plans(model, examples, drop.value if drop else 0.0, input_dropout,
                        rng.fork("masks"))
    param_grads, emb_grad = analytic_gradient(model, emb, examples, regs, plans)
    if corrupt == "embeddings" or corrupt in model.params:
        target = emb_grad if corrupt == "embeddings" else param_grads[corrupt]
        target.reshape(-1)[0] += 1e-3

    def f():
        return objective(model, emb, examples, regs, plans)

    errors = {}
    for name, value in model.params.items():
        errors[name] = relative_error(param_grads[name], numeric_gradient(f, value, eps))
    errors["embeddings"] = relative_error(emb_grad, numeric_gradient(f, emb.phi, eps))
    return errors


def run_gradcheck(seed=0, vocab_size=20, embed_dim=5, hidden_dim=4, num_classes=3, window=5,
                  eps=DEFAULT_EPS, tolerance=DEFAULT_TOLERANCE, corrupt=None):
    """Check both models under every regularizer combination."""
    report = GradcheckReport(tolerance=tolerance)
    dims = ModelDims(vocab_size, embed_dim, hidden_dim, num_classes, window)
    root = RandomSource(seed)
    for kind in ("cnn", "rnn"):
        for label, regs, input_dropout in regularizer_combos():
            rng = root.fork(f"{kind}/{label}")
            errs = check_one(kind, regs, input_dropout, dims, rng, eps, corrupt)
            for component, err in errs.items():
                report.results.append(CheckResult(kind, label, component, err))
    return report

