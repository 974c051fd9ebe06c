"""Mini-batch SGD with scheduled learning rates and delayed penalties."""

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .core import RandomSource
from .models import DropoutPlan, Gradients
from .regularizers import (
    DROPOUT,
    L2_EMBEDDINGS,
    L2_WEIGHTS,
    REEMBED,
    RegularizerSet,
    dropout_mask,
    penalty_gradient,
    penalty_value,
)

TASKS = ("relation", "sentiment")
SCHEDULES = ("fixed", "power_decay")
CURVE_HEADER = ("epoch", "train_acc", "val_acc", "objective", "seed")


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or parameter."""

    def __init__(self, epoch, digest, reason, curve=None):
        self.epoch = epoch
        self.digest = digest
        self.reason = reason
        self.curve = curve
        super().__init__(f"diverged at epoch {epoch} (config {digest}): {reason}")


@dataclass(frozen=True)
class TrainConfig:
    task: str = "relation"
    learning_rate: float = 0.1
    schedule: str = "fixed"
    power: float = -1.0
    batch_size: int = 10
    epochs: int = 20
    seed: int = 0
    regularizers: RegularizerSet = field(default_factory=RegularizerSet)
    input_dropout: bool = False

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        object.__setattr__(self, "regularizers", RegularizerSet(self.regularizers))

    def to_dict(self, with_seed=True):
        out = {}
        for f in fields(self):
            if f.name == "seed" and not with_seed:
                continue
            value = getattr(self, f.name)
            if f.name == "regularizers":
                value = sorted(
                    ([s.kind, s.value, s.activation_epoch, s.include_biases] for s in value),
                    key=lambda s: s[0])
            out[f.name] = value
        return out

    def digest(self):
        """Short hash of everything except the seed."""
        blob = json.dumps(self.to_dict(with_seed=False), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def lr_at(epoch, cfg):
    if cfg.schedule == "fixed":
        return cfg.learning_rate
    return cfg.learning_rate * (1.0 + epoch) ** cfg.power


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_acc: float
    val_acc: float
    objective: float


@dataclass
class LearningCurve:
    seed: int
    digest: str = ""
    records: list = field(default_factory=list)
    diverged: bool = False

    @property
    def final_val(self):
        return self.records[-1].val_acc

    @property
    def best_val(self):
        return max(r.val_acc for r in self.records)

    def rows(self):
        for r in self.records:
            yield (str(r.epoch), f"{r.train_acc:.17g}", f"{r.val_acc:.17g}",
                   f"{r.objective:.17g}", str(self.seed))

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(CURVE_HEADER)
            w.writerows(self.rows())

    @classmethod
    def from_csv(cls, path, digest=""):
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            if tuple(reader.fieldnames or ()) != CURVE_HEADER:
                raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
            rows = list(reader)
        seed = int(rows[0]["seed"]) if rows else 0
        records = [EpochRecord(int(r["epoch"]), float(r["train_acc"]),
                               float(r["val_acc"]), float(r["objective"])) for r in rows]
        return cls(seed, digest, records)


def evaluate(model, emb, dataset, dropout_p=0.0, input_dropout=False):
    """Fraction of examples whose argmax class equals the label."""
    if not dataset:
        raise ValueError("cannot evaluate on an empty dataset")
    plan = None
    if dropout_p > 0.0:
        scale = 1.0 - dropout_p
        plan = DropoutPlan(hidden_scale=scale, input_scale=scale if input_dropout else 1.0)
    predicted = model.predict_many(emb, dataset, plan)
    labels = np.fromiter((x.label for x in dataset), dtype=np.intp, count=len(dataset))
    return int(np.count_nonzero(predicted == labels)) / len(dataset)


class _LazyRowDecay:
    """Applies the embedding penalties to rows only when they are touched.

    With penalties ``l2_embeddings`` (a) and ``reembed`` (b) an untouched row
    follows ``phi <- phi - lr * (2a phi + 2b (phi - phi0))`` each step. That
    affine map is iterated in closed form: ``phi_m = t + r**m (phi - t)`` with
    ``r = 1 - 2 lr (a + b)`` and fixed point ``t = b / (a + b) * phi0``.
    """

    def __init__(self, emb, lam_embed, lam_reembed, lr):
        self.emb = emb
        self.rate = 1.0 - 2.0 * lr * (lam_embed + lam_reembed)
        total = lam_embed + lam_reembed
        self.pull = lam_reembed / total if lam_reembed else 0.0
        self.last = np.zeros(emb.vocab_size, dtype=np.int64)
        self.keep = emb.row_mask()

    def catch_up(self, rows, step):
        rows = np.asarray(rows, dtype=np.intp)
        rows = rows[self.keep[rows]]
        lag = step - self.last[rows]
        due = lag > 0
        if not due.any():
            return
        rows, lag = rows[due], lag[due]
        factor = np.power(self.rate, lag)[:, None]
        phi = self.emb.phi
        if self.pull:
            target = self.pull * self.emb.phi0[rows]
            phi[rows] = target + factor * (phi[rows] - target)
        else:
            phi[rows] = factor * phi[rows]
        self.last[rows] = step

    def mark(self, rows, step):
        self.last[np.asarray(rows, dtype=np.intp)] = step

    def finish(self, step):
        self.catch_up(np.arange(self.emb.vocab_size), step)


def _all_finite(model, emb):
    return all(np.all(np.isfinite(v)) for v in model.params.values()) and np.all(np.isfinite(emb.phi))


def train(cfg, model, emb, train_set, val_set):
    """Train in place and return the per-epoch learning curve.

    All randomness (shuffling, dropout masks) comes from a stream derived from
    ``cfg.seed``. Raises :class:`DivergenceError` on non-finite values.
    """
    if not train_set or not val_set:
        raise ValueError("train and validation sets must be nonempty")
    rng = RandomSource(cfg.seed).fork("train")
    digest = cfg.digest()
    curve = LearningCurve(cfg.seed, digest)
    order = list(range(len(train_set)))
    d = emb.dim

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for epoch in range(cfg.epochs):
            lr = lr_at(epoch, cfg)
            active = cfg.regularizers.active_at(epoch)
            drop = active.get(DROPOUT)
            p = drop.value if drop is not None else 0.0
            weight_specs = [s for s in active if s.kind == L2_WEIGHTS]
            emb_specs = [s for s in active if s.kind in (L2_EMBEDDINGS, REEMBED)]
            decay = None
            if emb_specs:
                lam_e = sum(s.value for s in emb_specs if s.kind == L2_EMBEDDINGS)
                lam_r = sum(s.value for s in emb_specs if s.kind == REEMBED)
                decay = _LazyRowDecay(emb, lam_e, lam_r, lr)

            rng.shuffle(order)
            loss_sum = 0.0
            step = 0
            for start in range(0, len(order), cfg.batch_size):
                batch = [train_set[i] for i in order[start:start + cfg.batch_size]]
                if decay is not None:
                    touched = sorted({t for x in batch for t in x.tokens})
                    decay.catch_up(touched, step)

                grads = Gradients.zeros_like(model.params)
                for x in batch:
                    plan = None
                    if p > 0.0:
                        hidden = dropout_mask(model.hidden_size, p, rng)
                        inputs = None
                        if cfg.input_dropout:
                            n = model.num_inputs(x)
                            inputs = dropout_mask(n * d, p, rng).reshape(n, d)
                        plan = DropoutPlan(hidden_mask=hidden, input_mask=inputs)
                    _, cache = model.forward(emb, x, plan)
                    grads.accumulate(model.backward(cache, x.label, emb))
                if not math.isfinite(grads.loss):
                    curve.diverged = True
                    raise DivergenceError(epoch, digest, "non-finite training loss", curve)
                loss_sum += grads.loss
                grads.scale(1.0 / len(batch))

                for spec in weight_specs:
                    penalty_gradient(spec, model.params, emb, grads)
                if emb_specs:
                    for spec in emb_specs:
                        penalty_gradient(spec, model.params, emb, grads, active_rows=touched)
                for name, g in grads.params.items():
                    model.params[name] -= lr * g
                for r, g in grads.rows.items():
                    emb.phi[r] -= lr * g
                step += 1
                if decay is not None:
                    decay.mark(touched, step)
            if decay is not None:
                decay.finish(step)

            if not _all_finite(model, emb):
                curve.diverged = True
                raise DivergenceError(epoch, digest, "non-finite parameter", curve)
            objective = loss_sum / len(train_set)
            for spec in active:
                if spec.is_penalty:
                    objective += spec.value * penalty_value(spec, model.params, emb)
            if not math.isfinite(objective):
                curve.diverged = True
                raise DivergenceError(epoch, digest, "non-finite objective", curve)
            train_acc = evaluate(model, emb, train_set, p, cfg.input_dropout)
            val_acc = evaluate(model, emb, val_set, p, cfg.input_dropout)
            curve.records.append(EpochRecord(epoch, train_acc, val_acc, objective))
    return curve
