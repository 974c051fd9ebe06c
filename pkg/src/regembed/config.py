"""Flat ``key = value`` run files.

Blank lines and ``#`` comments are ignored. Every key must be known; values
are parsed by type. Example::

    task = relation
    train_path = data/train.tsv
    val_path = data/val.tsv
    learning_rate = 0.1
    epochs = 20
    l2_weights = 1e-4
    axis1 = l2_weights: 0, 1e-4, 3e-4, 1e-3
"""

import hashlib
import json

from .regularizers import DROPOUT, KINDS, RegularizerSet, RegularizerSpec
from .trainer import TrainConfig


class ConfigError(ValueError):
    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _axis(text):
    if ":" not in text:
        raise ValueError("expected 'kind: v1, v2, ...'")
    kind, values = text.split(":", 1)
    kind = kind.strip()
    if kind not in KINDS:
        raise ValueError(f"unknown regularizer kind {kind!r}")
    values = _floats(values)
    if not values:
        raise ValueError("axis has no values")
    return kind, values


def _optional_str(text):
    return text.strip() or None


def _penalty_kind(text):
    t = text.strip()
    if t not in KINDS or t == DROPOUT:
        raise ValueError(f"expected a penalty kind, got {t!r}")
    return t


SCHEMA = {
    "task": str,
    "train_path": _optional_str,
    "val_path": _optional_str,
    "embeddings_path": _optional_str,
    "embed_dim": int,
    "hidden_dim": int,
    "window": int,
    "learning_rate": float,
    "schedule": str,
    "power": float,
    "batch_size": int,
    "epochs": int,
    "seed": int,
    "seeds": _ints,
    "penalize_biases": _bool,
    "input_dropout": _bool,
    "axis1": _axis,
    "axis2": _axis,
    "incremental_kind": _penalty_kind,
    "incremental_value": float,
    "activation_epochs": _ints,
    "out": str,
    "workers": int,
}
for _kind in KINDS:
    SCHEMA[_kind] = float
    SCHEMA[f"{_kind}_epoch"] = int

DEFAULTS = {
    "task": "relation",
    "embeddings_path": None,
    "embed_dim": 50,
    "hidden_dim": 50,
    "window": 5,
    "learning_rate": 0.1,
    "schedule": "fixed",
    "power": -1.0,
    "batch_size": 10,
    "epochs": 20,
    "seed": 0,
    "seeds": (0, 1, 2, 3, 4),
    "penalize_biases": False,
    "input_dropout": False,
    "activation_epochs": (0, 2, 5, 10),
    "out": "runs",
    "workers": 1,
}

# keys that do not influence results and stay out of digests
_OUTPUT_KEYS = ("out", "workers", "seed")


def parse_value(key, text):
    if key not in SCHEMA:
        raise ConfigError(key, "unknown key")
    try:
        return SCHEMA[key](text)
    except ValueError as e:
        raise ConfigError(key, str(e)) from None


def parse_text(text, source="<config>"):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(None, f"{source}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        values[key] = parse_value(key, raw)
    return values


def load(path, overrides=None):
    """Read a run file, apply ``overrides`` (already-typed values), fill defaults."""
    with open(path, encoding="utf-8") as f:
        values = parse_text(f.read(), str(path))
    values.update(overrides or {})
    spec = dict(DEFAULTS)
    spec.update(values)
    validate(spec)
    return spec


def validate(spec):
    try:
        train_config(spec)
    except ValueError as e:
        msg = str(e)
        key = msg.split(" ", 1)[0] if msg.split(" ", 1)[0] in SCHEMA else None
        raise ConfigError(key, msg) from None
    for key in ("embed_dim", "hidden_dim", "window", "workers"):
        if spec[key] < 1:
            raise ConfigError(key, "must be >= 1")
    if not spec["seeds"]:
        raise ConfigError("seeds", "at least one seed is required")


def regularizers(spec):
    out = []
    for kind in KINDS:
        value = spec.get(kind)
        if not value:
            continue
        out.append(RegularizerSpec(kind, value, spec.get(f"{kind}_epoch", 0),
                                   spec["penalize_biases"] if kind == "l2_weights" else False))
    return RegularizerSet(out)


def train_config(spec, seed=None):
    if spec["task"] not in ("relation", "sentiment"):
        raise ValueError(f"task must be 'relation' or 'sentiment', got {spec['task']!r}")
    return TrainConfig(
        task=spec["task"],
        learning_rate=spec["learning_rate"],
        schedule=spec["schedule"],
        power=spec["power"],
        batch_size=spec["batch_size"],
        epochs=spec["epochs"],
        seed=spec["seed"] if seed is None else seed,
        regularizers=regularizers(spec),
        input_dropout=spec["input_dropout"],
    )


def model_kind(spec):
    return "cnn" if spec["task"] == "relation" else "rnn"


def require(spec, *keys):
    for key in keys:
        if spec.get(key) is None:
            raise ConfigError(key, "required for this command")


def digest(spec):
    """Hash of every result-affecting key."""
    blob = {k: v for k, v in spec.items() if k not in _OUTPUT_KEYS}
    return hashlib.sha256(json.dumps(blob, sort_keys=True, default=list).encode()).hexdigest()[:16]
