"""Multi-seed sweeps, incremental-activation studies and grid aggregation.

Every run is a pure function of ``(experiment, TrainConfig)``, so runs are
dispatched independently and folded into a :class:`GridResult` afterwards.
With an output directory each run persists under
``runs/<config digest>-s<seed>/`` and completed runs are skipped on rerun.
"""

import csv
import hashlib
import json
import logging
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from .core import RandomSource
from .data import (
    NUM_RELATION_CLASSES,
    NUM_SENTIMENT_CLASSES,
    SentenceExample,
    Vocabulary,
    iter_words,
    build_embedding_matrix,
    flatten_tree,
    load_sentence_dataset,
    load_tree_dataset,
    read_embedding_file,
)
from .models import EmbeddingTable, ModelDims, build_model
from .regularizers import DROPOUT, KINDS, RegularizerSpec
from .trainer import DivergenceError, LearningCurve, train

log = logging.getLogger(__name__)

SUMMARY_HEADER = ("axis1", "axis2", "mean_acc", "std_acc", "n_seeds", "n_diverged",
                  "best_epoch_mean")
INCREMENTAL_HEADER = ("setting", "activation_epoch", "mean_final_val", "std_final_val",
                      "best_epoch_mean", "n_seeds", "n_diverged")


@dataclass
class Experiment:
    """Datasets, vocabulary and dimensions shared by every run of a study."""

    kind: str
    train: list
    val: list
    vocab: object
    dims: ModelDims
    vectors: dict = None

    def build(self, seed):
        """Fresh ``(model, embeddings)`` for one seed."""
        rng = RandomSource(seed)
        phi = build_embedding_matrix(self.vocab, self.dims.embed_dim,
                                     rng.fork("embeddings"), self.vectors)
        model = build_model(self.kind, self.dims, rng.fork("params"))
        return model, EmbeddingTable(phi)

    @classmethod
    def from_rows(cls, kind, train_rows, val_rows, vectors=None, embed_dim=50,
                  hidden_dim=50, window=5):
        """Build from ``(label, tokens)`` rows (cnn) or ``(label, nested)`` rows (rnn).

        The vocabulary comes from the training rows only.
        """
        if kind == "cnn":
            vocab = Vocabulary.build(toks for _, toks in train_rows)
            train_set = [SentenceExample(vocab.encode(t), y) for y, t in train_rows]
            val_set = [SentenceExample(vocab.encode(t), y) for y, t in val_rows]
            classes = NUM_RELATION_CLASSES
        elif kind == "rnn":
            vocab = Vocabulary.build(iter_words(t) for _, t in train_rows)
            train_set = [flatten_tree(t, y, vocab.lookup) for y, t in train_rows]
            val_set = [flatten_tree(t, y, vocab.lookup) for y, t in val_rows]
            classes = NUM_SENTIMENT_CLASSES
        else:
            raise ValueError(f"unknown model kind {kind!r}")
        dims = ModelDims(len(vocab), embed_dim, hidden_dim, classes, window)
        return cls(kind, train_set, val_set, vocab, dims, vectors)

    @classmethod
    def from_files(cls, kind, train_path, val_path, embeddings_path=None, embed_dim=50,
                   hidden_dim=50, window=5):
        if kind == "cnn":
            train_set, vocab = load_sentence_dataset(train_path)
            val_set, _ = load_sentence_dataset(val_path, vocab)
            classes = NUM_RELATION_CLASSES
        else:
            train_set, vocab = load_tree_dataset(train_path)
            val_set, _ = load_tree_dataset(val_path, vocab)
            classes = NUM_SENTIMENT_CLASSES
        vectors = read_embedding_file(embeddings_path, embed_dim) if embeddings_path else None
        dims = ModelDims(len(vocab), embed_dim, hidden_dim, classes, window)
        return cls(kind, train_set, val_set, vocab, dims, vectors)


@dataclass
class RunResult:
    config: object
    curve: LearningCurve
    error: str = None

    @property
    def diverged(self):
        return self.error is not None


def run_single(experiment, cfg):
    model, emb = experiment.build(cfg.seed)
    try:
        curve = train(cfg, model, emb, experiment.train, experiment.val)
    except DivergenceError as e:
        return RunResult(cfg, e.curve, str(e))
    return RunResult(cfg, curve)


# -- persistence -------------------------------------------------------------

def run_dir_name(cfg):
    return f"{cfg.digest()}-s{cfg.seed}"


def _write_run(root, result):
    path = os.path.join(root, "runs", run_dir_name(result.config))
    os.makedirs(path, exist_ok=True)
    result.curve.to_csv(os.path.join(path, "curve.csv"))
    meta = {
        "digest": result.config.digest(),
        "seed": result.config.seed,
        "status": "diverged" if result.diverged else "ok",
        "error": result.error,
        "config": result.config.to_dict(),
    }
    # written last: its presence marks the run complete
    with open(os.path.join(path, "result.json"), "w") as f:
        json.dump(meta, f, indent=1, sort_keys=True)
    return path


def _read_run(root, cfg):
    path = os.path.join(root, "runs", run_dir_name(cfg))
    meta_path = os.path.join(path, "result.json")
    if not os.path.exists(meta_path):
        return None
    with open(meta_path) as f:
        meta = json.load(f)
    curve = LearningCurve.from_csv(os.path.join(path, "curve.csv"), meta["digest"])
    curve.seed = cfg.seed
    curve.diverged = meta["status"] == "diverged"
    return RunResult(cfg, curve, meta["error"])


_WORKER_EXPERIMENT = None


def _init_worker(experiment):
    global _WORKER_EXPERIMENT
    _WORKER_EXPERIMENT = experiment


def _run_in_worker(cfg):
    return run_single(_WORKER_EXPERIMENT, cfg)


def execute(experiment, configs, out_dir=None, workers=1):
    """Run every config (skipping ones already persisted); results in input order."""
    results = [None] * len(configs)
    todo = []
    for i, cfg in enumerate(configs):
        cached = _read_run(out_dir, cfg) if out_dir else None
        if cached is not None:
            results[i] = cached
        else:
            todo.append(i)
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(workers, initializer=_init_worker,
                                 initargs=(experiment,)) as pool:
            fresh = list(pool.map(_run_in_worker, [configs[i] for i in todo]))
    else:
        fresh = [run_single(experiment, configs[i]) for i in todo]
    for i, res in zip(todo, fresh):
        results[i] = res
        if out_dir:
            _write_run(out_dir, res)
    return results, len(todo)


# -- sweeps ------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    base: object
    axes: tuple = ()
    seeds: tuple = (0, 1, 2, 3, 4)

    def __post_init__(self):
        axes = tuple((kind, tuple(float(v) for v in values)) for kind, values in self.axes)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ValueError("a sweep needs at least one seed")
        if len(axes) > 2:
            raise ValueError("at most two sweep axes are supported")
        if len({k for k, _ in axes}) != len(axes):
            raise ValueError("sweep axes must use distinct regularizer kinds")
        for kind, values in axes:
            if kind not in KINDS:
                raise ValueError(f"unknown axis kind {kind!r}")
            if not values:
                raise ValueError(f"axis {kind} has no values")
            for v in values:
                if v < 0 or (kind == DROPOUT and v >= 1):
                    raise ValueError(f"invalid value {v} on axis {kind}")

    def cells(self):
        return list(product(*(values for _, values in self.axes)))

    def config(self, coords, seed):
        regs = self.base.regularizers
        for (kind, _), value in zip(self.axes, coords):
            old = regs.get(kind)
            if value == 0:
                regs = regs.without(kind)
            else:
                regs = regs.replace(RegularizerSpec(
                    kind, value,
                    old.activation_epoch if old else 0,
                    old.include_biases if old else False))
        return replace(self.base, regularizers=regs, seed=seed)

    def digest(self):
        blob = json.dumps({"base": self.base.to_dict(with_seed=False),
                           "axes": [[k, list(v)] for k, v in self.axes],
                           "seeds": list(self.seeds)}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def sample_std(values):
    return statistics.stdev(values) if len(values) > 1 else 0.0


@dataclass
class Cell:
    coords: tuple
    final: list
    best: list
    n_diverged: int = 0

    @property
    def valid_final(self):
        return [v for v in self.final if v is not None]

    @property
    def mean(self):
        vals = self.valid_final
        return statistics.fmean(vals) if vals else float("nan")

    @property
    def std(self):
        return sample_std(self.valid_final)

    @property
    def best_mean(self):
        vals = [v for v in self.best if v is not None]
        return statistics.fmean(vals) if vals else float("nan")


@dataclass
class GridResult:
    axes: tuple
    seeds: tuple
    cells: list = field(default_factory=list)

    def cell(self, coords):
        for c in self.cells:
            if c.coords == tuple(coords):
                return c
        raise KeyError(coords)

    def summary_rows(self):
        for c in self.cells:
            coords = [repr(v) for v in c.coords] + [""] * (2 - len(c.coords))
            yield coords + [f"{c.mean:.17g}", f"{c.std:.17g}", str(len(c.final)),
                            str(c.n_diverged), f"{c.best_mean:.17g}"]

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(SUMMARY_HEADER)
            w.writerows(self.summary_rows())


def aggregate(spec, results):
    """Fold per-run results (ordered cell-major, seed-minor) into a grid."""
    grid = GridResult(spec.axes, spec.seeds)
    it = iter(results)
    for coords in spec.cells():
        cell = Cell(tuple(coords), [], [])
        for _ in spec.seeds:
            res = next(it)
            if res.diverged or not res.curve.records:
                cell.final.append(None)
                cell.best.append(None)
                cell.n_diverged += 1
            else:
                cell.final.append(res.curve.final_val)
                cell.best.append(res.curve.best_val)
        if cell.n_diverged:
            log.warning("cell %s: %d of %d runs diverged", coords, cell.n_diverged,
                        len(spec.seeds))
        grid.cells.append(cell)
    return grid


def write_manifest(path, spec, entries, extra=None):
    manifest = {
        "sweep_digest": spec.digest(),
        "base_config": spec.base.to_dict(with_seed=False),
        "axes": [[k, list(v)] for k, v in spec.axes],
        "seeds": list(spec.seeds),
        "runs": entries,
    }
    if extra:
        manifest.update(extra)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)


def run_sweep(experiment, spec, out_dir=None, workers=1):
    """Run ``|cells| x |seeds|`` trainings; returns ``(grid, curves, n_executed)``.

    ``curves`` maps ``(coords, seed)`` to the run's :class:`LearningCurve`.
    """
    keys, configs = [], []
    for coords in spec.cells():
        for seed in spec.seeds:
            keys.append((tuple(coords), seed))
            configs.append(spec.config(coords, seed))
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    results, executed = execute(experiment, configs, out_dir, workers)
    grid = aggregate(spec, results)
    if out_dir:
        entries = [{"coords": list(k[0]), "seed": k[1], "digest": cfg.digest(),
                    "path": os.path.join("runs", run_dir_name(cfg))}
                   for k, cfg in zip(keys, configs)]
        write_manifest(os.path.join(out_dir, "manifest.json"), spec, entries)
        grid.to_csv(os.path.join(out_dir, "summary.csv"))
    curves = {k: r.curve for k, r in zip(keys, results)}
    return grid, curves, executed


def load_grid(out_dir, spec):
    """Rebuild a grid purely from persisted run artifacts."""
    results = []
    for coords in spec.cells():
        for seed in spec.seeds:
            res = _read_run(out_dir, spec.config(coords, seed))
            if res is None:
                raise FileNotFoundError(f"missing run for cell {coords}, seed {seed}")
            results.append(res)
    return aggregate(spec, results)


def highlight_cells(grid):
    """Cells whose mean is within 1.5 standard deviations of the peak cell.

    The peak is the highest mean; its sample std sets the margin. Cells with
    no successful run are never highlighted.
    """
    scored = [c for c in grid.cells if not np.isnan(c.mean)]
    if not scored:
        return set()
    peak = max(scored, key=lambda c: c.mean)
    threshold = peak.mean - 1.5 * peak.std
    return {c.coords for c in scored if c.mean >= threshold}


# -- incremental activation ---------------------------------------------------

@dataclass
class IncrementalResult:
    settings: list
    curves: dict
    table: list

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(INCREMENTAL_HEADER)
            for row in self.table:
                w.writerow([row[0], "" if row[1] is None else row[1]]
                           + [f"{v:.17g}" for v in row[2:5]] + [row[5], row[6]])


def run_incremental_study(experiment, base, penalty, activation_epochs, seeds=(0, 1, 2, 3, 4),
                          out_dir=None, workers=1):
    """Train with ``penalty`` switched on at each epoch in ``activation_epochs``.

    An unregularized baseline (``penalty.kind`` removed from ``base``) runs
    alongside with the same seeds. Curves are keyed by setting label
    (``"baseline"`` or ``"epoch_<e>"``) and then seed.
    """
    if not penalty.is_penalty:
        raise ValueError("incremental activation applies to penalties, not dropout")
    for e in activation_epochs:
        if not 0 <= e < base.epochs:
            raise ValueError(f"activation epoch {e} outside [0, {base.epochs})")
    settings = [("baseline", None, base.regularizers.without(penalty.kind))]
    for e in activation_epochs:
        spec = replace(penalty, activation_epoch=int(e))
        settings.append((f"epoch_{e}", int(e), base.regularizers.replace(spec)))

    configs = [replace(base, regularizers=regs, seed=s) for _, _, regs in settings for s in seeds]
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    results, _ = execute(experiment, configs, out_dir, workers)

    curves, table = {}, []
    it = iter(results)
    for label, epoch, _ in settings:
        runs = [next(it) for _ in seeds]
        curves[label] = {s: r.curve for s, r in zip(seeds, runs)}
        ok = [r for r in runs if not r.diverged and r.curve.records]
        finals = [r.curve.final_val for r in ok]
        bests = [r.curve.best_val for r in ok]
        table.append((label, epoch,
                      statistics.fmean(finals) if finals else float("nan"),
                      sample_std(finals),
                      statistics.fmean(bests) if bests else float("nan"),
                      len(runs), len(runs) - len(ok)))
    result = IncrementalResult([s[0] for s in settings], curves, table)
    if out_dir:
        result.to_csv(os.path.join(out_dir, "incremental.csv"))
        entries = [{"setting": settings[i // len(seeds)][0], "seed": cfg.seed,
                    "digest": cfg.digest(), "path": os.path.join("runs", run_dir_name(cfg))}
                   for i, cfg in enumerate(configs)]
        with open(os.path.join(out_dir, "manifest.json"), "w") as f:
            json.dump({"base_config": base.to_dict(with_seed=False),
                       "penalty": [penalty.kind, penalty.value],
                       "activation_epochs": list(activation_epochs),
                       "seeds": list(seeds), "runs": entries}, f, indent=1, sort_keys=True)
    return result
