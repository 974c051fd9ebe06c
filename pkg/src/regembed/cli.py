"""Command-line entry point.

    regembed train --config run.cfg [--seed N] [--out DIR] [--<key> VALUE ...]
    regembed sweep --config sweep.cfg [--workers N]
    regembed incremental --config inc.cfg
    regembed gradcheck [--seed N]
    regembed curves RUN_DIR [--out FILE]

Exit codes: 0 success, 2 config error, 3 I/O error, 4 divergence,
5 gradient check failure.
"""

import argparse
import csv
import json
import logging
import os
import sys
import time

from . import config as cfgmod
from .data import DataFormatError
from .gradcheck import DEFAULT_TOLERANCE, run_gradcheck
from .harness import Experiment, SweepSpec, run_incremental_study, run_sweep
from .models import save_checkpoint
from .regularizers import RegularizerSpec
from .trainer import DivergenceError, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGED = 4
EXIT_GRADCHECK = 5

log = logging.getLogger("regembed")


def parse_overrides(rest):
    """Turn leftover ``--key value`` / ``--key=value`` tokens into typed values."""
    out = {}
    i = 0
    while i < len(rest):
        tok = rest[i]
        if not tok.startswith("--"):
            raise cfgmod.ConfigError(None, f"unexpected argument {tok!r}")
        name = tok[2:]
        if "=" in name:
            name, value = name.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(rest):
                raise cfgmod.ConfigError(name, "missing value")
            value = rest[i + 1]
            i += 2
        key = name.replace("-", "_")
        out[key] = cfgmod.parse_value(key, value)
    return out


def _load_spec(args, rest):
    overrides = parse_overrides(rest)
    for key in ("seed", "out", "workers"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return cfgmod.load(args.config, overrides)


def _experiment(spec):
    cfgmod.require(spec, "train_path", "val_path")
    return Experiment.from_files(
        cfgmod.model_kind(spec), spec["train_path"], spec["val_path"], spec["embeddings_path"],
        spec["embed_dim"], spec["hidden_dim"], spec["window"])


def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=1, sort_keys=True, default=list)


def cmd_train(args, rest):
    spec = _load_spec(args, rest)
    experiment = _experiment(spec)
    cfg = cfgmod.train_config(spec)
    run_dir = os.path.join(spec["out"], f"{cfgmod.digest(spec)}-s{cfg.seed}")
    os.makedirs(run_dir, exist_ok=True)

    model, emb = experiment.build(cfg.seed)
    manifest = {"config": spec, "config_digest": cfgmod.digest(spec), "seed": cfg.seed,
                "curve": "curve.csv"}
    try:
        curve = train(cfg, model, emb, experiment.train, experiment.val)
    except DivergenceError as e:
        if e.curve is not None:
            e.curve.to_csv(os.path.join(run_dir, "curve.csv"))
        manifest.update(status="diverged", error=str(e))
        _write_json(os.path.join(run_dir, "manifest.json"), manifest)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    curve.to_csv(os.path.join(run_dir, "curve.csv"))
    save_checkpoint(os.path.join(run_dir, "checkpoint.npz"), model, emb)
    last = curve.records[-1]
    manifest.update(status="ok", checkpoint="checkpoint.npz",
                    final_train_acc=last.train_acc, final_val_acc=last.val_acc)
    _write_json(os.path.join(run_dir, "manifest.json"), manifest)
    print(f"final train_acc={last.train_acc:.4f} val_acc={last.val_acc:.4f}")
    print(f"outputs in {run_dir}")
    return EXIT_OK


def _sweep_dir(spec, name):
    return os.path.join(spec["out"], f"{name}-{cfgmod.digest(spec)}")


def cmd_sweep(args, rest):
    spec = _load_spec(args, rest)
    experiment = _experiment(spec)
    axes = tuple(spec[k] for k in ("axis1", "axis2") if spec.get(k) is not None)
    sweep = SweepSpec(cfgmod.train_config(spec), axes, spec["seeds"])
    out_dir = _sweep_dir(spec, "sweep")
    grid, _, executed = run_sweep(experiment, sweep, out_dir, spec["workers"])
    skipped = len(sweep.cells()) * len(sweep.seeds) - executed
    print(f"{len(grid.cells)} cells, {executed} runs executed, {skipped} resumed")
    for c in grid.cells:
        coords = ", ".join(f"{k}={v:g}" for (k, _), v in zip(sweep.axes, c.coords)) or "base"
        print(f"  {coords}: mean={c.mean:.4f} std={c.std:.4f} diverged={c.n_diverged}")
    print(f"summary in {os.path.join(out_dir, 'summary.csv')}")
    return EXIT_OK


def cmd_incremental(args, rest):
    spec = _load_spec(args, rest)
    cfgmod.require(spec, "incremental_kind", "incremental_value")
    experiment = _experiment(spec)
    base = cfgmod.train_config(spec)
    penalty = RegularizerSpec(spec["incremental_kind"], spec["incremental_value"],
                              include_biases=spec["penalize_biases"])
    out_dir = _sweep_dir(spec, "incremental")
    try:
        result = run_incremental_study(experiment, base, penalty, spec["activation_epochs"],
                                       spec["seeds"], out_dir, spec["workers"])
    except ValueError as e:
        raise cfgmod.ConfigError("activation_epochs", str(e)) from None
    for label, epoch, mean, std, best, n, nd in result.table:
        print(f"  {label}: final={mean:.4f} std={std:.4f} best={best:.4f} diverged={nd}/{n}")
    print(f"table in {os.path.join(out_dir, 'incremental.csv')}")
    return EXIT_OK


def cmd_gradcheck(args, rest):
    if rest:
        raise cfgmod.ConfigError(None, f"unexpected arguments {rest}")
    start = time.perf_counter()
    report = run_gradcheck(seed=args.seed or 0, vocab_size=args.vocab_size,
                           embed_dim=args.embed_dim, hidden_dim=args.hidden_dim,
                           num_classes=args.classes, tolerance=args.tolerance,
                           corrupt=args.corrupt_gradient)
    for (model, component), err in sorted(report.by_component().items()):
        status = "ok" if err < report.tolerance else "FAIL"
        print(f"{model:4s} {component:12s} max_rel_err={err:.3e} {status}")
    elapsed = time.perf_counter() - start
    if not report.passed:
        for r in report.failures:
            print(f"gradcheck failed: {r.model}/{r.component} under [{r.combo}] "
                  f"rel_err={r.error:.3e}", file=sys.stderr)
        return EXIT_GRADCHECK
    print(f"all {len(report.results)} checks below {report.tolerance:g} ({elapsed:.1f}s)")
    return EXIT_OK


def merge_curves(run_dir):
    """Long-format rows ``(series, seed, epoch, split, style, accuracy)``.

    Accuracy strings are copied verbatim from the source CSVs.
    """
    paths = []
    for root, _, files in os.walk(run_dir):
        if "curve.csv" in files:
            paths.append(os.path.join(root, "curve.csv"))
    rows = []
    for path in sorted(paths):
        series = os.path.relpath(os.path.dirname(path), run_dir)
        with open(path, newline="") as f:
            for rec in csv.DictReader(f):
                rows.append((series, rec["seed"], rec["epoch"], "train", "dashed", rec["train_acc"]))
                rows.append((series, rec["seed"], rec["epoch"], "val", "solid", rec["val_acc"]))
    return rows


def cmd_curves(args, rest):
    if rest:
        raise cfgmod.ConfigError(None, f"unexpected arguments {rest}")
    if not os.path.isdir(args.run_dir):
        raise FileNotFoundError(args.run_dir)
    rows = merge_curves(args.run_dir)
    if not rows:
        print(f"error: no curve.csv files under {args.run_dir}", file=sys.stderr)
        return EXIT_IO
    out = args.out or os.path.join(args.run_dir, "curves_long.csv")
    with open(out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("series", "seed", "epoch", "split", "style", "accuracy"))
        w.writerows(rows)
    print(f"{len(rows)} rows written to {out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="regembed", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "sweep", "incremental"):
        p = sub.add_parser(name, help=f"{name} from a key = value config file")
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--workers", type=int)
    p = sub.add_parser("gradcheck", help="finite-difference check of both models")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vocab-size", type=int, default=20)
    p.add_argument("--embed-dim", type=int, default=5)
    p.add_argument("--hidden-dim", type=int, default=4)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    p.add_argument("--corrupt-gradient", help=argparse.SUPPRESS)
    p = sub.add_parser("curves", help="merge curve CSVs into one long-format file")
    p.add_argument("run_dir")
    p.add_argument("--out")
    return parser


COMMANDS = {
    "train": cmd_train,
    "sweep": cmd_sweep,
    "incremental": cmd_incremental,
    "gradcheck": cmd_gradcheck,
    "curves": cmd_curves,
}


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    try:
        return COMMANDS[args.command](args, rest)
    except cfgmod.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DataFormatError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
