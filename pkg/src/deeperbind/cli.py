"""Command-line entry point.

Exit status: 0 on success, 1 on a runtime or data failure, 2 on a usage error.
Any flag can also come from ``--config FILE`` (JSON object or ``key = value``
lines); flags given on the command line win.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import data as dio
from .data import DataError
from .encoding import ROW_ORDER, one_hot, validate
from .metrics import (RANK_COLUMNS, ROC_COLUMNS, SCATTER_COLUMNS, MetricError, detect_kind, read_csv,
                      scatter_with_regression)
from .models import DEEPBIND, DEEPERBIND, CheckpointError, ModelSpec, load_checkpoint
from .plotting import rank_svg, roc_svg, scatter_svg
from .synth import DATASETS, ExperimentSpec, build_dataset, evaluate, parse_key_values, run_experiment, \
    write_model_outputs
from .training import HyperParams, TrainingDiverged, grid_search, named_grid, split_train_val, train

log = logging.getLogger("deeperbind")


class UsageError(Exception):
    pass


def _json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_split(args) -> tuple:
    """Array #1 split 70/30 and normalized with training-portion statistics."""
    array, _ = dio.load_pbm(args.data, args.seq_col, args.signal_col)
    tr, va = split_train_val(array, 0.7, args.seed)
    stats = dio.fit_stats(tr, args.log_transform)
    return dio.normalize(tr, stats), dio.normalize(va, stats)


def _model_spec(args) -> ModelSpec:
    kind = args.model
    return ModelSpec(kind=kind, n_filters=args.filters, width=args.width,
                     lstm_arch=(args.lstm_arch or "10:10") if kind == DEEPERBIND else None)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _compact(m: np.ndarray) -> list:
    # whole numbers print as ints; N columns keep their 0.25 entries
    return [[int(v) if v.is_integer() else v for v in row] for row in m.tolist()]


def cmd_encode(args) -> None:
    seqs = list(args.sequence or [])
    if args.input:
        seqs += [line.strip() for line in Path(args.input).read_text().splitlines() if line.strip()]
    if not seqs:
        raise UsageError("give --sequence or --input")
    records = [{"sequence": validate(s), "rows": ROW_ORDER, "matrix": _compact(one_hot(s))} for s in seqs]
    text = json.dumps(records if len(records) > 1 else records[0]) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_generate(args) -> None:
    opts = {"noise_sd": args.noise_sd, "planted_fraction": args.planted_fraction}
    if args.dataset == "positional":
        opts.update(effect=args.effect, magnitude=args.magnitude)
    array = build_dataset(args.dataset, args.n, args.length, args.seed, **opts)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dio.write_tsv(array, out)
    dio.write_sidecar(dio.normalize(array), out.with_suffix(out.suffix + ".json"))
    print(f"wrote {len(array)} probes to {out}")


def _hyperparams(args) -> HyperParams:
    return HyperParams(learning_rate=args.learning_rate, lr_decay=args.lr_decay, weight_decay=args.weight_decay,
                       lstm_arch=(args.lstm_arch or "10:10") if args.model == DEEPERBIND else None,
                       dropout=args.dropout, batch_size=args.batch_size, max_epochs=args.max_epochs,
                       seed=args.seed, allow_custom=args.allow_custom)


def cmd_train(args) -> None:
    tr, va = _load_split(args)
    hp = _hyperparams(args)
    report = train(_model_spec(args), tr, va, hp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = report.best_checkpoint
    ckpt["metadata"]["normalization"] = tr.normalization
    _json(out / "report.json", report.to_dict())
    _json(out / "checkpoint.json", ckpt)
    print(f"best epoch {report.best_epoch}, validation Spearman {report.best_spearman:.4f}")


def cmd_grid(args) -> None:
    tr, va = _load_split(args)
    grid = named_grid(args.grid, args.model, args.max_epochs, args.seed)
    out = Path(args.out)
    best, reports = grid_search(_model_spec(args), tr, va, grid, args.workers, out / "cells")
    i = grid.index(best)
    ckpt = reports[i].best_checkpoint
    ckpt["metadata"]["normalization"] = tr.normalization
    _json(out / "best_report.json", reports[i].to_dict())
    _json(out / "checkpoint.json", ckpt)
    failed = sum(r.status != "ok" for r in reports)
    print(f"best cell {i} of {len(grid)} ({failed} failed), validation Spearman {reports[i].best_spearman:.4f}")


def cmd_evaluate(args) -> None:
    model, meta = load_checkpoint(args.checkpoint)
    stats = meta.get("normalization")
    if stats is None:
        log.warning("checkpoint %s stores no normalization; fitting on the test array", args.checkpoint)
    array, _ = dio.load_pbm(args.data, args.seq_col, args.signal_col)
    test = dio.normalize(array, stats)
    rank_source = test
    if args.rank_data:
        rank_source = dio.normalize(dio.load_pbm(args.rank_data, args.seq_col, args.signal_col)[0], stats)
    ev = evaluate(model, test, rank_source, args.k)
    out = Path(args.out)
    write_model_outputs(out, model.kind, ev)
    for name in ("roc", "scatter", "rank_chart"):
        if ev[name] is None:
            log.warning("%s not written: undefined for this data (%d positives)", name, ev["positives"])
    print(json.dumps({k: ev[k] for k in ("spearman", "auc", "tpr_at_1pct_fpr", "positives")}, sort_keys=True))


def cmd_experiment(args) -> None:
    fields = {}
    if args.spec:
        text = Path(args.spec).read_text()
        try:
            fields = json.loads(text)
        except json.JSONDecodeError:
            fields = parse_key_values(text)
    for key in ("dataset", "n_probes", "probe_length", "train_path", "test_path", "models", "grid",
                "max_epochs", "seed", "workers", "output_dir"):
        v = getattr(args, key)
        if v is not None:
            fields[key] = v
    if fields.get("train_path"):
        fields.setdefault("dataset", None)
    if not fields.get("output_dir"):
        raise UsageError("experiment needs --out")
    spec = ExperimentSpec(**fields)
    result = run_experiment(spec)
    for kind, r in result.models.items():
        print(f"{kind}: test Spearman {r.test_spearman}, AUC {r.test_auc}, TPR@1%FPR {r.test_tpr_at_1pct_fpr}")


def cmd_plot(args) -> None:
    kinds = [detect_kind(p) for p in args.inputs]
    if len(set(kinds)) != 1:
        raise MetricError(f"cannot mix CSV kinds in one plot: {kinds}")
    kind = kinds[0]
    labels = args.label or [Path(p).stem for p in args.inputs]
    if len(labels) != len(args.inputs):
        raise UsageError("give one --label per input")
    if kind == "roc":
        curves = []
        for p, lab in zip(args.inputs, labels):
            d = read_csv(p, ROC_COLUMNS)
            fpr, tpr = d["fpr"], d["tpr"]
            auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1])) / 2.0)
            curves.append((lab, fpr, tpr, auc))
        svg = roc_svg(curves, args.title or "ROC curves")
    elif len(args.inputs) != 1:
        raise UsageError(f"{kind} plots take exactly one input")
    elif kind == "scatter":
        d = read_csv(args.inputs[0], SCATTER_COLUMNS)
        x, y = d["predicted"], d["measured"]
        fit = scatter_with_regression(x, y)
        svg = scatter_svg(x, y, fit.slope, fit.intercept, args.title or "Predicted vs measured")
    else:
        d = read_csv(args.inputs[0], RANK_COLUMNS)
        ranks = d["predicted_rank"]
        n = args.n or (int(ranks.max()) if len(ranks) else 1)
        svg = rank_svg(ranks, n, args.title or "Predicted rank of top positives")
    Path(args.out).write_text(svg)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="tab-separated probe file (optionally gzipped)")
    p.add_argument("--seq-col", dest="seq_col", type=_column, help="sequence column: 0-based index or header name")
    p.add_argument("--signal-col", dest="signal_col", type=_column, help="signal column: index or header name")


def _column(v: str):
    return int(v) if v.lstrip("-").isdigit() else v


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=(DEEPBIND, DEEPERBIND), default=DEEPERBIND)
    p.add_argument("--lstm-arch", dest="lstm_arch", help="e.g. 10:10 (DeeperBind only)")
    p.add_argument("--filters", type=int, default=5)
    p.add_argument("--width", type=int, default=11)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-epochs", dest="max_epochs", type=int, default=50)
    p.add_argument("--log-transform", dest="log_transform", action="store_true",
                   help="z-score log intensities instead of raw ones")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deeperbind", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON or key=value file supplying flag defaults")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("encode", help="one-hot encode sequences")
    p.add_argument("--sequence", "-s", action="append")
    p.add_argument("--input", help="file with one sequence per line")
    p.add_argument("--out")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("generate", help="write a synthetic probe array")
    p.add_argument("--dataset", choices=DATASETS, default="standard")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--length", type=int, default=36)
    p.add_argument("--noise-sd", dest="noise_sd", type=float, default=0.5)
    p.add_argument("--planted-fraction", dest="planted_fraction", type=float, default=0.5)
    p.add_argument("--effect", choices=("center-boost", "edge-penalty"), default="center-boost")
    p.add_argument("--magnitude", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate, _needs=("out",))

    p = sub.add_parser("train", help="train one model with one hyperparameter setting")
    _data_flags(p)
    _model_flags(p)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=1e-3)
    p.add_argument("--lr-decay", dest="lr_decay", type=float, default=0.0)
    p.add_argument("--weight-decay", dest="weight_decay", type=float, default=0.0)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=100)
    p.add_argument("--allow-custom", dest="allow_custom", action="store_true",
                   help="accept values outside the standard search ranges")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train, _needs=("data", "out"))

    p = sub.add_parser("grid", help="grid-search hyperparameters")
    _data_flags(p)
    _model_flags(p)
    p.add_argument("--grid", choices=("reduced", "full"), default="reduced")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_grid, _needs=("data", "out"))

    p = sub.add_parser("evaluate", help="score a checkpoint on a test array")
    _data_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--rank-data", dest="rank_data", help="array for the rank chart (default: the test array)")
    p.add_argument("--k", type=int, default=100, help="rank chart size (capped at the positive count)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate, _needs=("checkpoint", "data", "out"))

    p = sub.add_parser("experiment", help="train both models on array #1 and evaluate on array #2")
    p.add_argument("--spec", help="experiment spec file (JSON or key=value)")
    p.add_argument("--dataset", choices=DATASETS)
    p.add_argument("--n-probes", dest="n_probes", type=int)
    p.add_argument("--probe-length", dest="probe_length", type=int)
    p.add_argument("--train", dest="train_path")
    p.add_argument("--test", dest="test_path")
    p.add_argument("--models", nargs="+", choices=(DEEPBIND, DEEPERBIND))
    p.add_argument("--grid", choices=("reduced", "full"))
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", dest="output_dir")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("plot", help="render metric CSVs as SVG")
    p.add_argument("inputs", nargs="*", help="roc, scatter or rank CSV files")
    p.add_argument("--label", action="append")
    p.add_argument("--title")
    p.add_argument("--n", type=int, help="probe count for the rank axis")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot, _needs=("inputs", "out"))
    return parser


def _config_defaults(path: str) -> dict:
    text = Path(path).read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError:
        cfg = parse_key_values(text)
    if not isinstance(cfg, dict):
        raise ValueError("config must hold an object of flag values")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        try:
            defaults = _config_defaults(known.config)
        except (OSError, ValueError) as e:
            parser.error(f"cannot read config {known.config}: {e}")
        subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
        for sp in subparsers.choices.values():
            sp.set_defaults(**defaults)
    args = parser.parse_args(argv)
    if args.command is None:
        parser.error("a command is required")
    sp = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices[args.command]
    for name in getattr(args, "_needs", ()):
        if not getattr(args, name, None):
            sp.error(f"the following arguments are required: --{name.replace('_', '-')}"
                     if name != "inputs" else "at least one input CSV is required")

    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s: %(message)s")
    try:
        args.func(args)
    except UsageError as e:
        sp.error(str(e))
    except (DataError, CheckpointError, MetricError, TrainingDiverged, ValueError, OSError, RuntimeError) as e:
        print(f"deeperbind {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
