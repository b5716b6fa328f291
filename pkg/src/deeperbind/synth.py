"""Planted-motif verification sets and the end-to-end experiment pipeline.

An experiment trains each requested model kind on array #1 (split 70/30 into
training and validation), picks the best grid cell by validation Spearman,
and evaluates it on the independent array #2.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import data as dio
from .data import PbmArray, SyntheticSpec
from .metrics import (MetricError, rank_chart, roc, scatter_with_regression, spearman, tpr_at_fpr, write_rank_csv,
                      write_roc_csv, write_scatter_csv)
from .models import DEEPBIND, DEEPERBIND, ModelSpec, model_from_checkpoint
from .plotting import rank_svg, roc_svg, scatter_svg
from .training import EncodedSet, HyperParams, grid_search, named_grid, predict_encoded, split_train_val

log = logging.getLogger(__name__)

RESULT_FILE = "result.json"
MANIFEST_FILE = "manifest.json"
NORMALIZATION_NOTE = "array #2 normalized with statistics fitted on the array #1 training portion"


def positional_weight(offsets, n_offsets: int, effect: str = "center-boost", magnitude: float = 1.0) -> np.ndarray:
    """Raised-cosine weight over window offsets 0 .. n_offsets-1.

    The bump is 0 at both ends and 1 in the middle. ``center-boost`` gives
    1 + magnitude * bump; ``edge-penalty`` gives 1 - magnitude * (1 - bump).
    """
    if magnitude < 0:
        raise ValueError("magnitude must be non-negative")
    t = np.asarray(offsets, dtype=np.float64)
    bump = 0.5 * (1.0 - np.cos(2.0 * np.pi * t / (n_offsets - 1))) if n_offsets > 1 else np.ones_like(t)
    if effect == "center-boost":
        return 1.0 + magnitude * bump
    if effect == "edge-penalty":
        return 1.0 - magnitude * (1.0 - bump)
    raise ValueError(f"unknown position effect {effect!r}")


def make_positional_dataset(base: SyntheticSpec, effect: str = "center-boost", magnitude: float = 1.0) -> PbmArray:
    """Like :func:`generate_synthetic`, with the best-window score scaled by the
    window's positional weight. Magnitude 0 reproduces the base array exactly."""
    rng = np.random.default_rng(base.seed)
    pwm = np.asarray(base.pwm, dtype=float)
    codes = dio._planted_probes([pwm], base.n, base.length, base.planted_fraction, rng)
    score, offset = dio._ordered_scores(codes, [pwm])
    weight = positional_weight(offset, base.length - pwm.shape[1] + 1, effect, magnitude)
    return dio._assemble(base.label, codes, score * weight + rng.normal(0.0, base.noise_sd, base.n))


def multi_motif_dataset(pwms: Sequence, n: int, length: int, seed: int, noise_sd: float = 0.5,
                        planted_fraction: float = 0.5, label: str = "synthetic-multi") -> PbmArray:
    """Each motif is planted independently, left to right without overlap.

    Intensity is the best total of per-motif window scores over left-to-right,
    non-overlapping window choices (one window per motif, in the given order).
    """
    mats = [np.asarray(p, dtype=float) for p in pwms]
    if not mats:
        raise ValueError("need at least one motif")
    rng = np.random.default_rng(seed)
    codes = dio._planted_probes(mats, n, length, planted_fraction, rng)
    score, _ = dio._ordered_scores(codes, mats)
    return dio._assemble(label, codes, score + rng.normal(0.0, noise_sd, n))


# ---------------------------------------------------------------------------
# Named verification sets
# ---------------------------------------------------------------------------

DATASETS = ("standard", "positional", "multi", "null")


def build_dataset(name: str, n: int = 10000, length: int = 36, seed: int = 0, **kw) -> PbmArray:
    """One of the named verification arrays, deterministic in ``seed``."""
    noise = kw.get("noise_sd", 0.5)
    fraction = kw.get("planted_fraction", 0.5)
    if name == "standard":
        return dio.generate_synthetic(dio.standard_spec(n=n, length=length, seed=seed, noise_sd=noise,
                                                        planted_fraction=fraction))
    if name == "positional":
        base = dio.standard_spec(n=n, length=length, seed=seed, noise_sd=noise, planted_fraction=fraction,
                                 label="synthetic-positional")
        return make_positional_dataset(base, kw.get("effect", "center-boost"), kw.get("magnitude", 2.0))
    if name == "multi":
        pwm = dio.consensus_pwm(dio.STANDARD_MOTIF)
        return multi_motif_dataset([pwm, pwm], n, length, seed, noise, fraction)
    if name == "null":
        # no planted motif and a flat PWM: intensities are pure noise
        flat = tuple(tuple(0.0 for _ in dio.STANDARD_MOTIF) for _ in range(4))
        return dio.generate_synthetic(SyntheticSpec(flat, n, length, max(noise, 1e-3), 0.0, seed,
                                                    "synthetic-null"))
    raise ValueError(f"unknown dataset {name!r}; expected one of {DATASETS}")


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

@dataclass
class ExperimentSpec:
    """Either a named synthetic set (two arrays drawn with seeds seed and seed+1)
    or paths to real array #1 / array #2 files."""

    dataset: str | None = "standard"
    n_probes: int = 10000
    probe_length: int = 36
    dataset_options: dict = field(default_factory=dict)
    train_path: str | None = None
    test_path: str | None = None
    seq_col: str | int | None = None
    signal_col: str | int | None = None
    models: list[str] = field(default_factory=lambda: [DEEPBIND, DEEPERBIND])
    grid: str | list = "reduced"
    max_epochs: int = 50
    seed: int = 0
    output_dir: str | None = None
    workers: int = 1
    rank_k: int = 100
    n_filters: int = 5
    width: int = 11
    fc_hidden: int | None = 32

    def __post_init__(self):
        if not self.models:
            raise ValueError("experiment needs at least one model kind")
        for m in self.models:
            if m not in (DEEPBIND, DEEPERBIND):
                raise ValueError(f"unknown model kind {m!r}")
        if (self.train_path is None) != (self.test_path is None):
            raise ValueError("give both train_path and test_path, or neither")
        if self.train_path is None and self.dataset not in DATASETS:
            raise ValueError(f"unknown dataset {self.dataset!r}")
        if isinstance(self.grid, list) and not self.grid:
            raise ValueError("grid is empty")

    @classmethod
    def from_file(cls, path) -> "ExperimentSpec":
        """Read a JSON object or ``key = value`` lines (values parsed as JSON when possible)."""
        text = Path(path).read_text()
        try:
            d = json.loads(text)
        except json.JSONDecodeError:
            d = parse_key_values(text)
        return cls(**d)

    def grid_for(self, kind: str) -> list[HyperParams]:
        if isinstance(self.grid, str):
            return named_grid(self.grid, kind, self.max_epochs, self.seed)
        cells = []
        for c in self.grid:
            c = dict(c)
            c.setdefault("max_epochs", self.max_epochs)
            c.setdefault("seed", self.seed)
            if kind == DEEPBIND:
                c["lstm_arch"] = None
            cells.append(HyperParams(**c))
        return cells

    def model_spec(self, kind: str) -> ModelSpec:
        return ModelSpec(kind=kind, n_filters=self.n_filters, width=self.width,
                         lstm_arch="10:10" if kind == DEEPERBIND else None, fc_hidden=self.fc_hidden)


def parse_key_values(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {line!r} is not 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            out[key.replace("-", "_")] = json.loads(value)
        except json.JSONDecodeError:
            out[key.replace("-", "_")] = value
    return out


@dataclass
class ModelResult:
    kind: str
    best_hyperparams: dict
    validation_spearman: float | None
    test_spearman: float | None
    test_auc: float | None
    test_tpr_at_1pct_fpr: float | None
    test_positives: int
    regression_slope: float | None
    regression_intercept: float | None
    rank_chart_k: int
    rank_chart_mean_rank: float | None
    grid_cells: int
    failed_cells: int


@dataclass
class ExperimentResult:
    models: dict[str, ModelResult]
    provenance: dict

    def to_dict(self) -> dict:
        return {"models": {k: asdict(v) for k, v in self.models.items()}, "provenance": self.provenance}


def _safe(fn, *args):
    try:
        return fn(*args)
    except MetricError:
        return None


def load_arrays(spec: ExperimentSpec) -> tuple[PbmArray, PbmArray]:
    if spec.train_path is not None:
        a1, _ = dio.load_pbm(spec.train_path, spec.seq_col, spec.signal_col, label="array#1")
        a2, _ = dio.load_pbm(spec.test_path, spec.seq_col, spec.signal_col, label="array#2")
        return a1, a2
    opts = dict(spec.dataset_options)
    a1 = build_dataset(spec.dataset, spec.n_probes, spec.probe_length, spec.seed, **opts)
    a2 = build_dataset(spec.dataset, spec.n_probes, spec.probe_length, spec.seed + 1, **opts)
    a1.label, a2.label = f"{spec.dataset}:array#1", f"{spec.dataset}:array#2"
    return a1, a2


def prepare(spec: ExperimentSpec):
    """Arrays after the split and train-fitted normalization: (train, val, test, full array #1)."""
    a1, a2 = load_arrays(spec)
    tr, va = split_train_val(a1, 0.7, spec.seed)
    stats = dio.fit_stats(tr)
    return dio.normalize(tr, stats), dio.normalize(va, stats), dio.normalize(a2, stats), dio.normalize(a1, stats)


def evaluate(model, test: PbmArray, rank_source: PbmArray | None = None, k: int = 100) -> dict:
    """All test metrics for one model, plus the plotting data behind them."""
    pred = predict_encoded(model, EncodedSet(test.sequences))
    measured = test.normalized
    threshold, labels = dio.positive_labels(test)
    curve = _safe(roc, pred, labels)
    fit = _safe(scatter_with_regression, pred, measured)
    chart = None
    chart_measured = None
    if rank_source is not None:
        src_pred = predict_encoded(model, EncodedSet(rank_source.sequences))
        _, src_labels = dio.positive_labels(rank_source)
        kk = min(k, int(src_labels.sum()))
        if kk > 0:
            chart_measured = rank_source.normalized
            chart = rank_chart(src_pred, chart_measured, src_labels, kk)
    return {
        "predictions": pred,
        "spearman": _safe(spearman, pred, measured),
        "roc": curve,
        "auc": curve.auc if curve else None,
        "tpr_at_1pct_fpr": tpr_at_fpr(curve, 0.01) if curve else None,
        "threshold": threshold,
        "positives": int(labels.sum()),
        "scatter": fit,
        "rank_chart": chart,
        "rank_measured": chart_measured,
    }


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    tr, va, te, a1 = prepare(spec)
    out = Path(spec.output_dir) if spec.output_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    results: dict[str, ModelResult] = {}
    files: list[str] = []
    for kind in spec.models:
        grid = spec.grid_for(kind)
        cell_dir = out / kind / "grid" if out is not None else None
        model_spec = spec.model_spec(kind)
        best_hp, reports = grid_search(model_spec, tr, va, grid, spec.workers, cell_dir)
        best_report = reports[grid.index(best_hp)]
        # evaluation of a stored checkpoint must reuse the training normalization
        best_report.best_checkpoint["metadata"]["normalization"] = tr.normalization
        model = model_from_checkpoint(best_report.best_checkpoint)
        ev = evaluate(model, te, a1, spec.rank_k)
        chart = ev["rank_chart"]
        results[kind] = ModelResult(
            kind=kind,
            best_hyperparams=best_hp.to_dict(),
            validation_spearman=best_report.best_spearman,
            test_spearman=ev["spearman"],
            test_auc=ev["auc"],
            test_tpr_at_1pct_fpr=ev["tpr_at_1pct_fpr"],
            test_positives=ev["positives"],
            regression_slope=ev["scatter"].slope if ev["scatter"] else None,
            regression_intercept=ev["scatter"].intercept if ev["scatter"] else None,
            rank_chart_k=len(chart.ranks) if chart else 0,
            rank_chart_mean_rank=float(np.mean(chart.ranks)) if chart else None,
            grid_cells=len(reports),
            failed_cells=sum(r.status != "ok" for r in reports),
        )
        if out is not None:
            files += write_model_outputs(out / kind, kind, ev, best_report)
    provenance = {
        "seed": spec.seed,
        "spec": asdict(spec) | {"output_dir": None},
        "array1_sha256": dio.array_digest(a1),
        "array2_sha256": dio.array_digest(te),
        "normalization": tr.normalization,
        "normalization_note": NORMALIZATION_NOTE,
        "split": {"train": len(tr), "validation": len(va), "test": len(te)},
    }
    result = ExperimentResult(results, provenance)
    if out is not None:
        (out / RESULT_FILE).write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n")
        files.append(RESULT_FILE)
        _write_manifest(out, files)
    return result


def write_model_outputs(d: Path, kind: str, ev: dict, report=None) -> list[str]:
    """Metrics, CSVs and SVGs for one evaluated model; returns the written names.

    Curves that are undefined for the data (no positives, constant predictions)
    are left out.
    """
    d.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name: str, text: str):
        (d / name).write_text(text)
        written.append(f"{kind}/{name}")

    if report is not None:
        put("report.json", json.dumps(report.to_dict(), indent=1) + "\n")
        put("checkpoint.json", json.dumps(report.best_checkpoint, indent=1) + "\n")
    metrics = {k: ev[k] for k in ("spearman", "auc", "tpr_at_1pct_fpr", "threshold", "positives")}
    put("metrics.json", json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    label = "DeeperBind" if kind == DEEPERBIND else "DeepBind"
    if ev["roc"] is not None:
        write_roc_csv(ev["roc"], d / "roc.csv")
        written.append(f"{kind}/roc.csv")
        put("roc.svg", roc_svg([(label, ev["roc"].fpr, ev["roc"].tpr, ev["roc"].auc)], "ROC curve on array #2"))
    if ev["scatter"] is not None:
        fit = ev["scatter"]
        write_scatter_csv(fit, d / "scatter.csv")
        written.append(f"{kind}/scatter.csv")
        put("scatter.svg", scatter_svg(fit.predicted, fit.measured, fit.slope, fit.intercept,
                                       f"{label}: predicted vs measured"))
    if ev["rank_chart"] is not None:
        chart = ev["rank_chart"]
        write_rank_csv(chart, ev["rank_measured"], d / "rankchart.csv")
        written.append(f"{kind}/rankchart.csv")
        put("rankchart.svg", rank_svg(chart.ranks, chart.n, f"{label}: predicted rank of top positives"))
    return written


def _write_manifest(out: Path, files: list[str]) -> None:
    entries = []
    for name in sorted(files):
        entries.append({"file": name, "sha256": hashlib.sha256((out / name).read_bytes()).hexdigest()})
    (out / MANIFEST_FILE).write_text(json.dumps({"files": entries, "normalization_note": NORMALIZATION_NOTE},
                                                indent=2) + "\n")
