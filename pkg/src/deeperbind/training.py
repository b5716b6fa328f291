"""Loss, RMSProp, the mini-batch training loop and the hyperparameter grid."""

from __future__ import annotations

import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Variable
from .data import PbmArray
from .encoding import one_hot_batch
from .metrics import MetricError, spearman
from .models import DEEPBIND, DEEPERBIND, Model, ModelSpec, build_model, checkpoint_dict, forward

log = logging.getLogger(__name__)

# Grid-search ranges for both models; the LSTM row applies to DeeperBind only.
SEARCH_SPACE = {
    "learning_rate": (1e-2, 1e-3, 1e-4),
    "lr_decay": (1e-7, 1e-4, 0.0),
    "weight_decay": (1e-5, 0.0),
    "lstm_arch": ("30", "20", "30:20", "10:10", "10:20"),
    "dropout": (0.0, 0.2, 0.5),
    "batch_size": (40, 100),
}

RMSPROP_RHO = 0.9
RMSPROP_EPS = 1e-8


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, hp: "HyperParams"):
        self.epoch = epoch
        self.hp = hp
        super().__init__(f"training loss became non-finite in epoch {epoch} with {hp}")


@dataclass(frozen=True)
class HyperParams:
    learning_rate: float = 1e-3
    lr_decay: float = 0.0
    weight_decay: float = 0.0
    lstm_arch: str | None = "10:10"
    dropout: float = 0.0
    batch_size: int = 100
    max_epochs: int = 50
    seed: int = 0
    allow_custom: bool = False

    def __post_init__(self):
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("max_epochs and batch_size must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.allow_custom:
            return
        for name, allowed in SEARCH_SPACE.items():
            value = getattr(self, name)
            if name == "lstm_arch" and value is None:
                continue
            if value not in allowed:
                raise ValueError(f"{name}={value!r} is outside the grid values {allowed}; "
                                 "pass allow_custom=True to override")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        return cls(**d)


def full_grid(kind: str, max_epochs: int = 50, seed: int = 0) -> list[HyperParams]:
    """Every combination of the grid values: 540 cells for DeeperBind, 108 for the baseline."""
    archs = SEARCH_SPACE["lstm_arch"] if kind == DEEPERBIND else (None,)
    cells = itertools.product(SEARCH_SPACE["learning_rate"], SEARCH_SPACE["lr_decay"], SEARCH_SPACE["weight_decay"], archs,
                              SEARCH_SPACE["dropout"], SEARCH_SPACE["batch_size"])
    return [HyperParams(lr, dec, wd, arch, dr, bs, max_epochs, seed) for lr, dec, wd, arch, dr, bs in cells]


def reduced_grid(kind: str, max_epochs: int = 50, seed: int = 0) -> list[HyperParams]:
    """Two cells (learning rate 1e-2 and 1e-3), everything else fixed."""
    arch = "10:10" if kind == DEEPERBIND else None
    return [HyperParams(lr, 0.0, 0.0, arch, 0.0, 100, max_epochs, seed) for lr in (1e-2, 1e-3)]


def named_grid(name: str, kind: str, max_epochs: int = 50, seed: int = 0) -> list[HyperParams]:
    if name == "full":
        return full_grid(kind, max_epochs, seed)
    if name == "reduced":
        return reduced_grid(kind, max_epochs, seed)
    raise ValueError(f"unknown grid {name!r}; expected 'full' or 'reduced'")


# ---------------------------------------------------------------------------
# Loss and optimizer
# ---------------------------------------------------------------------------

def loss(predictions, targets) -> Variable:
    """Mean squared error: the Gaussian negative log-likelihood at unit variance, constants dropped."""
    predictions = ad._as_var(predictions)
    t = np.asarray(targets, dtype=np.float64)
    if predictions.shape != t.shape or t.ndim != 1:
        raise ValueError(f"predictions {predictions.shape} and targets {t.shape} must be equal-length vectors")
    if t.size == 0:
        raise ValueError("loss of an empty batch is undefined")
    return ad.mul(ad.sum(ad.power(ad.sub(predictions, t), 2)), 1.0 / t.size)


@dataclass
class RmsPropState:
    ms: list[np.ndarray]
    rho: float = RMSPROP_RHO
    eps: float = RMSPROP_EPS
    step: int = 0

    @classmethod
    def for_params(cls, params: Sequence[Variable], rho: float = RMSPROP_RHO, eps: float = RMSPROP_EPS):
        return cls([np.zeros_like(p.value) for p in params], rho, eps)


def rmsprop_step(params: Sequence[Variable], state: RmsPropState, hp: HyperParams) -> None:
    """One update; the learning rate decays as lr / (1 + decay * step) per batch."""
    lr = hp.learning_rate / (1.0 + hp.lr_decay * state.step)
    for p, ms in zip(params, state.ms):
        g = p.grad + hp.weight_decay * p.value
        ms *= state.rho
        ms += (1.0 - state.rho) * g * g
        p.value -= lr * g / np.sqrt(ms + state.eps)
    state.step += 1


# ---------------------------------------------------------------------------
# Data handling
# ---------------------------------------------------------------------------

def split_train_val(array: PbmArray, fraction: float = 0.7, seed: int = 0) -> tuple[PbmArray, PbmArray]:
    """Seeded shuffle into ceil(fraction * n) training probes and the rest."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    n = len(array)
    if n < 2:
        raise ValueError("need at least two probes to split")
    perm = np.random.default_rng(seed).permutation(n)
    k = min(n - 1, math.ceil(fraction * n))
    return (array.subset(perm[:k], f"{array.label}:train"), array.subset(perm[k:], f"{array.label}:val"))


class EncodedSet:
    """One-hot tensors grouped by probe length, with row lookup for batches."""

    def __init__(self, sequences: Sequence[str], targets=None):
        self.n = len(sequences)
        self.lengths = np.array([len(s) for s in sequences], dtype=int)
        self.targets = None if targets is None else np.asarray(targets, dtype=np.float64)
        self.groups: dict[int, np.ndarray] = {}
        self.row = np.empty(self.n, dtype=int)
        for L in np.unique(self.lengths):
            idx = np.flatnonzero(self.lengths == L)
            self.groups[int(L)] = one_hot_batch([sequences[i] for i in idx])
            self.row[idx] = np.arange(len(idx))

    @classmethod
    def from_array(cls, array: PbmArray) -> "EncodedSet":
        return cls(array.sequences, array.normalized)

    def batches(self, idx: np.ndarray):
        """Yield (indices, one-hot batch) per probe length present in ``idx``."""
        lengths = self.lengths[idx]
        for L in np.unique(lengths):
            sel = idx[lengths == L]
            yield sel, self.groups[int(L)][self.row[sel]]


def predict_encoded(model: Model, data: EncodedSet, chunk: int = 1000) -> np.ndarray:
    out = np.empty(data.n)
    idx = np.arange(data.n)
    for lo in range(0, data.n, chunk):
        for sel, X in data.batches(idx[lo:lo + chunk]):
            out[sel] = forward(model, X, "eval").value
    return out


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainReport:
    hyperparams: HyperParams
    model_kind: str
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_spearman: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_checkpoint: dict | None = None
    wall_seconds: float = 0.0
    status: str = "ok"
    error: str | None = None

    @property
    def best_spearman(self) -> float:
        if self.best_epoch < 0:
            return float("nan")
        return self.val_spearman[self.best_epoch]

    def to_dict(self, timing: bool = False) -> dict:
        """JSON-ready summary; wall-clock time is left out unless asked for."""
        d = {
            "model_kind": self.model_kind,
            "hyperparams": self.hyperparams.to_dict(),
            "status": self.status,
            "error": self.error,
            "train_loss": [_json_float(v) for v in self.train_loss],
            "val_loss": [_json_float(v) for v in self.val_loss],
            "val_spearman": [_json_float(v) for v in self.val_spearman],
            "best_epoch": self.best_epoch,
            "best_spearman": _json_float(self.best_spearman),
        }
        if timing:
            d["wall_seconds"] = self.wall_seconds
        return d

    @classmethod
    def from_dict(cls, d: dict, checkpoint: dict | None = None) -> "TrainReport":
        nan = float("nan")
        return cls(HyperParams.from_dict(d["hyperparams"]), d["model_kind"],
                   [nan if v is None else v for v in d["train_loss"]],
                   [nan if v is None else v for v in d["val_loss"]],
                   [nan if v is None else v for v in d["val_spearman"]],
                   d["best_epoch"], checkpoint, d.get("wall_seconds", 0.0), d["status"], d.get("error"))


def _json_float(v: float):
    return None if v is None or not math.isfinite(v) else float(v)


def select_best_epoch(val_spearman: Sequence[float], val_loss: Sequence[float]) -> int:
    """Highest validation Spearman, earliest on ties.

    When Spearman is undefined in every epoch (constant predictions or
    targets) the lowest validation loss decides instead.
    """
    best = -1
    for e, r in enumerate(val_spearman):
        if math.isfinite(r) and (best < 0 or r > val_spearman[best]):
            best = e
    if best < 0 and len(val_loss):
        best = int(np.argmin(val_loss))
    return best


def train(spec: ModelSpec, train_set: PbmArray, val_set: PbmArray, hp: HyperParams,
          encoded: tuple[EncodedSet, EncodedSet] | None = None) -> TrainReport:
    """Mini-batch RMSProp with best-validation-Spearman checkpoint selection."""
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    t0 = time.perf_counter()
    tr, va = encoded or (EncodedSet.from_array(train_set), EncodedSet.from_array(val_set))
    rng = np.random.default_rng(hp.seed)
    model = build_model(spec.with_hyperparams(hp.lstm_arch, hp.dropout), rng)
    params = model.parameters()
    state = RmsPropState.for_params(params)
    report = TrainReport(hp, spec.kind)

    for epoch in range(hp.max_epochs):
        perm = rng.permutation(tr.n)
        total = 0.0
        for lo in range(0, tr.n, hp.batch_size):
            idx = perm[lo:lo + hp.batch_size]
            ad.zero_grads(params)
            with Tape() as tape:
                sq = None
                for sel, X in tr.batches(idx):
                    pred = forward(model, X, "train", rng)
                    part = ad.sum(ad.power(ad.sub(pred, tr.targets[sel]), 2))
                    sq = part if sq is None else ad.add(sq, part)
                batch_loss = ad.mul(sq, 1.0 / len(idx))
            value = batch_loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, hp)
            ad.backward(tape, batch_loss)
            rmsprop_step(params, state, hp)
            total += value * len(idx)
        report.train_loss.append(total / tr.n)

        pred = predict_encoded(model, va)
        if not np.all(np.isfinite(pred)):
            raise TrainingDiverged(epoch, hp)
        report.val_loss.append(float(np.mean((pred - va.targets) ** 2)))
        try:
            r = spearman(pred, va.targets)
        except MetricError:
            r = float("nan")
        report.val_spearman.append(r)
        best = select_best_epoch(report.val_spearman, report.val_loss)
        if best == epoch:
            report.best_checkpoint = checkpoint_dict(model, {"epoch": epoch, "hyperparams": hp.to_dict()})
        report.best_epoch = best
        log.debug("epoch %d train %.4f val %.4f spearman %.4f", epoch, report.train_loss[-1],
                  report.val_loss[-1], r)
    report.wall_seconds = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------

def _run_cell(args) -> TrainReport:
    spec, train_set, val_set, hp = args
    try:
        return train(spec, train_set, val_set, hp)
    except (TrainingDiverged, ValueError, FloatingPointError) as e:
        return TrainReport(hp, spec.kind, status="failed", error=str(e))


def _cell_name(i: int) -> str:
    return f"cell_{i:04d}"


def grid_search(spec: ModelSpec, train_set: PbmArray, val_set: PbmArray, grid: Sequence[HyperParams],
                workers: int = 1, out_dir=None) -> tuple[HyperParams, list[TrainReport]]:
    """Train every cell and pick the best validation Spearman (earliest cell on ties).

    With ``out_dir`` each finished cell is written as it completes alongside a
    manifest, and cells already recorded there are loaded instead of retrained.
    """
    if not grid:
        raise ValueError("grid is empty")
    reports: list[TrainReport | None] = [None] * len(grid)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        for i, hp in enumerate(grid):
            reports[i] = _load_cell(out, i, hp)
    todo = [i for i, r in enumerate(reports) if r is None]

    def finish(i: int, rep: TrainReport) -> None:
        reports[i] = rep
        if out is not None:
            _save_cell(out, i, rep)
            _write_manifest(out, grid, reports)

    jobs = [(spec, train_set, val_set, grid[i]) for i in todo]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, rep in zip(todo, pool.map(_run_cell, jobs)):
                finish(i, rep)
    else:
        for i, job in zip(todo, jobs):
            finish(i, _run_cell(job))
    if out is not None:
        _write_manifest(out, grid, reports)

    done = [i for i, r in enumerate(reports) if r.status == "ok" and r.best_epoch >= 0]
    if not done:
        raise RuntimeError("every grid cell failed: " + "; ".join(f"{i}: {r.error}" for i, r in enumerate(reports)))
    best = done[0]
    for i in done[1:]:
        a, b = reports[i].best_spearman, reports[best].best_spearman
        if math.isfinite(a) and (not math.isfinite(b) or a > b):
            best = i
    return grid[best], reports


def _save_cell(out: Path, i: int, rep: TrainReport) -> None:
    (out / f"{_cell_name(i)}.json").write_text(json.dumps(rep.to_dict(), indent=1) + "\n")
    if rep.best_checkpoint is not None:
        (out / f"{_cell_name(i)}.ckpt.json").write_text(json.dumps(rep.best_checkpoint, indent=1) + "\n")


def _load_cell(out: Path, i: int, hp: HyperParams) -> TrainReport | None:
    path = out / f"{_cell_name(i)}.json"
    ckpt = out / f"{_cell_name(i)}.ckpt.json"
    if not path.exists():
        return None
    try:
        d = json.loads(path.read_text())
        if d["hyperparams"] != hp.to_dict() or d["status"] != "ok" or not ckpt.exists():
            return None
        return TrainReport.from_dict(d, json.loads(ckpt.read_text()))
    except (OSError, ValueError, KeyError, TypeError):
        return None


def _write_manifest(out: Path, grid: Sequence[HyperParams], reports) -> None:
    cells = []
    for i, (hp, rep) in enumerate(zip(grid, reports)):
        cells.append({"index": i, "hyperparams": hp.to_dict(),
                      "status": "pending" if rep is None else rep.status,
                      "report": f"{_cell_name(i)}.json" if rep is not None else None})
    (out / "manifest.json").write_text(json.dumps({"cells": cells}, indent=1) + "\n")


__all__ = [
    "SEARCH_SPACE", "HyperParams", "RmsPropState", "TrainReport", "TrainingDiverged", "EncodedSet",
    "full_grid", "reduced_grid", "named_grid", "loss", "rmsprop_step", "split_train_val", "train",
    "grid_search", "predict_encoded", "select_best_epoch", "DEEPBIND", "DEEPERBIND",
]
