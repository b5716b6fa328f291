"""PBM array ingestion, intensity normalization, positive-probe labels and
synthetic planted-motif arrays."""

from __future__ import annotations

import gzip
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoding import ALPHABET, SequenceError, validate

log = logging.getLogger(__name__)

SEQUENCE_COLUMNS = ("sequence", "seq", "probe_sequence", "probesequence")
SIGNAL_COLUMNS = ("signal", "intensity", "value", "signal_intensity", "normalized_intensity", "raw_intensity")

MAD_SCALE = 0.6745
POSITIVE_SIGMAS = 4.0


class DataError(ValueError):
    pass


@dataclass
class Probe:
    sequence: str
    raw_intensity: float
    normalized_intensity: float | None = None


@dataclass
class PbmArray:
    label: str
    probes: list[Probe]
    normalization: dict | None = None

    def __len__(self) -> int:
        return len(self.probes)

    @property
    def sequences(self) -> list[str]:
        return [p.sequence for p in self.probes]

    @property
    def raw(self) -> np.ndarray:
        return np.array([p.raw_intensity for p in self.probes], dtype=np.float64)

    @property
    def normalized(self) -> np.ndarray:
        values = [p.normalized_intensity for p in self.probes]
        if any(v is None for v in values):
            raise DataError(f"array {self.label!r} has not been normalized")
        return np.array(values, dtype=np.float64)

    def subset(self, indices, label: str | None = None) -> "PbmArray":
        return PbmArray(label or self.label, [self.probes[i] for i in indices], self.normalization)


@dataclass
class SkipReport:
    rows_read: int = 0
    skipped: int = 0
    reasons: dict[str, int] = field(default_factory=dict)

    def skip(self, reason: str) -> None:
        self.skipped += 1
        self.reasons[reason] = self.reasons.get(reason, 0) + 1


def _open_text(path: Path) -> io.TextIOBase:
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "rt", encoding="utf-8")


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def _resolve(hint, header: list[str] | None, candidates: Sequence[str], what: str, default: int) -> int:
    if isinstance(hint, int):
        return hint
    if isinstance(hint, str) and hint.strip().lstrip("-").isdigit():
        return int(hint)
    if header is None:
        if hint is not None:
            raise DataError(f"column {hint!r} requested by name but the file has no header row")
        return default
    lowered = [h.strip().lower() for h in header]
    names = [hint.lower()] if hint else list(candidates)
    for name in names:
        if name in lowered:
            return lowered.index(name)
    raise DataError(f"no {what} column among {header}; looked for {names}")


def load_pbm(path, seq_col=None, signal_col=None, label: str | None = None) -> tuple[PbmArray, SkipReport]:
    """Read a tab-separated probe file.

    Columns are chosen by 0-based index or header name. Without hints, a
    header is matched against common names and a headerless file is read as
    sequence in column 0 and signal in column 1. Rows with a missing or
    non-numeric signal, or an illegal sequence character, are skipped and
    counted.
    """
    path = Path(path)
    try:
        fh = _open_text(path)
        with fh:
            rows = [line.rstrip("\r\n").split("\t") for line in fh if line.strip()]
    except (OSError, UnicodeDecodeError) as e:
        raise DataError(f"cannot read {path}: {e}") from e
    if not rows:
        raise DataError(f"{path} contains no rows")

    header = None
    first = rows[0]
    if not any(_is_number(c) for c in first if c.strip()) or (
            isinstance(signal_col, int) and len(first) > signal_col and not _is_number(first[signal_col])):
        header = first
        rows = rows[1:]
    si = _resolve(seq_col, header, SEQUENCE_COLUMNS, "sequence", 0)
    vi = _resolve(signal_col, header, SIGNAL_COLUMNS, "signal", 1)

    report = SkipReport()
    probes = []
    for row in rows:
        report.rows_read += 1
        if max(si, vi) >= len(row):
            report.skip("short row")
            continue
        raw = row[vi].strip()
        try:
            value = float(raw)
        except ValueError:
            report.skip("non-numeric signal")
            continue
        if not math.isfinite(value):
            report.skip("non-finite signal")
            continue
        try:
            seq = validate(row[si].strip())
        except (SequenceError, ValueError):
            report.skip("illegal sequence")
            continue
        probes.append(Probe(seq, value))
    if not probes:
        raise DataError(f"{path} has no valid probe rows ({report.skipped} skipped)")
    if not 1000 <= len(probes) <= 100000:
        log.warning("%s holds %d probes; PBM arrays usually hold 40,000-42,000", path, len(probes))
    if report.skipped:
        log.info("%s: skipped %d of %d rows %s", path, report.skipped, report.rows_read, report.reasons)
    return PbmArray(label or path.name, probes), report


def write_tsv(array: PbmArray, path) -> None:
    """Write sequence, raw and (when present) normalized intensity columns."""
    normalized = all(p.normalized_intensity is not None for p in array.probes)
    lines = ["Sequence\tSignal" + ("\tNormalized" if normalized else "")]
    for p in array.probes:
        row = f"{p.sequence}\t{p.raw_intensity!r}"
        if normalized:
            row += f"\t{p.normalized_intensity!r}"
        lines.append(row)
    Path(path).write_text("\n".join(lines) + "\n")


def write_sidecar(array: PbmArray, path) -> None:
    """JSON record of normalization statistics and the positive-probe threshold."""
    info = {"label": array.label, "count": len(array), "normalization": array.normalization}
    if array.normalization is not None:
        threshold, labels = positive_labels(array)
        info["positive_threshold"] = threshold
        info["positive_count"] = int(np.sum(labels))
    Path(path).write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")


def array_digest(array: PbmArray) -> str:
    h = hashlib.sha256()
    for p in array.probes:
        h.update(f"{p.sequence}\t{p.raw_intensity!r}\n".encode())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Normalization and labels
# ---------------------------------------------------------------------------

def fit_stats(array: PbmArray, log_transform: bool = False) -> dict:
    x = _transform(array.raw, log_transform)
    std = float(np.std(x))
    if not std > 0:
        raise DataError(f"array {array.label!r} has zero intensity variance; cannot normalize")
    return {"kind": "zscore", "log_transform": log_transform, "mean": float(np.mean(x)), "std": std,
            "fitted_on": array.label}


def _transform(x: np.ndarray, log_transform: bool) -> np.ndarray:
    if not log_transform:
        return x
    if np.any(x <= 0):
        raise DataError("log transform needs strictly positive intensities")
    return np.log(x)


def normalize(array: PbmArray, stats_from: PbmArray | dict | None = None, log_transform: bool = False) -> PbmArray:
    """z-score raw intensities with statistics fitted on ``stats_from``.

    ``stats_from`` may be another array (typically the training array), a
    stored statistics record, or None to fit on ``array`` itself.
    """
    if stats_from is None:
        stats = fit_stats(array, log_transform)
    elif isinstance(stats_from, PbmArray):
        stats = fit_stats(stats_from, log_transform)
    else:
        stats = dict(stats_from)
        if not stats.get("std", 0) > 0:
            raise DataError("normalization statistics have zero variance")
    z = (_transform(array.raw, stats.get("log_transform", False)) - stats["mean"]) / stats["std"]
    probes = [replace(p, normalized_intensity=float(v)) for p, v in zip(array.probes, z)]
    return PbmArray(array.label, probes, stats)


def positive_labels(array) -> tuple[float, np.ndarray]:
    """Threshold m + 4 sigma with m the median and sigma = MAD / 0.6745.

    A probe is positive when its normalized intensity strictly exceeds the
    threshold. ``array`` may be a normalized :class:`PbmArray` or a vector.
    """
    x = array.normalized if isinstance(array, PbmArray) else np.asarray(array, dtype=np.float64)
    m = float(np.median(x))
    sigma = float(np.median(np.abs(x - m))) / MAD_SCALE
    threshold = m + POSITIVE_SIGMAS * sigma
    return threshold, x > threshold


# ---------------------------------------------------------------------------
# Synthetic arrays
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a planted-motif array.

    ``pwm`` is a 4 x w matrix of per-position base scores (rows A, C, G, T).
    """

    pwm: tuple[tuple[float, ...], ...]
    n: int = 10000
    length: int = 36
    noise_sd: float = 0.5
    planted_fraction: float = 0.5
    seed: int = 0
    label: str = "synthetic"

    def __post_init__(self):
        pwm = np.asarray(self.pwm, dtype=float)
        if pwm.ndim != 2 or pwm.shape[0] != 4 or pwm.shape[1] < 1:
            raise ValueError(f"pwm must be 4 x w, got shape {pwm.shape}")
        if pwm.shape[1] > self.length:
            raise ValueError(f"motif width {pwm.shape[1]} exceeds probe length {self.length}")
        if not 0.0 <= self.planted_fraction <= 1.0:
            raise ValueError("planted_fraction must lie in [0, 1]")
        if self.n < 1 or self.noise_sd < 0:
            raise ValueError("need n >= 1 and noise_sd >= 0")

    @property
    def width(self) -> int:
        return len(self.pwm[0])


def consensus_pwm(consensus: str, match: float = 2.0, mismatch: float = 0.0) -> tuple[tuple[float, ...], ...]:
    """PWM scoring ``match`` for the consensus base and ``mismatch`` otherwise."""
    consensus = validate(consensus)
    rows = [[match if c == b else mismatch for c in consensus] for b in ALPHABET]
    return tuple(tuple(r) for r in rows)


STANDARD_MOTIF = "TGACGTCA"


def standard_spec(**overrides) -> SyntheticSpec:
    """The 10k-probe, L=36, w=8, noise 0.5 verification set."""
    base = dict(pwm=consensus_pwm(STANDARD_MOTIF), n=10000, length=36, noise_sd=0.5, planted_fraction=0.5,
                seed=0, label="synthetic-standard")
    base.update(overrides)
    return SyntheticSpec(**base)


def window_scores(codes: np.ndarray, pwm: np.ndarray) -> np.ndarray:
    """PWM score of every window: (n, L) base codes -> (n, L - w + 1)."""
    w = pwm.shape[1]
    T = codes.shape[1] - w + 1
    scores = np.zeros((codes.shape[0], T))
    for j in range(w):
        scores += pwm[codes[:, j:j + T], j]
    return scores


def _sample_motif(pwm: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    # per-position softmax over the scores, sampled by inverse CDF
    p = np.exp(pwm - pwm.max(axis=0))
    p /= p.sum(axis=0)
    cdf = np.cumsum(p, axis=0)
    u = rng.random((k, pwm.shape[1]))
    return np.minimum((u[:, None, :] > cdf[None]).sum(axis=1), 3)


def _codes_to_strings(codes: np.ndarray) -> list[str]:
    table = np.frombuffer(ALPHABET.encode(), dtype=np.uint8)
    raw = table[codes]
    return [row.tobytes().decode("ascii") for row in raw]


def _planted_probes(pwms: Sequence[np.ndarray], n: int, L: int, fraction: float, rng: np.random.Generator):
    """Random probes with each motif planted independently, left to right without overlap."""
    total = int(np.sum([p.shape[1] for p in pwms]))
    if total > L:
        raise ValueError(f"total motif width {total} exceeds probe length {L}")
    codes = rng.integers(0, 4, size=(n, L))
    cursor = np.zeros(n, dtype=int)
    remaining = total
    for pwm in pwms:
        w = pwm.shape[1]
        remaining -= w
        planted = rng.random(n) < fraction
        motifs = _sample_motif(pwm, n, rng)
        u = rng.random(n)
        # start uniform over positions that still leave room for the later motifs
        span = L - remaining - w - cursor + 1
        start = cursor + np.minimum((u * span).astype(int), span - 1)
        rows = np.flatnonzero(planted)
        cols = start[rows, None] + np.arange(w)
        codes[rows[:, None], cols] = motifs[rows]
        cursor = np.where(planted, start + w, cursor)
    return codes


def _ordered_scores(codes: np.ndarray, pwms: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Best total score over left-to-right, non-overlapping window choices,
    one window per motif in the given order.

    Returns (total score, first motif's best-window offset on its own).
    A single motif reduces to the plain best-window score.
    """
    n, L = codes.shape
    # prev[:, j]: best total for the motifs so far using only positions < j
    prev = np.zeros((n, L + 1))
    first_offset = None
    for pwm in pwms:
        w = pwm.shape[1]
        s = window_scores(codes, pwm)  # (n, L - w + 1)
        if first_offset is None:
            first_offset = np.argmax(s, axis=1)
        cand = s + prev[:, : L - w + 1]
        cur = np.full((n, L + 1), -np.inf)
        cur[:, w:] = np.maximum.accumulate(cand, axis=1)
        prev = cur
    total = prev[:, L]
    if not np.all(np.isfinite(total)):
        raise ValueError("probes too short for the motif set")
    return total, first_offset


def _assemble(label: str, codes: np.ndarray, intensity: np.ndarray) -> PbmArray:
    return PbmArray(label, [Probe(s, float(v)) for s, v in zip(_codes_to_strings(codes), intensity)])


def generate_synthetic(spec: SyntheticSpec) -> PbmArray:
    """Uniform random probes, a PWM-sampled motif planted in a fraction of them;
    intensity = best-window PWM score + Gaussian noise."""
    rng = np.random.default_rng(spec.seed)
    pwm = np.asarray(spec.pwm, dtype=float)
    codes = _planted_probes([pwm], spec.n, spec.length, spec.planted_fraction, rng)
    score, _ = _ordered_scores(codes, [pwm])
    return _assemble(spec.label, codes, score + rng.normal(0.0, spec.noise_sd, spec.n))


def best_window_scores(array: PbmArray, pwm) -> np.ndarray:
    pwm = np.asarray(pwm, dtype=float)
    codes = np.array([[ALPHABET.index(c) for c in s] for s in array.sequences])
    return window_scores(codes, pwm).max(axis=1)
