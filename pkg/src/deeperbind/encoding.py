"""One-hot coding of DNA probe sequences.

Rows are ordered A, C, G, T. An ``N`` column is uniform 0.25 so that every
column still sums to one.
"""

from __future__ import annotations

import numpy as np

ALPHABET = "ACGT"
ROW_ORDER = "ACGT"
_ALLOWED = set("ACGTN")
_INDEX = {b: i for i, b in enumerate(ALPHABET)}


class SequenceError(ValueError):
    """An illegal symbol in a DNA sequence."""

    def __init__(self, seq: str, position: int):
        self.position = position
        super().__init__(f"illegal character {seq[position]!r} at position {position} in sequence {seq!r}")


def validate(seq: str) -> str:
    """Return the uppercased sequence, or raise :class:`SequenceError`."""
    s = seq.upper()
    if not s:
        raise ValueError("DNA sequence must be non-empty")
    if not set(s) <= _ALLOWED:
        raise SequenceError(seq, next(i for i, ch in enumerate(s) if ch not in _ALLOWED))
    return s


def one_hot(seq: str) -> np.ndarray:
    return one_hot_batch([seq])[0]


_COLUMNS = np.zeros((256, 4))
for _b, _i in _INDEX.items():
    _COLUMNS[ord(_b), _i] = 1.0
_COLUMNS[ord("N")] = 0.25


def one_hot_batch(seqs) -> np.ndarray:
    """Stack equal-length sequences into a (B, 4, L) array."""
    seqs = [validate(s) for s in seqs]
    if not seqs:
        return np.zeros((0, 4, 0))
    lengths = {len(s) for s in seqs}
    if len(lengths) != 1:
        raise ValueError(f"one_hot_batch needs equal lengths, got {sorted(lengths)}")
    codes = np.frombuffer("".join(seqs).encode("ascii"), dtype=np.uint8).reshape(len(seqs), -1)
    return np.ascontiguousarray(_COLUMNS[codes].transpose(0, 2, 1))


def decode(matrix) -> str:
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != 4:
        raise ValueError(f"expected a 4 x L matrix, got shape {m.shape}")
    out = []
    for j in range(m.shape[1]):
        col = m[:, j]
        if np.all(col == 0.25):
            out.append("N")
            continue
        hot = np.flatnonzero(col == 1.0)
        if len(hot) != 1 or np.count_nonzero(col) != 1:
            raise ValueError(f"column {j} is neither a basis vector nor uniform: {col.tolist()}")
        out.append(ALPHABET[hot[0]])
    return "".join(out)
