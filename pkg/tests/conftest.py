import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")

MOTIF = "TGACGTCA"


def write_tail_tsv(path, n=300, length=20, seed=0, fraction=0.1):
    """Probes whose intensity jumps when they contain the motif, giving a
    clear high-intensity tail that the m + 4 sigma rule picks out."""
    rng = np.random.default_rng(seed)
    lines = ["Sequence\tSignal"]
    for _ in range(n):
        seq = list(rng.choice(list("ACGT"), size=length))
        value = 1000.0 + rng.normal(0.0, 50.0)
        if rng.random() < fraction:
            start = int(rng.integers(0, length - len(MOTIF) + 1))
            seq[start:start + len(MOTIF)] = list(MOTIF)
            value += 5000.0
        lines.append("".join(seq) + f"\t{value!r}")
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def tail_tsv(tmp_path):
    return write_tail_tsv(tmp_path / "array1.tsv", seed=1)


@pytest.fixture
def tail_tsv_test(tmp_path):
    return write_tail_tsv(tmp_path / "array2.tsv", seed=2)
