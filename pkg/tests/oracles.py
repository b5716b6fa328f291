"""Slow, definition-level reference implementations used to check the library.

Nothing here imports deeperbind; every function follows the textbook
definition as literally as possible.
"""

import math

import numpy as np


def median(xs):
    s = sorted(xs)
    n = len(s)
    mid = n // 2
    if n % 2:
        return s[mid]
    return (s[mid - 1] + s[mid]) / 2.0


def positive_labels(xs):
    m = median(xs)
    sigma = median([abs(x - m) for x in xs]) / 0.6745
    threshold = m + 4.0 * sigma
    return threshold, [x > threshold for x in xs]


def average_ranks(xs):
    """Rank of x = 1 + (#smaller) + (#equal - 1) / 2, by direct counting."""
    out = []
    for x in xs:
        smaller = sum(1 for y in xs if y < x)
        equal = sum(1 for y in xs if y == x)
        out.append(1 + smaller + (equal - 1) / 2.0)
    return out


def pearson(a, b):
    n = len(a)
    ma = sum(a) / n
    mb = sum(b) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    va = sum((x - ma) ** 2 for x in a)
    vb = sum((y - mb) ** 2 for y in b)
    return cov / math.sqrt(va * vb)


def spearman(x, y):
    return pearson(average_ranks(x), average_ranks(y))


def auc_pairs(scores, labels):
    """Mann-Whitney: (concordant + tied / 2) / (P * N) over every pos/neg pair."""
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def tpr_at_fpr(scores, labels, target):
    """Best TPR over every threshold rule 'score >= t' whose FPR stays <= target."""
    P = sum(1 for l in labels if l)
    N = len(labels) - P
    best = 0.0
    for t in sorted(set(scores)) + [math.inf]:
        tp = sum(1 for s, l in zip(scores, labels) if l and s >= t)
        fp = sum(1 for s, l in zip(scores, labels) if not l and s >= t)
        if fp / N <= target:
            best = max(best, tp / P)
    return best


# The same definitions over full pairwise comparison matrices: no sorting or
# sweep tricks, just vectorized so 1000 instances of size 500 stay fast.

def average_ranks_pairwise(x):
    x = np.asarray(x, dtype=float)
    smaller = (x[None, :] < x[:, None]).sum(axis=1)
    equal = (x[None, :] == x[:, None]).sum(axis=1)
    return 1.0 + smaller + (equal - 1) / 2.0


def spearman_pairwise(x, y):
    return pearson(average_ranks_pairwise(x).tolist(), average_ranks_pairwise(y).tolist())


def auc_pairwise(scores, labels):
    s = np.asarray(scores, dtype=float)
    lab = np.asarray(labels, dtype=bool)
    pos, neg = s[lab], s[~lab]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (len(pos) * len(neg))


def tpr_at_fpr_pairwise(scores, labels, target):
    s = np.asarray(scores, dtype=float)
    lab = np.asarray(labels, dtype=bool)
    t = np.append(np.unique(s), np.inf)
    above = s[None, :] >= t[:, None]
    tpr = (above & lab).sum(axis=1) / lab.sum()
    fpr = (above & ~lab).sum(axis=1) / (~lab).sum()
    return float(tpr[fpr <= target].max())


def rmsprop_one_step(w, g, ms, rho, lr, eps):
    ms = rho * ms + (1 - rho) * g * g
    return w - lr * g / math.sqrt(ms + eps), ms


def sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def lstm_step_scalar(x, h, c, wf, wi, wg, wo, bf, bi, bg, bo):
    """Gate equations for H = D = 1; each w* is the pair (w_h, w_x)."""
    f = sigmoid(wf[0] * h + wf[1] * x + bf)
    i = sigmoid(wi[0] * h + wi[1] * x + bi)
    g = math.tanh(wg[0] * h + wg[1] * x + bg)
    o = sigmoid(wo[0] * h + wo[1] * x + bo)
    c_new = f * c + i * g
    return o * math.tanh(c_new), c_new


def best_window_score(seq, pwm, alphabet="ACGT"):
    w = len(pwm[0])
    best = -math.inf
    for start in range(len(seq) - w + 1):
        s = sum(pwm[alphabet.index(seq[start + j])][j] for j in range(w))
        best = max(best, s)
    return best


# Values frozen from hand computation before any library code ran.
THRESHOLD_EXAMPLE = ([1.0, 2.0, 3.0, 4.0, 100.0], 3.0 + 4.0 / 0.6745)  # 8.930318...
LSTM_ZERO_WEIGHTS_C1 = (0.5 * math.tanh(0.5), 0.5)  # (h, c) = (0.231058..., 0.5)
RMSPROP_EXAMPLE = 1.0 - 0.1 / math.sqrt(0.1 + 1e-8)  # 0.683772...
