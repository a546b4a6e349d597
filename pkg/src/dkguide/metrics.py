"""Classification metrics, Kendall rank consistency, and box-plot statistics."""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import EmptyCounts, EmptyInput, LengthMismatch, NotAPermutation


def confusion_counts(true0, pred0, num_classes):
    """C x C matrix of (true, predicted) counts from 0-based codes."""
    true0 = np.asarray(true0, dtype=np.int64)
    pred0 = np.asarray(pred0, dtype=np.int64)
    if true0.shape != pred0.shape:
        raise LengthMismatch("truth and predictions differ in length")
    flat = true0 * num_classes + pred0
    return np.bincount(flat, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def _check(counts):
    counts = np.asarray(counts)
    if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
        raise EmptyCounts("confusion counts must be a square matrix")
    if counts.sum() <= 0:
        raise EmptyCounts("confusion counts are empty")
    return counts


def per_class_f1(counts):
    counts = _check(counts).astype(np.float64)
    tp = np.diag(counts)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    # F1 = 2TP / (2TP + FP + FN); zero denominator means 0
    return np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)


def macro_f1(counts):
    return float(np.mean(per_class_f1(counts)))


def micro_f1(counts):
    counts = _check(counts)
    return float(np.trace(counts) / counts.sum())


@dataclass(frozen=True)
class KendallResult:
    tau: float
    concordant: int
    discordant: int
    n: int


def _as_rank_vector(r):
    r = np.asarray(r)
    if r.ndim != 1 or not np.issubdtype(r.dtype, np.integer) and not np.all(r == np.round(r)):
        raise NotAPermutation("ranking must be a 1-D vector of integers")
    r = r.astype(np.int64)
    base = r.min() if r.size else 0
    if base not in (0, 1) or not np.array_equal(np.sort(r), np.arange(base, base + r.size)):
        raise NotAPermutation(f"{r.tolist()} is not a permutation of 0..n-1 or 1..n")
    return r - base


def kendall_tau(rank_a, rank_b):
    """Tau-a between two strict rankings given as rank vectors (0- or 1-based)."""
    a = _as_rank_vector(rank_a)
    b = _as_rank_vector(rank_b)
    if a.size != b.size:
        raise LengthMismatch(f"rankings have lengths {a.size} and {b.size}")
    n = a.size
    if n < 2:
        raise LengthMismatch("kendall_tau needs n >= 2")
    conc, disc = _kernels.active.concordance_counts(a, b)
    return KendallResult((conc - disc) / (n * (n - 1) / 2), conc, disc, n)


def pairwise_consistency(rankings):
    """Symmetric tau matrix between rankings and the mean of its upper triangle.

    Accepts FactorRanking objects (compared by factor positions) or rank vectors.
    """
    if len(rankings) < 2:
        raise LengthMismatch("pairwise consistency needs at least two rankings")
    vecs = [getattr(r, "positions", r) for r in rankings]
    f = len(vecs)
    mat = np.eye(f)
    for i in range(f):
        for j in range(i + 1, f):
            mat[i, j] = mat[j, i] = kendall_tau(vecs[i], vecs[j]).tau
    upper = mat[np.triu_indices(f, k=1)]
    return mat, float(upper.mean())


@dataclass(frozen=True)
class StabilitySummary:
    min: float
    q1: float
    median: float
    q3: float
    max: float
    mean: float

    @property
    def iqr(self):
        return self.q3 - self.q1

    def to_dict(self):
        return {"min": self.min, "q1": self.q1, "median": self.median, "q3": self.q3,
                "max": self.max, "mean": self.mean}


def stability_summary(values):
    """Quartiles by linear interpolation between closest ranks (numpy's default)."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise EmptyInput("stability_summary needs at least one value")
    q = np.percentile(v, [0, 25, 50, 75, 100], method="linear")
    return StabilitySummary(*(float(x) for x in q), float(v.mean()))
