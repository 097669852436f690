"""Pearson, Spearman and Kendall correlation at grid and cell level."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class UndefinedCorrelation(ValueError):
    """A series is constant, so the correlation has no value."""


@dataclass(frozen=True)
class PairedSeries:
    x: np.ndarray  # predictions
    y: np.ndarray  # ground truth

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64).ravel()
        y = np.asarray(self.y, dtype=np.float64).ravel()
        if x.shape != y.shape:
            raise ValueError(f"series lengths differ: {x.size} vs {y.size}")
        if x.size < 2:
            raise ValueError("need at least two pairs")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("series contain non-finite values")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.size


def _series(x, y=None) -> PairedSeries:
    if isinstance(x, PairedSeries):
        return x
    return PairedSeries(x, y)


def pearson(x, y=None) -> float:
    s = _series(x, y)
    dx, dy = s.x - s.x.mean(), s.y - s.y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelation("pearson: a series is constant")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def average_ranks(v: np.ndarray) -> np.ndarray:
    """1-based ranks with ties given the mean of the ranks they span."""
    v = np.asarray(v, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    sv = v[order]
    ranks = np.empty(v.size)
    start = 0
    while start < v.size:
        stop = start + 1
        while stop < v.size and sv[stop] == sv[start]:
            stop += 1
        ranks[order[start:stop]] = 0.5 * (start + stop + 1)
        start = stop
    return ranks


def spearman(x, y=None) -> float:
    s = _series(x, y)
    return pearson(average_ranks(s.x), average_ranks(s.y))


def _count_inversions(a: np.ndarray) -> int:
    """Pairs i < j with a[i] > a[j] (strict), by bottom-up merge sort."""
    a = list(a)
    n = len(a)
    buf = [0.0] * n
    inv = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if a[i] <= a[j]:
                    buf[k] = a[i]
                    i += 1
                else:
                    buf[k] = a[j]
                    inv += mid - i
                    j += 1
                k += 1
            buf[k : k + mid - i] = a[i:mid]
            k += mid - i
            buf[k : k + hi - j] = a[j:hi]
        a, buf = buf, a
        width *= 2
    return inv


def _tied_pairs(v: np.ndarray) -> int:
    _, counts = np.unique(v, return_counts=True)
    return int((counts * (counts - 1) // 2).sum())


def kendall_numerator(x: np.ndarray, y: np.ndarray) -> tuple[int, int, int, int]:
    """(sum of sgn products, total pairs, x-tied pairs, y-tied pairs) in O(n log n)."""
    n = x.size
    order = np.lexsort((y, x))
    n0 = n * (n - 1) // 2
    n1 = _tied_pairs(x)
    n2 = _tied_pairs(y)
    joint = np.unique(np.column_stack([x, y]), axis=0, return_counts=True)[1]
    n3 = int((joint * (joint - 1) // 2).sum())
    discordant = _count_inversions(y[order])
    return n0 - n1 - n2 + n3 - 2 * discordant, n0, n1, n2


def kendall(x, y=None, variant: str = "a") -> float:
    """Kendall tau-a: 2/(n(n-1)) * sum_{i<j} sgn(x_i - x_j) sgn(y_i - y_j).

    ``variant="b"`` divides by sqrt((n0 - n1)(n0 - n2)) instead; diagnostics only.
    """
    s = _series(x, y)
    if np.all(s.x == s.x[0]) or np.all(s.y == s.y[0]):
        raise UndefinedCorrelation("kendall: a series is constant")
    num, n0, n1, n2 = kendall_numerator(s.x, s.y)
    if variant == "a":
        return num / n0
    if variant == "b":
        return num / math.sqrt((n0 - n1) * (n0 - n2))
    raise ValueError(f"unknown Kendall variant {variant!r}")


def kendall_bruteforce(x, y) -> float:
    s = _series(x, y)
    total = 0
    for i in range(s.n):
        total += int(np.sum(np.sign(s.x[i] - s.x[i + 1 :]) * np.sign(s.y[i] - s.y[i + 1 :])))
    return total / (s.n * (s.n - 1) // 2)


def grid_level(pred, truth) -> PairedSeries:
    return PairedSeries(np.asarray(pred).ravel(), np.asarray(truth).ravel())


def cell_level(pred, truth, cell_bins) -> PairedSeries:
    """One pair per cell, each cell taking the values of the bin holding its centre."""
    bins = np.asarray(cell_bins, dtype=np.intp)
    return PairedSeries(np.asarray(pred).ravel()[bins], np.asarray(truth).ravel()[bins])


def _safe(fn, s: PairedSeries) -> float:
    try:
        return fn(s)
    except UndefinedCorrelation:
        return math.nan


def report(s: PairedSeries, level: str) -> dict:
    """Metrics report record {level, pearson, spearman, kendall, n}; undefined values are NaN."""
    return {
        "level": level,
        "pearson": _safe(pearson, s),
        "spearman": _safe(spearman, s),
        "kendall": _safe(kendall, s),
        "n": s.n,
    }
