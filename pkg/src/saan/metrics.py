"""Evaluation metrics: SRCC, PCC, thresholded accuracy, RMSE and EMD."""

from __future__ import annotations

import math

import numpy as np

from saan.curate import binarize


class UndefinedCorrelationError(ValueError):
    """Raised when a correlation is requested for a constant vector."""


def _paired(predicted, truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predicted, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} vs {t.size}")
    if p.size == 0:
        raise ValueError("empty score vectors")
    if np.isnan(p).any() or np.isnan(t).any():
        raise ValueError("scores contain NaN")
    return p, t


def average_ranks(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of the positions they span."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    sorted_x = x[order]
    ranks = np.empty(x.size)
    start = 0
    n = x.size
    while start < n:
        stop = start + 1
        while stop < n and sorted_x[stop] == sorted_x[start]:
            stop += 1
        ranks[order[start:stop]] = (start + stop + 1) / 2.0
        start = stop
    return ranks


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    if a.size < 2:
        raise UndefinedCorrelationError("correlation needs at least two samples")
    da = a - a.mean()
    db = b - b.mean()
    va = float(np.dot(da, da))
    vb = float(np.dot(db, db))
    if va == 0.0 or vb == 0.0:
        raise UndefinedCorrelationError("correlation is undefined for a constant vector")
    # one square root of the product keeps identical vectors at exactly 1
    r = float(np.dot(da, db)) / math.sqrt(va * vb)
    return min(1.0, max(-1.0, r))


def pcc(predicted, truth) -> float:
    p, t = _paired(predicted, truth)
    return _pearson(p, t)


def srcc(predicted, truth) -> float:
    p, t = _paired(predicted, truth)
    if np.all(p == p[0]) or np.all(t == t[0]):
        raise UndefinedCorrelationError("correlation is undefined for a constant vector")
    return _pearson(average_ranks(p), average_ranks(t))


def accuracy(predicted, truth, threshold: float = 5.0) -> float:
    p, t = _paired(predicted, truth)
    hits = sum(binarize(a, threshold) == binarize(b, threshold) for a, b in zip(p, t))
    return hits / p.size


def rmse(predicted, truth) -> float:
    p, t = _paired(predicted, truth)
    return math.sqrt(float(np.mean((p - t) ** 2)))


def _distribution(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).ravel()
    if a.size == 0 or (a < 0).any():
        raise ValueError("distribution must be non-empty and non-negative")
    if abs(a.sum() - 1.0) > 1e-9:
        raise ValueError(f"distribution sums to {a.sum()}, not 1")
    return a


def emd(a, b) -> float:
    """r=1 earth mover's distance: mean absolute gap between the CDFs."""
    a = _distribution(a)
    b = _distribution(b)
    if a.size != b.size:
        raise ValueError(f"bucket count mismatch: {a.size} vs {b.size}")
    return float(np.mean(np.abs(np.cumsum(a) - np.cumsum(b))))


def report(predicted, truth, threshold: float = 5.0) -> dict[str, float]:
    return {
        "srcc": srcc(predicted, truth),
        "pcc": pcc(predicted, truth),
        "accuracy": accuracy(predicted, truth, threshold),
        "rmse": rmse(predicted, truth),
    }
