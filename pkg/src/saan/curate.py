"""Vote-to-score curation: monthly normalization, score functions, splits."""

from __future__ import annotations

import csv
import math
import re
from collections import OrderedDict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ATTRACTIVE = "attractive"
UNATTRACTIVE = "unattractive"

MANIFEST_HEADER = ("image_id", "votes", "month", "path")
SCORE_HEADER = ("image_id", "score", "votes", "month")

_MONTH_RE = re.compile(r"^\d{4}-(0[1-9]|1[0-2])$")


class ManifestError(ValueError):
    """A manifest row could not be parsed; ``line`` is 1-based."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class VoteRecord:
    image_id: str
    votes: int
    month: str
    path: str = ""

    def __post_init__(self) -> None:
        if self.votes < 1:
            raise ValueError(f"{self.image_id}: records need at least one vote")
        if not _MONTH_RE.match(self.month):
            raise ValueError(f"{self.image_id}: month must be YYYY-MM, got {self.month!r}")


@dataclass(frozen=True)
class MonthStats:
    month: str
    mean_votes: float
    max_votes: int
    count: int


@dataclass(frozen=True)
class ScoredImage:
    image_id: str
    score: float
    votes: int
    month: str
    x: float
    path: str = ""


def monthly_stats(records: Sequence[VoteRecord]) -> dict[str, MonthStats]:
    if not records:
        raise ValueError("monthly_stats needs at least one record")
    groups: dict[str, list[int]] = OrderedDict()
    for r in records:
        groups.setdefault(r.month, []).append(r.votes)
    return {
        month: MonthStats(month, math.fsum(v) / len(v), max(v), len(v))
        for month, v in groups.items()
    }


def _check_mean(mean: float) -> None:
    if not mean > 0:
        raise ValueError(f"monthly mean must be positive, got {mean}")


def score_x(v: float, mean: float) -> float:
    _check_mean(mean)
    return (mean - v) / mean


def score_sigmoid(v: float, mean: float) -> float:
    """Map votes to ``(0, 10)``: 5 at the monthly mean, rising with votes."""
    x = score_x(v, mean)
    return 10.0 / (1.0 + math.exp(x))


def score_choice_a(v: float, mean: float) -> float:
    _check_mean(mean)
    return 5.0 * v / mean


def _check_max(mean: float, max_votes: float) -> None:
    _check_mean(mean)
    if max_votes < mean:
        raise ValueError(f"max votes {max_votes} below mean {mean}")
    if max_votes == mean:
        raise ZeroDivisionError("max votes equals the monthly mean: above-mean branch divides by zero")


def score_choice_b(v: float, mean: float, max_votes: float) -> float:
    _check_max(mean, max_votes)
    if v <= mean:
        return 5.0 - 5.0 * (mean - v) / mean
    return 5.0 + 5.0 * v / (max_votes - mean)


def score_choice_c(v: float, mean: float, max_votes: float) -> float:
    # first branch multiplies by v, not 5, exactly as tabulated
    _check_max(mean, max_votes)
    if v <= mean:
        return 5.0 - v * (mean - v) / mean
    return 5.0 + 5.0 * v / (max_votes - mean)


SCORE_FUNCTIONS = {
    "sigmoid": lambda v, st: score_sigmoid(v, st.mean_votes),
    "a": lambda v, st: score_choice_a(v, st.mean_votes),
    "b": lambda v, st: score_choice_b(v, st.mean_votes, st.max_votes),
    "c": lambda v, st: score_choice_c(v, st.mean_votes, st.max_votes),
}


def score_all(records: Sequence[VoteRecord], score_fn: str = "sigmoid") -> list[ScoredImage]:
    """Score every record against its own month, preserving input order."""
    try:
        fn = SCORE_FUNCTIONS[score_fn]
    except KeyError:
        raise ValueError(f"unknown score function {score_fn!r}") from None
    stats = monthly_stats(records)
    out = []
    for r in records:
        st = stats[r.month]
        out.append(
            ScoredImage(
                image_id=r.image_id,
                score=fn(r.votes, st),
                votes=r.votes,
                month=r.month,
                x=score_x(r.votes, st.mean_votes),
                path=r.path,
            )
        )
    return out


def binarize(score: float, threshold: float = 5.0) -> str:
    """Strictly above the threshold is attractive; a tie is not."""
    return ATTRACTIVE if score > threshold else UNATTRACTIVE


def split(records: Sequence, seed: int, train_count: int, test_count: int) -> tuple[list, list]:
    """Seeded random partition into ``train_count`` and ``test_count`` items."""
    n = len(records)
    if train_count < 0 or test_count < 0 or train_count + test_count != n:
        raise ValueError(f"split {train_count}:{test_count} does not cover {n} records")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    order = rng.permutation(n)
    train = [records[i] for i in order[:train_count]]
    test = [records[i] for i in order[train_count:]]
    return train, test


def summarize(scores: Iterable[float]) -> dict:
    arr = np.asarray(list(scores), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("no scores to summarize")
    return {
        "count": int(arr.size),
        "mean": float(arr.mean()),
        "deciles": [float(q) for q in np.quantile(arr, np.linspace(0.1, 0.9, 9))],
    }


def read_manifest(path: str | Path) -> list[VoteRecord]:
    """Read ``image_id,votes,month,path`` rows; zero-vote rows are skipped."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise ManifestError(1, f"expected header {','.join(MANIFEST_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise ManifestError(lineno, f"expected 4 fields, got {len(row)}")
            image_id, votes, month, img_path = (c.strip() for c in row)
            if not image_id:
                raise ManifestError(lineno, "empty image_id")
            try:
                n_votes = int(votes)
            except ValueError:
                raise ManifestError(lineno, f"votes {votes!r} is not an integer") from None
            if n_votes < 0:
                raise ManifestError(lineno, "negative vote count")
            if n_votes == 0:
                continue
            if not _MONTH_RE.match(month):
                raise ManifestError(lineno, f"month {month!r} is not YYYY-MM")
            records.append(VoteRecord(image_id, n_votes, month, img_path))
    if not records:
        raise ManifestError(1, "manifest has no usable records")
    return records


def write_manifest(path: str | Path, records: Iterable[VoteRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in records:
            w.writerow([r.image_id, r.votes, r.month, r.path])


def write_scores(path: str | Path, scored: Iterable[ScoredImage]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_HEADER)
        for s in scored:
            w.writerow([s.image_id, f"{s.score:.6f}", s.votes, s.month])


def read_scores(path: str | Path) -> dict[str, float]:
    """Read a score table into an ordered ``image_id -> score`` map."""
    out: dict[str, float] = OrderedDict()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "image_id" not in reader.fieldnames or "score" not in reader.fieldnames:
            raise ManifestError(1, "score table needs image_id and score columns")
        for lineno, row in enumerate(reader, start=2):
            try:
                out[row["image_id"]] = float(row["score"])
            except (TypeError, ValueError):
                raise ManifestError(lineno, f"bad score {row.get('score')!r}") from None
    return out
