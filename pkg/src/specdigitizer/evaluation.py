"""Matched-line precision/recall and axis-misalignment metrics.

Traces are compared by mean absolute row distance over the columns they
share. Predictions and ground-truth lines are paired one-to-one by an
optimal assignment restricted to pairs closer than the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InsufficientOverlap, LengthMismatch

MIN_OVERLAP = 0.5


@dataclass(frozen=True)
class LineTrace:
    """A column-indexed polyline: ``y[i]`` is the row at column ``x_start + i``."""

    y: np.ndarray
    x_start: int = 0

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        if y.ndim != 1 or y.size == 0:
            raise ValueError("trace must be a non-empty 1-D array")
        object.__setattr__(self, "y", y)

    @property
    def x_end(self) -> int:
        return self.x_start + len(self.y)


def _as_trace(t) -> LineTrace:
    if isinstance(t, LineTrace):
        return t
    if hasattr(t, "y") and hasattr(t, "x_start"):
        return LineTrace(t.y, int(t.x_start))
    return LineTrace(t)


def line_distance(a, b) -> float:
    """Mean ``|y_a - y_b|`` over shared columns.

    Raises InsufficientOverlap when the shared columns cover less than half
    of the shorter trace.
    """
    a, b = _as_trace(a), _as_trace(b)
    lo, hi = max(a.x_start, b.x_start), min(a.x_end, b.x_end)
    shared = max(0, hi - lo)
    if shared == 0 or shared < MIN_OVERLAP * min(len(a.y), len(b.y)):
        raise InsufficientOverlap(f"{shared} shared columns of {min(len(a.y), len(b.y))}")
    ya = a.y[lo - a.x_start:hi - a.x_start]
    yb = b.y[lo - b.x_start:hi - b.x_start]
    return float(np.mean(np.abs(ya - yb)))


def distance_matrix(preds: Sequence, gts: Sequence) -> np.ndarray:
    """Pairwise line distances; ``inf`` where the supports barely overlap."""
    pt = [_as_trace(p) for p in preds]
    gt = [_as_trace(g) for g in gts]
    d = np.full((len(pt), len(gt)), np.inf)
    for i, p in enumerate(pt):
        for j, g in enumerate(gt):
            try:
                d[i, j] = line_distance(p, g)
            except InsufficientOverlap:
                pass
    return d


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[tuple[int, int, float], ...]
    unmatched_pred: tuple[int, ...]
    unmatched_gt: tuple[int, ...]
    eps_p: float

    @property
    def count(self) -> int:
        return len(self.pairs)


def match_distances(d: np.ndarray, eps_p: float) -> MatchResult:
    """Optimal one-to-one matching on a precomputed distance matrix.

    Only pairs with distance strictly below ``eps_p`` may match. Among the
    matchings of maximum size, the one with the smallest total distance is
    returned.
    """
    if eps_p <= 0:
        raise ValueError("eps_p must be positive")
    d = np.asarray(d, dtype=np.float64)
    n_p, n_g = d.shape
    ok = d < eps_p
    pairs: list[tuple[int, int, float]] = []
    if ok.any():
        # Every admissible pair costs less than any inadmissible one by more
        # than the largest possible admissible total, so the solver first
        # maximises the number of admissible pairs, then minimises distance.
        big = eps_p * (min(n_p, n_g) + 1)
        cost = np.where(ok, d, big)
        rows, cols = linear_sum_assignment(cost)
        pairs = [(int(r), int(c), float(d[r, c])) for r, c in zip(rows, cols) if ok[r, c]]
        pairs.sort()
    mp = {p for p, _, _ in pairs}
    mg = {g for _, g, _ in pairs}
    return MatchResult(tuple(pairs), tuple(i for i in range(n_p) if i not in mp),
                       tuple(j for j in range(n_g) if j not in mg), float(eps_p))


def match_lines(preds: Sequence, gts: Sequence, eps_p: float) -> MatchResult:
    return match_distances(distance_matrix(preds, gts), eps_p)


@dataclass(frozen=True)
class PRPoint:
    eps_p: float
    precision: float
    recall: float
    matched: int = 0
    n_pred: int = 0
    n_gt: int = 0


def precision_recall(matched: int, n_pred: int, n_gt: int) -> tuple[Fraction, Fraction]:
    """Exact precision and recall from counts (an empty denominator scores 1)."""
    if matched < 0 or matched > min(n_pred, n_gt):
        raise ValueError("matched count must lie in [0, min(n_pred, n_gt)]")
    p = Fraction(matched, n_pred) if n_pred else Fraction(1)
    r = Fraction(matched, n_gt) if n_gt else Fraction(1)
    return p, r


def pr_point(eps_p: float, matched: int, n_pred: int, n_gt: int) -> PRPoint:
    p, r = precision_recall(matched, n_pred, n_gt)
    return PRPoint(float(eps_p), float(p), float(r), matched, n_pred, n_gt)


def pr_curve(preds: Sequence, gts: Sequence, eps_list: Sequence[float]) -> list[PRPoint]:
    d = distance_matrix(preds, gts)
    return [pr_point(e, match_distances(d, e).count, len(preds), len(gts)) for e in eps_list]


def pooled_pr_curve(pairs: Sequence[tuple[Sequence, Sequence]], eps_list: Sequence[float]) -> list[PRPoint]:
    """Precision/recall over many images, counting matches per image and pooling the counts."""
    mats = [distance_matrix(p, g) for p, g in pairs]
    n_pred = sum(m.shape[0] for m in mats)
    n_gt = sum(m.shape[1] for m in mats)
    out = []
    for e in eps_list:
        matched = sum(match_distances(m, e).count for m in mats)
        out.append(pr_point(e, matched, n_pred, n_gt))
    return out


@dataclass(frozen=True)
class MisalignmentReport:
    per_image: tuple[float, ...]
    mean: float


def misalignment(origins_pred: Sequence[tuple[float, float]],
                 origins_gt: Sequence[tuple[float, float]]) -> MisalignmentReport:
    """Per-image L1 distance between predicted and true axis origins, and its mean."""
    if len(origins_pred) != len(origins_gt):
        raise LengthMismatch(f"{len(origins_pred)} predicted vs {len(origins_gt)} true origins")
    per = tuple(float(abs(p[0] - g[0]) + abs(p[1] - g[1])) for p, g in zip(origins_pred, origins_gt))
    return MisalignmentReport(per, float(np.mean(per)) if per else 0.0)
