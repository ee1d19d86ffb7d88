"""Per-pair similarity trajectories: linear fits, change scores, taxonomy.

For every (video i, text j) pair the similarity values across checkpoints
are fitted with an ordinary least-squares line ``s ~ a*k + b``. The change
score of a pair is the fitted end minus the fitted start, which collapses
to ``a * k_max`` and is computed that way so the identity holds bit-exactly.

Off-diagonal (negative) pairs are classified into four regimes relative to
the mean fitted final similarity ``s_mean`` and a dead-band ``epsilon``:

* LL -- ends low, barely moved;
* HH -- ends high, barely moved;
* LH -- ends high after rising by more than epsilon;
* HL -- ends low after falling by more than epsilon.

Two combinations fall outside the four rules (low-and-rising,
high-and-falling); they are folded into LL / HH with a fall-through flag.
Diagonal (positive) pairs are fitted for diagnostics only and never enter
the change matrix, ``s_mean``, or selection.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateRegressionError, InsufficientDataError
from .snapshots import SimilarityMatrix, _freeze


class Category(enum.Enum):
    HL = "HL"
    LH = "LH"
    LL = "LL"
    HH = "HH"


@dataclass(frozen=True)
class CategoryLabel:
    """Regime of one pair, plus whether it needed the fall-through rule."""

    category: Category
    fall_through: bool = False


@dataclass(frozen=True)
class TrajectoryFit:
    """Least-squares line of one pair's similarity across checkpoints."""

    i: int
    j: int
    slope: float
    intercept: float
    fitted_start: float
    fitted_end: float


@dataclass(frozen=True, eq=False)
class DeltaMatrix:
    """N x N change scores; diagonal pinned to zero and excluded everywhere."""

    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[0] != vals.shape[1] or vals.shape[0] < 1:
            raise ValueError(f"values must be square, got shape {vals.shape}")
        if not np.isfinite(vals).all():
            raise ValueError("non-finite change score")
        if np.any(vals.diagonal() != 0.0):
            raise ValueError("diagonal of a change matrix must be zero")
        object.__setattr__(self, "values", _freeze(vals))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DeltaMatrix):
            return NotImplemented
        return np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class CategoryReport:
    """Counts and fractions of the four regimes over all negative pairs."""

    counts: dict[Category, int]
    fractions: dict[Category, float]
    fall_through_count: int
    s_mean: float
    epsilon: float
    total: int

    def __post_init__(self) -> None:
        if sum(self.counts.values()) != self.total:
            raise ValueError("category counts must sum to the number of negative pairs")
        if abs(sum(self.fractions.values()) - 1.0) > 1e-12:
            raise ValueError("category fractions must sum to 1")


@dataclass(frozen=True)
class DeltaResult:
    """Everything the trajectory analysis produces in one pass."""

    delta: DeltaMatrix
    fits: tuple[TrajectoryFit, ...]
    positive_fits: tuple[TrajectoryFit, ...]
    s_mean: float
    checkpoints: tuple[int, ...]


def fit_trajectory(points: Iterable[tuple[float, float]]) -> tuple[float, float]:
    """Closed-form least-squares line through (checkpoint, similarity) points.

    Returns (slope, intercept). Raises InsufficientDataError for fewer than
    two points and DegenerateRegressionError when all checkpoint indices
    coincide. Centering on the first similarity value keeps constant and
    collinear inputs exact.
    """
    pts = [(float(k), float(s)) for k, s in points]
    if len(pts) < 2:
        raise InsufficientDataError(f"trajectory fit needs at least 2 points, got {len(pts)}")
    k = np.array([p[0] for p in pts])
    s = np.array([p[1] for p in pts])
    if not (np.isfinite(k).all() and np.isfinite(s).all()):
        raise ValueError("non-finite trajectory point")
    if np.all(k == k[0]):
        raise DegenerateRegressionError("all checkpoint indices identical; slope unidentifiable")
    k_bar = k.mean()
    kc = k - k_bar
    denom = float(kc @ kc)
    ds = s - s[0]
    slope = float(kc @ ds) / denom
    intercept = float(s[0] + ds.mean() - slope * k_bar)
    return slope, intercept


def approx_similarity(fit: TrajectoryFit, k: float) -> float:
    """Evaluate the fitted line at checkpoint ``k``."""
    return fit.slope * k + fit.intercept


def delta_matrix(matrices: Sequence[SimilarityMatrix]) -> DeltaResult:
    """Fit every pair's trajectory over a checkpoint-ordered matrix stack.

    Requires at least two matrices with strictly increasing checkpoint
    indices starting at 0 and a shared shape. The change score of each
    off-diagonal pair is slope * k_max exactly.
    """
    if len(matrices) < 2:
        raise InsufficientDataError(
            f"trajectory analysis needs at least 2 checkpoints, got {len(matrices)}"
        )
    ks = [m.checkpoint_index for m in matrices]
    if ks[0] != 0 or any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValueError(f"checkpoint indices must strictly increase from 0, got {ks}")
    ns = {m.n for m in matrices}
    if len(ns) != 1:
        raise ValueError(f"all similarity matrices must share one shape, got n in {sorted(ns)}")
    n = matrices[0].n

    stack = np.stack([m.values for m in matrices])  # (M, N, N)
    k = np.array(ks, dtype=float)
    k_bar = k.mean()
    kc = k - k_bar
    denom = float(kc @ kc)
    ds = stack - stack[0]
    slope = np.einsum("m,mij->ij", kc, ds) / denom
    intercept = stack[0] + ds.mean(axis=0) - slope * k_bar
    k_max = float(k[-1])
    change = slope * k_max
    fitted_end = change + intercept

    delta_vals = change.copy()
    np.fill_diagonal(delta_vals, 0.0)
    off = ~np.eye(n, dtype=bool)
    s_mean = float(fitted_end[off].mean()) if n > 1 else 0.0

    fits = []
    positives = []
    for i in range(n):
        for j in range(n):
            fit = TrajectoryFit(
                i,
                j,
                float(slope[i, j]),
                float(intercept[i, j]),
                float(intercept[i, j]),
                float(fitted_end[i, j]),
            )
            (positives if i == j else fits).append(fit)
    return DeltaResult(
        DeltaMatrix(delta_vals), tuple(fits), tuple(positives), s_mean, tuple(int(x) for x in ks)
    )


def classify_pair(fit: TrajectoryFit, s_mean: float, epsilon: float) -> CategoryLabel:
    """Assign one negative pair to a regime; total over all inputs."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    delta = fit.fitted_end - fit.fitted_start
    high = fit.fitted_end > s_mean
    if abs(delta) <= epsilon:
        return CategoryLabel(Category.HH if high else Category.LL)
    if delta > epsilon:
        return CategoryLabel(Category.LH) if high else CategoryLabel(Category.LL, fall_through=True)
    return CategoryLabel(Category.HH, fall_through=True) if high else CategoryLabel(Category.HL)


def classify_fits(
    fits: Sequence[TrajectoryFit], s_mean: float, epsilon: float
) -> list[CategoryLabel]:
    return [classify_pair(f, s_mean, epsilon) for f in fits]


def category_report(
    delta: DeltaMatrix, fits: Sequence[TrajectoryFit], s_mean: float, epsilon: float
) -> CategoryReport:
    """Tally regimes over all negative-pair fits of one analysis."""
    expected = delta.n * (delta.n - 1)
    if expected == 0:
        raise InsufficientDataError("regime report needs at least 2 samples")
    if len(fits) != expected:
        raise ValueError(f"expected {expected} negative-pair fits, got {len(fits)}")
    labels = classify_fits(fits, s_mean, epsilon)
    counts = {cat: 0 for cat in Category}
    fall_through = 0
    for label in labels:
        counts[label.category] += 1
        fall_through += int(label.fall_through)
    total = len(fits)
    fractions = {cat: counts[cat] / total for cat in Category}
    return CategoryReport(counts, fractions, fall_through, float(s_mean), float(epsilon), total)
