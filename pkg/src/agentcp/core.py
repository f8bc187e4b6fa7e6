"""Core data types and the conservative weighted quantile.

Everything downstream — split and full conformal sets, the baselines, the
experiment harness — reduces to one primitive: a weighted empirical
distribution over nonconformity scores with an explicit point mass at
infinity, and the smallest score whose cumulative weight reaches a target
level.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Iterable, Iterator

import numpy as np

from .errors import ParameterError, ShapeError

__all__ = [
    "LabeledPoint",
    "Bag",
    "WeightedScoreDistribution",
    "PredictionInterval",
    "weighted_quantile",
    "interval_from_residual_quantile",
]


@dataclass(frozen=True, eq=False)
class LabeledPoint:
    """A feature vector with a scalar label.

    ``key`` identifies the point for caching and multiset bookkeeping;
    two points with equal keys are the same observation.  If omitted it
    is derived from the feature bytes and the label, which is fine for
    ad-hoc use but callers that create many points (simulations, grids)
    should assign cheap structured keys.
    """

    x: np.ndarray
    y: float
    key: Hashable = None

    def __post_init__(self):
        vec = np.asarray(self.x, dtype=np.float64)
        if vec.ndim != 1:
            raise ShapeError(f"feature vector must be 1-D, got shape {vec.shape}")
        label = float(self.y)
        if not math.isfinite(label):
            raise ParameterError(f"label must be finite, got {label!r}")
        object.__setattr__(self, "x", vec)
        object.__setattr__(self, "y", label)
        if self.key is None:
            object.__setattr__(self, "key", (vec.tobytes(), label))

    def __eq__(self, other):
        if not isinstance(other, LabeledPoint):
            return NotImplemented
        return self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        return f"LabeledPoint(x=<{self.x.shape[0]}d>, y={self.y:.6g}, key={self.key!r})"


def _multiset_fingerprint(keys: Iterable[Hashable]) -> frozenset:
    """Order-independent fingerprint of a multiset of point keys."""
    return frozenset(Counter(keys).items())


class Bag:
    """An unordered multiset of labeled points.

    Iteration order is the insertion order (useful for aligning score
    arrays with calibration points), but equality and hashing ignore it.
    """

    __slots__ = ("_points", "_fingerprint")

    def __init__(self, points: Iterable[LabeledPoint] = ()):
        pts = tuple(points)
        for p in pts:
            if not isinstance(p, LabeledPoint):
                raise ParameterError(f"Bag holds LabeledPoint instances, got {type(p).__name__}")
        object.__setattr__(self, "_points", pts)
        object.__setattr__(self, "_fingerprint", _multiset_fingerprint(p.key for p in pts))

    @property
    def points(self) -> tuple:
        return self._points

    @property
    def fingerprint(self) -> frozenset:
        return self._fingerprint

    def add(self, point: LabeledPoint) -> "Bag":
        return Bag(self._points + (point,))

    def __len__(self) -> int:
        return len(self._points)

    def __iter__(self) -> Iterator[LabeledPoint]:
        return iter(self._points)

    def __eq__(self, other):
        if not isinstance(other, Bag):
            return NotImplemented
        return self._fingerprint == other._fingerprint

    def __hash__(self):
        return hash(self._fingerprint)

    def __repr__(self):
        return f"Bag({len(self._points)} points)"


class WeightedScoreDistribution:
    """Finite nonconformity scores with probability weights plus an atom at infinity.

    The atom carries the conservative adjustment that replaces the unknown
    test score; total mass must be 1.
    """

    __slots__ = ("scores", "weights", "infinity_mass")

    def __init__(self, scores, weights, infinity_mass: float = 0.0):
        scores = np.asarray(scores, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        if scores.shape != weights.shape or scores.ndim != 1:
            raise ShapeError(
                f"scores and weights must be matching 1-D arrays, got {scores.shape} vs {weights.shape}"
            )
        if not np.all(np.isfinite(scores)):
            raise ParameterError("scores must be finite (infinity lives in infinity_mass)")
        if np.any(weights < -1e-12):
            raise ParameterError("weights must be nonnegative")
        weights = np.maximum(weights, 0.0)
        infinity_mass = float(infinity_mass)
        if not 0.0 <= infinity_mass <= 1.0 + 1e-12:
            raise ParameterError(f"infinity_mass must lie in [0, 1], got {infinity_mass}")
        total = float(weights.sum()) + infinity_mass
        if abs(total - 1.0) > 1e-9:
            raise ParameterError(f"weights plus infinity_mass must sum to 1, got {total}")
        self.scores = scores
        self.weights = weights
        self.infinity_mass = infinity_mass

    def quantile(self, beta: float) -> float:
        return weighted_quantile(self, beta)

    def __repr__(self):
        return (
            f"WeightedScoreDistribution({self.scores.size} scores, "
            f"infinity_mass={self.infinity_mass:.4g})"
        )


#: Slack applied when comparing cumulative weight against the target level.
#: Exact ties (e.g. nine atoms of 1/10 against beta = 0.9) must resolve to
#: the tying score, and accumulated rounding in the cumulative sum would
#: otherwise push them past it.
QUANTILE_TIE_TOLERANCE = 1e-9


def weighted_quantile(dist: WeightedScoreDistribution, beta: float) -> float:
    """Smallest score whose cumulative weight reaches ``beta``.

    Ties are merged by summing weights before the cumulative scan, so the
    result never depends on entry order.  A cumulative weight within
    ``QUANTILE_TIE_TOLERANCE`` of ``beta`` counts as reaching it.  Returns
    ``math.inf`` when the finite mass alone cannot reach ``beta`` and the
    infinity atom is needed.
    """
    if not 0.0 < beta < 1.0:
        raise ParameterError(f"beta must lie in (0, 1), got {beta}")
    if dist.scores.size == 0:
        return math.inf
    uniq, inverse = np.unique(dist.scores, return_inverse=True)
    merged = np.zeros(uniq.shape[0])
    np.add.at(merged, inverse, dist.weights)
    cumulative = np.cumsum(merged)
    idx = int(np.searchsorted(cumulative, beta - QUANTILE_TIE_TOLERANCE, side="left"))
    if idx >= uniq.shape[0]:
        return math.inf
    return float(uniq[idx])


@dataclass(frozen=True)
class PredictionInterval:
    """A (possibly unbounded) interval of labels."""

    lower: float
    upper: float

    def __post_init__(self):
        lower = float(self.lower)
        upper = float(self.upper)
        if math.isnan(lower) or math.isnan(upper):
            raise ParameterError("interval endpoints must not be NaN")
        if lower > upper:
            raise ParameterError(f"lower endpoint {lower} exceeds upper endpoint {upper}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def is_informative(self) -> bool:
        return math.isfinite(self.lower) and math.isfinite(self.upper)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, y: float) -> bool:
        return self.lower <= y <= self.upper


NONINFORMATIVE_INTERVAL = PredictionInterval(-math.inf, math.inf)


def interval_from_residual_quantile(mu_hat: float, q: float) -> PredictionInterval:
    """Interval ``mu_hat ± q`` for the absolute-residual score; infinite q
    propagates to the non-informative interval."""
    mu_hat = float(mu_hat)
    q = float(q)
    if math.isnan(q) or (math.isfinite(q) and q < 0):
        raise ParameterError(f"residual quantile must be nonnegative or +inf, got {q}")
    if math.isinf(q):
        return NONINFORMATIVE_INTERVAL
    return PredictionInterval(mu_hat - q, mu_hat + q)
