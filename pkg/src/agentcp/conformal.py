"""Prediction-set assembly: weighted split CP, full CP with the ridge
closed form, and the baselines (standard split CP, one-step shift
correction, adaptive-level tracking).

The query-density evaluators that connect the agent's proposal rule to the
weight computations also live here.  Split CP treats the proper training
set as fixed context: an evaluator call conditions the agent's model on
(training set) ∪ (calibration remainder), and the query point whose label
is still unknown never enters the conditioning data.  Full CP conditions
on the candidate-augmented bag directly, imputed label included.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .agents import Pool, bounded_query, softmax_query
from .core import (
    Bag,
    LabeledPoint,
    PredictionInterval,
    WeightedScoreDistribution,
    _multiset_fingerprint,
    interval_from_residual_quantile,
    weighted_quantile,
)
from .errors import BoundInfeasibleError, ParameterError, ShapeError
from .predictors import ridge_residual_affine_all
from .weights import WeightVector, mfcs_dstep_weights, uniform_weights

__all__ = [
    "QUERY_KEY_TAG",
    "make_query_point",
    "SplitCalibrationState",
    "split_calibration_state",
    "split_cp_interval",
    "standard_split_interval",
    "one_step_fcs_interval",
    "mfcs_split_interval",
    "SplitConditioningEvaluator",
    "FullConditioningEvaluator",
    "LabelGridSet",
    "full_cp_set_ridge",
    "AciState",
    "aci_update",
    "aci_interval",
    "ACI_ALPHA_FLOOR",
    "ACI_ALPHA_CEIL",
]

# Key tag marking the not-yet-labeled query point inside weight computations;
# evaluator conditioning filters on it, since that label is unknown when the
# agent acts.
QUERY_KEY_TAG = "query-point"

ACI_ALPHA_FLOOR = 0.001
ACI_ALPHA_CEIL = 0.999


def make_query_point(x: np.ndarray, tag=0) -> LabeledPoint:
    """Placeholder point for the pending query; its label field is never read."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    return LabeledPoint(x, 0.0, key=(QUERY_KEY_TAG, x.tobytes(), tag))


def _is_query_point(p: LabeledPoint) -> bool:
    key = p.key
    return isinstance(key, tuple) and len(key) > 0 and key[0] == QUERY_KEY_TAG


@dataclass(frozen=True, eq=False)
class SplitCalibrationState:
    """Frozen split-CP context: one model fit on the proper training set,
    scores |y - mu(x)| for each calibration point in bag order."""

    training: Bag
    calibration: Bag
    scores: np.ndarray
    mean_fn: Callable[[np.ndarray], np.ndarray]

    def predict_one(self, x: np.ndarray) -> float:
        out = np.asarray(self.mean_fn(np.asarray(x, dtype=np.float64)[None, :]))
        return float(out.reshape(-1)[0])


def split_calibration_state(
    training: Bag,
    calibration: Bag,
    mean_fn: Callable[[np.ndarray], np.ndarray],
) -> SplitCalibrationState:
    """Score every calibration point under the training-set model."""
    cal_pts = calibration.points
    if cal_pts:
        X = np.stack([p.x for p in cal_pts])
        y = np.array([p.y for p in cal_pts])
        scores = np.abs(y - np.asarray(mean_fn(X)).reshape(-1))
    else:
        scores = np.zeros(0)
    return SplitCalibrationState(training, calibration, scores, mean_fn)


def split_cp_interval(
    state: SplitCalibrationState,
    x_test: np.ndarray,
    weights: WeightVector,
    alpha: float,
) -> PredictionInterval:
    """Weighted split-CP interval around the trained model's prediction.

    The last weight belongs to the test point and becomes the mass of the
    conservative +infinity score atom; the quantile is taken at 1 - alpha.
    """
    n_cal = len(state.calibration.points)
    if len(weights) != n_cal + 1:
        raise ShapeError(
            f"need {n_cal + 1} weights (calibration + test), got {len(weights)}"
        )
    dist = WeightedScoreDistribution(
        state.scores, weights.values[:-1], infinity_mass=float(weights.values[-1])
    )
    q = weighted_quantile(dist, 1.0 - alpha)
    return interval_from_residual_quantile(state.predict_one(x_test), q)


def standard_split_interval(
    state: SplitCalibrationState, x_test: np.ndarray, alpha: float
) -> PredictionInterval:
    """Unweighted split CP: the uniform-weight special case."""
    n_cal = len(state.calibration.points)
    return split_cp_interval(state, x_test, uniform_weights(n_cal + 1), alpha)


def _split_weighted_interval(state, x_test, evaluator, d, alpha, initial_density):
    points = list(state.calibration.points)
    points.append(make_query_point(x_test))
    w = mfcs_dstep_weights(points, evaluator, d, initial_density=initial_density)
    return split_cp_interval(state, x_test, w, alpha)


def one_step_fcs_interval(
    state: SplitCalibrationState,
    x_test: np.ndarray,
    evaluator,
    alpha: float,
    *,
    initial_density=None,
) -> PredictionInterval:
    """Single-step shift correction: depth-1 weights, then the split interval."""
    return _split_weighted_interval(state, x_test, evaluator, 1, alpha, initial_density)


def mfcs_split_interval(
    state: SplitCalibrationState,
    x_test: np.ndarray,
    evaluator,
    d: int,
    alpha: float,
    *,
    initial_density=None,
) -> PredictionInterval:
    """Depth-d multistep shift correction for the split-CP interval."""
    return _split_weighted_interval(state, x_test, evaluator, d, alpha, initial_density)


class SplitConditioningEvaluator:
    """Agent query density as seen by split-CP weight recursions.

    ``conditioning`` bags arrive as (calibration ∪ {query-point}) minus the
    recursion's excluded points; the model behind the utilities is fit on
    the fixed proper training set plus the calibration remainder, with the
    query placeholder dropped.  Full normalized probability vectors are
    cached per conditioning multiset, because recursions re-query the same
    bags for every candidate point.

    With ``bounded=True`` the proposal is capped exactly as at sampling
    time, recomputing the cap against the conditioning bag's calibration
    remainder; an infeasible cap falls back to the uncapped proposal,
    mirroring the runtime policy.
    """

    def __init__(
        self,
        pool: Pool,
        training: Bag,
        utility_source: Callable[[Bag], Callable[[np.ndarray], np.ndarray]],
        shift_magnitude: float,
        *,
        bounded: bool = False,
        alpha: Optional[float] = None,
    ):
        if bounded and alpha is None:
            raise ParameterError("bounded evaluator needs the target alpha")
        self.pool = pool
        self.training = training
        self.utility_source = utility_source
        self.shift_magnitude = float(shift_magnitude)
        self.bounded = bounded
        self.alpha = alpha
        self._cache: dict = {}

    def _distribution(self, kept) -> np.ndarray:
        if self.shift_magnitude == 0.0 and not self.bounded:
            # The proposal is uniform no matter what the model says, so
            # skip the fit entirely.
            return np.full(self.pool.size, 1.0 / self.pool.size)
        data = Bag(self.training.points + tuple(kept))
        utility_at = self.utility_source(data)
        pool_u = utility_at(self.pool.candidates)
        if self.bounded and kept:
            cal_u = utility_at(np.stack([p.x for p in kept]))
            try:
                return bounded_query(pool_u, cal_u, self.shift_magnitude, self.alpha).probs
            except BoundInfeasibleError:
                return softmax_query(pool_u, self.shift_magnitude).probs
        return softmax_query(pool_u, self.shift_magnitude).probs

    def eval(self, x: np.ndarray, conditioning: Bag) -> float:
        kept = [p for p in conditioning.points if not _is_query_point(p)]
        fp = _multiset_fingerprint(p.key for p in kept)
        probs = self._cache.get(fp)
        if probs is None:
            probs = self._distribution(kept)
            self._cache[fp] = probs
        return float(probs[self.pool.index_of(x)])


class FullConditioningEvaluator:
    """Agent query density for full-CP weight recursions.

    Full CP trains on everything observed, so the model conditions on the
    passed bag directly — including the grid-imputed candidate label, which
    is part of the candidate point's identity and therefore of the cache
    key.
    """

    def __init__(
        self,
        pool: Pool,
        utility_source: Callable[[Bag], Callable[[np.ndarray], np.ndarray]],
        shift_magnitude: float,
    ):
        self.pool = pool
        self.utility_source = utility_source
        self.shift_magnitude = float(shift_magnitude)
        self._cache: dict = {}

    def eval(self, x: np.ndarray, conditioning: Bag) -> float:
        fp = conditioning.fingerprint
        probs = self._cache.get(fp)
        if probs is None:
            utility_at = self.utility_source(conditioning)
            probs = softmax_query(utility_at(self.pool.candidates), self.shift_magnitude).probs
            self._cache[fp] = probs
        return float(probs[self.pool.index_of(x)])


@dataclass(frozen=True, eq=False)
class LabelGridSet:
    """Full-CP membership over a label grid, with its interval hull.

    ``hull`` is None when no grid label is accepted.  ``contiguous`` is a
    soft diagnostic: membership is expected to be one contiguous run for
    absolute-residual scores, but this is checked, not assumed.
    """

    grid: np.ndarray
    included: np.ndarray
    hull: Optional[PredictionInterval]
    contiguous: bool

    @property
    def is_empty(self) -> bool:
        return not bool(self.included.any())


def full_cp_set_ridge(
    all_data: Bag,
    x_test: np.ndarray,
    evaluator,
    d: int,
    alpha: float,
    label_grid: Sequence[float],
    *,
    regularization: float,
    initial_density=None,
    conditioning_data: Optional[Bag] = None,
) -> LabelGridSet:
    """Grid-membership full CP for ridge, one factorization per instance.

    For each grid label y: augment the observed bag with (x_test, y),
    score every point by the affine-in-y residual identity, weight by the
    depth-d recursion with the evaluator conditioned on the augmented bag,
    and accept y iff the candidate's score is ≤ the weighted 1-alpha
    quantile (with the candidate's own weight as the +infinity atom).

    ``conditioning_data``, when given, substitutes a parallel bag (same
    points, same order, possibly different label source) inside the weight
    recursion only; scores always come from ``all_data``.
    """
    grid = np.asarray(label_grid, dtype=np.float64).reshape(-1)
    if grid.size == 0:
        raise ParameterError("label grid must be nonempty")
    if np.any(np.diff(grid) < 0):
        raise ParameterError("label grid must be sorted ascending")
    observed = all_data.points
    if not observed:
        raise ParameterError("need at least one observed point")
    weight_base = conditioning_data.points if conditioning_data is not None else observed
    if len(weight_base) != len(observed):
        raise ShapeError("conditioning_data must align 1:1 with all_data")
    x_test = np.asarray(x_test, dtype=np.float64).reshape(-1)
    a, b = ridge_residual_affine_all(all_data, x_test, regularization)
    included = np.zeros(grid.size, dtype=bool)
    for gi, y in enumerate(grid):
        candidate = LabeledPoint(x_test, float(y))
        points = list(weight_base) + [candidate]
        w = mfcs_dstep_weights(points, evaluator, d, initial_density=initial_density)
        scores = np.abs(a + b * float(y))
        dist = WeightedScoreDistribution(
            scores[:-1], w.values[:-1], infinity_mass=float(w.values[-1])
        )
        q = weighted_quantile(dist, 1.0 - alpha)
        included[gi] = scores[-1] <= q
    idx = np.flatnonzero(included)
    if idx.size:
        hull = PredictionInterval(float(grid[idx[0]]), float(grid[idx[-1]]))
        contiguous = bool(idx.size == idx[-1] - idx[0] + 1)
    else:
        hull, contiguous = None, True
    return LabelGridSet(grid, included, hull, contiguous)


@dataclass(frozen=True)
class AciState:
    """Adaptive-level tracker: the working miscoverage level alpha_t."""

    alpha_t: float
    step_size: float
    target_alpha: float

    def __post_init__(self):
        if self.step_size <= 0:
            raise ParameterError(f"step size must be positive, got {self.step_size}")
        if not 0.0 < self.target_alpha < 1.0:
            raise ParameterError(f"target alpha must lie in (0,1), got {self.target_alpha}")


def aci_update(state: AciState, miscovered: bool) -> AciState:
    """alpha_{t+1} = alpha_t + step * (target - err), err = 1 iff miscovered."""
    err = 1.0 if miscovered else 0.0
    return replace(state, alpha_t=state.alpha_t + state.step_size * (state.target_alpha - err))


def aci_interval(
    state: AciState, split: SplitCalibrationState, x_test: np.ndarray
) -> PredictionInterval:
    """Unweighted split interval at the tracker's current level.

    alpha_t itself may drift outside (0,1); it is clipped only here, at
    quantile evaluation.
    """
    level = min(max(state.alpha_t, ACI_ALPHA_FLOOR), ACI_ALPHA_CEIL)
    return standard_split_interval(split, x_test, level)
