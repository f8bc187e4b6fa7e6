"""Agent-side query distributions over a finite candidate pool.

The agent proposes its next query with probability proportional to
exp(lambda * utility); the bounded variant caps that density at a value B
chosen so the resulting one-step test weight stays below alpha for every
candidate, which is what rules out non-informative (infinite) intervals.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import BoundInfeasibleError, ParameterError, ShapeError

__all__ = [
    "Pool",
    "QueryDistribution",
    "softmax_query",
    "bounded_query",
    "sample_query",
]


@dataclass(frozen=True, eq=False)
class Pool:
    """Finite candidate library with a hidden label oracle.

    ``candidates`` is an (n, p) float matrix of distinct feature vectors;
    ``true_labels`` the hidden noiseless labels; ``noise_sd`` the per-point
    observation-noise scale used when a label is revealed.
    """

    candidates: np.ndarray
    true_labels: np.ndarray
    noise_sd: np.ndarray

    def __post_init__(self):
        cand = np.asarray(self.candidates, dtype=np.float64)
        labels = np.asarray(self.true_labels, dtype=np.float64)
        noise = np.asarray(self.noise_sd, dtype=np.float64)
        if cand.ndim != 2:
            raise ShapeError("candidates must be a 2-D matrix")
        n = cand.shape[0]
        if labels.shape != (n,) or noise.shape != (n,):
            raise ShapeError("true_labels and noise_sd must be 1-D of length n")
        if np.any(noise < 0):
            raise ParameterError("noise_sd entries must be nonnegative")
        if len({row.tobytes() for row in cand}) != n:
            raise ParameterError("candidates must be distinct")
        object.__setattr__(self, "candidates", cand)
        object.__setattr__(self, "true_labels", labels)
        object.__setattr__(self, "noise_sd", noise)

    @property
    def size(self) -> int:
        return self.candidates.shape[0]

    def index_of(self, x: np.ndarray) -> int:
        key = np.asarray(x, dtype=np.float64).reshape(-1).tobytes()
        idx = self._byte_index().get(key)
        if idx is None:
            raise ParameterError("point is not a pool candidate")
        return idx

    def _byte_index(self) -> dict:
        cached = getattr(self, "_byte_index_cache", None)
        if cached is None:
            cached = {row.tobytes(): i for i, row in enumerate(self.candidates)}
            object.__setattr__(self, "_byte_index_cache", cached)
        return cached


@dataclass(frozen=True, eq=False)
class QueryDistribution:
    """Normalized proposal over pool indices, with optional cap metadata.

    ``bound`` is the density cap B in exp(lambda*utility) units;
    ``bound_relative`` = B / max pool value lies in (0, 1] and equals 1
    exactly when the cap is inactive.
    """

    probs: np.ndarray
    shift_magnitude: float
    bound: Optional[float] = None
    bound_relative: Optional[float] = None

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise ShapeError("probs must be a nonempty 1-D vector")
        if np.any(probs < 0):
            raise ParameterError("probs must be nonnegative")
        total = float(probs.sum())
        if abs(total - 1.0) > 1e-12:
            raise ParameterError(f"probs must sum to 1 within 1e-12, got {total}")
        if self.shift_magnitude < 0:
            raise ParameterError("shift magnitude must be >= 0")
        if self.bound_relative is not None and not 0.0 < self.bound_relative <= 1.0:
            raise ParameterError(f"bound_relative must lie in (0, 1], got {self.bound_relative}")
        object.__setattr__(self, "probs", probs)


def _checked_utilities(utilities) -> np.ndarray:
    u = np.asarray(utilities, dtype=np.float64).reshape(-1)
    if u.size == 0:
        raise ParameterError("utilities must be nonempty")
    if not np.all(np.isfinite(u)):
        raise ParameterError("utilities must be finite")
    return u


def softmax_query(utilities, shift_magnitude: float) -> QueryDistribution:
    """probs[i] proportional to exp(shift_magnitude * utilities[i]).

    Max-subtraction keeps the exponentials in range; zero magnitude gives
    the uniform (exchangeable) proposal.
    """
    u = _checked_utilities(utilities)
    if shift_magnitude < 0:
        raise ParameterError(f"shift magnitude must be >= 0, got {shift_magnitude}")
    logits = shift_magnitude * u
    logits -= logits.max()
    expd = np.exp(logits)
    return QueryDistribution(expd / expd.sum(), float(shift_magnitude))


def bounded_query(
    utilities,
    cal_utilities,
    shift_magnitude: float,
    alpha: float,
) -> QueryDistribution:
    """Capped proposal: probs proportional to min(exp(lambda*u), B).

    B is the largest pool value b = exp(lambda*u(x)) satisfying
    b / (sum_i min(exp(lambda*u(X_i)), b) + b) < alpha against the current
    calibration utilities (strict inequality).  If no pool value satisfies
    it, raises BoundInfeasibleError carrying the smallest candidate value so
    the caller can decide its fallback policy.

    The constraint and the resulting probabilities are invariant to a common
    rescaling of all values, so the search runs in a max-shifted exponent
    space for overflow safety.
    """
    u = _checked_utilities(utilities)
    cal_u = _checked_utilities(cal_utilities)
    if shift_magnitude < 0:
        raise ParameterError(f"shift magnitude must be >= 0, got {shift_magnitude}")
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    shift = max(u.max(), cal_u.max())
    v_pool = np.exp(shift_magnitude * (u - shift))
    v_cal = np.exp(shift_magnitude * (cal_u - shift))

    def satisfies(b: float) -> bool:
        return b / (np.minimum(v_cal, b).sum() + b) < alpha

    # The constraint ratio is non-decreasing in b, so the largest feasible
    # candidate is found by bisection over the sorted distinct pool values.
    candidates = np.unique(v_pool)
    if not satisfies(candidates[0]):
        raise BoundInfeasibleError(
            f"no candidate cap satisfies the test-weight constraint at alpha={alpha} "
            f"with {v_cal.size} calibration points",
            smallest_candidate=float(np.exp(shift_magnitude * u.min())),
            constraint_value=float(
                candidates[0] / (np.minimum(v_cal, candidates[0]).sum() + candidates[0])
            ),
        )
    lo, hi = 0, candidates.size - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if satisfies(candidates[mid]):
            lo = mid
        else:
            hi = mid - 1
    b_star = float(candidates[lo])

    capped = np.minimum(v_pool, b_star)
    # Exhaustive guarantee: the hypothetical one-step test weight of every
    # pool candidate under the capped proposal stays below alpha.
    cal_mass = float(np.minimum(v_cal, b_star).sum())
    test_weights = capped / (cal_mass + capped)
    if not np.all(test_weights < alpha):
        raise BoundInfeasibleError(
            "capped proposal violates the test-weight guarantee; constraint "
            f"max {float(test_weights.max())} >= alpha {alpha}",
            smallest_candidate=float(np.exp(shift_magnitude * u.min())),
            constraint_value=float(test_weights.max()),
        )
    # Report the cap on the original scale; relative size is scale-free.
    if shift_magnitude > 0:
        with np.errstate(over="ignore"):
            bound = float(b_star * np.exp(shift_magnitude * shift))
    else:
        bound = 1.0
    bound_relative = float(b_star / v_pool.max())
    return QueryDistribution(
        capped / capped.sum(),
        float(shift_magnitude),
        bound=bound,
        bound_relative=min(bound_relative, 1.0),
    )


def sample_query(dist: QueryDistribution, rng: np.random.Generator) -> int:
    """Inverse-CDF draw of a pool index; exactly one uniform variate consumed."""
    cdf = np.cumsum(dist.probs)
    u = rng.random()
    idx = int(np.searchsorted(cdf, u, side="right"))
    return min(idx, dist.probs.size - 1)
