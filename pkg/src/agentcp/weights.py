"""Conformal probability weights for data collected under agent feedback.

Three routes to the same object:

* ``brute_force_weights`` — the factorial-time permutation oracle for an
  arbitrary joint density; ground truth for everything else.
* ``mfcs_exact_weights`` — exact weights when the joint density factorizes
  into IID initialization terms followed by per-step query densities, each
  conditioned on everything observed so far.
* ``mfcs_dstep_weights`` — the depth-``d`` recursive estimator that keeps
  only the ``d`` most recent dynamic factors, turning factorial cost into a
  polynomial one; ``d = t`` recovers the exact weights.

All three return a :class:`WeightVector` aligned with the input point list
(calibration points first, test point last by convention).

Conventions shared by the factorized routes: label-conditional factors are
permutation-invariant and cancel in the weight ratio, so only query-density
("dynamic") factors are evaluated.  IID-initialization factors are omitted —
exactly valid for a uniform initial density; for a non-uniform one, pass
``initial_density`` and each dynamic factor is divided by it, which restores
exactness (the aggregate product of initial densities over all points is
permutation-invariant and cancels).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .core import Bag, LabeledPoint
from .errors import ComplexityCapError, DegenerateDensityError, ParameterError

__all__ = [
    "JointDensity",
    "DensityEvaluator",
    "WeightVector",
    "brute_force_weights",
    "mfcs_exact_weights",
    "mfcs_dstep_weights",
    "factorized_joint_density",
    "uniform_weights",
    "UniformEvaluator",
    "TabularInteractionEvaluator",
    "BRUTE_FORCE_CAP",
    "TERM_CAP",
]

# Hard ceiling on the m! oracle; factorial growth makes anything larger useless.
BRUTE_FORCE_CAP = 8
# Ceiling on enumerated product terms for the factorized routes.
TERM_CAP = 50_000_000


class DensityEvaluator(Protocol):
    """Query density of a candidate point given a conditioning multiset.

    Implementations must be invariant to the ordering of ``conditioning``
    and, when queried through their normalized path, sum to 1 over the
    finite candidate pool for any fixed conditioning bag.
    """

    def eval(self, x: np.ndarray, conditioning: Bag) -> float: ...


@dataclass(frozen=True)
class JointDensity:
    """Unnormalized joint density over an *ordered* sequence of points."""

    evaluate: Callable[[Sequence[LabeledPoint]], float]


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Normalized conformal weights aligned with a point list.

    ``calls_by_level`` instruments the recursive estimator: entry ``k-1``
    is the number of evaluator factor requests at recursion level ``k``
    (level 1 is the weight's own factor, the deepest level carries the
    dominant ∏-term count used in complexity accounting).
    """

    values: np.ndarray
    calls_by_level: tuple = ()

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1 or vals.size == 0:
            raise ParameterError("weight vector must be a nonempty 1-D array")
        if np.any(vals < 0.0):
            raise ParameterError("weights must be nonnegative")
        total = float(vals.sum())
        if abs(total - 1.0) > 1e-12:
            raise ParameterError(f"weights must sum to 1 within 1e-12, got {total}")
        object.__setattr__(self, "values", vals)

    @property
    def deepest_level_calls(self) -> int:
        return self.calls_by_level[-1] if self.calls_by_level else 0

    @property
    def test_weight(self) -> float:
        """Weight of the last-aligned point (the test point by convention)."""
        return float(self.values[-1])

    def __len__(self) -> int:
        return self.values.size


def uniform_weights(m: int) -> WeightVector:
    if m < 1:
        raise ParameterError("need at least one point")
    return WeightVector(np.full(m, 1.0 / m))


def _normalize(numerators, calls_by_level=()) -> WeightVector:
    total = math.fsum(numerators)
    if not math.isfinite(total) or total <= 0.0:
        raise DegenerateDensityError(
            f"permutation density sum is {total}; weights are undefined"
        )
    return WeightVector(np.asarray(numerators) / total, tuple(calls_by_level))


def brute_force_weights(
    points: Sequence[LabeledPoint],
    f: JointDensity,
    *,
    cap: int = BRUTE_FORCE_CAP,
) -> WeightVector:
    """Exact permutation weights by full m! enumeration.

    weights[i] = Σ_{σ: σ(m)=i} f(z_σ) / Σ_σ f(z_σ).  Ratio-invariant to any
    positive rescaling of ``f``.
    """
    pts = list(points)
    m = len(pts)
    if m == 0:
        raise ParameterError("need at least one point")
    if m > cap:
        raise ComplexityCapError(
            f"{m} points means {math.factorial(m)} permutations; cap is {cap}"
        )
    buckets = [[] for _ in range(m)]
    for perm in itertools.permutations(range(m)):
        val = float(f.evaluate([pts[k] for k in perm]))
        if math.isnan(val) or val < 0.0 or math.isinf(val):
            raise ParameterError(f"joint density must be finite and nonnegative, got {val}")
        buckets[perm[-1]].append(val)
    return _normalize([math.fsum(b) for b in buckets])


class _FactorTable:
    """Memoized dynamic factors, keyed by (point index, excluded-index bitmask).

    The bitmask identifies the conditioning bag (all points minus the excluded
    ones), so re-queries from permuted enumeration orders hit the cache; model
    refits inside the evaluator dominate wall time otherwise.
    """

    __slots__ = ("points", "xs", "evaluator", "inv_init", "memo")

    def __init__(self, points, evaluator, initial_density):
        self.points = points
        self.xs = [p.x for p in points]
        self.evaluator = evaluator
        self.memo: dict = {}
        if initial_density is None:
            self.inv_init = None
        else:
            dens = [float(initial_density(x)) for x in self.xs]
            if any(not (v > 0.0) or math.isinf(v) for v in dens):
                raise ParameterError("initial_density must be positive and finite at every point")
            self.inv_init = [1.0 / v for v in dens]

    def factor(self, j: int, mask: int) -> float:
        """Query density of point j conditioned on all points outside ``mask``."""
        v = self.memo.get((j, mask))
        if v is None:
            bag = Bag(p for k, p in enumerate(self.points) if not (mask >> k) & 1)
            v = float(self.evaluator.eval(self.xs[j], bag))
            if math.isnan(v) or v < 0.0 or math.isinf(v):
                raise ParameterError(f"evaluator must return finite nonnegative values, got {v}")
            if self.inv_init is not None:
                v *= self.inv_init[j]
            self.memo[(j, mask)] = v
        return v


def mfcs_exact_weights(
    points: Sequence[LabeledPoint],
    evaluator: DensityEvaluator,
    n: int,
    t: int,
    *,
    initial_density: Optional[Callable[[np.ndarray], float]] = None,
    term_cap: int = TERM_CAP,
) -> WeightVector:
    """Exact feedback-shift weights via ordered enumeration of the last t slots.

    Only the t dynamic factors depend on which points sit in the final
    positions, so the m! permutation sum collapses to a sum over ordered
    t-tuples of distinct indices; the factor for the point in position
    n+s conditions on everything placed before it.
    """
    pts = list(points)
    m = len(pts)
    if n < 0 or t < 1:
        raise ParameterError(f"need n >= 0 and t >= 1, got n={n}, t={t}")
    if n + t != m:
        raise ParameterError(f"point count {m} must equal n + t = {n + t}")
    n_terms = _falling_factorial(m, t) * t
    if n_terms > term_cap:
        raise ComplexityCapError(
            f"exact enumeration needs {n_terms} factor evaluations (cap {term_cap}); "
            "use mfcs_dstep_weights with a smaller depth"
        )
    table = _FactorTable(pts, evaluator, initial_density)
    buckets = [[] for _ in range(m)]
    for suffix in itertools.permutations(range(m), t):
        # suffix[s] occupies position n+1+s; its factor excludes suffix[s:].
        mask = 0
        factors = [0.0] * t
        for s in range(t - 1, -1, -1):
            mask |= 1 << suffix[s]
            factors[s] = table.factor(suffix[s], mask)
        buckets[suffix[-1]].append(math.prod(factors))
    return _normalize([math.fsum(b) for b in buckets])


def mfcs_dstep_weights(
    points: Sequence[LabeledPoint],
    evaluator: DensityEvaluator,
    d: int,
    *,
    initial_density: Optional[Callable[[np.ndarray], float]] = None,
    term_cap: int = TERM_CAP,
) -> WeightVector:
    """Depth-``d`` recursive weight estimate.

    Level-1 factor is p(x_i | everything-but-i); level k sums, over each
    not-yet-excluded j, the factor p(x_j | everything but the k excluded
    points) times the level-(k+1) tail.  The deepest level enumerates
    m·(m−1)···(m−d+1) product terms — the quantity reported by
    ``calls_by_level[-1]`` and governing cost.
    """
    pts = list(points)
    m = len(pts)
    if d < 1:
        raise ParameterError(f"depth must be >= 1, got {d}")
    if d > m:
        raise ParameterError(f"depth {d} exceeds the number of points {m}")
    if _falling_factorial(m, d) > term_cap:
        raise ComplexityCapError(
            f"depth {d} on {m} points enumerates {_falling_factorial(m, d)} terms "
            f"(cap {term_cap}); reduce the depth"
        )
    table = _FactorTable(pts, evaluator, initial_density)
    counts = [0] * (d + 1)
    factor = table.factor

    def tail(mask: int, remaining: int, level: int) -> float:
        counts[level] += m - (level - 1)
        if remaining == 1:
            acc = [
                factor(j, mask | (1 << j))
                for j in range(m)
                if not (mask >> j) & 1
            ]
        else:
            acc = []
            for j in range(m):
                bit = 1 << j
                if mask & bit:
                    continue
                acc.append(factor(j, mask | bit) * tail(mask | bit, remaining - 1, level + 1))
        return math.fsum(acc)

    numerators = []
    for i in range(m):
        counts[1] += 1
        bit = 1 << i
        head = factor(i, bit)
        if d == 1:
            numerators.append(head)
        else:
            numerators.append(head * tail(bit, d - 1, 2))
    return _normalize(numerators, counts[1:])


def _falling_factorial(m: int, k: int) -> int:
    out = 1
    for j in range(k):
        out *= m - j
    return out


def factorized_joint_density(
    evaluator: DensityEvaluator,
    n_init: int,
    *,
    initial_density: Optional[Callable[[np.ndarray], float]] = None,
) -> JointDensity:
    """Joint density of an agent-feedback sequence, for the brute-force oracle.

    Positions 1..n_init are IID draws whose density contributes a
    permutation-invariant aggregate (omitted, or folded in as a per-factor
    divisor when ``initial_density`` is given); every later position
    contributes its query density conditioned on the preceding prefix.
    """

    def evaluate(ordered: Sequence[LabeledPoint]) -> float:
        seq = list(ordered)
        if n_init > len(seq):
            raise ParameterError("n_init exceeds sequence length")
        prod = 1.0
        for j in range(n_init, len(seq)):
            v = float(evaluator.eval(seq[j].x, Bag(seq[:j])))
            if initial_density is not None:
                v /= float(initial_density(seq[j].x))
            prod *= v
        return prod

    return JointDensity(evaluate)


@dataclass(frozen=True)
class UniformEvaluator:
    """Constant query density — the exchangeable (no-shift) regime."""

    pool_size: int = 1

    def eval(self, x, conditioning) -> float:
        return 1.0 / self.pool_size


class TabularInteractionEvaluator:
    """Seeded synthetic query density over a fixed candidate set.

    p(x_i | bag) ∝ exp(base_i + Σ_{z in bag} couple[i, index(z)]), normalized
    over the candidate set.  Deterministic given the seed, order-invariant in
    the bag, and strictly positive — the workhorse for weight verification.
    Candidates are encoded as 1-D feature vectors holding their own index.
    """

    def __init__(self, m: int, seed: int, *, base_scale: float = 1.0, couple_scale: float = 0.5):
        if m < 1:
            raise ParameterError("need at least one candidate")
        rng = np.random.default_rng(seed)
        self.m = m
        self.base = rng.normal(0.0, base_scale, m)
        self.couple = rng.normal(0.0, couple_scale, (m, m))
        self._label_rng_seed = seed
        self._key_cache: dict = {}

    def candidate_points(self) -> list:
        rng = np.random.default_rng(self._label_rng_seed + 1)
        return [
            LabeledPoint(np.array([float(i)]), float(rng.normal()), key=("cand", i))
            for i in range(self.m)
        ]

    def _index(self, x) -> int:
        idx = int(round(float(np.asarray(x)[0])))
        if not 0 <= idx < self.m:
            raise ParameterError(f"candidate index {idx} outside [0, {self.m})")
        return idx

    def eval(self, x, conditioning: Bag) -> float:
        cache = self._key_cache
        idxs = []
        for p in conditioning:
            idx = cache.get(p.key)
            if idx is None:
                idx = self._index(p.x)
                cache[p.key] = idx
            idxs.append(idx)
        if idxs:
            logits = self.base + self.couple[:, idxs].sum(axis=1)
        else:
            logits = self.base
        logits = logits - logits.max()
        expd = np.exp(logits)
        return float(expd[self._index(x)] / expd.sum())
