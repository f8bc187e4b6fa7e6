"""Core data types and the conservative weighted quantile."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agentcp import (
    Bag,
    LabeledPoint,
    NONINFORMATIVE_INTERVAL,
    ParameterError,
    PredictionInterval,
    ShapeError,
    WeightedScoreDistribution,
    interval_from_residual_quantile,
    weighted_quantile,
)


def make_dist(entries, infinity_mass=0.0):
    scores = [s for s, _ in entries]
    weights = [w for _, w in entries]
    return WeightedScoreDistribution(scores, weights, infinity_mass=infinity_mass)


class TestLabeledPoint:
    def test_equality_is_by_key(self):
        a = LabeledPoint(np.array([1.0, 2.0]), 3.0)
        b = LabeledPoint(np.array([1.0, 2.0]), 3.0)
        c = LabeledPoint(np.array([1.0, 2.0]), 4.0)
        assert a == b
        assert hash(a) == hash(b)
        assert a != c

    def test_explicit_key_overrides_content(self):
        a = LabeledPoint(np.array([1.0]), 0.0, key="obs-1")
        b = LabeledPoint(np.array([2.0]), 5.0, key="obs-1")
        assert a == b

    def test_rejects_matrix_features(self):
        with pytest.raises(ShapeError):
            LabeledPoint(np.zeros((2, 2)), 0.0)

    def test_rejects_non_finite_label(self):
        with pytest.raises(ParameterError):
            LabeledPoint(np.array([1.0]), math.inf)

    def test_coerces_to_float64(self):
        p = LabeledPoint(np.array([1, 2], dtype=np.int64), 3)
        assert p.x.dtype == np.float64
        assert isinstance(p.y, float)


class TestBag:
    def test_order_insensitive_equality(self):
        a = LabeledPoint(np.array([1.0]), 1.0)
        b = LabeledPoint(np.array([2.0]), 2.0)
        assert Bag([a, b]) == Bag([b, a])
        assert hash(Bag([a, b])) == hash(Bag([b, a]))

    def test_multiset_multiplicity_matters(self):
        a = LabeledPoint(np.array([1.0]), 1.0)
        b = LabeledPoint(np.array([2.0]), 2.0)
        assert Bag([a, a, b]) != Bag([a, b, b])
        assert Bag([a, a]) != Bag([a])

    def test_iteration_preserves_insertion_order(self):
        pts = [LabeledPoint(np.array([float(i)]), float(i)) for i in range(5)]
        assert list(Bag(pts)) == pts

    def test_add_returns_new_bag(self):
        a = LabeledPoint(np.array([1.0]), 1.0)
        bag = Bag([a])
        grown = bag.add(a)
        assert len(bag) == 1
        assert len(grown) == 2

    def test_rejects_non_points(self):
        with pytest.raises(ParameterError):
            Bag([(np.array([1.0]), 1.0)])


class TestWeightedScoreDistribution:
    def test_mass_must_total_one(self):
        with pytest.raises(ParameterError):
            WeightedScoreDistribution([1.0, 2.0], [0.5, 0.4])

    def test_infinite_scores_rejected(self):
        with pytest.raises(ParameterError):
            WeightedScoreDistribution([math.inf], [1.0])

    def test_negative_weights_rejected(self):
        with pytest.raises(ParameterError):
            WeightedScoreDistribution([1.0, 2.0], [1.1, -0.1])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            WeightedScoreDistribution([1.0, 2.0], [1.0])


class TestWeightedQuantile:
    def test_uniform_three_scores_median(self):
        dist = make_dist([(1, 1 / 3), (2, 1 / 3), (3, 1 / 3)])
        assert weighted_quantile(dist, 0.5) == 2.0

    def test_unequal_weights(self):
        dist = make_dist([(1, 0.5), (2, 0.25), (3, 0.25)])
        assert weighted_quantile(dist, 0.6) == 2.0

    def test_infinity_atom_forces_sentinel(self):
        dist = make_dist([(1, 0.85)], infinity_mass=0.15)
        assert weighted_quantile(dist, 0.9) == math.inf

    def test_empty_finite_support_is_infinite(self):
        dist = WeightedScoreDistribution([], [], infinity_mass=1.0)
        assert weighted_quantile(dist, 0.5) == math.inf

    def test_beta_bounds(self):
        dist = make_dist([(1, 1.0)])
        for bad in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(ParameterError):
                weighted_quantile(dist, bad)

    def test_ties_merge_before_scan(self):
        # Mass at the tied score counts as one block: 0.3 + 0.3 >= 0.5.
        dist = make_dist([(2.0, 0.3), (2.0, 0.3), (5.0, 0.4)])
        assert weighted_quantile(dist, 0.5) == 2.0

    def test_matches_standard_cp_order_statistic(self):
        # Uniform weights over n scores plus a 1/(n+1) infinity atom must
        # reproduce the ceil((n+1)(1-alpha)) order statistic convention.
        rng = np.random.default_rng(7)
        for n in (5, 16, 32, 99):
            scores = np.sort(rng.standard_normal(n))
            for alpha in (0.1, 0.25, 0.5):
                dist = WeightedScoreDistribution(
                    scores, np.full(n, 1.0 / (n + 1)), infinity_mass=1.0 / (n + 1)
                )
                k = math.ceil((1 - alpha) * (n + 1))
                expected = scores[k - 1] if k <= n else math.inf
                assert weighted_quantile(dist, 1 - alpha) == expected

    @given(
        st.lists(
            st.tuples(
                st.floats(-50, 50, allow_nan=False),
                st.floats(0.001, 1.0),
            ),
            min_size=1,
            max_size=12,
        ),
        st.floats(0.01, 0.99),
        st.floats(0.0, 0.5),
    )
    @settings(max_examples=200, deadline=None)
    def test_permutation_invariance(self, raw, beta, inf_frac):
        scores = np.array([s for s, _ in raw])
        weights = np.array([w for _, w in raw])
        weights = weights / weights.sum() * (1.0 - inf_frac)
        inf_mass = inf_frac
        dist = WeightedScoreDistribution(scores, weights, infinity_mass=inf_mass)
        perm = np.random.default_rng(0).permutation(len(scores))
        shuffled = WeightedScoreDistribution(
            scores[perm], weights[perm], infinity_mass=inf_mass
        )
        assert weighted_quantile(dist, beta) == weighted_quantile(shuffled, beta)

    @given(
        st.lists(
            st.tuples(
                st.floats(-50, 50, allow_nan=False),
                st.floats(0.001, 1.0),
            ),
            min_size=1,
            max_size=12,
        ),
        st.floats(0.01, 0.98),
        st.floats(0.005, 0.02),
    )
    @settings(max_examples=200, deadline=None)
    def test_monotone_in_beta(self, raw, beta, bump):
        scores = np.array([s for s, _ in raw])
        weights = np.array([w for _, w in raw])
        weights = weights / weights.sum()
        dist = WeightedScoreDistribution(scores, weights)
        lo = weighted_quantile(dist, beta)
        hi = weighted_quantile(dist, min(beta + bump, 0.999))
        assert hi >= lo


class TestPredictionInterval:
    def test_symmetric_interval(self):
        iv = interval_from_residual_quantile(0.0, 1.0)
        assert (iv.lower, iv.upper) == (-1.0, 1.0)
        assert iv.is_informative

    def test_degenerate_interval(self):
        iv = interval_from_residual_quantile(2.5, 0.0)
        assert (iv.lower, iv.upper) == (2.5, 2.5)
        assert iv.width == 0.0
        assert iv.contains(2.5)

    def test_infinite_quantile_propagates(self):
        iv = interval_from_residual_quantile(1.0, math.inf)
        assert iv == NONINFORMATIVE_INTERVAL
        assert not iv.is_informative
        assert iv.contains(1e300)

    def test_negative_quantile_rejected(self):
        with pytest.raises(ParameterError):
            interval_from_residual_quantile(0.0, -0.5)

    def test_nan_quantile_rejected(self):
        with pytest.raises(ParameterError):
            interval_from_residual_quantile(0.0, math.nan)

    def test_crossed_endpoints_rejected(self):
        with pytest.raises(ParameterError):
            PredictionInterval(1.0, 0.0)

    def test_contains_is_inclusive(self):
        iv = PredictionInterval(-1.0, 1.0)
        assert iv.contains(-1.0) and iv.contains(1.0)
        assert not iv.contains(1.0000001)
