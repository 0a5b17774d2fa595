import numpy as np
import pytest
from hypothesis import given, strategies as st

from fairmarket.constraints import (ConstraintKind, ConstraintVector, GroupUtilitySnapshot,
                                    build_di_vector, build_dp_vector, build_dt_vector,
                                    build_dynamic_constraint, build_source_target,
                                    equality_of_opportunity_epsilon, pairwise)
from fairmarket.errors import (DegenerateUtilityError, EmptyGroupError, TimeRegressionError,
                               UnknownGroupError)
from fairmarket.model import position_biases


def two_groups(rng, M):
    lab = rng.integers(0, 2, M)
    lab[:2] = (0, 1)
    return rng.permutation(lab)


class TestDP:
    def test_singletons(self):
        assert np.array_equal(build_dp_vector([0, 1], 0, 1).f, [1, -1])

    def test_indicator_formula(self):
        c = build_dp_vector([0, 0, 1], 0, 1)
        assert np.allclose(c.f, [0.5, 0.5, -1]) and c.target == 0 and c.kind is ConstraintKind.DP

    def test_empty_group(self):
        with pytest.raises(EmptyGroupError):
            build_dp_vector([0, 0, 0], 0, 1)

    def test_candidate_subset(self):
        labels = np.array([0, 1, 1, 0, 1])
        c = build_dp_vector(labels, 0, 1, candidates=[1, 3, 4])
        assert np.allclose(c.f, [-0.5, 1.0, -0.5])
        with pytest.raises(EmptyGroupError):
            build_dp_vector(labels, 0, 1, candidates=[1, 2])

    def test_size_override(self):
        c = build_dp_vector([0, 1, 1], 0, 1, sizes=(2.0, 2.0))
        assert np.allclose(c.f, [0.5, -0.5, -0.5])


class TestDTDI:
    def test_dt_example(self):
        assert np.allclose(build_dt_vector([0, 0, 1], 0, 1, [2, 4, 1]).f, [1 / 6, 1 / 6, -1])

    def test_di_example(self):
        assert np.allclose(build_di_vector([0, 0, 1], 0, 1, [2, 4, 1]).f, [2 / 6, 4 / 6, -1])

    def test_zero_mean_rejected(self):
        for build in (build_dt_vector, build_di_vector):
            with pytest.raises(DegenerateUtilityError):
                build([0, 0, 1], 0, 1, [2, 4, 0])

    def test_dt_proportional_to_dp_under_equal_utilities(self):
        lab = [0, 1, 1, 0, 1]
        dp = build_dp_vector(lab, 0, 1).f
        assert np.allclose(build_dt_vector(lab, 0, 1, np.full(5, 3.0)).f, dp / 3.0)

    @given(st.integers(2, 40), st.integers(0, 2**31 - 1))
    def test_group_sums(self, M, seed):
        rng = np.random.default_rng(seed)
        lab = two_groups(rng, M)
        u = rng.uniform(0.1, 2.0, M)
        di = build_di_vector(lab, 0, 1, u).f
        assert di[lab == 0].sum() == pytest.approx(1.0, abs=1e-12)
        assert di[lab == 1].sum() == pytest.approx(-1.0, abs=1e-12)
        dp = build_dp_vector(lab, 0, 1).f
        assert dp[lab == 0].sum() == pytest.approx(1.0, abs=1e-12)
        assert dp[lab == 1].sum() == pytest.approx(-1.0, abs=1e-12)

    @given(st.integers(2, 40), st.integers(0, 2**31 - 1))
    def test_uniform_utilities_coincide(self, M, seed):
        lab = two_groups(np.random.default_rng(seed), M)
        ones = np.ones(M)
        dp = build_dp_vector(lab, 0, 1).f
        assert np.array_equal(build_dt_vector(lab, 0, 1, ones).f, dp)
        assert np.array_equal(build_di_vector(lab, 0, 1, ones).f, dp)


class TestDynamic:
    snap = GroupUtilitySnapshot({0: 4.0, 1: 2.0}, t=0.0)

    def test_no_discount_has_zero_target(self):
        c = build_dynamic_constraint([0, 1, 1], 0, 1, [1, 2, 3], self.snap, rho=1.0, T=7)
        assert c.target == 0.0 and c.kind is ConstraintKind.DYNAMIC

    def test_discounted_target(self):
        c = build_dynamic_constraint([0, 1], 0, 1, [1, 1], self.snap, rho=0.5, T=1)
        assert c.target == pytest.approx(1.0)

    def test_uniform_u_equals_dp(self):
        lab = [0, 1, 1, 0, 1]
        c = build_dynamic_constraint(lab, 0, 1, np.ones(5), self.snap, 0.9, 3)
        assert np.allclose(c.f, build_dp_vector(lab, 0, 1).f)

    def test_population_normalization(self):
        labels = np.array([0, 0, 1, 1, 1, 0])
        c = build_dynamic_constraint(labels, 0, 1, [2.0, 3.0], self.snap, 1.0, 1, candidates=[0, 2])
        assert np.allclose(c.f, [2.0 / 3, -3.0 / 3])

    def test_time_regression(self):
        with pytest.raises(TimeRegressionError):
            build_dynamic_constraint([0, 1], 0, 1, [1, 1], GroupUtilitySnapshot({0: 0, 1: 0}, t=5), 0.9, 4)

    def test_unknown_group(self):
        with pytest.raises(UnknownGroupError):
            build_dynamic_constraint([0, 1], 0, 2, [1, 1], self.snap, 0.9, 1)

    def test_tolerance(self):
        c = build_dynamic_constraint([0, 1], 0, 1, [1, 1], self.snap, 0.9, 1)
        assert c.tolerance == 0.1


class TestEpsilon:
    def test_two_slots(self):
        v = position_biases(2)
        assert equality_of_opportunity_epsilon(2) == pytest.approx(v[0] - v[1])

    def test_positive_and_decreasing(self):
        eps = [equality_of_opportunity_epsilon(m) for m in range(2, 41, 2)]
        assert all(e > 0 for e in eps)
        assert all(a > b for a, b in zip(eps, eps[1:]))

    def test_needs_two_slots(self):
        with pytest.raises(ValueError):
            equality_of_opportunity_epsilon(1)

    def test_four_slots(self):
        v = position_biases(4)
        assert equality_of_opportunity_epsilon(4) == pytest.approx((v[0] + v[2]) / 2 - (v[1] + v[3]) / 2, abs=1e-15)
        assert equality_of_opportunity_epsilon(2) == pytest.approx(0.409384, abs=1e-6)

    def test_custom_weights(self):
        assert equality_of_opportunity_epsilon(4, [4, 3, 2, 1]) == pytest.approx(1.0)


class TestMisc:
    def test_source_target(self):
        assert build_source_target({0: 0.0, 1: 0.0}, 0, 1, 0.5, 2) == 0
        assert build_source_target({0: 3.0, 1: 5.0}, 0, 1, 1.0, 9) == pytest.approx(2.0)
        assert build_source_target({0: 4.0, 1: 4.0}, 0, 1, 0.5, 2) == pytest.approx(3.0)
        assert build_source_target({0: 2.0, 1: 3.0}, 0, 1, 0.5, 1) == pytest.approx(2.0)
        with pytest.raises(UnknownGroupError):
            build_source_target({0: 1.0}, 0, 1, 0.5, 1)

    def test_pairwise(self):
        cs = pairwise(build_dp_vector, [0, 1, 2], [0, 1, 2, 2])
        assert [c.groups for c in cs] == [(0, 1), (0, 2), (1, 2)]

    def test_value_and_violation(self):
        c = ConstraintVector([1.0, -1.0], target=0.0, tolerance=0.1)
        P = np.array([[1.0, 0.0], [0.0, 1.0]])
        v = np.array([1.0, 0.5])
        assert c.value(P, v) == pytest.approx(0.5)
        assert c.violation(P, v) == pytest.approx(0.4)

    def test_negative_tolerance(self):
        with pytest.raises(ValueError):
            ConstraintVector([1.0], tolerance=-1)
