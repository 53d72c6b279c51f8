"""Bound formulas against hand-evaluated values; allocation rounding rules."""

import math

import numpy as np
import pytest

import nestmc as nm
from nestmc import Smoothness
from nestmc.errors import InfeasibleBudgetError, MissingInputError, ParameterDomainError, ShapeError


def plan(*counts):
    return nm.AllocationPlan(tuple(counts))


class TestLipschitzBound:
    def test_hand_value(self):
        inputs = nm.BoundInputs(depth=1, lipschitz_K=(1.0,), sigma=(1.0, 1.0))
        assert nm.bound_lipschitz(inputs, plan(100, 100)) == pytest.approx(0.02, abs=1e-15)

    def test_zero_noise(self):
        inputs = nm.BoundInputs(depth=2, lipschitz_K=(0.5, 2.0), sigma=(0.0, 0.0, 0.0))
        assert nm.bound_lipschitz(inputs, plan(3, 5, 7)) == 0.0

    def test_zero_k_blocks_inner(self):
        inputs = nm.BoundInputs(depth=1, lipschitz_K=(0.0,), sigma=(2.0, 9.0))
        assert nm.bound_lipschitz(inputs, plan(50, 10)) == pytest.approx(4.0 / 50.0, abs=1e-15)

    def test_depth2_products(self):
        inputs = nm.BoundInputs(depth=2, lipschitz_K=(2.0, 3.0), sigma=(1.0, 1.0, 1.0))
        expected = 1.0 / 10 + 4.0 * 1.0 / 20 + 4.0 * 9.0 * 1.0 / 40
        assert nm.bound_lipschitz(inputs, plan(10, 20, 40)) == pytest.approx(expected, rel=1e-14)

    def test_shape_mismatch(self):
        inputs = nm.BoundInputs(depth=1, lipschitz_K=(1.0,), sigma=(1.0, 1.0))
        with pytest.raises(ShapeError):
            nm.bound_lipschitz(inputs, plan(10, 10, 10))


class TestSmoothBound:
    def test_hand_value(self):
        inputs = nm.BoundInputs(depth=1, lipschitz_K=(1.0,), sigma=(1.0, 1.0), second_deriv_C=(2.0,))
        assert nm.bound_smooth(inputs, plan(100, 100)) == pytest.approx(0.0101, abs=1e-15)

    def test_exact_inner(self):
        inputs = nm.BoundInputs(depth=1, lipschitz_K=(1.0,), sigma=(1.0, 0.0), second_deriv_C=(2.0,))
        assert nm.bound_smooth(inputs, plan(100, 100)) == pytest.approx(0.01, abs=1e-15)

    def test_doubling_n1_quarters_second_addend(self):
        inputs = nm.BoundInputs(depth=1, lipschitz_K=(1.0,), sigma=(1.0, 1.0), second_deriv_C=(2.0,))
        a = nm.bound_smooth(inputs, plan(100, 100)) - 0.01
        b = nm.bound_smooth(inputs, plan(100, 200)) - 0.01
        assert b == pytest.approx(a / 4.0, rel=1e-12)

    def test_missing_curvature(self):
        inputs = nm.BoundInputs(depth=1, lipschitz_K=(1.0,), sigma=(1.0, 1.0))
        with pytest.raises(MissingInputError):
            nm.bound_smooth(inputs, plan(10, 10))


class TestSingleNestingExact:
    def test_lipschitz_hand_value(self):
        inputs = nm.BoundInputs(depth=1, lipschitz_K=(1.0,), sigma=(1.0, 1.0))
        value = nm.bound_single_exact(inputs, 100, 100, Smoothness.LIPSCHITZ)
        assert value == pytest.approx(0.0224, abs=1e-12)

    def test_lipschitz_k_zero(self):
        inputs = nm.BoundInputs(depth=1, lipschitz_K=(0.0,), sigma=(1.0, 1.0))
        assert nm.bound_single_exact(inputs, 50, 9, Smoothness.LIPSCHITZ) == pytest.approx(0.02, abs=1e-15)

    def test_smooth_sigma1_zero(self):
        inputs = nm.BoundInputs(depth=1, lipschitz_K=(3.0,), sigma=(2.0, 0.0), second_deriv_C=(5.0,))
        value = nm.bound_single_exact(inputs, 25, 4, Smoothness.CONTINUOUSLY_DIFFERENTIABLE)
        assert value == pytest.approx(4.0 / 25.0, abs=1e-15)

    def test_exact_dominates_dominant_terms(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            k, s0, s1 = rng.uniform(0.0, 3.0, size=3)
            n0, n1 = rng.integers(1, 500, size=2)
            inputs = nm.BoundInputs(depth=1, lipschitz_K=(k,), sigma=(s0, s1))
            exact = nm.bound_single_exact(inputs, int(n0), int(n1), Smoothness.LIPSCHITZ)
            dominant = nm.bound_lipschitz(inputs, plan(int(n0), int(n1)))
            assert exact >= dominant - 1e-15

    def test_depth_guard(self):
        inputs = nm.BoundInputs(depth=2, lipschitz_K=(1.0, 1.0), sigma=(1.0, 1.0, 1.0))
        with pytest.raises(ShapeError):
            nm.bound_single_exact(inputs, 10, 10, Smoothness.LIPSCHITZ)


class TestBoundMonotonicity:
    def test_nonincreasing_in_every_count(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            depth = int(rng.integers(1, 4))
            inputs = nm.BoundInputs(
                depth=depth,
                lipschitz_K=tuple(rng.uniform(0, 2, depth)),
                sigma=tuple(rng.uniform(0, 2, depth + 1)),
                second_deriv_C=tuple(rng.uniform(0, 2, depth)),
            )
            counts = list(rng.integers(1, 50, depth + 1))
            base_l = nm.bound_lipschitz(inputs, plan(*counts))
            base_s = nm.bound_smooth(inputs, plan(*counts))
            for k in range(depth + 1):
                bumped = list(counts)
                bumped[k] *= 2
                assert nm.bound_lipschitz(inputs, plan(*bumped)) <= base_l + 1e-15
                assert nm.bound_smooth(inputs, plan(*bumped)) <= base_s + 1e-15


class TestOptimalAllocation:
    def test_smooth_single(self):
        p = nm.optimal_allocation(10**6, 1, Smoothness.CONTINUOUSLY_DIFFERENTIABLE)
        assert p.counts == (10_000, 100)
        assert "-2/3" in p.strategy_label

    def test_lipschitz_single(self):
        p = nm.optimal_allocation(10**6, 1, Smoothness.LIPSCHITZ)
        assert p.counts == (1000, 1000)
        assert "-1/2" in p.strategy_label

    def test_lipschitz_triple(self):
        assert nm.optimal_allocation(8000, 2, Smoothness.LIPSCHITZ).counts == (20, 20, 20)

    def test_lipschitz_counts_equal(self):
        for total in (10, 1000, 31623, 10**6):
            for depth in (1, 2, 3):
                if total < 2 ** (depth + 1):
                    continue
                counts = nm.optimal_allocation(total, depth, Smoothness.LIPSCHITZ).counts
                assert max(counts) - min(counts) <= 1

    def test_smooth_outer_is_square_of_inner(self):
        for total in (10**4, 10**6, 31623):
            counts = nm.optimal_allocation(total, 1, Smoothness.CONTINUOUSLY_DIFFERENTIABLE).counts
            assert abs(counts[0] - counts[1] ** 2) <= 2 * counts[1] + 1  # within rounding

    def test_infeasible(self):
        with pytest.raises(InfeasibleBudgetError):
            nm.optimal_allocation(2, 2, Smoothness.LIPSCHITZ)


class TestAlphaAllocation:
    def test_asymptotic_optimum_single(self):
        assert nm.alpha_allocation(10**6, (2.0 / 3.0,)).counts == (10_000, 100)

    def test_double_nesting_hand_value(self):
        p = nm.alpha_allocation(10**6, (0.5, 0.5))
        assert p.counts == (1000, 32, 32)
        assert nm.effective_budget(p) == 1_024_000

    def test_exact_powers(self):
        assert nm.alpha_allocation(10**4, (0.5,)).counts == (100, 100)

    def test_alpha_domain(self):
        with pytest.raises(ParameterDomainError):
            nm.alpha_allocation(1000, (0.0,))
        with pytest.raises(ParameterDomainError):
            nm.alpha_allocation(1000, (1.0,))

    def test_effective_budget_ratio(self):
        """Rounded powers stay within a factor of 2 of the nominal budget."""
        for total in (10**3, 10**4, 10**5, 10**6):
            for alpha in np.arange(0.05, 1.0, 0.05):
                p = nm.alpha_allocation(total, (float(alpha),))
                ratio = nm.effective_budget(p) / total
                assert 0.5 <= ratio <= 2.0, (total, alpha, p.counts)
