"""Harness contracts: replicate determinism and ordering, error statistics,
slope fitting, strategy plans, sweeps, and the enumeration oracle."""

import math
import pickle

import numpy as np
import pytest

import nestmc as nm
from nestmc import Strategy, SweepConfig
from nestmc.errors import HarnessError, InsufficientDataError, ShapeError, UnsupportedProblemError


class ConstantEstimator:
    """Degenerate estimator used for plumbing checks; picklable."""

    depth = 0

    def __init__(self, value=5.0):
        self.value = value

    def evaluate(self, plan, stream):
        return nm.EstimateRecord(
            value=self.value,
            plan=plan,
            base_seed=stream.base_seed,
            stream_path=stream.path,
            effective_budget=nm.effective_budget(plan),
        )


class SeedEchoEstimator:
    """Returns a function of the replicate stream so ordering is observable."""

    depth = 0

    def evaluate(self, plan, stream):
        return nm.EstimateRecord(
            value=float(stream.uniforms()),
            plan=plan,
            base_seed=stream.base_seed,
            stream_path=stream.path,
            effective_budget=nm.effective_budget(plan),
        )


class SometimesNaN:
    depth = 0

    def __init__(self, bad_every):
        self.bad_every = bad_every

    def evaluate(self, plan, stream):
        value = float(stream.uniforms())
        if stream.path and stream.path[-1] % self.bad_every == 0:
            raise nm.NonFiniteValueError(0)
        return nm.EstimateRecord(value, plan, stream.base_seed, stream.path, 1)


class TestRunReplicates:
    def test_deterministic_rerun(self):
        plan = nm.AllocationPlan((10,))
        a, _ = nm.run_replicates(SeedEchoEstimator(), plan, 8, base_seed=4)
        b, _ = nm.run_replicates(SeedEchoEstimator(), plan, 8, base_seed=4)
        assert [r.value for r in a] == [r.value for r in b]

    def test_replicate_paths(self):
        plan = nm.AllocationPlan((10,))
        records, _ = nm.run_replicates(SeedEchoEstimator(), plan, 5, base_seed=9)
        for r, record in enumerate(records):
            assert record.stream_path == (r,)
            assert record.value == float(nm.make_stream(9, (r,)).uniforms())

    def test_serial_matches_parallel(self):
        plan = nm.AllocationPlan((8, 4))
        reg = nm.registry()
        serial, f1 = nm.run_replicates(reg["analytic"].estimator, plan, 12, base_seed=77, workers=1)
        parallel, f2 = nm.run_replicates(reg["analytic"].estimator, plan, 12, base_seed=77, workers=4)
        assert [r.value for r in serial] == [r.value for r in parallel]
        assert (f1, f2) == (0, 0)

    def test_constant_estimator(self):
        records, failures = nm.run_replicates(ConstantEstimator(5.0), nm.AllocationPlan((3,)), 6, base_seed=0)
        assert failures == 0
        assert all(r.value == 5.0 for r in records)

    def test_failures_counted_and_capped(self):
        plan = nm.AllocationPlan((1,))
        with pytest.raises(HarnessError):
            nm.run_replicates(SometimesNaN(bad_every=10), plan, 100, base_seed=3)

    def test_failures_below_threshold_reported(self):
        plan = nm.AllocationPlan((1,))
        records, failures = nm.run_replicates(SometimesNaN(bad_every=200), plan, 150, base_seed=3)
        assert failures == 1
        assert records[0] is None
        assert sum(1 for r in records if r is None) == 1


class TestEmpiricalMse:
    def test_all_equal_truth(self):
        stats = nm.empirical_mse([2.0, 2.0, 2.0], 2.0)
        assert (stats.mse, stats.bias_sq, stats.variance) == (0.0, 0.0, 0.0)

    def test_symmetric_pair(self):
        stats = nm.empirical_mse([1.0, -1.0], 0.0)
        assert (stats.mse, stats.bias_sq, stats.variance) == (1.0, 0.0, 1.0)

    def test_pure_bias(self):
        stats = nm.empirical_mse([1.0, 1.0], 0.0)
        assert (stats.mse, stats.bias_sq, stats.variance) == (1.0, 1.0, 0.0)

    def test_decomposition_identity_random(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            x = rng.normal(size=rng.integers(2, 40))
            stats = nm.empirical_mse(x, 0.3)
            assert stats.mse == pytest.approx(stats.bias_sq + stats.variance, rel=1e-9, abs=1e-300)
            assert stats.q25 <= stats.median_abs_error**2 <= stats.q75

    def test_insufficient_data(self):
        with pytest.raises(InsufficientDataError):
            nm.empirical_mse([1.0], 0.0)


class TestFitSlope:
    def test_exact_inverse_law(self):
        totals = [10.0**k for k in range(1, 6)]
        slope, stderr = nm.fit_slope(totals, [1.0 / t for t in totals])
        assert slope == pytest.approx(-1.0, abs=1e-9)
        assert stderr == pytest.approx(0.0, abs=1e-9)

    def test_exact_half_law(self):
        totals = [10.0**k for k in range(1, 6)]
        slope, _ = nm.fit_slope(totals, [1.0 / math.sqrt(t) for t in totals])
        assert slope == pytest.approx(-0.5, abs=1e-9)

    def test_plateau(self):
        totals = [10.0**k for k in range(1, 6)]
        slope, _ = nm.fit_slope(totals, [0.25] * 5)
        assert slope == pytest.approx(0.0, abs=1e-9)

    def test_window_uses_largest_budgets(self):
        # 1/T tail after a plateau head: a 50% window sees only the tail.
        totals = [10.0**k for k in range(8)]
        mses = [1.0] * 4 + [1e4 / t for t in totals[4:]]
        slope, _ = nm.fit_slope(totals, mses, window=0.5)
        assert slope == pytest.approx(-1.0, abs=1e-9)

    def test_insufficient_rows(self):
        with pytest.raises(InsufficientDataError):
            nm.fit_slope([10, 100], [0.1, 0.01])


class TestBuildPlan:
    def test_equal(self):
        assert nm.build_plan(Strategy("equal"), 10**6, 1).counts == (1000, 1000)

    def test_squared(self):
        assert nm.build_plan(Strategy("squared"), 10**6, 2).counts == (1000, 32, 32)

    def test_fixed_inner_single(self):
        assert nm.build_plan(Strategy("fixed_inner", fixed_m=5), 10**5, 1).counts == (20_000, 5)

    def test_fixed_inner_double_uses_squared_rule_above(self):
        counts = nm.build_plan(Strategy("fixed_inner", fixed_m=5), 10**6, 2).counts
        assert counts[2] == 5
        assert abs(counts[0] - counts[1] ** 2) <= 2 * counts[1] + 1

    def test_alpha(self):
        assert nm.build_plan(Strategy("alpha", alphas=(2.0 / 3.0,)), 10**6, 1).counts == (10_000, 100)

    def test_depth_zero_direct(self):
        assert nm.build_plan(Strategy("equal"), 12345, 0).counts == (12345,)

    def test_ladder_grammar(self):
        assert nm.ladder(100, 10**4, math.sqrt(10.0)) == (100, 316, 1000, 3162, 10000)
        assert nm.ladder(1000, 10**6, 10.0) == (1000, 10**4, 10**5, 10**6)


class TestConvergenceSweep:
    def test_report_shape_and_decomposition(self):
        reg = nm.registry()
        cfg = SweepConfig(
            model=reg["analytic"],
            strategy=Strategy("equal"),
            budget_ladder=(100, 316, 1000, 3162),
            replicates=40,
            base_seed=5,
        )
        rep = nm.convergence_sweep(cfg)
        assert len(rep.rows) == 4
        assert rep.truth_used == nm.ANALYTIC_TRUTH
        for row in rep.rows:
            assert row.mse == pytest.approx(row.bias_sq + row.variance, rel=1e-9)
            assert row.q25 <= row.q75
            assert row.failures == 0
        assert math.isfinite(rep.slope)

    def test_deterministic(self):
        reg = nm.registry()
        cfg = SweepConfig(
            model=reg["analytic"],
            strategy=Strategy("squared"),
            budget_ladder=(100, 316, 1000),
            replicates=20,
            base_seed=6,
        )
        assert nm.convergence_sweep(cfg).to_text() == nm.convergence_sweep(cfg).to_text()

    def test_missing_truth_rejected(self):
        reg = nm.registry()
        cfg = SweepConfig(
            model=reg["cancer"],
            strategy=Strategy("equal"),
            budget_ladder=(100, 316, 1000),
            replicates=10,
            base_seed=7,
        )
        with pytest.raises(ShapeError):
            nm.convergence_sweep(cfg)

    def test_ladder_must_increase(self):
        reg = nm.registry()
        with pytest.raises(ShapeError):
            SweepConfig(
                model=reg["analytic"],
                strategy=Strategy("equal"),
                budget_ladder=(1000, 100),
                replicates=10,
                base_seed=7,
            )


class TestAlphaSweep:
    def test_grid_complete_and_deterministic(self):
        reg = nm.registry()
        grid = [0.4, 0.5, 0.6]
        rep = nm.alpha_sweep(reg["analytic"], 1000, grid, replicates=30, base_seed=11)
        assert [row[0] for row in rep.rows] == [(0.4,), (0.5,), (0.6,)]
        rep2 = nm.alpha_sweep(reg["analytic"], 1000, grid, replicates=30, base_seed=11)
        assert [r[1].mse for r in rep.rows] == [r[1].mse for r in rep2.rows]
        assert rep.argmin_alphas in [tuple(r[0]) for r in rep.rows]

    def test_constant_estimator_all_zero(self):
        entry = nm.ModelEntry("const", ConstantEstimator(3.5), 0, 3.5, "analytic")
        rep = nm.alpha_sweep(entry, 1000, [0.3, 0.7], replicates=10, base_seed=1)
        assert all(r[1].mse == 0.0 for r in rep.rows)

    def test_two_dimensional_grid(self):
        reg = nm.registry()
        grid = [(a1, a2) for a1 in (0.4, 0.6) for a2 in (0.4, 0.6)]
        rep = nm.alpha_sweep(reg["triple"], 10**4, grid, replicates=10, base_seed=2)
        assert len(rep.rows) == 4
        assert len(rep.argmin_alphas) == 2


def discrete_table_level(cdf_matrix, values):
    """Conditional categorical level driven by the previous level's index."""
    probs = np.asarray(cdf_matrix, dtype=np.float64)

    def fn(prefix, stream):
        u = stream.uniforms()
        row = prefix[-1].astype(np.int64) if prefix else np.zeros(u.shape, dtype=np.int64)
        cdf = np.cumsum(probs[row], axis=-1)
        idx = np.sum(u[..., None] >= cdf, axis=-1)
        return np.minimum(idx, probs.shape[-1] - 1).astype(np.float64)

    def enum(prefix_values):
        row = int(prefix_values[-1]) if prefix_values else 0
        return [(float(i), float(p)) for i, p in enumerate(probs[row])]

    return nm.FnLevel(fn, enum_fn=enum)


def random_discrete_problem(rng, outer_shape):
    """A random fully discrete depth-1 problem with tabulated values."""
    n_outer, n_inner = 3, 3
    outer_probs = rng.dirichlet(np.ones(n_outer))
    inner_probs = rng.dirichlet(np.ones(n_inner), size=n_outer)
    phi_table = rng.uniform(-1.0, 2.0, size=(n_outer, n_inner))
    a, b = rng.uniform(0.5, 1.5, size=2)

    def inner_fn(values):
        y, z = (np.asarray(v).astype(np.int64) for v in values)
        return phi_table[y, z]

    if outer_shape == "linear":
        outer_fn = lambda values, inner: a + b * inner
    elif outer_shape == "convex":
        outer_fn = lambda values, inner: a + b * inner**2
    else:
        outer_fn = lambda values, inner: a - b * inner**2

    return nm.NestedProblem(
        depth=1,
        samplers=(
            nm.DistLevel(nm.categorical(tuple(outer_probs))),
            discrete_table_level(inner_probs, None),
        ),
        inner_fn=inner_fn,
        outer_fns=(outer_fn,),
    )


class TestEnumerationOracle:
    def test_finite_outcome_toy(self):
        fop = nm.FiniteOutcomeProblem(
            outcomes=(0.0, 1.0),
            outer=nm.bernoulli(0.5),
            inner_sampler=lambda c, stream: stream.bernoullis(0.5).astype(np.float64),
            phi=lambda y, z: y + z,
            f=lambda y, g: g**2,
            enumerate_inner=lambda c: [(0.0, 0.5), (1.0, 0.5)],
        )
        assert nm.enumeration_oracle(fop) == 1.25

    def test_linear_collapse_identity(self):
        """With a linear outer map the oracle equals the collapsed single
        expectation computed directly."""
        rng = np.random.default_rng(3)
        prob = random_discrete_problem(rng, "linear")
        value = nm.enumeration_oracle(prob)
        # collapse: E[a + b*phi(y,z)] under the joint law
        outer = prob.samplers[0].enumerate(())
        direct = 0.0
        for y, py in outer:
            for z, pz in prob.samplers[1].enumerate((y,)):
                direct += py * pz * float(prob.inner_fn((np.int64(y), np.int64(z))))
        a_b = prob.outer_fns[0]((), 0.0), prob.outer_fns[0]((), 1.0)
        direct = a_b[0] + (a_b[1] - a_b[0]) * direct
        assert value == pytest.approx(direct, rel=1e-12)

    def test_depth0_constant(self):
        prob = nm.NestedProblem(
            depth=0,
            samplers=(nm.DistLevel(nm.bernoulli(0.3)),),
            inner_fn=lambda values: np.full_like(np.asarray(values[0], dtype=float), 4.25),
        )
        assert nm.enumeration_oracle(prob) == 4.25

    def test_non_enumerable_rejected(self):
        with pytest.raises(UnsupportedProblemError):
            nm.enumeration_oracle(nm.analytic_model())

    def test_outcome_cap(self):
        prob = nm.NestedProblem(
            depth=0,
            samplers=(nm.DistLevel(nm.categorical(tuple([1.0 / 100] * 100))),),
            inner_fn=lambda values: np.asarray(values[0], dtype=float),
        )
        with pytest.raises(UnsupportedProblemError):
            nm.enumeration_oracle(prob)

    @pytest.mark.parametrize("shape,direction", [("linear", 0), ("convex", 1), ("concave", -1)])
    def test_nmc_mean_against_oracle(self, shape, direction):
        """Replicated nested estimates agree with the oracle for linear outer
        maps and fall on the Jensen side for curved ones."""
        rng = np.random.default_rng(17)
        gaps = []
        for trial in range(5):
            prob = random_discrete_problem(rng, shape)
            truth = nm.enumeration_oracle(prob)
            plan = nm.AllocationPlan((32, 32))
            values = np.array(
                [nm.nmc_estimate(prob, plan, nm.make_stream(1000 + trial, (r,))).value for r in range(2000)]
            )
            se = values.std(ddof=1) / math.sqrt(values.size)
            gap = values.mean() - truth
            if direction == 0:
                assert abs(gap) < 4.0 * se
            else:
                gaps.append(gap / se)
        if direction != 0:
            # strictly curved outer maps must bias every problem the same way
            assert all(direction * g > 2.0 for g in gaps)
            assert max(direction * g for g in gaps) > 3.0
