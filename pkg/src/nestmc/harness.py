"""Replicated estimation, convergence sweeps, and the enumeration oracle.

Replicate ``r`` of any run always uses stream path ``[r]`` of the base
seed, so results are independent of execution order and worker count.
Sweep reports carry the empirical MSE split into squared bias plus
variance (an exact decomposition by construction), squared-error
quantiles, and a log-log slope fitted over the largest budgets.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context
from typing import Callable, Sequence

import numpy as np

from .bounds import Smoothness, alpha_allocation, optimal_allocation
from .errors import HarnessError, InsufficientDataError, NonFiniteValueError, ShapeError, UnsupportedProblemError
from .models import ModelEntry
from .problem import AllocationPlan, EstimateRecord, NestedProblem, effective_budget
from .reformulate import FiniteOutcomeProblem
from .rng import make_stream

__all__ = [
    "Strategy",
    "SweepConfig",
    "SweepRow",
    "SweepReport",
    "MseStats",
    "run_replicates",
    "empirical_mse",
    "build_plan",
    "convergence_sweep",
    "fit_slope",
    "alpha_sweep",
    "AlphaSweepReport",
    "enumeration_oracle",
    "ladder",
]

_FAILURE_LIMIT = 0.01


# ---------------------------------------------------------------------------
# Replication
# ---------------------------------------------------------------------------


def _one_replicate(args):
    estimator, plan, base_seed, replicate = args
    stream = make_stream(base_seed, (replicate,))
    try:
        return replicate, estimator.evaluate(plan, stream), None
    except NonFiniteValueError as exc:
        return replicate, None, exc


def run_replicates(
    estimator,
    plan: AllocationPlan,
    replicates: int,
    base_seed: int,
    workers: int = 1,
) -> tuple[list[EstimateRecord | None], int]:
    """Evaluate ``replicates`` independent copies of the estimator.

    Returns the records in replicate order (``None`` where a replicate
    aborted with a non-finite value) plus the failure count.  Aborts if
    more than 1% of replicates fail.
    """
    replicates = int(replicates)
    if replicates < 1:
        raise InsufficientDataError("need at least one replicate")
    tasks = [(estimator, plan, base_seed, r) for r in range(replicates)]
    results: list[EstimateRecord | None] = [None] * replicates
    failures = 0
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, mp_context=get_context("spawn")) as pool:
            outcomes = list(pool.map(_one_replicate, tasks, chunksize=max(1, replicates // (4 * workers))))
    else:
        outcomes = [_one_replicate(t) for t in tasks]
    for r, record, err in outcomes:
        if err is not None:
            failures += 1
        else:
            results[r] = record
    if failures > max(_FAILURE_LIMIT * replicates, 0):
        raise HarnessError(f"{failures}/{replicates} replicates produced non-finite values")
    return results, failures


# ---------------------------------------------------------------------------
# Error statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MseStats:
    mse: float
    bias_sq: float
    variance: float
    q25: float
    q75: float
    median_abs_error: float
    n: int


def empirical_mse(estimates: Sequence[float], truth: float) -> MseStats:
    """MSE, squared bias, variance, and squared-error quantiles.

    Variance is computed as mse - bias_sq from the same replicate set, so
    the decomposition is exact.  Quantiles are of the squared error, by
    linear interpolation.
    """
    values = np.asarray([e for e in estimates], dtype=np.float64)
    if values.size < 2:
        raise InsufficientDataError("need at least 2 estimates")
    err = values - float(truth)
    sq = err**2
    mse = float(np.mean(sq))
    bias_sq = float(np.mean(err)) ** 2
    q25, q50, q75 = (float(q) for q in np.quantile(sq, [0.25, 0.5, 0.75]))
    return MseStats(
        mse=mse,
        bias_sq=bias_sq,
        variance=mse - bias_sq,
        q25=q25,
        q75=q75,
        median_abs_error=math.sqrt(q50),
        n=int(values.size),
    )


# ---------------------------------------------------------------------------
# Budget ladders and allocation strategies
# ---------------------------------------------------------------------------


def ladder(lo: float, hi: float, ratio: float) -> tuple[int, ...]:
    """Geometric budget ladder from lo to hi (inclusive, within rounding)."""
    if not (lo >= 2 and hi >= lo and ratio > 1):
        raise ShapeError("ladder requires 2 <= lo <= hi and ratio > 1")
    out = []
    t = float(lo)
    while t <= hi * (1.0 + 1e-9):
        out.append(int(round(t)))
        t *= ratio
    return tuple(out)


@dataclass(frozen=True)
class Strategy:
    """How a total budget T is split across estimator levels.

    kind 'equal' uses uniform counts (the Lipschitz-optimal rule); kind
    'squared' gives the outer level the squared share (the smooth-optimal
    rule); 'fixed_inner' pins the innermost count at ``fixed_m`` and
    splits the rest by the squared rule; 'alpha' uses explicit exponents;
    'direct' puts the whole budget in the single level of a non-nested
    estimator.
    """

    kind: str
    fixed_m: int | None = None
    alphas: tuple[float, ...] | None = None

    def label(self) -> str:
        if self.kind == "fixed_inner":
            return f"fixed_inner({self.fixed_m})"
        if self.kind == "alpha":
            return "alpha(" + ",".join(f"{a:g}" for a in self.alphas) + ")"
        return self.kind


def build_plan(strategy: Strategy, total: int, depth: int) -> AllocationPlan:
    """The allocation plan of one strategy at one total budget."""
    total = int(total)
    if depth == 0:
        return AllocationPlan((total,), strategy.label())
    if strategy.kind == "equal":
        plan = optimal_allocation(total, depth, Smoothness.LIPSCHITZ)
    elif strategy.kind == "squared":
        plan = optimal_allocation(total, depth, Smoothness.CONTINUOUSLY_DIFFERENTIABLE)
    elif strategy.kind == "alpha":
        if strategy.alphas is None or len(strategy.alphas) != depth:
            raise ShapeError(f"alpha strategy needs {depth} exponents")
        plan = alpha_allocation(total, strategy.alphas)
    elif strategy.kind == "fixed_inner":
        m = int(strategy.fixed_m)
        if m < 1:
            raise ShapeError("fixed inner count must be >= 1")
        rest = max(1, int(round(total / m)))
        if depth == 1:
            counts = (rest, m)
        else:
            outer = optimal_allocation(max(rest, 2**depth), depth - 1, Smoothness.CONTINUOUSLY_DIFFERENTIABLE)
            counts = outer.counts + (m,)
        plan = AllocationPlan(counts, strategy.label())
    else:
        raise ShapeError(f"unknown strategy kind {strategy.kind!r}")
    return AllocationPlan(plan.counts, strategy.label())


# ---------------------------------------------------------------------------
# Convergence sweep
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepConfig:
    """A replicated convergence experiment for one model and strategy."""

    model: ModelEntry
    strategy: Strategy
    budget_ladder: tuple[int, ...]
    replicates: int
    base_seed: int
    truth: float | None = None
    truth_note: str = ""
    workers: int = 1
    slope_window: float = 0.6

    def __post_init__(self):
        lad = tuple(int(t) for t in self.budget_ladder)
        object.__setattr__(self, "budget_ladder", lad)
        if len(lad) < 1 or any(b >= a for a, b in zip(lad[1:], lad)):
            raise ShapeError("budget ladder must be strictly increasing")
        if self.replicates < 2:
            raise ShapeError("need at least 2 replicates")


@dataclass(frozen=True)
class SweepRow:
    strategy: str
    total: int
    counts: tuple[int, ...]
    replicates: int
    failures: int
    mse: float
    bias_sq: float
    variance: float
    q25: float
    q75: float
    median_abs_error: float
    mean: float
    se_mean: float


@dataclass(frozen=True)
class SweepReport:
    rows: tuple[SweepRow, ...]
    slope: float
    slope_stderr: float
    truth_used: float
    truth_note: str
    estimates: tuple[tuple[float, ...], ...] = ()

    def to_text(self) -> str:
        """Self-describing key-value rendering, one row per line."""
        lines = [f"truth={self.truth_used!r} provenance={self.truth_note}"]
        for row in self.rows:
            counts = ",".join(str(c) for c in row.counts)
            lines.append(
                f"strategy={row.strategy} T={row.total} counts={counts} "
                f"replicates={row.replicates} failures={row.failures} "
                f"mse={row.mse!r} bias_sq={row.bias_sq!r} variance={row.variance!r} "
                f"q25={row.q25!r} q75={row.q75!r} median_abs_error={row.median_abs_error!r}"
            )
        lines.append(f"slope={self.slope!r} slope_stderr={self.slope_stderr!r}")
        return "\n".join(lines) + "\n"


def convergence_sweep(config: SweepConfig, keep_estimates: bool = False) -> SweepReport:
    """Run the ladder, aggregate error statistics, and fit the rate.

    The truth is the model's analytic value unless the config supplies a
    (self-reference) override; a missing truth is an error.
    """
    truth = config.truth if config.truth is not None else config.model.ground_truth
    if truth is None:
        raise ShapeError(f"model {config.model.name!r} has no analytic truth; supply a reference value")
    note = config.truth_note or config.model.truth_note or "analytic"
    rows = []
    kept = []
    for total in config.budget_ladder:
        plan = build_plan(config.strategy, total, config.model.depth)
        records, failures = run_replicates(
            config.model.estimator, plan, config.replicates, config.base_seed, config.workers
        )
        values = [r.value for r in records if r is not None]
        stats = empirical_mse(values, truth)
        mean = float(np.mean(values))
        se_mean = float(np.std(values, ddof=1) / math.sqrt(len(values)))
        rows.append(
            SweepRow(
                strategy=config.strategy.label(),
                total=total,
                counts=plan.counts,
                replicates=config.replicates,
                failures=failures,
                mse=stats.mse,
                bias_sq=stats.bias_sq,
                variance=stats.variance,
                q25=stats.q25,
                q75=stats.q75,
                median_abs_error=stats.median_abs_error,
                mean=mean,
                se_mean=se_mean,
            )
        )
        if keep_estimates:
            kept.append(tuple(values))
    if len(rows) >= 3:
        slope, stderr = fit_slope(
            [r.total for r in rows], [r.mse for r in rows], window=config.slope_window
        )
    else:
        slope, stderr = math.nan, math.nan
    return SweepReport(
        rows=tuple(rows),
        slope=slope,
        slope_stderr=stderr,
        truth_used=float(truth),
        truth_note=note,
        estimates=tuple(kept),
    )


def fit_slope(totals: Sequence[float], mses: Sequence[float], window: float = 0.6) -> tuple[float, float]:
    """OLS slope of log10(mse) on log10(T) over the largest-T window.

    ``window`` is the fraction of largest-budget points used (at least 3).
    """
    totals = np.asarray(totals, dtype=np.float64)
    mses = np.asarray(mses, dtype=np.float64)
    if totals.shape != mses.shape or totals.ndim != 1:
        raise ShapeError("totals and mses must be 1-d and the same length")
    order = np.argsort(totals)
    totals = totals[order]
    mses = mses[order]
    m = max(3, int(math.ceil(window * totals.size)))
    if totals.size < 3 or m > totals.size:
        raise InsufficientDataError("slope fit needs at least 3 ladder points in the window")
    x = np.log10(totals[-m:])
    with np.errstate(divide="ignore"):
        y = np.log10(mses[-m:])
    if not np.all(np.isfinite(y)):
        return math.nan, math.nan
    xbar = x.mean()
    sxx = float(np.sum((x - xbar) ** 2))
    slope = float(np.sum((x - xbar) * (y - y.mean())) / sxx)
    resid = y - (y.mean() + slope * (x - xbar))
    dof = max(1, x.size - 2)
    stderr = float(math.sqrt(max(np.sum(resid**2), 0.0) / dof / sxx))
    return slope, stderr


# ---------------------------------------------------------------------------
# Alpha grid sweep
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AlphaSweepReport:
    total: int
    rows: tuple[tuple[tuple[float, ...], MseStats], ...]
    argmin_alphas: tuple[float, ...]


def alpha_sweep(
    model: ModelEntry,
    total: int,
    alpha_grid: Sequence,
    replicates: int,
    base_seed: int,
    truth: float | None = None,
    workers: int = 1,
) -> AlphaSweepReport:
    """Empirical MSE across power-law allocations at one fixed budget."""
    truth_val = truth if truth is not None else model.ground_truth
    if truth_val is None:
        raise ShapeError(f"model {model.name!r} has no analytic truth; supply a reference value")
    rows = []
    for alphas in alpha_grid:
        alphas = (float(alphas),) if np.ndim(alphas) == 0 else tuple(float(a) for a in alphas)
        plan = alpha_allocation(total, alphas)
        records, _ = run_replicates(model.estimator, plan, replicates, base_seed, workers)
        stats = empirical_mse([r.value for r in records if r is not None], truth_val)
        rows.append((alphas, stats))
    best = min(range(len(rows)), key=lambda i: rows[i][1].mse)
    return AlphaSweepReport(total=int(total), rows=tuple(rows), argmin_alphas=rows[best][0])


# ---------------------------------------------------------------------------
# Enumeration oracle
# ---------------------------------------------------------------------------

_MAX_JOINT_OUTCOMES = 64


def enumeration_oracle(problem) -> float:
    """Exact bottom-up evaluation of a fully discrete nested problem.

    Supports NestedProblem instances whose every level is enumerable and
    FiniteOutcomeProblem instances with an enumerable inner law, with at
    most 64 joint outcomes.  This is the independent ground-truth route
    for discrete examples; it never calls the estimators.
    """
    if isinstance(problem, NestedProblem):
        for lvl in problem.samplers:
            if not getattr(lvl, "enumerable", False):
                raise UnsupportedProblemError("every level must be enumerable")
        counter = {"paths": 0}

        def gamma_level(k: int, prefix_values: tuple) -> float:
            outcomes = problem.samplers[k].enumerate(prefix_values)
            total = 0.0
            for value, prob in outcomes:
                values = prefix_values + (value,)
                if k == problem.depth:
                    counter["paths"] += 1
                    if counter["paths"] > _MAX_JOINT_OUTCOMES:
                        raise UnsupportedProblemError(f"more than {_MAX_JOINT_OUTCOMES} joint outcomes")
                    contrib = float(problem.inner_fn(tuple(np.float64(v) for v in values)))
                else:
                    inner = gamma_level(k + 1, values)
                    contrib = float(problem.outer_fns[k](tuple(np.float64(v) for v in values), np.float64(inner)))
                total += prob * contrib
            return total

        return gamma_level(0, ())
    if isinstance(problem, FiniteOutcomeProblem):
        from .rng import DistributionSpec

        if not isinstance(problem.outer, DistributionSpec) or not problem.outer.is_discrete:
            raise UnsupportedProblemError("outer law must be an enumerable distribution")
        inner_support = getattr(problem, "enumerate_inner", None)
        if inner_support is None:
            raise UnsupportedProblemError("finite-outcome problem has no inner enumeration rule")
        outer_probs = problem.outer.outcome_probabilities()
        paths = 0
        total = 0.0
        for c, (y_c, p_c) in enumerate(zip(problem.outcomes, outer_probs)):
            gamma_c = 0.0
            for z, pz in inner_support(c):
                paths += 1
                if paths > _MAX_JOINT_OUTCOMES:
                    raise UnsupportedProblemError(f"more than {_MAX_JOINT_OUTCOMES} joint outcomes")
                gamma_c += pz * float(problem.phi(y_c, np.float64(z)))
            total += p_c * float(problem.f(y_c, gamma_c))
        return total
    raise UnsupportedProblemError(f"cannot enumerate {type(problem).__name__}")
