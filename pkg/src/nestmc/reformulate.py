"""Special-case estimators that recover the plain Monte Carlo rate.

Four reformulations apply when the nested structure has exploitable shape:
a linear outer function collapses to a single expectation; a discrete outer
variable splits into one non-nested problem per outcome; a product of
inner expectations is rewritten over independently re-drawn coordinates;
and an integer power of an inner expectation unrolls into independent
inner draws.  Each returns an unbiased (or O(1/N)-convergent) estimate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import LinearityError, ShapeError
from .problem import AllocationPlan, EstimateRecord, NestedProblem
from .rng import DistributionSpec, RandomStream, sample_batch

__all__ = [
    "FiniteOutcomeProblem",
    "ProductProblem",
    "PolynomialProblem",
    "linear_estimate",
    "finite_outcome_estimate",
    "product_expectation_estimate",
    "polynomial_estimate",
    "xlogx",
]

_PROBE_COUNT = 8
_PROBE_RTOL = 1e-9


def xlogx(x):
    """x * ln(x) with the continuity convention 0 * ln(0) = 0."""
    arr = np.asarray(x, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(arr > 0, arr * np.log(np.where(arr > 0, arr, 1.0)), 0.0)
    return float(out) if np.ndim(x) == 0 else out


def _record(value: float, n: int, label: str, stream: RandomStream, start: float) -> EstimateRecord:
    plan = AllocationPlan((int(n),), label)
    return EstimateRecord(
        value=float(value),
        plan=plan,
        base_seed=stream.base_seed,
        stream_path=stream.path,
        effective_budget=int(n),
        wall_time=time.perf_counter() - start,
    )


# ---------------------------------------------------------------------------
# Linear outer function
# ---------------------------------------------------------------------------


def _probe_linearity(problem: NestedProblem, stream: RandomStream) -> None:
    """Spot-check that the outer function is linear in its second argument."""
    probe = stream.child_block(_PROBE_COUNT)
    y = problem.samplers[0].sample((), probe)
    a = probe.normals()
    b = probe.normals()
    v = 3.0 * probe.normals()
    w = 3.0 * probe.normals()
    f = problem.outer_fns[0]
    lhs = np.asarray(f((y,), a * v + b * w), dtype=np.float64)
    rhs = a * np.asarray(f((y,), v), dtype=np.float64) + b * np.asarray(f((y,), w), dtype=np.float64)
    scale = np.maximum(1.0, np.maximum(np.abs(lhs), np.abs(rhs)))
    bad = np.abs(lhs - rhs) > _PROBE_RTOL * scale
    if np.any(bad):
        raise LinearityError(
            "outer function failed the linearity probe "
            f"(max relative defect {float(np.max(np.abs(lhs - rhs) / scale)):.3g})"
        )


def linear_estimate(problem: NestedProblem, n: int, stream: RandomStream) -> EstimateRecord:
    """Single-expectation collapse for depth-1 problems with linear outer f.

    Draws one inner sample per outer sample; unbiased for the nested value.
    The caller asserts linearity; a numeric probe on 8 random points guards
    against misuse.
    """
    if problem.depth != 1:
        raise ShapeError(f"linear collapse requires depth 1, got {problem.depth}")
    start = time.perf_counter()
    _probe_linearity(problem, stream.child(1))
    nodes = stream.child(0).child_block(int(n))
    y = problem.samplers[0].sample((), nodes)
    z = problem.samplers[1].sample((y,), nodes)
    inner = np.asarray(problem.inner_fn((y, z)), dtype=np.float64)
    values = np.asarray(problem.outer_fns[0]((y,), inner), dtype=np.float64)
    return _record(np.mean(values), n, "linear-collapse", stream, start)


# ---------------------------------------------------------------------------
# Finitely many outer realizations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FiniteOutcomeProblem:
    """Nested problem whose outer variable takes one of C known values.

    ``outer`` is the categorical/bernoulli law of the outcome index (or any
    sampler callable ``(stream) -> index array``); ``inner_sampler(c,
    stream)`` draws the inner variable given outcome index ``c``;
    ``phi(y, z)`` is the inner integrand and ``f(y, gamma)`` the outer map.
    ``enumerate_inner(c) -> [(z, prob), ...]`` may be supplied for fully
    discrete inner laws so the enumeration oracle can evaluate the problem
    exactly.
    """

    outcomes: tuple[float, ...]
    outer: DistributionSpec | Callable
    inner_sampler: Callable
    phi: Callable
    f: Callable
    enumerate_inner: Callable | None = None

    def __post_init__(self):
        object.__setattr__(self, "outcomes", tuple(float(v) for v in self.outcomes))
        if len(set(self.outcomes)) != len(self.outcomes):
            raise ShapeError("outcomes must be distinct")
        if isinstance(self.outer, DistributionSpec):
            if not self.outer.is_discrete:
                raise ShapeError("outer law must be bernoulli or categorical")
            if self.outer.support_size() != len(self.outcomes):
                raise ShapeError("outer law size must match the number of outcomes")

    @property
    def n_outcomes(self) -> int:
        return len(self.outcomes)

    def sample_outer(self, stream: RandomStream) -> np.ndarray:
        if isinstance(self.outer, DistributionSpec):
            return np.asarray(sample_batch(self.outer, stream))
        return np.asarray(self.outer(stream))


def finite_outcome_estimate(problem: FiniteOutcomeProblem, n: int, stream: RandomStream) -> EstimateRecord:
    """Outcome-decomposed estimator: sum_c P_hat_c * f(y_c, gamma_hat_c).

    The outcome frequencies and every per-outcome inner mean all use the
    same ``n``; the inner draws come from a stream independent of the
    outcome draws, so each inner sample is independent of every outcome
    draw.
    """
    n = int(n)
    if n < 1:
        raise ShapeError("n must be >= 1")
    start = time.perf_counter()
    idx = problem.sample_outer(stream.child(0).child_block(n))
    counts = np.bincount(idx.astype(np.int64), minlength=problem.n_outcomes)
    p_hat = counts / float(n)

    z_root = stream.child(1)
    value = 0.0
    for c, y_c in enumerate(problem.outcomes):
        z = problem.inner_sampler(c, z_root.child(c).child_block(n))
        gamma_hat = float(np.mean(np.asarray(problem.phi(y_c, np.asarray(z)), dtype=np.float64)))
        value += p_hat[c] * float(problem.f(y_c, gamma_hat))
    return _record(value, n, "finite-outcome", stream, start)


# ---------------------------------------------------------------------------
# Products of expectations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProductProblem:
    """Outer expectation of f(y, product of L inner expectations).

    ``joint_inner_sampler(y, stream)`` draws one tuple (z_1..z_L) from the
    joint inner law given y, one tuple per stream element; the coordinates
    may be arbitrarily dependent.  ``psi[l](y, z_l)`` are the factor
    integrands and ``inner_counts[l]`` the per-factor sample counts.
    """

    outer_sampler: Callable
    n_factors: int
    joint_inner_sampler: Callable
    psi: tuple[Callable, ...]
    f: Callable
    inner_counts: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "inner_counts", tuple(int(m) for m in self.inner_counts))
        if self.n_factors < 1:
            raise ShapeError("need at least one factor")
        if len(self.psi) != self.n_factors or len(self.inner_counts) != self.n_factors:
            raise ShapeError("psi and inner_counts must have one entry per factor")
        if any(m < 1 for m in self.inner_counts):
            raise ShapeError("every inner count must be >= 1")


def product_expectation_estimate(problem: ProductProblem, n: int, stream: RandomStream) -> EstimateRecord:
    """Estimate E[f(y, prod_l E[psi_l | y])] at the plain MC rate.

    For each outer sample and each factor l, a fresh independent batch of
    joint draws is taken and only coordinate l is used, which makes the
    plugged-in factor estimates mutually independent given y even when the
    joint coordinates are correlated.
    """
    n = int(n)
    if n < 1:
        raise ShapeError("n must be >= 1")
    start = time.perf_counter()
    nodes = stream.child_block(n)
    y = np.asarray(problem.outer_sampler(nodes), dtype=np.float64)
    product = np.ones(n, dtype=np.float64)
    for ell in range(problem.n_factors):
        m = problem.inner_counts[ell]
        draw_stream = nodes.child(ell).child_block(m)
        joint = problem.joint_inner_sampler(y[:, None], draw_stream)
        z_ell = np.asarray(joint[ell], dtype=np.float64)
        product *= np.mean(np.asarray(problem.psi[ell](y[:, None], z_ell), dtype=np.float64), axis=-1)
    values = np.asarray(problem.f(y, product), dtype=np.float64)
    return _record(np.mean(values), n, "product-expectations", stream, start)


# ---------------------------------------------------------------------------
# Polynomial outer function
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolynomialProblem:
    """Outer expectation of g(y) * (E[phi | y])^alpha for integer alpha >= 0."""

    outer_sampler: Callable
    inner_sampler: Callable
    g: Callable
    phi: Callable
    alpha: int

    def __post_init__(self):
        object.__setattr__(self, "alpha", int(self.alpha))
        if self.alpha < 0:
            raise ShapeError("alpha must be a nonnegative integer")


def polynomial_estimate(problem: PolynomialProblem, n: int, stream: RandomStream) -> EstimateRecord:
    """Unbiased estimator of E[g(y) gamma(y)^alpha] via alpha independent
    inner draws per outer sample (the empty product is 1 when alpha = 0)."""
    n = int(n)
    if n < 1:
        raise ShapeError("n must be >= 1")
    start = time.perf_counter()
    nodes = stream.child_block(n)
    y = np.asarray(problem.outer_sampler(nodes), dtype=np.float64)
    product = np.ones(n, dtype=np.float64)
    for _ in range(problem.alpha):
        z = np.asarray(problem.inner_sampler(y, nodes), dtype=np.float64)
        product *= np.asarray(problem.phi(y, z), dtype=np.float64)
    values = np.asarray(problem.g(y), dtype=np.float64) * product
    return _record(np.mean(values), n, "polynomial", stream, start)
