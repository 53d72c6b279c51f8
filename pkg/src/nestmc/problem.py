"""Nested-expectation problems and the depth-D nested Monte Carlo estimator.

A problem of depth D is a chain of conditional samplers, a value function at
the deepest level, and one combining function per outer level that maps
(level values, inner estimate) to a real.  The estimator draws ``N_k``
conditionally independent samples at level ``k``, recursing below each one,
and averages bottom-up.

Every sample at level ``k`` owns the child stream at its own index, so the
whole sampling tree is a pure function of the root stream: subtrees can be
evaluated independently, in any order, or in parallel without changing the
result.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import BudgetOverflowError, NonFiniteValueError, ShapeError
from .rng import DistributionSpec, RandomStream, sample_batch

__all__ = [
    "AllocationPlan",
    "EstimateRecord",
    "DistLevel",
    "FnLevel",
    "NestedProblem",
    "effective_budget",
    "mc_estimate",
    "nmc_estimate",
    "outer_sample_values",
]

_MAX_BUDGET = 2**63 - 1
_MAX_DEPTH = 16


@dataclass(frozen=True)
class AllocationPlan:
    """Per-level sample counts ``N_0..N_D`` plus the strategy that made them."""

    counts: tuple[int, ...]
    strategy_label: str = ""

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if len(counts) == 0:
            raise ShapeError("allocation plan needs at least one count")
        if any(c < 1 for c in counts):
            raise ShapeError(f"every sample count must be >= 1, got {counts}")

    @property
    def depth(self) -> int:
        return len(self.counts) - 1


def effective_budget(plan: AllocationPlan | Sequence[int]) -> int:
    """Total number of innermost samples, the product of the plan counts."""
    counts = plan.counts if isinstance(plan, AllocationPlan) else tuple(int(c) for c in plan)
    total = 1
    for c in counts:
        total *= int(c)
        if total > _MAX_BUDGET:
            raise BudgetOverflowError(f"effective budget exceeds {_MAX_BUDGET}")
    return total


@dataclass(frozen=True)
class EstimateRecord:
    """One estimator evaluation: value, plan, stream identity, and cost."""

    value: float
    plan: AllocationPlan
    base_seed: int
    stream_path: tuple[int, ...]
    effective_budget: int
    wall_time: float = 0.0


# ---------------------------------------------------------------------------
# Level samplers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DistLevel:
    """A level drawn from a fixed primitive distribution (prefix-independent)."""

    dist: DistributionSpec

    def sample(self, prefix, stream: RandomStream) -> np.ndarray:
        return np.asarray(sample_batch(self.dist, stream), dtype=np.float64)

    def enumerate(self, prefix_values):
        probs = self.dist.outcome_probabilities()
        return [(float(i), p) for i, p in enumerate(probs)]

    @property
    def enumerable(self) -> bool:
        return self.dist.is_discrete


@dataclass(frozen=True)
class FnLevel:
    """A level drawn by an arbitrary vectorized sampler ``fn(prefix, stream)``.

    ``fn`` receives the tuple of earlier-level value arrays (broadcastable
    to ``stream.shape``) and must return draws of shape ``stream.shape``.
    ``enum_fn(prefix_values) -> [(value, prob), ...]`` may be supplied for
    fully discrete levels so the enumeration oracle can walk them.
    """

    fn: Callable
    enum_fn: Callable | None = None

    def sample(self, prefix, stream: RandomStream) -> np.ndarray:
        return np.asarray(self.fn(prefix, stream), dtype=np.float64)

    def enumerate(self, prefix_values):
        if self.enum_fn is None:
            raise ShapeError("level has no enumeration rule")
        return self.enum_fn(prefix_values)

    @property
    def enumerable(self) -> bool:
        return self.enum_fn is not None


@dataclass(frozen=True)
class NestedProblem:
    """A depth-D nested expectation.

    ``samplers`` has D+1 levels.  ``inner_fn(values)`` maps the tuple of all
    level value arrays to the deepest integrand.  ``outer_fns[k](values,
    inner)`` combines the values of levels ``0..k`` with the estimate of the
    expectation below; all callables must be vectorized over numpy arrays
    and deterministic given their arguments.  ``ground_truth`` is the exact
    value of the nested expectation when known in closed form.
    """

    depth: int
    samplers: tuple
    inner_fn: Callable
    outer_fns: tuple = ()
    ground_truth: float | None = None

    def __post_init__(self):
        if not 0 <= self.depth <= _MAX_DEPTH:
            raise ShapeError(f"depth must be in [0, {_MAX_DEPTH}], got {self.depth}")
        if len(self.samplers) != self.depth + 1:
            raise ShapeError(f"need {self.depth + 1} samplers for depth {self.depth}, got {len(self.samplers)}")
        if len(self.outer_fns) != self.depth:
            raise ShapeError(f"need {self.depth} outer functions for depth {self.depth}, got {len(self.outer_fns)}")


def _check_finite(values: np.ndarray, level: int) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteValueError(level)


def _node_values(problem: NestedProblem, counts, k: int, prefix, nodes: RandomStream) -> np.ndarray:
    """Integrand values for the nodes at level ``k``, one per node stream.

    ``prefix`` holds the value arrays of levels above, already expanded to
    broadcast against ``nodes.shape``.
    """
    y = problem.samplers[k].sample(prefix, nodes)
    values = prefix + (y,)
    if k == problem.depth:
        out = np.asarray(problem.inner_fn(values), dtype=np.float64)
    else:
        expanded = tuple(np.asarray(a)[..., None] for a in values)
        inner_nodes = nodes.child_block(counts[k + 1])
        inner_values = _node_values(problem, counts, k + 1, expanded, inner_nodes)
        inner = np.mean(inner_values, axis=-1)
        out = np.asarray(problem.outer_fns[k](values, inner), dtype=np.float64)
    _check_finite(out, k)
    return out


def outer_sample_values(problem: NestedProblem, plan: AllocationPlan, stream: RandomStream) -> np.ndarray:
    """The per-outer-sample values whose mean is the NMC estimate.

    Entry ``n`` is a pure function of ``stream.child(n)`` alone, which is
    what makes subtrees order-independent and safe to farm out.
    """
    if len(plan.counts) != problem.depth + 1:
        raise ShapeError(
            f"plan has {len(plan.counts)} counts but problem depth {problem.depth} needs {problem.depth + 1}"
        )
    nodes = stream.child_block(plan.counts[0])
    return _node_values(problem, plan.counts, 0, (), nodes)


def nmc_estimate(problem: NestedProblem, plan: AllocationPlan, stream: RandomStream) -> EstimateRecord:
    """Depth-D nested Monte Carlo estimate of the problem value.

    Exactly ``prod(plan.counts)`` innermost samples are drawn.  The result
    is deterministic given (problem, plan, stream identity).
    """
    start = time.perf_counter()
    budget = effective_budget(plan)
    values = outer_sample_values(problem, plan, stream)
    value = float(np.mean(values, axis=-1))
    return EstimateRecord(
        value=value,
        plan=plan,
        base_seed=stream.base_seed,
        stream_path=stream.path,
        effective_budget=budget,
        wall_time=time.perf_counter() - start,
    )


def mc_estimate(problem: NestedProblem, n: int, stream: RandomStream) -> EstimateRecord:
    """Conventional Monte Carlo for a depth-0 problem."""
    if problem.depth != 0:
        raise ShapeError(f"mc_estimate requires depth 0, got depth {problem.depth}")
    return nmc_estimate(problem, AllocationPlan((int(n),), "mc"), stream)
