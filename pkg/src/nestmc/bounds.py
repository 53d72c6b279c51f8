"""Finite-sample MSE bounds and asymptotically optimal sample allocations.

The bound evaluators return the dominant terms of the published bounds;
asymptotically dominated remainders are excluded except in the
single-nesting "exact" forms, which carry every characterized term.
Allocation rules convert a total sample budget T into per-level counts by
rounding the optimal power laws (round-half-to-even, clamped to >= 1); the
effective budget is reported instead of forcing the product to equal T.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .errors import InfeasibleBudgetError, MissingInputError, ParameterDomainError, ShapeError
from .problem import AllocationPlan

__all__ = [
    "Smoothness",
    "BoundInputs",
    "bound_lipschitz",
    "bound_smooth",
    "bound_single_exact",
    "optimal_allocation",
    "alpha_allocation",
]


class Smoothness(enum.Enum):
    LIPSCHITZ = "lipschitz"
    CONTINUOUSLY_DIFFERENTIABLE = "continuously_differentiable"


@dataclass(frozen=True)
class BoundInputs:
    """Smoothness constants for the per-level combining functions.

    ``lipschitz_K[k]`` bounds the slope of level-k's combiner in its second
    argument (k = 0..D-1); ``second_deriv_C`` carries the corresponding
    curvature bounds when the smooth variant is wanted; ``sigma[k]`` is the
    per-level noise scale (k = 0..D).
    """

    depth: int
    lipschitz_K: tuple[float, ...]
    sigma: tuple[float, ...]
    second_deriv_C: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "lipschitz_K", tuple(float(v) for v in self.lipschitz_K))
        object.__setattr__(self, "sigma", tuple(float(v) for v in self.sigma))
        if self.second_deriv_C is not None:
            object.__setattr__(self, "second_deriv_C", tuple(float(v) for v in self.second_deriv_C))
        if self.depth < 1:
            raise ShapeError(f"bounds need depth >= 1, got {self.depth}")
        if len(self.lipschitz_K) != self.depth:
            raise ShapeError(f"need {self.depth} Lipschitz constants, got {len(self.lipschitz_K)}")
        if len(self.sigma) != self.depth + 1:
            raise ShapeError(f"need {self.depth + 1} sigma values, got {len(self.sigma)}")
        if self.second_deriv_C is not None and len(self.second_deriv_C) != self.depth:
            raise ShapeError(f"need {self.depth} curvature bounds, got {len(self.second_deriv_C)}")
        for name, seq in (("K", self.lipschitz_K), ("sigma", self.sigma), ("C", self.second_deriv_C or ())):
            if any(not math.isfinite(v) or v < 0 for v in seq):
                raise ParameterDomainError(f"{name} entries must be finite and >= 0")


def _check_plan(inputs: BoundInputs, plan: AllocationPlan) -> None:
    if len(plan.counts) != inputs.depth + 1:
        raise ShapeError(f"plan has {len(plan.counts)} counts, bound inputs need {inputs.depth + 1}")


def bound_lipschitz(inputs: BoundInputs, plan: AllocationPlan) -> float:
    """Dominant terms of the Lipschitz-only MSE bound.

    sigma_0^2/N_0 + sum_k (prod_{l<k} K_l^2) sigma_k^2/N_k.
    """
    _check_plan(inputs, plan)
    n = plan.counts
    total = inputs.sigma[0] ** 2 / n[0]
    kprod = 1.0
    for k in range(1, inputs.depth + 1):
        kprod *= inputs.lipschitz_K[k - 1] ** 2
        total += kprod * inputs.sigma[k] ** 2 / n[k]
    return total


def bound_smooth(inputs: BoundInputs, plan: AllocationPlan) -> float:
    """Dominant terms of the tightened bound for continuously differentiable
    combiners: sigma_0^2/N_0 plus the square of the accumulated curvature
    terms."""
    if inputs.second_deriv_C is None:
        raise MissingInputError("smooth bound requires second-derivative bounds")
    _check_plan(inputs, plan)
    n = plan.counts
    C = inputs.second_deriv_C
    s = inputs.sigma
    inner = C[0] * s[1] ** 2 / (2.0 * n[1])
    kprod = 1.0
    for k in range(0, inputs.depth - 1):
        kprod *= inputs.lipschitz_K[k]
        inner += kprod * C[k + 1] * s[k + 2] ** 2 / (2.0 * n[k + 2])
    return s[0] ** 2 / n[0] + inner**2


def bound_single_exact(inputs: BoundInputs, n0: int, n1: int, smoothness: Smoothness) -> float:
    """Fully characterized single-nesting bound (depth 1).

    The Lipschitz branch carries all four terms; the smooth branch drops
    only the O(1/N_1^3) remainder.
    """
    if inputs.depth != 1:
        raise ShapeError(f"single-nesting bound requires depth 1, got {inputs.depth}")
    n0 = int(n0)
    n1 = int(n1)
    if n0 < 1 or n1 < 1:
        raise ShapeError("sample counts must be >= 1")
    k0 = inputs.lipschitz_K[0]
    s0, s1 = inputs.sigma
    if smoothness is Smoothness.LIPSCHITZ:
        return (
            s0**2 / n0
            + 4.0 * k0**2 * s1**2 / (n0 * n1)
            + 2.0 * k0 * s0 * s1 / (n0 * math.sqrt(n1))
            + k0**2 * s1**2 / n1
        )
    if inputs.second_deriv_C is None:
        raise MissingInputError("smooth bound requires second-derivative bounds")
    c0 = inputs.second_deriv_C[0]
    quarter = c0**2 * s1**4 / (4.0 * n1**2)
    return (
        s0**2 / n0
        + quarter * (1.0 + 1.0 / n0)
        + k0**2 * s1**2 / (n0 * n1)
        + (2.0 * k0 * s1 / (n0 * math.sqrt(n1))) * math.sqrt(s0**2 + quarter)
    )


def _round_count(x: float) -> int:
    """Round-half-to-even, clamped to >= 1."""
    return max(1, round(x))


def optimal_allocation(total: int, depth: int, smoothness: Smoothness) -> AllocationPlan:
    """Asymptotically optimal per-level counts for a budget of ``total``.

    Lipschitz: all levels equal, N_k = T^(1/(D+1)), MSE rate T^(-1/(D+1)).
    Continuously differentiable: N_0 = T^(2/(D+2)) with N_k = T^(1/(D+2))
    below, MSE rate T^(-2/(D+2)).
    """
    total = int(total)
    depth = int(depth)
    if depth < 1:
        raise ShapeError(f"allocation needs depth >= 1, got {depth}")
    if total < 2 ** (depth + 1):
        raise InfeasibleBudgetError(f"budget {total} infeasible for depth {depth} (need >= {2 ** (depth + 1)})")
    if smoothness is Smoothness.LIPSCHITZ:
        count = _round_count(total ** (1.0 / (depth + 1)))
        counts = (count,) * (depth + 1)
        rate = Fraction(-1, depth + 1)
        rule = "equal"
    else:
        outer = _round_count(total ** (2.0 / (depth + 2)))
        inner = _round_count(total ** (1.0 / (depth + 2)))
        counts = (outer,) + (inner,) * depth
        rate = Fraction(-2, depth + 2)
        rule = "squared"
    return AllocationPlan(counts, f"{rule}(T={total}, rate={rate})")


def alpha_allocation(total: int, alphas: Sequence[float]) -> AllocationPlan:
    """Power-law allocation parameterized by exponents in (0, 1).

    Single nesting (one alpha): N_0 = T^a, N_1 = T^(1-a).  Double nesting
    (two alphas): N_0 = T^(a1), N_1 = T^(a2 (1-a1)), N_2 = T^((1-a1)(1-a2)).
    The pattern continues recursively: each alpha splits the remaining
    exponent budget.
    """
    total = int(total)
    alphas = tuple(float(a) for a in alphas)
    if total < 2:
        raise InfeasibleBudgetError(f"budget {total} too small")
    if len(alphas) < 1:
        raise ShapeError("need at least one alpha")
    if any(not 0.0 < a < 1.0 for a in alphas):
        raise ParameterDomainError(f"alphas must lie strictly inside (0, 1), got {alphas}")
    exponents = []
    remaining = 1.0
    for a in alphas:
        exponents.append(a * remaining)
        remaining *= 1.0 - a
    exponents.append(remaining)
    counts = tuple(_round_count(total**e) for e in exponents)
    label = "alpha(" + ",".join(f"{a:g}" for a in alphas) + f", T={total})"
    return AllocationPlan(counts, label)
