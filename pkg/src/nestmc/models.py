"""The concrete experiment models, each with its exact ground truth when known.

Models are exposed two ways: as ``NestedProblem`` instances (for the generic
nested estimator) and as named entries in :func:`registry` wrapping a
uniform ``Estimator`` interface the harness and CLI drive.  All sampler and
integrand callables are module-level (or partials of module-level
functions) so estimators pickle cleanly across worker processes.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import partial

import numba as nb
import numpy as np

from .errors import IntegrationError, ParameterDomainError, ShapeError
from .problem import (
    AllocationPlan,
    DistLevel,
    EstimateRecord,
    FnLevel,
    NestedProblem,
    effective_budget,
    nmc_estimate,
)
from .reformulate import xlogx
from .rng import RandomStream, beta, gamma, normal, normal_cdf, rayleigh, uniform

__all__ = [
    "ANALYTIC_TRUTH",
    "TRIPLE_TRUTH",
    "TRIPLE_MODIFIED_TRUTH",
    "CancerParams",
    "DesignPoint",
    "DDParams",
    "analytic_model",
    "triple_model",
    "cancer_model",
    "simulate_tumor",
    "simulate_tumor_batch",
    "dd_response_prob",
    "bed_naive_eig",
    "bed_reformulated_eig",
    "iwae_objective",
    "NmcEstimator",
    "BedNaiveEstimator",
    "BedReformEstimator",
    "IwaeEstimator",
    "ConstantLikelihood",
    "ModelEntry",
    "registry",
]


# ---------------------------------------------------------------------------
# Analytic single-nested model
# ---------------------------------------------------------------------------

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)

# Exact value of the nested expectation: 0.5*ln(2/(5*pi)) - 2/15.
ANALYTIC_TRUTH = 0.5 * math.log(2.0 / (5.0 * math.pi)) - 2.0 / 15.0


def _analytic_inner(values):
    y, z = values
    return _SQRT_2_OVER_PI * np.exp(-2.0 * (y - z) ** 2)


def _log_outer(values, inner):
    return np.log(inner)


def analytic_model() -> NestedProblem:
    """Single nesting with closed form: y ~ U(-1,1), z ~ N(0,1),
    inner integrand sqrt(2/pi) exp(-2 (y-z)^2), outer map ln."""
    return NestedProblem(
        depth=1,
        samplers=(DistLevel(uniform(-1.0, 1.0)), DistLevel(normal(0.0, 1.0))),
        inner_fn=_analytic_inner,
        outer_fns=(_log_outer,),
        ground_truth=ANALYTIC_TRUTH,
    )


# ---------------------------------------------------------------------------
# Triple-nested model
# ---------------------------------------------------------------------------

TRIPLE_TRUTH = -3.0 / 32.0
TRIPLE_MODIFIED_TRUTH = 39.0 / 160.0


def _triple_inner(scale, values):
    y0, y1, y2 = values
    return np.exp(y2 - (scale * y0 + y1) / 2.0)


def _triple_mid(scale, values, inner):
    y0, y1 = values[0], values[1]
    return np.exp(-0.5 * (scale * y0 - y1 - np.log(inner)))


def triple_model(modified: bool = False) -> NestedProblem:
    """Depth-2 model with analytic value -3/32 (or 39/160 when the outermost
    variable is scaled by 1/10 inside the integrands)."""
    scale = 0.1 if modified else 1.0
    return NestedProblem(
        depth=2,
        samplers=(
            DistLevel(uniform(0.0, 1.0)),
            DistLevel(normal(0.0, 1.0)),
            DistLevel(normal(0.0, 1.0)),
        ),
        inner_fn=partial(_triple_inner, scale),
        outer_fns=(_log_outer, partial(_triple_mid, scale)),
        ground_truth=TRIPLE_MODIFIED_TRUTH if modified else TRIPLE_TRUTH,
    )


# ---------------------------------------------------------------------------
# Tumor-growth simulator and treatment-policy model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CancerParams:
    """Parameters of the tumor simulator and the treatment policy."""

    k0: float = 1e8
    phi_rate: float = 0.001
    psi: float = 0.05
    lam: float = 0.5
    xi_dist: object = field(default_factory=lambda: beta(5.0, 2.0))
    c0_dist: object = field(default_factory=lambda: rayleigh(10.0))
    c0_multiplier: float = 1000.0
    t_opp: float = 2000.0
    t_max: float = 250.0
    t_step: float = 0.01
    t_treat: float = 0.35

    def __post_init__(self):
        for name in ("k0", "phi_rate", "psi", "lam", "c0_multiplier", "t_opp", "t_max", "t_step"):
            if not getattr(self, name) > 0:
                raise ParameterDomainError(f"{name} must be positive")
        if not 0.0 <= self.t_treat <= 1.0:
            raise ParameterDomainError("t_treat must lie in [0, 1]")


_TWO_THIRDS = 2.0 / 3.0


@nb.njit(cache=True, parallel=True)
def _tumor_kernel(c0, xi, k0, stim, inhib, growth, t_opp, n_steps, dt, early_exit):  # pragma: no cover
    n = c0.shape[0]
    out = np.empty(n, dtype=np.uint8)
    sixth = dt / 6.0
    half = dt / 2.0
    for i in nb.prange(n):
        c = c0[i]
        cap = k0
        x = xi[i]
        status = np.uint8(2)
        for _ in range(n_steps):
            # Classical RK4 on (c, K).  Stage states must stay positive for
            # the logarithm; a violation aborts the trajectory.
            bad = False
            lc = np.log(c)
            lk = np.log(cap)
            dc1 = -growth * c * (lc - lk) - x * c
            dk1 = stim * c - inhib * cap * np.exp(_TWO_THIRDS * lc)
            c2 = c + half * dc1
            k2 = cap + half * dk1
            if c2 <= 0.0 or k2 <= 0.0:
                bad = True
                c2 = 1.0
                k2 = 1.0
            lc = np.log(c2)
            lk = np.log(k2)
            dc2 = -growth * c2 * (lc - lk) - x * c2
            dk2 = stim * c2 - inhib * k2 * np.exp(_TWO_THIRDS * lc)
            c3 = c + half * dc2
            k3 = cap + half * dk2
            if c3 <= 0.0 or k3 <= 0.0:
                bad = True
                c3 = 1.0
                k3 = 1.0
            lc = np.log(c3)
            lk = np.log(k3)
            dc3 = -growth * c3 * (lc - lk) - x * c3
            dk3 = stim * c3 - inhib * k3 * np.exp(_TWO_THIRDS * lc)
            c4 = c + dt * dc3
            k4 = cap + dt * dk3
            if c4 <= 0.0 or k4 <= 0.0:
                bad = True
                c4 = 1.0
                k4 = 1.0
            lc = np.log(c4)
            lk = np.log(k4)
            dc4 = -growth * c4 * (lc - lk) - x * c4
            dk4 = stim * c4 - inhib * k4 * np.exp(_TWO_THIRDS * lc)
            cn = c + sixth * (dc1 + 2.0 * dc2 + 2.0 * dc3 + dc4)
            kn = cap + sixth * (dk1 + 2.0 * dk2 + 2.0 * dk3 + dk4)
            if bad or not (np.isfinite(cn) and np.isfinite(kn)) or cn <= 0.0 or kn <= 0.0:
                status = np.uint8(255)
                break
            prev_c = c
            prev_k = cap
            c = cn
            cap = kn
            if early_exit:
                # Outcome decided: below half threshold with the capacity
                # below c, the state can never climb back to t_opp.
                if c < 0.5 * t_opp and cap < 0.5 * c:
                    status = np.uint8(1)
                    break
                # Numerically stationary state: remaining steps are no-ops.
                if abs(c - prev_c) <= 1e-13 * abs(c) and abs(cap - prev_k) <= 1e-13 * abs(cap):
                    status = np.uint8(1) if c < t_opp else np.uint8(0)
                    break
        if status == 2:
            out[i] = np.uint8(1) if c < t_opp else np.uint8(0)
        else:
            out[i] = status
    return out


def _early_exit_valid(params: CancerParams) -> bool:
    # The decided-outcome exit is sound only if, at the exit scale, the
    # capacity growth ceiling (stim/inhib) c^(1/3) sits below the scale.
    half = 0.5 * params.t_opp
    return (params.phi_rate / params.psi) * half ** (1.0 / 3.0) < half


def simulate_tumor_batch(c0, xi, params: CancerParams, t_step: float | None = None, early_exit: bool = True):
    """Binary treatment outcomes for arrays of (initial size, response)."""
    c0 = np.ascontiguousarray(c0, dtype=np.float64)
    xi = np.ascontiguousarray(xi, dtype=np.float64)
    if c0.shape != xi.shape:
        raise ShapeError("c0 and xi must have the same shape")
    if np.any(c0 <= 0):
        raise ParameterDomainError("initial tumor size must be positive")
    dt = params.t_step if t_step is None else float(t_step)
    n_steps = int(round(params.t_max / dt))
    out = _tumor_kernel(
        c0.ravel(),
        xi.ravel(),
        params.k0,
        params.phi_rate,
        params.psi,
        params.lam,
        params.t_opp,
        n_steps,
        dt,
        early_exit and _early_exit_valid(params),
    )
    if np.any(out == 255):
        raise IntegrationError("tumor integration produced a non-finite state")
    return out.reshape(c0.shape).astype(np.float64)


def simulate_tumor(c0: float, xi: float, params: CancerParams) -> int:
    """Integrate one tumor trajectory; 1 if the final size is below the
    surgery threshold at the end of the window, else 0."""
    return int(simulate_tumor_batch(np.array([c0]), np.array([xi]), params)[0])


def _scaled_rayleigh_sampler(multiplier, scale, prefix, stream):
    return multiplier * stream.rayleighs(scale)


def _beta_sampler(a, b, prefix, stream):
    return stream.betas(a, b)


def _cancer_inner(params, values):
    c0, xi = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in values))
    return simulate_tumor_batch(c0, xi, params)


def _cancer_outer(t_treat, values, inner):
    return (np.asarray(inner) > t_treat).astype(np.float64)


def cancer_model(params: CancerParams | None = None) -> NestedProblem:
    """Treated-patient frequency: outer draw is the initial tumor size,
    inner draw the patient response, outer map the treatment decision
    threshold.  No analytic ground truth exists; the harness builds a
    high-budget self-reference instead."""
    params = params or CancerParams()
    return NestedProblem(
        depth=1,
        samplers=(
            FnLevel(partial(_scaled_rayleigh_sampler, params.c0_multiplier, params.c0_dist.params[0])),
            FnLevel(partial(_beta_sampler, params.xi_dist.params[0], params.xi_dist.params[1])),
        ),
        inner_fn=partial(_cancer_inner, params),
        outer_fns=(partial(_cancer_outer, params.t_treat),),
        ground_truth=None,
    )


# ---------------------------------------------------------------------------
# Delay-discounting Bayesian experimental design
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DesignPoint:
    """One question design: immediate amount A vs delayed amount B in D days."""

    A: float = 70.0
    B: float = 100.0
    Ddelay: float = 50.0

    def __post_init__(self):
        if not (self.A > 0 and self.B > 0 and self.Ddelay > 0):
            raise ParameterDomainError("design amounts and delay must be positive")


@dataclass(frozen=True)
class DDParams:
    """Participant parameters: log discount rate and comparison acuity."""

    k: float
    alpha_comp: float

    def __post_init__(self):
        if not self.alpha_comp > 0:
            raise ParameterDomainError("comparison acuity must be positive")


# Priors: k ~ normal(-4.5, 0.5); comparison acuity ~ gamma(2, 2) read in the
# shape-rate convention (mean 1).
DD_PRIOR_K = normal(-4.5, 0.5)
DD_PRIOR_ALPHA = gamma(2.0, 2.0)


def _dd_prob(k, alpha_comp, A, B, Ddelay):
    # Hyperbolic discounting with rate e^k: present value B / (1 + e^k D).
    arg = (B / (1.0 + np.exp(k) * Ddelay) - A) / alpha_comp
    return 0.01 + 0.98 * normal_cdf(arg)


def dd_response_prob(theta: DDParams, d: DesignPoint) -> float:
    """Probability of choosing the delayed option; always in [0.01, 0.99]."""
    return float(_dd_prob(theta.k, theta.alpha_comp, d.A, d.B, d.Ddelay))


@dataclass(frozen=True)
class ConstantLikelihood:
    """Test stub: a likelihood that ignores the parameters entirely."""

    p: float = 0.5

    def __call__(self, k, alpha_comp, A, B, Ddelay):
        return np.broadcast_to(np.float64(self.p), np.broadcast_shapes(np.shape(k), np.shape(alpha_comp))).copy()


def _draw_prior(stream: RandomStream, count: int):
    """(k, acuity) prior draws for ``count`` lanes, one lane per parameter pair."""
    lanes = stream.child_block(count)
    ks = DD_PRIOR_K.params[0] + DD_PRIOR_K.params[1] * lanes.normals()
    alphas = lanes.gammas(DD_PRIOR_ALPHA.params[0], DD_PRIOR_ALPHA.params[1])
    return ks, alphas


def bed_naive_eig(
    d: DesignPoint,
    N: int,
    M: int,
    stream: RandomStream,
    likelihood=None,
) -> EstimateRecord:
    """Doubly-nested estimate of the expected information gain.

    Draws M+1 parameter sets per outer sample; the extra set generates the
    outcome, the others estimate the marginal likelihood inside the log.
    The Bernoulli likelihood is bounded away from 0, so both logs are
    always finite.
    """
    N = int(N)
    M = int(M)
    if N < 1 or M < 1:
        raise ShapeError("N and M must be >= 1")
    start = time.perf_counter()
    lik = likelihood or _dd_prob
    ks, alphas = _draw_prior(stream.child(0), N * (M + 1))
    p1 = np.asarray(lik(ks, alphas, d.A, d.B, d.Ddelay)).reshape(N, M + 1)
    y = stream.child(1).child_block(N).bernoullis(p1[:, 0])
    like = np.where(y[:, None] == 1, p1, 1.0 - p1)
    value = float(np.mean(np.log(like[:, 0]) - np.log(np.mean(like[:, 1:], axis=1))))
    plan = AllocationPlan((N, M), "bed-naive")
    return EstimateRecord(value, plan, stream.base_seed, stream.path, effective_budget(plan), time.perf_counter() - start)


def bed_reformulated_eig(d: DesignPoint, N: int, stream: RandomStream, likelihood=None) -> EstimateRecord:
    """Single-expectation estimate of the expected information gain for the
    binary outcome space: per-parameter negentropy minus the entropy of the
    plugged-in marginal, with x ln x = 0 at x = 0."""
    N = int(N)
    if N < 1:
        raise ShapeError("N must be >= 1")
    start = time.perf_counter()
    lik = likelihood or _dd_prob
    ks, alphas = _draw_prior(stream.child(0), N)
    p1 = np.asarray(lik(ks, alphas, d.A, d.B, d.Ddelay))
    p0 = 1.0 - p1
    total = p1 + p0
    if np.any(np.abs(total - 1.0) > 1e-12):
        raise ParameterDomainError("outcome probabilities must sum to 1")
    per_theta = xlogx(p1) + xlogx(p0)
    m1 = float(np.mean(p1))
    value = float(np.mean(per_theta) - xlogx(m1) - xlogx(1.0 - m1))
    plan = AllocationPlan((N,), "bed-reformulated")
    return EstimateRecord(value, plan, stream.base_seed, stream.path, N, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# Importance-weighted evidence objective (toy weights)
# ---------------------------------------------------------------------------


def iwae_objective(N: int, M: int, sigma: float, stream: RandomStream) -> EstimateRecord:
    """Log-mean-weight objective with lognormal toy weights.

    Weights w = exp(sigma * eps - sigma^2 / 2) have mean exactly 1, so the
    targeted evidence ln E[w] is 0 and every estimate is a biased lower
    bound of it.
    """
    N = int(N)
    M = int(M)
    if N < 1 or M < 1:
        raise ShapeError("N and M must be >= 1")
    if not sigma >= 0:
        raise ParameterDomainError("sigma must be nonnegative")
    start = time.perf_counter()
    eps = stream.normals(N * M).reshape(N, M)
    w = np.exp(sigma * eps - 0.5 * sigma * sigma)
    value = float(np.mean(np.log(np.mean(w, axis=1))))
    plan = AllocationPlan((N, M), "iwae")
    return EstimateRecord(value, plan, stream.base_seed, stream.path, effective_budget(plan), time.perf_counter() - start)


# ---------------------------------------------------------------------------
# Uniform estimator interface and the model registry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NmcEstimator:
    """Generic nested MC estimator for a NestedProblem."""

    problem: NestedProblem

    @property
    def depth(self) -> int:
        return self.problem.depth

    def evaluate(self, plan: AllocationPlan, stream: RandomStream) -> EstimateRecord:
        return nmc_estimate(self.problem, plan, stream)


@dataclass(frozen=True)
class BedNaiveEstimator:
    design: DesignPoint = field(default_factory=DesignPoint)
    likelihood: object = None

    depth = 1

    def evaluate(self, plan: AllocationPlan, stream: RandomStream) -> EstimateRecord:
        if len(plan.counts) != 2:
            raise ShapeError("naive EIG estimator needs a 2-level plan (N, M)")
        return bed_naive_eig(self.design, plan.counts[0], plan.counts[1], stream, self.likelihood)


@dataclass(frozen=True)
class BedReformEstimator:
    design: DesignPoint = field(default_factory=DesignPoint)
    likelihood: object = None

    depth = 0

    def evaluate(self, plan: AllocationPlan, stream: RandomStream) -> EstimateRecord:
        if len(plan.counts) != 1:
            raise ShapeError("reformulated EIG estimator needs a 1-level plan (N,)")
        return bed_reformulated_eig(self.design, plan.counts[0], stream, self.likelihood)


@dataclass(frozen=True)
class IwaeEstimator:
    sigma: float = 1.0

    depth = 1

    def evaluate(self, plan: AllocationPlan, stream: RandomStream) -> EstimateRecord:
        if len(plan.counts) != 2:
            raise ShapeError("iwae estimator needs a 2-level plan (N, M)")
        return iwae_objective(plan.counts[0], plan.counts[1], self.sigma, stream)


@dataclass(frozen=True)
class ModelEntry:
    """A named estimator plus what is known about its true value."""

    name: str
    estimator: object
    depth: int
    ground_truth: float | None
    truth_note: str = ""


def registry(
    cancer_params: CancerParams | None = None,
    design: DesignPoint | None = None,
    iwae_sigma: float = 1.0,
) -> dict[str, ModelEntry]:
    """The named models exposed on the command line."""
    cp = cancer_params or CancerParams()
    dp = design or DesignPoint()
    return {
        "analytic": ModelEntry("analytic", NmcEstimator(analytic_model()), 1, ANALYTIC_TRUTH, "analytic"),
        "triple": ModelEntry("triple", NmcEstimator(triple_model(False)), 2, TRIPLE_TRUTH, "analytic"),
        "triple-mod": ModelEntry("triple-mod", NmcEstimator(triple_model(True)), 2, TRIPLE_MODIFIED_TRUTH, "analytic"),
        "cancer": ModelEntry("cancer", NmcEstimator(cancer_model(cp)), 1, None, "self-reference"),
        "bed-naive": ModelEntry("bed-naive", BedNaiveEstimator(dp), 1, None, "self-reference"),
        "bed-reform": ModelEntry("bed-reform", BedReformEstimator(dp), 0, None, "self-reference"),
        "iwae": ModelEntry("iwae", IwaeEstimator(iwae_sigma), 1, 0.0, "analytic"),
    }
