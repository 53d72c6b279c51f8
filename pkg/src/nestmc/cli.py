"""Command-line front end: estimates, sweeps, allocations, bounds, and the
experiment-specific BED and cancer drivers.

Output contract: single values go to stdout; tabular results go to CSV
files with a fixed header, dot decimals, and 17-significant-digit floats;
every CSV gets a sibling ``<name>.manifest.txt`` recording the exact
command so the file can be reproduced byte-for-byte.  Exit codes: 0
success, 1 runtime failure, 2 usage/configuration error.
"""

from __future__ import annotations

import argparse
import datetime
import json
import math
import shlex
import sys
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import __version__
from .bounds import BoundInputs, Smoothness, alpha_allocation, bound_lipschitz, bound_single_exact, bound_smooth, optimal_allocation
from .errors import NestmcError
from .harness import Strategy, SweepConfig, build_plan, convergence_sweep, empirical_mse, ladder, run_replicates
from .models import CancerParams, ConstantLikelihood, DesignPoint, NmcEstimator, cancer_model, registry
from .problem import AllocationPlan, effective_budget
from .rng import make_stream, parse_distribution

__all__ = ["main", "RunManifest"]

SWEEP_HEADER = "strategy,T,N0,N1,N2,replicates,failures,mse,bias_sq,variance,q25,q75,slope,slope_stderr"

_REFERENCE_PATH = (1 << 40,)


class UsageError(Exception):
    """Bad flags or configuration; maps to exit code 2."""


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True)
class RunManifest:
    """Reproducibility sidecar written next to every CSV."""

    command: str
    version: str
    base_seed: int
    timestamp: str
    outputs: tuple[str, ...]

    def to_text(self) -> str:
        lines = [
            f"command={self.command}",
            f"version={self.version}",
            f"base_seed={self.base_seed}",
            f"timestamp={self.timestamp}",
        ]
        lines += [f"output={p}" for p in self.outputs]
        return "\n".join(lines) + "\n"


def _write_manifest(out_path: str, argv: list[str], seed: int) -> None:
    manifest = RunManifest(
        command="nestmc " + " ".join(shlex.quote(a) for a in argv),
        version=__version__,
        base_seed=int(seed),
        timestamp=datetime.datetime.now(datetime.timezone.utc).isoformat(),
        outputs=(out_path,),
    )
    with open(out_path + ".manifest.txt", "w") as fh:
        fh.write(manifest.to_text())


def _parse_ints(text: str, flag: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise UsageError(f"{flag} expects comma-separated integers, got {text!r}") from exc


def _parse_floats(text: str, flag: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise UsageError(f"{flag} expects comma-separated numbers, got {text!r}") from exc


def _parse_ladder(text: str) -> tuple[int, ...]:
    parts = text.split(":")
    if len(parts) != 3:
        raise UsageError(f'--ladder expects "lo:hi:ratio", got {text!r}')
    lo, hi, ratio_text = parts
    ratio = math.sqrt(10.0) if ratio_text.strip() == "sqrt10" else None
    try:
        lo_v = float(lo)
        hi_v = float(hi)
        ratio_v = ratio if ratio is not None else float(ratio_text)
    except ValueError as exc:
        raise UsageError(f"cannot parse ladder {text!r}") from exc
    try:
        return ladder(lo_v, hi_v, ratio_v)
    except NestmcError as exc:
        raise UsageError(str(exc)) from exc


def _parse_strategy(text: str) -> Strategy:
    text = text.strip()
    if text in ("equal", "squared", "direct"):
        return Strategy(text)
    if text.startswith("fixed_inner:"):
        return Strategy("fixed_inner", fixed_m=int(text.split(":", 1)[1]))
    if text.startswith("alpha:"):
        return Strategy("alpha", alphas=_parse_floats(text.split(":", 1)[1], "--strategy"))
    raise UsageError(f"unknown strategy {text!r}")


def _build_registry(args) -> dict:
    cancer_kwargs = {}
    if getattr(args, "t_treat", None) is not None:
        cancer_kwargs["t_treat"] = args.t_treat
    for flag, field in (("xi_dist", "xi_dist"), ("c0_dist", "c0_dist")):
        text = getattr(args, flag, None)
        if text is not None:
            cancer_kwargs[field] = parse_distribution(text)
    design_kwargs = {}
    for flag in ("A", "B", "Ddelay"):
        value = getattr(args, flag, None)
        if value is not None:
            design_kwargs[flag] = value
    params = CancerParams(**cancer_kwargs) if cancer_kwargs else None
    design = DesignPoint(**design_kwargs) if design_kwargs else None
    return registry(cancer_params=params, design=design, iwae_sigma=getattr(args, "iwae_sigma", 1.0) or 1.0)


def _get_model(args):
    models = _build_registry(args)
    if args.model not in models:
        raise UsageError(f"unknown model {args.model!r}; choose from {', '.join(sorted(models))}")
    return models[args.model]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_estimate(args, argv) -> int:
    entry = _get_model(args)
    counts = _parse_ints(args.plan, "--plan")
    if len(counts) != entry.depth + 1:
        raise UsageError(
            f"model {entry.name!r} needs a plan with {entry.depth + 1} counts, got {len(counts)}"
        )
    plan = AllocationPlan(counts, "cli")
    record = entry.estimator.evaluate(plan, make_stream(args.seed))
    if args.format == "json":
        payload = {
            "model": entry.name,
            "value": record.value,
            "plan": list(record.plan.counts),
            "effective_budget": record.effective_budget,
            "seed": record.base_seed,
            "wall_time": record.wall_time,
        }
        print(json.dumps(payload))
    else:
        counts_text = ",".join(str(c) for c in record.plan.counts)
        print(
            f"model={entry.name} value={_fmt(record.value)} plan={counts_text} "
            f"effective_budget={record.effective_budget} seed={record.base_seed}"
        )
    return 0


def _write_sweep_csv(path: str, report) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(SWEEP_HEADER + "\n")
        for row in report.rows:
            counts = list(row.counts) + [""] * (3 - len(row.counts))
            fields = [
                row.strategy,
                str(row.total),
                *[str(c) for c in counts[:3]],
                str(row.replicates),
                str(row.failures),
                _fmt(row.mse),
                _fmt(row.bias_sq),
                _fmt(row.variance),
                _fmt(row.q25),
                _fmt(row.q75),
                _fmt(report.slope),
                _fmt(report.slope_stderr),
            ]
            fh.write(",".join(fields) + "\n")


def _cancer_reference(entry, counts, seed, workers=1):
    """Fixed-seed high-budget self-reference estimate for the cancer model."""
    plan = AllocationPlan(tuple(counts), "self-reference")
    record = entry.estimator.evaluate(plan, make_stream(seed, _REFERENCE_PATH))
    note = f"self-reference(plan={'x'.join(str(c) for c in counts)}, seed={seed})"
    return record.value, note


def cmd_sweep(args, argv) -> int:
    entry = _get_model(args)
    lad = _parse_ladder(args.ladder)
    if len(lad) < 3:
        raise UsageError("sweep ladder needs at least 3 points to fit a slope")
    strategy = _parse_strategy(args.strategy)
    truth = None
    note = ""
    if entry.ground_truth is None:
        ref_counts = _parse_ints(args.reference_plan, "--reference-plan")
        truth, note = _cancer_reference(entry, ref_counts, args.seed)
    config = SweepConfig(
        model=entry,
        strategy=strategy,
        budget_ladder=lad,
        replicates=args.replicates,
        base_seed=args.seed,
        truth=truth,
        truth_note=note,
        workers=args.workers,
    )
    report = convergence_sweep(config)
    _write_sweep_csv(args.out, report)
    _write_manifest(args.out, argv, args.seed)
    print(f"wrote {args.out} (slope={_fmt(report.slope)})")
    return 0


def cmd_alloc(args, argv) -> int:
    if args.alpha is not None:
        alphas = _parse_floats(args.alpha, "--alpha")
        plan = alpha_allocation(args.budget, alphas)
        counts = ",".join(str(c) for c in plan.counts)
        print(f"{counts} effective={effective_budget(plan)}")
        return 0
    if args.depth is None:
        raise UsageError("--depth is required unless --alpha is given")
    smoothness = Smoothness.CONTINUOUSLY_DIFFERENTIABLE if args.smooth else Smoothness.LIPSCHITZ
    plan = optimal_allocation(args.budget, args.depth, smoothness)
    rate = str(Fraction(-2, args.depth + 2) if args.smooth else Fraction(-1, args.depth + 1))
    counts = ",".join(str(c) for c in plan.counts)
    print(f"{counts} rate={rate} effective={effective_budget(plan)}")
    return 0


def cmd_bound(args, argv) -> int:
    K = _parse_floats(args.K, "--K")
    sigma = _parse_floats(args.sigma, "--sigma")
    C = _parse_floats(args.C, "--C") if args.C is not None else None
    counts = _parse_ints(args.plan, "--plan")
    depth = len(K)
    inputs = BoundInputs(depth=depth, lipschitz_K=K, sigma=sigma, second_deriv_C=C)
    if args.smooth and C is None:
        raise UsageError("--smooth requires --C")
    plan = AllocationPlan(counts, "cli")
    if args.exact_single:
        if len(counts) != 2:
            raise UsageError("--exact-single needs a 2-level plan")
        smoothness = Smoothness.CONTINUOUSLY_DIFFERENTIABLE if args.smooth else Smoothness.LIPSCHITZ
        value = bound_single_exact(inputs, counts[0], counts[1], smoothness)
    elif args.smooth:
        value = bound_smooth(inputs, plan)
    else:
        value = bound_lipschitz(inputs, plan)
    print(format(value, ".12g"))
    return 0


def _parse_grid(text: str, flag: str) -> tuple[float, ...]:
    parts = text.split(":")
    if len(parts) != 3:
        raise UsageError(f'{flag} expects "lo:hi:step", got {text!r}')
    try:
        lo, hi, step = (float(p) for p in parts)
    except ValueError as exc:
        raise UsageError(f"cannot parse grid {text!r}") from exc
    if step <= 0 or hi < lo:
        raise UsageError(f"bad grid {text!r}")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return tuple(lo + i * step for i in range(n))


def cmd_bed(args, argv) -> int:
    if args.estimator == "naive" and args.M is None:
        raise UsageError("the naive estimator requires --M")
    if args.A is None and args.A_grid is None:
        raise UsageError("provide --A or --A-grid")
    grid = (args.A,) if args.A is not None else _parse_grid(args.A_grid, "--A-grid")
    likelihood = ConstantLikelihood(args.stub_p) if args.stub_p is not None else None
    rows = []
    from .models import BedNaiveEstimator, BedReformEstimator

    for a_value in grid:
        design = DesignPoint(A=float(a_value), B=args.B, Ddelay=args.Ddelay)
        if args.estimator == "naive":
            estimator = BedNaiveEstimator(design, likelihood)
            plan = AllocationPlan((args.N, args.M), "bed-naive")
        else:
            estimator = BedReformEstimator(design, likelihood)
            plan = AllocationPlan((args.N,), "bed-reformulated")
        records, _ = run_replicates(estimator, plan, args.replicates, args.seed, args.workers)
        for r_index, record in enumerate(records):
            rows.append((float(a_value), r_index, record.value))
    with open(args.out, "w", newline="") as fh:
        fh.write("A,replicate,estimate\n")
        for a_value, r_index, value in rows:
            fh.write(f"{_fmt(a_value)},{r_index},{_fmt(value)}\n")
    _write_manifest(args.out, argv, args.seed)
    print(f"wrote {args.out}")
    return 0


def cmd_cancer(args, argv) -> int:
    if (args.t_treat is None) == (args.t_treat_grid is None):
        raise UsageError("provide exactly one of --t-treat or --t-treat-grid")
    n_counts = _parse_ints(args.plan, "--plan")
    if len(n_counts) != 2:
        raise UsageError("--plan expects N,M")
    base = CancerParams()
    if args.t_treat is not None and args.ladder is not None:
        # Convergence mode: identical schema to cmd_sweep.
        args.model = "cancer"
        args.reference_plan = args.reference_plan or "1000,1000"
        args.strategy = args.strategy or "equal"
        return cmd_sweep(args, argv)
    grid = _parse_grid(args.t_treat_grid, "--t-treat-grid") if args.t_treat_grid else (args.t_treat,)
    if any(not 0.0 <= t <= 1.0 for t in grid):
        raise UsageError("treatment thresholds must lie in [0, 1]")
    rows = []
    for t_treat in grid:
        params = CancerParams(
            t_treat=float(t_treat),
            xi_dist=parse_distribution(args.xi_dist) if args.xi_dist else base.xi_dist,
            c0_dist=parse_distribution(args.c0_dist) if args.c0_dist else base.c0_dist,
        )
        estimator = NmcEstimator(cancer_model(params))
        plan = AllocationPlan(n_counts, "cancer")
        records, _ = run_replicates(estimator, plan, args.replicates, args.seed, args.workers)
        values = np.asarray([r.value for r in records], dtype=np.float64)
        mean = float(values.mean())
        se = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
        q25, q75 = (float(q) for q in np.quantile(values, [0.25, 0.75]))
        rows.append((float(t_treat), values.size, mean, se, q25, q75))
    with open(args.out, "w", newline="") as fh:
        fh.write("t_treat,replicates,mean,se,q25,q75\n")
        for t_treat, n, mean, se, q25, q75 in rows:
            fh.write(f"{_fmt(t_treat)},{n},{_fmt(mean)},{_fmt(se)},{_fmt(q25)},{_fmt(q75)}\n")
    _write_manifest(args.out, argv, args.seed)
    # Means must trend non-increasing in the threshold (2-SE slack per point).
    for (t0, _, m0, s0, *_), (t1, _, m1, s1, *_) in zip(rows, rows[1:]):
        if m1 - m0 > 2.0 * (s0 + s1):
            print(
                f"error: mean I(T_treat) increased from {m0:.6g} at {t0:g} to {m1:.6g} at {t1:g}",
                file=sys.stderr,
            )
            return 1
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--t-treat", dest="t_treat", type=float, default=None, help="cancer treatment threshold")
    p.add_argument("--xi-dist", dest="xi_dist", default=None, help='patient response law, e.g. "beta(5,2)"')
    p.add_argument("--c0-dist", dest="c0_dist", default=None, help='initial size law, e.g. "rayleigh(10)"')
    p.add_argument("--A", type=float, default=None, help="immediate amount of the question design")
    p.add_argument("--B", type=float, default=None, help="delayed amount of the question design")
    p.add_argument("--Ddelay", type=float, default=None, help="delay in days of the question design")
    p.add_argument("--iwae-sigma", dest="iwae_sigma", type=float, default=None, help="toy weight spread")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nestmc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="one estimator evaluation")
    p.add_argument("--model", required=True)
    p.add_argument("--plan", required=True, help='comma-separated counts, e.g. "10000,100"')
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--format", choices=("text", "json"), default="text")
    _add_common_model_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("sweep", help="replicated convergence sweep to CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--strategy", required=True, help="equal | squared | fixed_inner:M | alpha:a1,a2")
    p.add_argument("--ladder", required=True, help='budget ladder "lo:hi:ratio" (ratio may be sqrt10)')
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--reference-plan", dest="reference_plan", default="1000,1000")
    _add_common_model_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("alloc", help="optimal or alpha-parameterized allocation")
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--depth", type=int, default=None)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--smooth", action="store_true")
    g.add_argument("--lipschitz", action="store_true")
    p.add_argument("--alpha", default=None, help='comma-separated exponents, e.g. "0.5,0.5"')
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_alloc)

    p = sub.add_parser("bound", help="evaluate a finite-sample MSE bound")
    p.add_argument("--K", required=True, help="comma-separated Lipschitz constants")
    p.add_argument("--C", default=None, help="comma-separated curvature bounds")
    p.add_argument("--sigma", required=True, help="comma-separated per-level noise scales")
    p.add_argument("--plan", required=True, help="comma-separated counts")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--smooth", action="store_true")
    g.add_argument("--lipschitz", action="store_true")
    p.add_argument("--exact-single", dest="exact_single", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("bed", help="expected-information-gain estimates to CSV")
    p.add_argument("--A", type=float, default=None)
    p.add_argument("--A-grid", dest="A_grid", default=None, help='grid "lo:hi:step"')
    p.add_argument("--estimator", choices=("naive", "reform"), required=True)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--M", type=int, default=None)
    p.add_argument("--B", type=float, default=100.0)
    p.add_argument("--Ddelay", type=float, default=50.0)
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--stub-p", dest="stub_p", type=float, default=None, help="constant-likelihood stub")
    p.set_defaults(func=cmd_bed)

    p = sub.add_parser("cancer", help="treatment-threshold curve or convergence CSV")
    p.add_argument("--t-treat", dest="t_treat", type=float, default=None)
    p.add_argument("--t-treat-grid", dest="t_treat_grid", default=None, help='grid "lo:hi:step"')
    p.add_argument("--plan", required=True, help='counts "N,M"')
    p.add_argument("--replicates", type=int, default=8)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--ladder", default=None, help="run a convergence sweep instead of the grid")
    p.add_argument("--strategy", default=None)
    p.add_argument("--reference-plan", dest="reference_plan", default=None)
    p.add_argument("--xi-dist", dest="xi_dist", default=None)
    p.add_argument("--c0-dist", dest="c0_dist", default=None)
    p.set_defaults(func=cmd_cancer)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 2
    try:
        return args.func(args, argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NestmcError as exc:
        if isinstance(exc, (ValueError, OverflowError)):
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
