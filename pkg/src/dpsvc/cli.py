"""Command-line interface: ``dpsvc {schedule,compose,run,sweep,lemma1}``.

Exit status: 0 success, 1 usage error, 2 infeasible schedule, 3 failed
property check, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import re
import sys
from dataclasses import asdict

from . import harness
from .accounting import (
    PrivacyBudget,
    advanced_compose,
    basic_compose,
    build_schedule,
    format_schedule,
    get_constants,
    schedule_csv,
)
from .exceptions import InfeasibleScheduleError, InvalidParameterError

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_PROPERTY, EXIT_IO = 0, 1, 2, 3, 4

_DELTA_RE = re.compile(r"^\s*(2|e)\s*\^\s*\(?\s*(-?\d+(?:\.\d+)?)\s*\)?\s*$")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_delta(text):
    """Parse ``0.001``, ``2^-20`` or ``e^-10``."""
    m = _DELTA_RE.match(text)
    if m:
        base, exp = m.groups()
        exp = float(exp)
        if base == "2":
            return math.ldexp(1.0, int(exp)) if exp.is_integer() else 2.0**exp
        return math.exp(exp)
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse delta {text!r}; use a decimal, 2^-N or e^-N") from None


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _int_list(text):
    return [_positive_int(t) for t in text.split(",") if t.strip()]


def _float_list(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _delta_list(text):
    return [parse_delta(t) for t in text.split(",") if t.strip()]


def _add_constants(p):
    g = p.add_argument_group("constants")
    g.add_argument("--profile", choices=["paper", "practical"], default="paper",
                   help="constants profile: 'paper' (default) or 'practical' (desk-scale)")
    g.add_argument("--eps0-divisor", type=float, help="D in eps0 = epsilon / (D sqrt(ln 1/delta)); dimensionless")
    g.add_argument("--w-multiplier", type=float, help="C in w_l = C ln(F k / m_l) / eps_l; dimensionless")
    g.add_argument("--c-frac", type=float, help="c_sv = c_frac * k / (ln k)^10 corrections in the final pass")
    g.add_argument("--alpha-mult", type=float, help="alpha_sv = alpha_mult * bound(k, epsilon, delta)")
    g.add_argument("--m-min", type=float, help="drop stages whose target kappa^l k is below this count")


def _constants(args):
    names = {"eps0_divisor", "w_multiplier", "c_frac", "alpha_mult", "m_min"}
    overrides = {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}
    return get_constants(args.profile, **overrides)


def _add_budget(p):
    p.add_argument("k", type=int, help="number of queries (>= 2)")
    p.add_argument("epsilon", type=float, help="privacy parameter epsilon, in (0, 1]")
    p.add_argument("delta", type=parse_delta, help="privacy parameter delta, in (0, 1/2]; decimal, 2^-N or e^-N")


def _add_trials(p, default_trials):
    p.add_argument("--trials", type=_positive_int, default=default_trials, help="Monte Carlo trials per cell")
    p.add_argument("--seed", type=int, default=0, help="master seed (non-negative integer)")
    p.add_argument("--jobs", type=_positive_int, default=None,
                   help="worker processes; default from DPSVC_JOBS, else 1")
    p.add_argument("--workload", default="zeros",
                   help="zeros | uniform:LOW:HIGH | adversarial_spread (errors do not depend on it)")


def _add_output(p, default_output):
    p.add_argument("--output", "-o", default=default_output, help="path of the per-trial result rows (CSV)")
    p.add_argument("--summary", default=None, help="also write summary rows (CSV) to this path")
    p.add_argument("--format", choices=["table", "csv"], default="table", help="format of the summary on stdout")


def build_parser():
    p = _Parser(prog="dpsvc", description="Private release of k sensitivity-1 query answers with iterative sparse-vector correction.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("schedule", help="print the stage schedule and its privacy budget chain")
    _add_budget(s)
    _add_constants(s)
    s.add_argument("--format", choices=["table", "csv"], default="table")
    s.add_argument("--output", "-o", default=None, help="write to this path instead of stdout")

    c = sub.add_parser("compose", help="composition calculator")
    csub = c.add_subparsers(dest="rule", required=True, parser_class=_Parser)
    cb = csub.add_parser("basic", help="sum of (epsilon, delta) pairs: basic EPS1 DELTA1 EPS2 DELTA2 ...")
    cb.add_argument("values", nargs="*", help="alternating epsilon and delta values")
    ca = csub.add_parser("advanced", help="m-fold composition of an epsilon-DP mechanism at slack delta'")
    ca.add_argument("m", type=int, help="number of mechanisms")
    ca.add_argument("epsilon", type=float, help="per-mechanism epsilon")
    ca.add_argument("delta_prime", type=parse_delta, help="slack delta' in (0, 1)")

    r = sub.add_parser("run", help="repeated trials of one mechanism")
    r.add_argument("mechanism", choices=harness.MECHANISMS)
    _add_budget(r)
    _add_trials(r, 10)
    _add_constants(r)
    _add_output(r, "results.csv")

    w = sub.add_parser("sweep", help="trials over a grid of mechanisms x k x epsilon x delta")
    w.add_argument("--mechanisms", default="iterative,gaussian,laplace",
                   help=f"comma-separated subset of {','.join(harness.MECHANISMS)}")
    w.add_argument("--k", type=_int_list, default=[1024, 4096], help="comma-separated query counts")
    w.add_argument("--epsilon", type=_float_list, default=[1.0], help="comma-separated epsilons")
    w.add_argument("--delta", type=_delta_list, default=[2.0**-20], help="comma-separated deltas")
    _add_trials(w, 10)
    _add_constants(w)
    _add_output(w, "sweep.csv")

    m = sub.add_parser("lemma1", help="success rate of permuted AboveThreshold on a planted instance")
    m.add_argument("--k", type=_positive_int, default=100_000, help="number of queries")
    m.add_argument("--gamma", type=float, default=0.01, help="claimed fraction of good coordinates")
    m.add_argument("--good", type=int, default=1000, help="number of good coordinates (gap T + w)")
    m.add_argument("--bad", type=int, default=500, help="number of bad coordinates (gap inside (T - w, T + w))")
    m.add_argument("--epsilon", type=float, default=1.0, help="selector budget")
    m.add_argument("--T", type=float, default=100.0, help="threshold, in query units")
    m.add_argument("--w", type=float, default=None, help="margin, in query units; default (8/epsilon) ln(400/gamma)")
    m.add_argument("--trials", type=_positive_int, default=2000)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--slack", type=float, default=0.02, help="fail if the lower Wilson bound is below 0.6 - slack")
    m.add_argument("--zero", action="store_true", help="zero noise and identity permutation")
    m.add_argument("--jobs", type=_positive_int, default=None, help="worker processes; default from DPSVC_JOBS, else 1")
    return p


def _workload_args(text):
    parts = text.split(":")
    if parts[0] == "uniform":
        if len(parts) not in (1, 3):
            raise UsageError(f"malformed workload {text!r}; use uniform:LOW:HIGH")
        low, high = (float(parts[1]), float(parts[2])) if len(parts) == 3 else (0.0, 1.0)
        return "uniform", low, high
    if len(parts) != 1:
        raise UsageError(f"malformed workload {text!r}")
    return parts[0], 0.0, 1.0


def _jobs(args):
    return args.jobs if args.jobs is not None else harness.default_jobs()


def _write(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _print_summaries(summaries, fmt, out):
    if fmt == "csv":
        out.write(harness.summary_csv(summaries))
        return
    head = f"{'mechanism':<10} {'k':>8} {'epsilon':>8} {'delta':>10} {'trials':>6} {'mean_linf':>12} {'median':>12} {'p95':>12} {'mean_ratio':>10} {'fail':>6}"
    out.write(head + "\n")
    for s in summaries:
        out.write(
            f"{s.mechanism:<10} {s.k:>8} {s.epsilon:>8.4g} {s.delta:>10.4g} {s.trials:>6} "
            f"{s.mean_linf:>12.6g} {s.median_linf:>12.6g} {s.p95_linf:>12.6g} {s.mean_ratio:>10.4g} {s.fail_freq:>6.3f}\n"
        )
        for trial, err in s.failures:
            out.write(f"  trial {trial} failed: {err}\n")


def _sweep(args, grid, out):
    kind, low, high = _workload_args(args.workload)
    c = _constants(args)
    for mech, k, eps, delta in grid:
        harness.trace_schedule(mech, k, PrivacyBudget(eps, delta), c)
    # Fail on an unwritable path before spending the compute.
    with open(args.output, "w"):
        pass
    summaries, reports = harness.run_sweep(
        grid, args.trials, args.seed, _jobs(args), c, kind, return_reports=True, workload_range=(low, high),
    )
    _write(args.output, harness.results_csv(reports))
    meta = {
        "profile": c.name,
        "constants": {k: v for k, v in asdict(c).items() if k != "name"},
        "seed": args.seed,
        "trials": args.trials,
        "workload": args.workload,
    }
    _write(args.output + ".meta.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    if args.summary:
        _write(args.summary, harness.summary_csv(summaries))
    out.write(f"profile {c.name}; results in {args.output}\n")
    _print_summaries(summaries, args.format, out)
    failed = [r for r in reports if r.error is not None]
    return EXIT_OK if not failed else EXIT_PROPERTY


def cmd_schedule(args, out):
    budget = PrivacyBudget(args.epsilon, args.delta)
    sched = build_schedule(args.k, budget, _constants(args))
    text = format_schedule(sched) if args.format == "table" else schedule_csv(sched)
    if args.output:
        _write(args.output, text)
    else:
        out.write(text)
    return EXIT_OK


def cmd_compose(args, out):
    if args.rule == "basic":
        vals = args.values
        if len(vals) % 2:
            raise UsageError("basic composition needs epsilon/delta pairs")
        pairs = [(float(vals[i]), parse_delta(vals[i + 1])) for i in range(0, len(vals), 2)]
        e, d = basic_compose(pairs)
        out.write(f"{e:.10g} {d:.10g}\n")
    else:
        out.write(f"{advanced_compose(args.m, args.epsilon, args.delta_prime):.10g}\n")
    return EXIT_OK


def cmd_run(args, out):
    return _sweep(args, [(args.mechanism, args.k, args.epsilon, args.delta)], out)


def cmd_sweep(args, out):
    mechs = [m.strip() for m in args.mechanisms.split(",") if m.strip()]
    for m in mechs:
        if m not in harness.MECHANISMS:
            raise UsageError(f"unknown mechanism {m!r}; choose from {', '.join(harness.MECHANISMS)}")
    grid = [(m, k, e, d) for m in mechs for k in args.k for e in args.epsilon for d in args.delta]
    return _sweep(args, grid, out)


def cmd_lemma1(args, out):
    if args.good < 0 or args.bad < 0 or args.good + args.bad > args.k:
        raise UsageError(f"cannot place {args.good} good and {args.bad} bad coordinates among k={args.k}")
    if not (0.0 < args.gamma <= 1.0):
        raise UsageError(f"gamma must lie in (0, 1], got {args.gamma}")
    res = harness.selector_experiment(
        args.k, args.good, args.bad, args.gamma, args.epsilon, args.T, args.w,
        args.trials, args.seed, "zero" if args.zero else "random", _jobs(args),
    )
    for name in res.violated:
        sys.stderr.write(f"warning: precondition violated: {name}\n")
    out.write(f"k={res.k} good={res.n_good} bad={res.n_bad} gamma={res.gamma:g} epsilon={res.epsilon:g} T={res.T:g} w={res.w:.6g}\n")
    out.write(f"success {res.successes}/{res.trials} = {res.rate:.4f}  95% Wilson CI [{res.ci_low:.4f}, {res.ci_high:.4f}]\n")
    if res.conditions_hold and res.ci_low < 0.6 - args.slack:
        out.write(f"FAIL: lower bound {res.ci_low:.4f} < {0.6 - args.slack:.4f}\n")
        return EXIT_PROPERTY
    return EXIT_OK


_COMMANDS = {"schedule": cmd_schedule, "compose": cmd_compose, "run": cmd_run, "sweep": cmd_sweep, "lemma1": cmd_lemma1}


def main(argv=None, out=None):
    out = out if out is not None else sys.stdout
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args, out)
    except SystemExit as exc:  # --help
        return exc.code if isinstance(exc.code, int) else EXIT_OK
    except UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    except InfeasibleScheduleError as exc:
        sys.stderr.write(f"infeasible schedule: {exc}\n")
        return EXIT_INFEASIBLE
    except InvalidParameterError as exc:
        sys.stderr.write(f"invalid parameter: {exc}\n")
        return EXIT_USAGE
    except OSError as exc:
        sys.stderr.write(f"I/O error: {exc.filename or ''}: {exc.strerror or exc}\n")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
