"""Command-line interface: loads, stability optimization, sweeps, latency, simulation, figure data.

Exit codes: 0 success, 2 invalid input, 3 numerical failure (instability,
diverging moments, quadrature that does not converge).
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .functionals import QuadratureError
from .latency import InfiniteMomentError, UnstableError, latency_policy, optimize_latency
from .load import load_policy
from .model import (INF, KnownSizesRule, PolicySpec, ScenarioError, ThresholdMatrix, ThresholdVector,
                    effective_assignment, load_scenario_file, policy_to_dict)
from .stability import AXES, FAMILIES, STABILITY_COLUMNS, GridSpec, optimize_stability, sweep

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3
_KNOWLEDGE = {"unknown": "unknown", "partly": "partly_known", "partly_known": "partly_known", "known": "known"}
_POLICIES = {"zero": "zero_redundancy", "full": "full_redundancy", "rerouting": "rerouting",
             "replication": "replication"}


def _threshold(s: str) -> float:
    if s.strip().lower() in ("inf", "infinity"):
        return INF
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"threshold must be a number or 'inf', got {s!r}") from None
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"threshold must be nonnegative, got {s!r}")
    return v


def _count(s: str) -> int:
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a count, got {s!r}") from None
    if v < 1 or v != int(v):
        raise argparse.ArgumentTypeError(f"expected a positive whole count, got {s!r}")
    return int(v)


def _tau_matrix(s: str):
    rows = [[_threshold(v) for v in row.split(",") if v.strip()] for row in s.split(";")]
    if len(rows) != 2:
        raise argparse.ArgumentTypeError("--tau-matrix needs two rows separated by ';'")
    return tuple(tuple(r) for r in rows)


def _jsonable(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    return x


def _dump(obj):
    print(json.dumps(_jsonable(obj), indent=2))


def _fmt(x):
    return "inf" if isinstance(x, float) and math.isinf(x) else f"{x:.6g}"


# -- argument groups ----------------------------------------------------------

def _add_policy_args(p, policy_required=False):
    g = p.add_argument_group("policy")
    g.add_argument("--policy", choices=sorted(_POLICIES), required=policy_required,
                   help="policy kind; defaults to the first policy in the scenario file")
    g.add_argument("--tau", nargs=2, type=_threshold, metavar=("T1", "T2"),
                   help="per-pool thresholds, numbers or 'inf'")
    g.add_argument("--tau-matrix", type=_tau_matrix, metavar="ROWS",
                   help="multi-threshold rerouting, e.g. '5,8,30;2,4,9' (one row per starting pool)")
    g.add_argument("--q", type=float, help="probability of sending a job to pool 1 (unknown types)")
    g.add_argument("--q-per-type", nargs="+", type=float, metavar="Q",
                   help="per (believed) type probability of pool 1")
    g.add_argument("--knowledge", choices=sorted(set(_KNOWLEDGE) - {"partly_known"}), default=None,
                   help="type knowledge regime")
    g.add_argument("--carry-over", action="store_true", help="keep processed work when rerouting or replicating")
    g.add_argument("--known-sizes", choices=("constant", "rational", "rational_floor", "best"),
                   help="per-job threshold rule when job sizes are known")
    g.add_argument("--order", nargs=2, type=int, metavar=("S1", "S2"), default=(1, 1),
                   help="order statistic per pool for the rational rule")
    g.add_argument("--weight", type=float, default=0.5, help="pool-1 weight for the best rule")


def _add_grid_args(p):
    g = p.add_argument_group("grid")
    g.add_argument("--grid-q-step", type=float, default=GridSpec.q_step)
    g.add_argument("--grid-tau-points", type=int, default=GridSpec.tau_points)
    g.add_argument("--grid-refine-passes", type=int, default=GridSpec.refine_passes)


def _grid(args) -> GridSpec:
    if not 0 < args.grid_q_step <= 1 or args.grid_tau_points < 1 or args.grid_refine_passes < 0:
        raise ScenarioError("grid flags must be positive (q step in (0, 1])")
    return GridSpec(q_step=args.grid_q_step, tau_points=args.grid_tau_points,
                    refine_passes=args.grid_refine_passes)


def _scenario(path):
    return load_scenario_file(path)


def _build_policy(args, scenario, file_policies) -> PolicySpec:
    if args.policy is None:
        if file_policies:
            return file_policies[0]
        raise ScenarioError("no --policy given and the scenario file lists none")
    kind = _POLICIES[args.policy]
    knowledge = _KNOWLEDGE[args.knowledge or ("unknown" if args.q_per_type is None else "known")]
    if args.q is not None and args.q_per_type is not None:
        raise ScenarioError("give either --q or --q-per-type, not both")
    if knowledge == "unknown":
        if args.q_per_type is not None:
            raise ScenarioError("--q-per-type needs --knowledge partly or known")
        q = 0.5 if args.q is None else args.q
    else:
        if args.q_per_type is None:
            raise ScenarioError(f"--knowledge {args.knowledge} needs --q-per-type")
        q = tuple(args.q_per_type)
    assignment = effective_assignment(scenario, q, knowledge)
    if args.tau_matrix is not None:
        if kind != "rerouting":
            raise ScenarioError("--tau-matrix applies to rerouting only")
        thresholds = ThresholdMatrix(args.tau_matrix)
    elif kind == "zero_redundancy":
        thresholds = ThresholdVector((INF, INF))
    elif kind == "full_redundancy":
        thresholds = ThresholdVector((0.0, 0.0))
    else:
        if args.tau is None:
            raise ScenarioError(f"--policy {args.policy} needs --tau")
        thresholds = ThresholdVector(tuple(args.tau))
    rule = None
    if args.known_sizes is not None:
        rule = KnownSizesRule(args.known_sizes, tuple(args.order), args.weight)
    policy = PolicySpec(kind, assignment, thresholds, args.carry_over, rule)
    errs = policy.errors(scenario.n_types)
    if errs:
        raise ScenarioError(errs)
    return policy


# -- commands -----------------------------------------------------------------

def cmd_load(args):
    scenario, pols = _scenario(args.scenario)
    policy = _build_policy(args, scenario, pols)
    rep = load_policy(scenario, policy, args.lam)
    if args.json:
        _dump({"policy": policy_to_dict(policy), **rep.as_dict()})
        return EXIT_OK
    for i, b in enumerate(rep.expected_B):
        print(f"E[B_{i + 1}] = {_fmt(b)}")
    if args.lam is not None:
        for i, r in enumerate(rep.rho):
            print(f"rho_{i + 1} = {_fmt(r)}")
    print(f"lambda_max = {_fmt(rep.lambda_max)}")
    return EXIT_OK


def cmd_optimize(args):
    scenario, _ = _scenario(args.scenario)
    res = optimize_stability(scenario, args.family, _KNOWLEDGE[args.knowledge or "unknown"], _grid(args))
    if args.json:
        _dump(res.as_dict())
        return EXIT_OK
    print(f"family = {res.family}")
    print(f"knowledge = {res.knowledge}")
    print(f"lambda_max = {_fmt(res.best_value)}")
    print(f"policy = {json.dumps(_jsonable(policy_to_dict(res.best_policy)))}")
    return EXIT_OK


def _values(args):
    if args.values:
        return sorted(args.values)
    if args.range:
        lo, hi, step = args.range
        if step <= 0 or hi < lo:
            raise ScenarioError("--range needs lo <= hi and a positive step")
        n = int(round((hi - lo) / step))
        return [round(lo + k * step, 10) for k in range(n + 1)]
    raise ScenarioError("give --values or --range")


def _write_table(table, out):
    text = table.to_csv(out)
    if out is None:
        sys.stdout.write(text)
    else:
        print(f"wrote {out}", file=sys.stderr)


def cmd_sweep(args):
    scenario, _ = _scenario(args.scenario)
    knowledge = None if args.knowledge is None else _KNOWLEDGE[args.knowledge]
    table = sweep(scenario, args.axis, _values(args), args.families, knowledge, _grid(args))
    _write_table(table, args.out)
    return EXIT_OK


def cmd_latency(args):
    scenario, pols = _scenario(args.scenario)
    if args.optimize:
        res = optimize_latency(scenario, args.optimize, args.lam, _grid(args),
                               _KNOWLEDGE[args.knowledge or "unknown"], args.conditioned)
        policy = res.best_policy
    else:
        policy = _build_policy(args, scenario, pols)
    rep = latency_policy(scenario, policy, args.lam, args.conditioned)
    if args.json:
        _dump({"policy": policy_to_dict(policy), **rep.as_dict()})
        return EXIT_OK
    for i in (0, 1):
        print(f"E[T_{i + 1}] = {_fmt(rep.per_pool[i])}  (wait {_fmt(rep.waiting[i])}, "
              f"service {_fmt(rep.service[i])}, rho {_fmt(rep.rho[i])})")
    print(f"E[T] = {_fmt(rep.overall)}")
    if args.optimize:
        print(f"policy = {json.dumps(_jsonable(policy_to_dict(policy)))}")
    return EXIT_OK


def cmd_simulate(args):
    from .sim import SimConfig, run
    scenario, pols = _scenario(args.scenario)
    policy = _build_policy(args, scenario, pols)
    cfg = SimConfig(scenario, policy, args.lam, horizon=args.arrivals, seed=args.seed,
                    warmup_fraction=args.warmup, batches=args.batches, trace_path=args.trace,
                    check_invariants=args.check)
    rep = run(cfg)
    if args.json:
        _dump({"policy": policy_to_dict(policy), "lambda": args.lam, "seed": args.seed, **rep.as_dict()})
        return EXIT_OK
    for i in (0, 1):
        print(f"utilization_{i + 1} = {rep.utilization[i]:.6g} +- {rep.utilization_ci[i]:.3g}")
    print(f"mean_latency = {rep.mean_latency:.6g} +- {rep.latency_ci:.3g}")
    print(f"reroutes = {rep.reroute_count}, replications = {rep.replicate_count}, "
          f"preemptions = {rep.preemption_count}, waits_after_replication = {rep.wait_after_replication_count}")
    print(f"completed = {rep.completed} of {rep.arrivals}{'  (queue grows: unstable)' if rep.unstable else ''}")
    return EXIT_OK


def cmd_figure(args):
    from .figures import FIGURES, resolve, run_figure
    if args.list:
        for name, fig in FIGURES.items():
            print(f"{name}: {fig.note}")
        return EXIT_OK
    if not args.name:
        raise ScenarioError("give a figure name (or --list)")
    names = resolve(args.name)
    for name in names:
        table = run_figure(name, _grid(args), seed=args.seed, arrivals=args.arrivals)
        if args.out is None:
            out = None
        elif len(names) > 1 or Path(args.out).is_dir():
            Path(args.out).mkdir(parents=True, exist_ok=True)
            out = str(Path(args.out) / f"{name}.csv")
        else:
            out = args.out
        _write_table(table, out)
    return EXIT_OK


def cmd_scenarios(args):
    from .figures import write_scenarios
    for p in write_scenarios(args.directory):
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="affinityq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("load", help="expected work per job and stability bound of one policy")
    p.add_argument("scenario")
    _add_policy_args(p)
    p.add_argument("--lambda", dest="lam", type=float, help="arrival rate for the effective loads")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_load)

    p = sub.add_parser("optimize", help="maximize the stability bound over a policy family")
    p.add_argument("scenario")
    p.add_argument("--family", required=True, choices=FAMILIES + ("zero_redundancy", "full_redundancy"))
    p.add_argument("--knowledge", choices=("unknown", "partly", "known"))
    _add_grid_args(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("sweep", help="optimized stability bounds along one scenario parameter")
    p.add_argument("scenario")
    p.add_argument("--axis", required=True, choices=AXES)
    p.add_argument("--values", nargs="+", type=float)
    p.add_argument("--range", nargs=3, type=float, metavar=("LO", "HI", "STEP"))
    p.add_argument("--families", nargs="+", default=list(STABILITY_COLUMNS),
                   help="figure columns (KT KS Rep FRed Rer ZRed) or family names")
    p.add_argument("--knowledge", choices=("unknown", "partly", "known"))
    _add_grid_args(p)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("latency", help="mean latency approximation (one server per pool)")
    p.add_argument("scenario")
    _add_policy_args(p)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--conditioned", action="store_true",
                   help="average service over the type mix started on each pool")
    p.add_argument("--optimize", choices=("rerouting", "replication", "zero", "full"),
                   help="minimize over the family instead of evaluating --policy")
    _add_grid_args(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_latency)

    p = sub.add_parser("simulate", help="discrete-event simulation of one policy")
    p.add_argument("scenario")
    _add_policy_args(p)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--arrivals", type=_count, default=200_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--warmup", type=float, default=0.2)
    p.add_argument("--batches", type=int, default=20)
    p.add_argument("--trace", help="write an event trace CSV here")
    p.add_argument("--check", action="store_true", help="verify queue invariants after every event")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("figure", help="data for a named figure as CSV")
    p.add_argument("name", nargs="?")
    p.add_argument("--list", action="store_true")
    p.add_argument("--out", help="CSV path, or a directory when the name covers several panels")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--arrivals", type=_count, default=200_000, help="simulated arrivals per latency point")
    _add_grid_args(p)
    p.set_defaults(func=cmd_figure)

    p = sub.add_parser("scenarios", help="write the figure scenario files")
    p.add_argument("directory")
    p.set_defaults(func=cmd_scenarios)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (UnstableError, InfiniteMomentError, QuadratureError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
