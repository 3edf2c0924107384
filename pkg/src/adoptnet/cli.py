"""Batch command-line harness.

    adoptnet simulate --scenario s.json --out runs/sim
    adoptnet analyze  --seeds 0..9 --out runs/analysis
    adoptnet compare  --seeds 0..9 --channel opinion --jobs 4 --out runs/fig4
    adoptnet gen      --seeds 0..9 --out scenarios/

Scenarios come from ``--scenario`` files or, with ``--seeds``, from the
seeded ten-community comparison preset.  Infeasible policies are reported
as rows in the outputs; only errors give a nonzero exit status.
"""
from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analysis import adoption_free_equilibrium, certify, diffused_equilibrium, r0_extremes
from .control import (
    ControlSpec,
    constant_run,
    mpc_run,
    policy_metrics,
    solve_ccp,
)
from .dynamics import Channel, simulate
from .errors import AdoptionModelError, InfeasibleAtStart, ValidationError
from .scenario_io import (
    RunResult,
    ScenarioRanges,
    figure_scenario,
    load_scenario,
    random_scenario,
    save_scenario,
    write_outputs,
)
from .control.spec import MpcConfig

COMMANDS = ("simulate", "analyze", "ccp", "mpc", "compare", "sweep", "gen")
CHANNELS = tuple(c.value for c in Channel)

# --override keys and their types
OVERRIDES = {
    "T": int,
    "N": int,
    "C": float,
    "channel": str,
    "seed": int,
    "n": int,
    "L": float,
    "Qa": float,
    "Qd": float,
    "w": float,
    "tol": float,
}


def parse_seeds(text):
    """``"a..b"`` (inclusive), ``"a,b,c"`` or a single integer."""
    try:
        if ".." in text:
            lo, hi = (int(v) for v in text.split("..", 1))
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r} (expected a..b)") from None


def parse_override(text):
    key, sep, value = text.partition("=")
    if not sep or key not in OVERRIDES:
        known = ", ".join(OVERRIDES)
        raise argparse.ArgumentTypeError(f"bad override {text!r} (keys: {known})")
    try:
        v = OVERRIDES[key](value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"override {key} needs a {OVERRIDES[key].__name__}") from None
    if key == "channel" and v not in CHANNELS:
        raise argparse.ArgumentTypeError(f"channel must be one of {', '.join(CHANNELS)}")
    if key in ("T", "seed") and v < 0 or key in ("N", "n") and v < 1:
        raise argparse.ArgumentTypeError(f"override {key}={v} out of range")
    return key, v


def build_parser():
    parser = argparse.ArgumentParser(prog="adoptnet", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--scenario", action="append", type=Path, metavar="PATH", help="scenario JSON file (repeatable)")
    src.add_argument("--seeds", type=parse_seeds, metavar="a..b", help="generated preset scenarios")
    common.add_argument("--n", type=int, default=10, help="communities per generated scenario")
    common.add_argument("--channel", choices=CHANNELS)
    common.add_argument("--budget", type=float, metavar="C")
    common.add_argument("--horizon", type=int, metavar="N")
    common.add_argument("--steps", type=int, metavar="T")
    common.add_argument("--out", type=Path, default=Path("adoptnet-out"), metavar="DIR")
    common.add_argument("--jobs", type=int, default=1, metavar="K")
    common.add_argument("--override", action="append", type=parse_override, default=[], metavar="key=value")

    p = sub.add_parser("simulate", parents=[common], help="uncontrolled or constant-control rollout")
    p.add_argument("--constant", metavar="u1,u2,...", help="constant control on --channel")
    sub.add_parser("analyze", parents=[common], help="equilibria, thresholds and certificates")
    sub.add_parser("ccp", parents=[common], help="optimal constant control policy")
    sub.add_parser("mpc", parents=[common], help="receding-horizon closed loop")
    sub.add_parser("compare", parents=[common], help="MPC vs constant policy, channel feasibility")
    p = sub.add_parser("sweep", parents=[common], help="one task per scenario in parallel workers")
    p.add_argument("--task", choices=COMMANDS[:5], default="compare")
    p = sub.add_parser("gen", parents=[common], help="write generated scenario files")
    p.add_argument("--preset", choices=("figure", "default"), default="figure")
    return parser


def _overrides(args):
    ov = dict(args.override)
    flags = {"channel": args.channel, "C": args.budget, "N": args.horizon, "T": args.steps}
    ov.update({k: v for k, v in flags.items() if v is not None})
    if "n" not in ov:
        ov["n"] = args.n
    if ov["n"] < 1:
        raise ValidationError("n must be at least 1", field="n")
    if ov.get("T", 0) < 0 or ov.get("N", 1) < 1 or ov.get("C", 0) < 0:
        raise ValidationError("steps, horizon and budget must be nonnegative (horizon positive)")
    if args.jobs < 1:
        raise ValidationError("--jobs must be positive", field="jobs")
    return ov


def apply_overrides(sc, ov):
    """Scenario with the type-checked overrides applied."""
    spec = sc.spec
    if any(k in ov for k in ("channel", "C", "L", "Qa", "Qd")):
        spec = ControlSpec.for_params(
            sc.params,
            ov.get("channel", spec.channel),
            ov.get("C", spec.budget),
            ov.get("Qa", spec.Qa),
            ov.get("Qd", spec.Qd),
            ov.get("L", spec.L),
        )
    mpc = sc.mpc
    if any(k in ov for k in ("N", "w", "tol")):
        mpc = MpcConfig(
            ov.get("N", mpc.horizon),
            ov.get("tol", mpc.terminal_tolerance),
            ov.get("w", mpc.terminal_penalty_weight),
            mpc.solver,
        )
    return replace(sc, spec=spec, mpc=mpc, T=ov.get("T", sc.T))


def scenarios(args, ov):
    """``[(name, Scenario)]`` from ``--scenario`` files or ``--seeds``."""
    if args.scenario:
        out = []
        for path in args.scenario:
            sc = load_scenario(path)
            if "seed" in ov:
                sc = replace(sc, seed=ov["seed"])
            out.append((path.stem, apply_overrides(sc, ov)))
        return out
    seeds = args.seeds if args.seeds is not None else [ov.get("seed", 0)]
    channel = ov.get("channel", "delta")
    return [
        (f"seed-{seed:03d}", apply_overrides(figure_scenario(seed, channel, ov["n"]), ov))
        for seed in seeds
    ]


# -- per-scenario work units (module level so worker processes can run them) --


def _summary(sc, channel, feasible, traj=None, controls=None):
    row = {"seed": sc.seed, "channel": Channel.parse(channel).value, "feasible": feasible}
    if traj is not None:
        total, cost = policy_metrics(traj, controls)
        row.update(total_adopters=total, control_cost=cost, final_adoption=float(traj.a[-1].sum()))
    else:
        row.update(total_adopters=float("nan"), control_cost=float("nan"), final_adoption=float("nan"))
    return row


def unit_simulate(name, sc, constant=None):
    if constant is None:
        traj = simulate(sc.s0, sc.params, sc.T)
    else:
        traj = constant_run(sc.s0, sc.params, sc.spec, constant, sc.T)
    return [RunResult(name, traj, _summary(sc, sc.spec.channel, True, traj))]


def unit_analyze(name, sc):
    p = sc.params
    free = adoption_free_equilibrium(p)
    reports = {"adoption_free": free.to_dict()}
    lo, hi = r0_extremes(p)
    if lo > 1:
        eq = certify(p, diffused_equilibrium(p, newton=True, r0_bounds=(lo, hi)))
        reports["diffused"] = eq.to_dict()
    return [RunResult(name, reports=reports)]


def _ccp(sc, channel=None):
    spec = sc.spec if channel is None else sc.with_channel(channel).spec
    return spec, solve_ccp(sc.params, spec)


def unit_ccp(name, sc):
    spec, res = _ccp(sc)
    traj = constant_run(sc.s0, sc.params, spec, res.controls, sc.T) if res.feasible else None
    return [RunResult(name, traj, _summary(sc, spec.channel, res.feasible, traj), {"ccp": res.to_dict()})]


def _mpc(sc, spec, ccp):
    """Closed-loop run toward the constant policy's equilibrium, or None."""
    if not ccp.feasible:
        return None, "constant policy infeasible"
    cfg = replace(sc.mpc, target=ccp.equilibrium, u_bar=ccp.controls)
    try:
        return mpc_run(sc.s0, sc.params, spec, cfg, sc.T), ""
    except InfeasibleAtStart as exc:
        return None, str(exc)


def _mpc_report(cl, why):
    if cl is None:
        return {"feasible": False, "message": why}
    return {
        "feasible": cl.feasible,
        "costs": cl.costs,
        "candidate_feasible": cl.candidate_feasible,
        "candidate_costs": cl.candidate_costs,
        "terminal_deviations": cl.terminal_deviations,
        "solver_converged": cl.solver_converged,
        "lost_feasibility": [str(e) for e in cl.lost_feasibility],
    }


def unit_mpc(name, sc):
    spec, ccp = _ccp(sc)
    cl, why = _mpc(sc, spec, ccp)
    traj = cl.trajectory if cl is not None else None
    row = _summary(sc, spec.channel, cl is not None and cl.feasible, traj)
    return [RunResult(name, traj, row, {"ccp": ccp.to_dict(), "mpc": _mpc_report(cl, why)})]


def unit_compare(name, sc):
    """MPC and constant-policy runs on the scenario's channel plus the
    constant policy's feasibility on every channel."""
    out = []
    channels = []
    for ch in CHANNELS:
        spec, ccp = _ccp(sc, ch)
        row = {"run": name, "seed": sc.seed, "channel": ch, "feasible": ccp.feasible}
        traj = constant_run(sc.s0, sc.params, spec, ccp.controls, sc.T) if ccp.feasible else None
        row["final_adoption"] = float(traj.a[-1].sum()) if traj is not None else float("nan")
        row["message"] = ccp.message
        channels.append(row)
        if ch != sc.spec.channel.value:
            continue
        out.append(RunResult(f"{name}/ccp", traj, _summary(sc, ch, ccp.feasible, traj), {"ccp": ccp.to_dict()}))
        cl, why = _mpc(sc, spec, ccp)
        mtraj = cl.trajectory if cl is not None else None
        out.append(RunResult(f"{name}/mpc", mtraj, _summary(sc, ch, cl is not None and cl.feasible, mtraj),
                             {"mpc": _mpc_report(cl, why)}))
    return out, channels


UNITS = {"simulate": unit_simulate, "analyze": unit_analyze, "ccp": unit_ccp, "mpc": unit_mpc}


def _run_unit(task, name, sc, extra):
    if task == "compare":
        return unit_compare(name, sc)
    if task == "simulate":
        return UNITS[task](name, sc, extra), []
    return UNITS[task](name, sc), []


def run_units(task, items, jobs, extra=None):
    """Run ``task`` on every ``(name, scenario)``; results keep input order."""
    args = [(task, name, sc, extra) for name, sc in items]
    if jobs <= 1 or len(args) <= 1:
        return [_run_unit(*a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_unit, *zip(*args)))


def _frontier(results):
    rows = []
    for res in results:
        if res.summary is None:
            continue
        run, _, policy = res.name.rpartition("/")
        rows.append({"run": run, "policy": policy, **res.summary})
    return rows


def _execute(args):
    ov = _overrides(args)
    if args.command == "gen":
        return _gen(args, ov)
    items = scenarios(args, ov)
    task = args.task if args.command == "sweep" else args.command
    extra = None
    if task == "simulate" and getattr(args, "constant", None):
        extra = np.array([float(v) for v in args.constant.split(",")])
        for _, sc in items:
            if extra.size != sc.n:
                raise ValidationError(f"--constant has {extra.size} entries, scenario has {sc.n} communities")
            if not sc.spec.is_admissible(extra):
                raise ValidationError("--constant violates the channel bounds or the budget", field="constant")
    outcome = run_units(task, items, args.jobs, extra)
    results = [r for res, _ in outcome for r in res]
    tables = {}
    if task == "compare":
        tables["channels"] = [row for _, rows in outcome for row in rows]
        tables["frontier"] = _frontier(results)
    manifest = write_outputs(results, args.out, tables, nested=args.command == "sweep")
    print(f"{args.command}: {len(items)} scenario(s), {len(manifest)} file(s) in {args.out}")
    for res in results:
        if res.summary is not None:
            s = res.summary
            print(f"  {res.name}: feasible={s['feasible']} adopters={s['total_adopters']:.6g} cost={s['control_cost']:.6g}")
    return 0


def _gen(args, ov):
    seeds = args.seeds if args.seeds is not None else [ov.get("seed", 0)]
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    for seed in seeds:
        channel = ov.get("channel", "delta")
        if args.preset == "figure":
            sc = figure_scenario(seed, channel, ov["n"])
        else:
            sc = random_scenario(ov["n"], seed, ScenarioRanges(), channel, label=f"default-seed{seed}")
        path = out / f"seed-{seed:03d}.json"
        save_scenario(apply_overrides(sc, ov), path)
        print(path)
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _execute(args)
    except (AdoptionModelError, OSError) as exc:
        print(f"adoptnet {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
