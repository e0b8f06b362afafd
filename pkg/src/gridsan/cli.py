"""Command-line front end.

    gridsan powerflow --grid fig2.json --method nr
    gridsan --seed 42 --batches 100 simulate fig2_timing20.json
    gridsan --batches 1000 bench-compose --n 10 100 --d 1 --strategies ss darep
    gridsan check --filter powerflow

Global flags may be given before or after the subcommand. Exit codes: 0 on
success, 1 on input errors, 2 when the power flow does not converge, 3 when a
self-check fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGENCE, EXIT_CHECK = 0, 1, 2, 3

# Reference Delta(k) values (seconds, k = 1000 batches) reported for the original
# tool; printed for orientation only since tool and hardware differ.
REFERENCE_DELTA = (
    ("ss", 10, 1, 0.087),
    ("ss", 1000, 500, 1754.996),
    ("darep", 1000, 1, 104.939),
)


class InputError(Exception):
    """Bad flags or unreadable input files; reported with exit code 1."""


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(0), help="master seed (default 0)")
    parser.add_argument("--batches", type=int, default=d(None), help="number of batches")
    parser.add_argument("--confidence", type=float, default=d(0.99), help="confidence level (default 0.99)")
    parser.add_argument("--threads", type=int, default=d(1), help="worker threads (default 1)")
    parser.add_argument("--out", default=d("gridsan_out"), help="output directory (default gridsan_out)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridsan", description=__doc__.split("\n")[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    pf = sub.add_parser("powerflow", help="solve one power flow and print JSON")
    _global_flags(pf, suppress=True)
    pf.add_argument("--grid", required=True, help="grid JSON file (bundled names such as fig2.json also resolve)")
    pf.add_argument("--method", default="nr", help="nr or ink")
    pf.add_argument("--ordering", default="natural", help="natural, bfs or degree")
    pf.add_argument("--tol", type=float, default=1e-8)
    pf.add_argument("--max-iters", type=int, default=20)
    pf.add_argument("--scale", type=float, default=1.0, help="multiplier on every equipment rating")

    sim = sub.add_parser("simulate", help="terminating batches on a smart-grid scenario file")
    _global_flags(sim, suppress=True)
    sim.add_argument("scenario", help="scenario JSON file (bundled names such as fig2_baseline also resolve)")
    sim.add_argument("--strategy", default=None, help="ss, ch or darep (default: from the scenario file)")
    sim.add_argument("--buses", nargs="*", default=None, help="buses to report (default all)")
    sim.add_argument("--traces", type=int, default=0, help="write voltage traces of the first N batches")
    sim.add_argument("--trace-bus", default="B11")

    bench = sub.add_parser("bench-compose", help="time the death-process case study per strategy")
    _global_flags(bench, suppress=True)
    bench.add_argument("--n", type=int, nargs="+", default=[10])
    bench.add_argument("--d", type=int, nargs="+", default=[1])
    bench.add_argument("--strategies", nargs="+", default=["ss", "darep"])
    bench.add_argument("--alpha", type=float, default=0.5, help="load-rate slope")
    bench.add_argument("--topology", default="ring", help="ring or random")
    bench.add_argument("--stop-time", type=float, default=float("inf"))

    chk = sub.add_parser("check", help="run the self-check suite")
    _global_flags(chk, suppress=True)
    chk.add_argument("--filter", default=None, help="only checks whose module or name contains this text")
    chk.add_argument("--inject-fault", default=None, help="test hook: corrupt a kernel (jacobian)")
    return parser


def _existing(path: str, bundled_dir: Path | None = None) -> Path:
    p = Path(path)
    if p.exists():
        return p
    if bundled_dir is not None and not p.is_absolute():
        for cand in (bundled_dir / p.name, bundled_dir / (p.name + ".json")):
            if cand.exists():
                return cand
    raise InputError(f"no such file: {path}")


# -- powerflow -----------------------------------------------------------------

def cmd_powerflow(args) -> int:
    from gridsan.grid import GridError, grid_from_dict, rated_injection
    from gridsan.powerflow import PfProblem, PowerFlowError, SolverOptions, solve
    from gridsan.scenarios.smartgrid import DATA_DIR

    path = _existing(args.grid, DATA_DIR)
    try:
        doc = json.loads(path.read_text())
        grid = grid_from_dict(doc["grid"] if isinstance(doc.get("grid"), dict) else doc)
        opts = SolverOptions(tol=args.tol, max_newton_iters=args.max_iters, method=args.method,
                             ordering=args.ordering)
    except (ValueError, KeyError, TypeError, GridError) as exc:
        raise InputError(f"{path}: {exc}") from exc
    problem = PfProblem.from_grid(grid, rated_injection(grid, {e.id: args.scale for e in grid.equipment}))
    try:
        sol = solve(problem, opts)
    except PowerFlowError as exc:
        print(json.dumps({"converged": False, "error": str(exc)}))
        return EXIT_NONCONVERGENCE
    names = [b.name or f"B{b.id + 1}" for b in grid.buses]
    result = {
        "converged": True,
        "method": opts.method,
        "ordering": opts.ordering,
        "voltages": [{"bus": n, "magnitude": float(m), "angle_rad": float(a)}
                     for n, m, a in zip(names, sol.voltage.magnitudes, sol.voltage.angles)],
        "iters": sol.newton_iters,
        "krylov_iters": sol.total_krylov_iters,
        "residual": sol.final_residual,
    }
    print(json.dumps(result, indent=1))
    return EXIT_OK


# -- simulate ------------------------------------------------------------------

def cmd_simulate(args) -> int:
    from gridsan.measures import write_estimates_csv, write_trace_csv
    from gridsan.san import BatchRunner
    from gridsan.san.composition import STRATEGIES
    from gridsan.scenarios.smartgrid import DATA_DIR, ScenarioError, build_smartgrid, load_scenario

    if args.strategy is not None and args.strategy not in STRATEGIES:
        raise InputError(f"invalid strategy {args.strategy!r}; expected one of {', '.join(STRATEGIES)}")
    path = _existing(args.scenario, DATA_DIR)
    try:
        scenario = load_scenario(path)
        sgm = build_smartgrid(scenario, args.strategy)
        rewards = sgm.rewards(args.buses)
        trace_bus = sgm.bus_index(args.trace_bus)
    except (ValueError, KeyError, ScenarioError) as exc:
        raise InputError(f"{path}: {exc}") from exc
    n_batches = args.batches or 100

    runner = BatchRunner(sgm.model, watch=sgm.watch)
    run = runner.run(sgm.stop_time, {k: fn for k, (_, _, fn) in rewards.items()}, n_batches,
                     args.confidence, args.seed, args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{scenario.name}_estimates.csv"
    rows = []
    for key, (measure, target, _) in rewards.items():
        est = run.estimates[key]
        rows.append((type(est)(measure, est.point, est.half_width, est.confidence, est.n_batches, est.std), target))
    write_estimates_csv(csv_path, rows)
    for b in range(min(args.traces, n_batches)):
        tr = runner.trajectory(run.seeds[b], sgm.stop_time)
        write_trace_csv(out / f"{scenario.name}_trace_{args.trace_bus}_batch{b}.csv", sgm.voltage_trace(tr), trace_bus)

    print(f"scenario {scenario.name} strategy {sgm.strategy} batches {n_batches} threads {args.threads}")
    print(f"wall-clock {run.elapsed:.3f} s (build {run.build_time:.3f} s), events total {int(run.events.sum())} "
          f"mean {run.events.mean():.1f} per batch, power flows solved {sgm.oracle.solves}")
    print(f"wrote {csv_path}")
    return EXIT_OK


# -- bench-compose ---------------------------------------------------------------

def cmd_bench_compose(args) -> int:
    from gridsan.san import BatchRunner
    from gridsan.san.composition import STRATEGIES
    from gridsan.scenarios.death import DeathProcessParams, build_death_process, death_rewards

    for s in args.strategies:
        if s not in STRATEGIES:
            raise InputError(f"invalid strategy {s!r}; expected one of {', '.join(STRATEGIES)}")
    k = args.batches or 1000
    rows = []
    print("Delta(k) = wall-clock time of the batch loop, model construction and warm-up excluded.")
    print("The original figures measured CPU time of a different tool on different hardware; they are")
    print("shown for orientation and are not expected to be reproduced:")
    for s, n, d, sec in REFERENCE_DELTA:
        print(f"  reference {s:>5} n={n:<5} d={d:<4} Delta(1000) = {sec} s")
    for n in args.n:
        for d in args.d:
            if d >= n:
                continue
            try:
                params = DeathProcessParams(n, d, load_rate_slope=args.alpha, topology_kind=args.topology,
                                            stop_time=args.stop_time)
            except ValueError as exc:
                raise InputError(str(exc)) from exc
            for s in args.strategies:
                t0 = time.perf_counter()
                model = build_death_process(params, s)
                runner = BatchRunner(model)
                build = time.perf_counter() - t0 + runner.build_time
                run = runner.run(args.stop_time, death_rewards(model), k, args.confidence, args.seed, args.threads)
                est = run.estimates["absorption_time"]
                rows.append({"strategy": s, "n": n, "d": d, "k": k, "engine": run.engine,
                             "build_s": round(build, 6), "delta_s": round(run.elapsed, 6),
                             "absorption_mean": est.point, "absorption_half_width": est.half_width})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "bench_compose.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["strategy"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    header = f"{'strategy':>8} {'n':>6} {'d':>4} {'k':>6} {'engine':>7} {'build_s':>10} {'delta_s':>10} {'mean_T':>10}"
    print(header)
    for r in rows:
        print(f"{r['strategy']:>8} {r['n']:>6} {r['d']:>4} {r['k']:>6} {r['engine']:>7} {r['build_s']:>10.4f} "
              f"{r['delta_s']:>10.4f} {r['absorption_mean']:>10.4f}")
    by_key = {(r["strategy"], r["n"], r["d"]): r["delta_s"] for r in rows}
    for (s, n, d), delta in by_key.items():
        if s == "darep" and ("ss", n, d) in by_key and by_key["ss", n, d] > 0:
            print(f"n={n} d={d}: Delta_darep / Delta_ss = {delta / by_key['ss', n, d]:.4f}")
    print(f"wrote {csv_path}")
    return EXIT_OK


# -- check -------------------------------------------------------------------------

def cmd_check(args) -> int:
    from gridsan.checks import FAULTS, run_checks

    if args.inject_fault is not None and args.inject_fault not in FAULTS:
        raise InputError(f"unknown fault {args.inject_fault!r}; expected one of {', '.join(FAULTS)}")
    results = run_checks(args.filter, args.inject_fault)
    if not results:
        raise InputError(f"no check matches filter {args.filter!r}")
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.module}.{r.name}: {r.detail} ({r.seconds:.2f} s)")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_CHECK


COMMANDS = {"powerflow": cmd_powerflow, "simulate": cmd_simulate, "bench-compose": cmd_bench_compose,
            "check": cmd_check}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.batches is not None and args.batches < 2:
            raise InputError("--batches must be at least 2")
        if not 0 < args.confidence < 1:
            raise InputError("--confidence must lie in (0, 1)")
        if args.threads < 1:
            raise InputError("--threads must be at least 1")
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
