"""Self-check suite: closed-form oracles and invariants, grouped by module.

Each check returns ``(passed, detail)``. The suite is deliberately small and
fast (a few seconds) so that ``gridsan check`` can run on a fresh install; the
pytest suite covers the same ground at larger sample sizes.
"""

from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from gridsan.grid import Bus, Equipment, Grid, Line, build_ybus, load_grid, net_injection, rated_injection
from gridsan.powerflow import PfProblem, SolverOptions, VoltageState, inject_fault, jacobian, real_system, solve

MODULES = ("grid_model", "powerflow", "san_core", "composition", "scenarios", "measures")


@dataclass(frozen=True)
class CheckResult:
    module: str
    name: str
    passed: bool
    detail: str
    seconds: float


_REGISTRY: list[tuple[str, str, Callable[[], tuple[bool, str]]]] = []


def check(module: str, name: str):
    def deco(fn):
        _REGISTRY.append((module, name, fn))
        return fn
    return deco


def two_bus_grid(load: complex = 0.1875, series: complex = 1.0 + 0j) -> Grid:
    """Slack bus feeding one load over a single line."""
    return Grid((Bus(0, "slack"), Bus(1, "pq")), (Line(0, 1, series),), (),
                (Equipment("load", 1, "inflexible_load", load),))


def fig2_grid() -> Grid:
    from gridsan.scenarios.smartgrid import DATA_DIR
    return load_grid(DATA_DIR / "fig2.json")


# -- grid_model ----------------------------------------------------------------

@check("grid_model", "two_bus_ybus")
def _two_bus_ybus():
    g = Grid((Bus(0, "slack"), Bus(1, "pq")), (Line(0, 1, -10j),), (), ())
    y = build_ybus(g).toarray()
    want = np.array([[-10j, 10j], [10j, -10j]])
    return bool(np.array_equal(y, want)), f"max error {np.abs(y - want).max():.1e}"


@check("grid_model", "fig2_ybus_pattern")
def _fig2_pattern():
    y = build_ybus(fig2_grid()).toarray()
    off = int(np.count_nonzero(y - np.diag(np.diag(y))))
    sym = bool(np.allclose(y, y.T, atol=0, rtol=0))
    return off == 22 and sym, f"{off} off-diagonal nonzeros, symmetric={sym}"


@check("grid_model", "zero_row_sums")
def _row_sums():
    y = build_ybus(fig2_grid()).toarray()
    worst = float(np.abs(y.sum(axis=1)).max())
    return worst <= 1e-12, f"max |row sum| {worst:.1e}"


@check("grid_model", "net_injection_signed_sum")
def _net_injection():
    g = Grid((Bus(0, "slack"), Bus(1, "pq"), Bus(2, "pq")), (Line(0, 1, 1.0), Line(1, 2, 1.0)), (),
             (Equipment("L", 1, "inflexible_load", 0.5 + 0.1j), Equipment("G", 1, "dg_pv", 0.2)))
    s = net_injection(g, {"L": 0.5 + 0.1j, "G": 0.2})
    ok = abs(s[1] - (-0.3 - 0.1j)) < 1e-15 and s[2] == 0 and s[0] == 0
    return bool(ok), f"bus 1 injection {s[1]}"


# -- powerflow -----------------------------------------------------------------

@check("powerflow", "two_bus_quadratic_oracle")
def _two_bus():
    p = PfProblem.from_grid(two_bus_grid(), rated_injection(two_bus_grid()))
    errs = []
    for method in ("nr", "ink"):
        sol = solve(p, SolverOptions(method=method, tol=1e-12))
        errs.append(abs(sol.voltage.magnitudes[1] - 0.75))
    return max(errs) <= 1e-10, f"|V2 - 0.75| = {max(errs):.1e}"


@check("powerflow", "fig2_cross_method_and_ordering")
def _fig2_cross():
    g = fig2_grid()
    p = PfProblem.from_grid(g, rated_injection(g))
    nr = {o: solve(p, SolverOptions(method="nr", ordering=o)) for o in ("natural", "bfs", "degree")}
    ink = solve(p, SolverOptions(method="ink"))
    base = nr["natural"].voltage.complex
    d_method = float(np.abs(ink.voltage.complex - base).max())
    d_order = max(float(np.abs(s.voltage.complex - base).max()) for s in nr.values())
    iters = nr["natural"].newton_iters
    ok = d_method <= 1e-6 and d_order <= 1e-8 and iters <= 10
    return ok, f"method diff {d_method:.1e}, ordering diff {d_order:.1e}, NR iterations {iters}"


@check("powerflow", "jacobian_finite_differences")
def _jacobian_fd():
    g = fig2_grid()
    p = PfProblem.from_grid(g, rated_injection(g))
    return jacobian_fd_error(p, n_states=20, seed=3)


def jacobian_fd_error(p: PfProblem, n_states: int = 100, seed: int = 0, h: float = 1e-6,
                      limit: float = 1e-4, floor: float = 1e-6) -> tuple[bool, str]:
    """Analytic Jacobian against central differences at random states.

    States draw magnitudes from [0.8, 1.2] and angles from [-0.5, 0.5]. The
    error of an entry is relative to ``max(|fd|, floor * max|fd|)``, so exact
    zeros and cancellation-level entries are compared absolutely.
    """
    rng = np.random.default_rng(seed)
    n = p.n
    nonslack = np.array([i for i in range(n) if i != p.slack])
    worst = 0.0
    for _ in range(n_states):
        mag = np.ones(n)
        ang = np.zeros(n)
        mag[nonslack] = rng.uniform(0.8, 1.2, len(nonslack))
        ang[nonslack] = rng.uniform(-0.5, 0.5, len(nonslack))
        mag[p.slack] = abs(p.slack_voltage)
        ang[p.slack] = np.angle(p.slack_voltage)
        v = VoltageState(mag, ang)
        jac = jacobian(v, p).toarray()
        m = len(nonslack)
        fd = np.empty_like(jac)
        for k in range(2 * m):
            bus = nonslack[k % m]
            plus_m, minus_m = mag.copy(), mag.copy()
            plus_a, minus_a = ang.copy(), ang.copy()
            if k < m:
                plus_a[bus] += h
                minus_a[bus] -= h
            else:
                plus_m[bus] += h
                minus_m[bus] -= h
            fp = real_system(VoltageState(plus_m, plus_a), p)
            fm = real_system(VoltageState(minus_m, minus_a), p)
            fd[:, k] = (fp - fm) / (2 * h)
        scale = np.maximum(np.abs(fd), floor * np.abs(fd).max())
        worst = max(worst, float((np.abs(jac - fd) / scale).max()))
    return worst <= limit, f"max relative error {worst:.1e} over {n_states} states"


# -- san_core ------------------------------------------------------------------

@check("san_core", "death_n2_alpha1_mean")
def _death_n2():
    from gridsan.san import BatchRunner
    from gridsan.scenarios.death import DeathProcessParams, absorption_time, build_death_process

    m = build_death_process(DeathProcessParams(2, 1, load_rate_slope=1.0), "darep")
    est = BatchRunner(m).run(float("inf"), {"t": absorption_time}, 4000, 0.99, master_seed=11).estimates["t"]
    return est.covers(1.0), f"mean {est.point:.4f} +/- {est.half_width:.4f} (oracle 1)"


@check("san_core", "engine_agreement")
def _engines():
    from gridsan.san import BatchRunner
    from gridsan.scenarios.death import DeathProcessParams, build_death_process

    m = build_death_process(DeathProcessParams(5, 2, load_rate_slope=0.5), "ss")
    a = BatchRunner(m, engine="python").trajectory(5, float("inf"), record_events=True)
    b = BatchRunner(m).trajectory(5, float("inf"), record_events=True)
    same = a.events == b.events and np.array_equal(a.final_marking.values, b.final_marking.values)
    return bool(same), f"{a.n_events} events, identical={same}"


# -- composition ---------------------------------------------------------------

@check("composition", "darep_incidence")
def _incidence():
    from gridsan.san.composition import Topology, incidence
    from gridsan.scenarios.death import DeathProcessParams, death_template
    from gridsan.san.composition import instantiate_darep

    bad = []
    for topo in (Topology.ring(8, 2), Topology.random(9, 3, seed=4)):
        params = DeathProcessParams(topo.n, 1)
        got = incidence(instantiate_darep(death_template(params, topo), topo))
        want = topo.n + len(topo.edges)
        if got != want:
            bad.append((got, want))
    return not bad, "ok" if not bad else f"mismatches {bad}"


@check("composition", "darep_complete_isomorphic_to_ss")
def _iso():
    from gridsan.san.composition import Topology, instantiate_darep, instantiate_ss, isomorphic
    from gridsan.scenarios.death import DeathProcessParams, death_template

    topo = Topology.complete(5)
    t = death_template(DeathProcessParams(5, 1), topo)
    same = isomorphic(instantiate_darep(t, topo), instantiate_ss(t, 5))
    return same, f"isomorphic={same}"


# -- scenarios -----------------------------------------------------------------

@check("scenarios", "death_workload_conservation")
def _conservation():
    from gridsan.san import Simulator
    from gridsan.scenarios.death import DeathProcessParams, build_death_process

    m = build_death_process(DeathProcessParams(6, 2, load_rate_slope=1.0), "darep")
    tr = Simulator(m).simulate(float("inf"), 3)
    v = tr.final_marking
    lay = m.layout()
    total = sum(float(np.sum(v.values[lay.slot(p.name)])) if not lay.array.get(p.name) else 0.0
                for p in m.places if p.name.endswith(".lost") or ".workload" in p.name)
    return abs(total - 6.0) < 1e-9, f"workload + lost = {total}"


@check("scenarios", "control_rule_cascade")
def _cascade():
    from gridsan.scenarios.control import Action, ControlState, Settings, control_step

    vm = np.array([1.0, 1.0, 1.12])
    st = ControlState(vm, True, Settings(2), True, 5, {"WP": 2}, {}, {}, (1, 2))
    acts = control_step(st)
    return acts == [Action("curtail", "WP", 1)], f"actions {acts}"


# -- measures ------------------------------------------------------------------

@check("measures", "mv1_threshold")
def _mv1():
    from gridsan.measures import VoltageTrace, mv1_violation

    def trace(bad_windows):
        times = [0.0]
        vals = [[1.0]]
        for k in range(bad_windows):
            times += [20.0 * k + 10.0, 20.0 * k + 20.0]
            vals += [[1.2], [1.0]]
        return VoltageTrace.from_steps(times, vals, 1440.0)

    got = (mv1_violation(trace(1), 0), mv1_violation(trace(2), 0))
    return got == (0, 1), f"1 bad window -> {got[0]}, 2 bad windows -> {got[1]}"


# -- runner ----------------------------------------------------------------------

FAULTS = ("jacobian",)


def run_checks(filter: str | None = None, fault: str | None = None) -> list[CheckResult]:
    """Run the registered checks whose module or name contains ``filter``."""
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}; expected one of {FAULTS}")
    results = []
    ctx = inject_fault(fault) if fault else contextlib.nullcontext()
    with ctx:
        for module, name, fn in _REGISTRY:
            if filter and filter not in module and filter not in name:
                continue
            t0 = time.perf_counter()
            try:
                ok, detail = fn()
            except Exception as exc:  # a crashing check is a failing check
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            results.append(CheckResult(module, name, bool(ok), detail, time.perf_counter() - t0))
    return results
