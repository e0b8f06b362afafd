"""Medium-voltage smart grid with a periodic control centre and failure injection.

Time is in minutes. The model is composed from one component per grid
equipment plus a control-centre component (the last index). Each component
exports two scalars, ``ok[j]`` (control device healthy) and ``level[j]``
(curtailment or load-shedding level in 10 % steps). The control centre reads and
writes every component's exported state, so under DARep it depends on all of
them while equipment components depend on nobody.

Control centre behaviour:

* ``tick`` advances the profile step every ``step_min`` minutes;
* ``clock`` fires every control period and marks ``trigger``; the instantaneous
  ``control`` activity then runs :func:`control_step` and applies its actions,
  or queues them when a timing failure is active;
* ``apply_pending`` applies queued actions once their delay has elapsed;
* ``refresh`` is an instantaneous activity enabled whenever the inputs of the
  last power-flow solution differ from the current marking. It stores bus
  voltage magnitudes, a feasibility flag, and per-device unsatisfied demand and
  curtailed power, all of which are sampled as traces.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from gridsan.grid import Grid, build_ybus, grid_from_dict
from gridsan.measures import (
    PiecewiseTrace,
    VoltageTrace,
    curtailed_available,
    mv1_violation,
    out_of_band,
    samples_to_trace,
    unsatisfied_demand,
)
from gridsan.powerflow import PfProblem, PowerFlowError, SolverOptions, solve
from gridsan.san.composition import ComponentEnv, Template, Topology, instantiate
from gridsan.san.engine import Trajectory
from gridsan.san.model import (
    Activity,
    Add,
    Case,
    Cmp,
    Deterministic,
    Effect,
    Exponential,
    Fn,
    InputGate,
    Instantaneous,
    OutputGate,
    Pred,
    SanModel,
    Set,
    extended,
    has_tokens,
    token,
)
from gridsan.scenarios.control import LEVEL_STEPS, ControlState, Settings, apply_actions, control_step

DATA_DIR = Path(__file__).parent / "data"
MV1_BAND = 0.10
FAILURE_KINDS = ("timing", "control_device", "oltc_failure")


class ScenarioError(ValueError):
    pass


# -- scenario description ----------------------------------------------------

@dataclass(frozen=True)
class FailureSpec:
    """A failure process.

    ``occurrence`` is ``("at_time", t_min)`` or ``("exponential", rate_per_min)``;
    ``repair_rate`` (per minute) is ``None`` for a permanent failure. ``devices``
    restricts a timing failure to the listed targets (equipment ids or
    ``"oltc"``); ``None`` delays the whole action vector.
    """

    kind: str
    occurrence: tuple[str, float]
    repair_rate: float | None = None
    delay: float = 0.0
    omit_prob: float = 0.0
    target: str | None = None
    devices: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in FAILURE_KINDS:
            raise ScenarioError(f"unknown failure kind {self.kind!r}")
        how, value = self.occurrence
        if how not in ("at_time", "exponential"):
            raise ScenarioError(f"unknown occurrence {how!r}")
        if how == "at_time" and value < 0 or how == "exponential" and not value > 0:
            raise ScenarioError(f"invalid occurrence parameter {value}")
        if self.repair_rate is not None and not self.repair_rate > 0:
            raise ScenarioError("repair rate must be positive")
        if self.kind == "timing":
            if not self.delay > 0:
                raise ScenarioError("timing failures need a positive delay")
            if not 0 <= self.omit_prob <= 1:
                raise ScenarioError("omit_prob must lie in [0, 1]")
        if self.kind == "control_device" and not self.target:
            raise ScenarioError("control_device failures need a target equipment id")

    @classmethod
    def from_dict(cls, d: Mapping) -> "FailureSpec":
        occ = d["occurrence"]
        if "t_min" in occ:
            occurrence = ("at_time", float(occ["t_min"]))
        else:
            occurrence = ("exponential", float(occ["rate_per_h"]) / 60.0)
        repair = d.get("repair")
        devices = d.get("devices")
        return cls(kind=d["kind"], occurrence=occurrence,
                   repair_rate=None if not repair else float(repair["rate_per_h"]) / 60.0,
                   delay=float(d.get("delay_min", 0.0)), omit_prob=float(d.get("omit_prob", 0.0)),
                   target=d.get("target"), devices=tuple(devices) if devices is not None else None)

    def to_dict(self) -> dict:
        how, value = self.occurrence
        out: dict[str, Any] = {"kind": self.kind,
                               "occurrence": {"t_min": value} if how == "at_time" else {"rate_per_h": value * 60.0},
                               "repair": None if self.repair_rate is None else {"rate_per_h": self.repair_rate * 60.0}}
        if self.kind == "timing":
            out["delay_min"] = self.delay
            out["omit_prob"] = self.omit_prob
            if self.devices is not None:
                out["devices"] = list(self.devices)
        if self.target is not None:
            out["target"] = self.target
        return out


@dataclass(frozen=True)
class SmartGridScenario:
    grid: Grid
    profiles: Mapping[str, np.ndarray]
    step_min: float = 10.0
    control_period: float = 15.0
    band: float = 0.10
    failures: tuple[FailureSpec, ...] = ()
    horizon_h: float = 24.0
    strategy: str = "darep"
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "failures", tuple(self.failures))
        object.__setattr__(self, "profiles", {k: np.asarray(v, dtype=float) for k, v in self.profiles.items()})
        if not 0 < self.band < 1:
            raise ScenarioError("band must lie in (0, 1)")
        if not self.control_period > 0 or not self.step_min > 0:
            raise ScenarioError("periods must be positive")
        for eq in self.grid.equipment:
            if eq.profile is not None and eq.profile not in self.profiles:
                raise ScenarioError(f"equipment {eq.id} refers to missing profile {eq.profile!r}")
        need = int(math.ceil(self.horizon_min / self.step_min))
        for k, v in self.profiles.items():
            if v.ndim != 1 or len(v) < need:
                raise ScenarioError(f"profile {k!r} must cover the horizon ({need} steps)")
            if np.any(v < 0):
                raise ScenarioError(f"profile {k!r} has negative values")
        ids = {e.id for e in self.grid.equipment}
        timing = [f for f in self.failures if f.kind == "timing"]
        if len(timing) > 1:
            raise ScenarioError("at most one timing failure per scenario")
        for f in self.failures:
            if f.kind == "control_device" and f.target not in ids:
                raise ScenarioError(f"failure target {f.target!r} is not an equipment id")
            if f.kind == "oltc_failure" and not self.grid.oltcs:
                raise ScenarioError("oltc_failure needs a grid with an OLTC")
            for dev in f.devices or ():
                if dev != "oltc" and dev not in ids:
                    raise ScenarioError(f"unknown device {dev!r} in timing failure")

    @property
    def horizon_min(self) -> float:
        return 60.0 * self.horizon_h

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.horizon_min / self.step_min))

    def profile_value(self, eq_id: str, step: int) -> float:
        eq = self.grid.equipment_by_id(eq_id)
        return 1.0 if eq.profile is None else float(self.profiles[eq.profile][step])

    def with_failures(self, failures: Sequence[FailureSpec], name: str | None = None) -> "SmartGridScenario":
        return SmartGridScenario(self.grid, self.profiles, self.step_min, self.control_period, self.band,
                                 tuple(failures), self.horizon_h, self.strategy, name or self.name)


def _resolve(ref, base: Path):
    if isinstance(ref, str):
        path = Path(ref)
        if not path.is_absolute():
            path = base / path
        return json.loads(path.read_text()), path.parent
    return ref, base


def scenario_from_dict(doc: Mapping, base: Path | None = None) -> SmartGridScenario:
    base = base or DATA_DIR
    grid_doc, _ = _resolve(doc["grid"], base)
    prof_doc, _ = _resolve(doc["profiles"], base)
    control = doc.get("control", {})
    return SmartGridScenario(
        grid=grid_from_dict(grid_doc),
        profiles={k: np.asarray(v, dtype=float) for k, v in prof_doc["curves"].items()},
        step_min=float(prof_doc.get("step_min", 10.0)),
        control_period=float(control.get("period_min", 15.0)),
        band=float(control.get("band", 0.10)),
        failures=tuple(FailureSpec.from_dict(f) for f in doc.get("failures", ())),
        horizon_h=float(doc.get("horizon_h", 24.0)),
        strategy=doc.get("strategy", "darep"),
        name=doc.get("name", "scenario"),
    )


def load_scenario(path: str | Path) -> SmartGridScenario:
    path = Path(path)
    if not path.exists() and not path.is_absolute() and (DATA_DIR / path).exists():
        path = DATA_DIR / path
    return scenario_from_dict(json.loads(path.read_text()), path.parent)


def bundled(name: str) -> SmartGridScenario:
    """Load one of the scenario files shipped with the package, e.g. ``fig2_baseline``."""
    return load_scenario(DATA_DIR / (name if name.endswith(".json") else name + ".json"))


# -- power flow oracle --------------------------------------------------------

@dataclass(frozen=True)
class GridReading:
    vm: np.ndarray
    feasible: bool
    unsatisfied: np.ndarray
    curtailed: np.ndarray


class PowerFlowOracle:
    """Solves the grid for a profile step and control settings, with memoization.

    Every solve starts flat, so the result depends only on its inputs and can
    be shared between batches and threads.
    """

    def __init__(self, scenario: SmartGridScenario, options: SolverOptions | None = None):
        self.scenario = scenario
        self.grid = scenario.grid
        self.options = options or SolverOptions(tol=1e-8, max_newton_iters=30)
        eqs = self.grid.equipment
        self.equipment = [e.id for e in eqs]
        self.loads = [e.id for e in eqs if e.is_load]
        self.generators = [e.id for e in eqs if e.is_generator]
        self.flexible = [e.id for e in eqs if e.kind == "flexible_load"]
        self.oltc = self.grid.oltcs[0] if self.grid.oltcs else None
        self._ybus: dict[int, Any] = {}
        self._cache: dict[tuple, GridReading] = {}
        self._lock = threading.Lock()
        self.solves = 0

    def _ybus_for(self, tap_position: int):
        y = self._ybus.get(tap_position)
        if y is None:
            g = self.grid if self.oltc is None else self.grid.with_tap(self.oltc.tap_at(tap_position))
            y = build_ybus(g)
            self._ybus[tap_position] = y
        return y

    def powers(self, step: int, levels: Mapping[str, int]):
        """Available/demanded power per equipment and the resulting bus injections."""
        s = self.scenario
        inj = np.zeros(self.grid.n, dtype=complex)
        ud = np.zeros(len(self.loads))
        ca = np.zeros(len(self.generators))
        li = gi = 0
        for eq in self.grid.equipment:
            nominal = eq.s_rated * s.profile_value(eq.id, step)
            frac = levels.get(eq.id, 0) / LEVEL_STEPS
            if eq.is_generator:
                inj[eq.bus] += nominal * (1.0 - frac)
                ca[gi] = nominal.real * frac
                gi += 1
            else:
                if eq.kind == "flexible_load":
                    inj[eq.bus] -= nominal * (1.0 - frac)
                    ud[li] = nominal.real * frac
                else:
                    inj[eq.bus] -= nominal
                li += 1
        return inj, ud, ca

    def read(self, step: int, settings: Settings) -> GridReading:
        key = (step, *settings.key(self.equipment))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        inj, ud, ca = self.powers(step, settings.levels)
        ybus = self._ybus_for(settings.tap_position)
        problem = PfProblem.from_grid(self.grid, inj, ybus)
        try:
            sol = solve(problem, self.options)
            vm = sol.voltage.magnitudes.copy()
            ok = bool(np.all(np.isfinite(vm)) and np.all(vm > 0))
        except (PowerFlowError, np.linalg.LinAlgError, ValueError):
            ok = False
        if not ok:
            vm = np.zeros(self.grid.n)
            loads = [self.grid.equipment_by_id(e) for e in self.loads]
            ud = np.array([(e.s_rated * self.scenario.profile_value(e.id, step)).real for e in loads])
        vm.setflags(write=False)
        reading = GridReading(vm, ok, ud, ca)
        with self._lock:
            self._cache[key] = reading
            self.solves += 1
        return reading


# -- model construction --------------------------------------------------------

OK, LEVEL = "ok", "level"


def _timed(occurrence) -> Any:
    how, value = occurrence
    return Deterministic(value) if how == "at_time" else Exponential(value)


def _failure_activities(prefix: str, spec: FailureSpec, flag: str, on_fail=(), on_repair=()) -> tuple[list, list]:
    """Failure (and optional repair) of a 0/1 health place ``flag`` (1 means healthy).

    A failure given by time of occurrence fires once; it is armed by a token.
    """
    places = []
    preds = [Cmp(flag, "==", 1)]
    effects = [Set(flag, 0), *on_fail]
    in_effects = []
    if spec.occurrence[0] == "at_time":
        armed = f"{prefix}_armed"
        places.append(token(armed, 1))
        preds.append(has_tokens(armed))
        in_effects.append(Add(armed, -1))
    acts = [Activity(f"{prefix}_fail", _timed(spec.occurrence), (InputGate(tuple(preds), tuple(in_effects)),),
                     (Case(1.0, OutputGate(tuple(effects))),))]
    if spec.repair_rate is not None:
        acts.append(Activity(f"{prefix}_repair", Exponential(spec.repair_rate),
                             (InputGate((Cmp(flag, "==", 0),)),), (Case(1.0, OutputGate((Set(flag, 1), *on_repair))),)))
    return places, acts


@dataclass
class SmartGridModel:
    model: SanModel
    scenario: SmartGridScenario
    oracle: PowerFlowOracle
    places: dict[str, str]
    strategy: str
    _cache: threading.local = field(default_factory=threading.local, repr=False)

    @property
    def watch(self) -> tuple[str, ...]:
        p = self.places
        return p["vm"], p["pf_ok"], p["ud"], p["ca"], p["tap"]

    @property
    def stop_time(self) -> float:
        return self.scenario.horizon_min

    @property
    def bus_names(self) -> list[str]:
        return [b.name or f"B{b.id + 1}" for b in self.scenario.grid.buses]

    def bus_index(self, name_or_id) -> int:
        if isinstance(name_or_id, str):
            return self.bus_names.index(name_or_id)
        return int(name_or_id)

    def voltage_trace(self, tr: Trajectory) -> VoltageTrace:
        cache = self._cache.__dict__
        if cache.get("trajectory") is not tr:
            h = self.stop_time
            cache["trace"] = VoltageTrace(samples_to_trace(tr.samples[self.places["vm"]], h),
                                          samples_to_trace(tr.samples[self.places["pf_ok"]], h))
            cache["trajectory"] = tr
        return cache["trace"]

    def ud_trace(self, tr: Trajectory) -> PiecewiseTrace:
        return samples_to_trace(tr.samples[self.places["ud"]], self.stop_time)

    def ca_trace(self, tr: Trajectory) -> PiecewiseTrace:
        return samples_to_trace(tr.samples[self.places["ca"]], self.stop_time)

    def rewards(self, buses: Sequence | None = None) -> dict[str, tuple[str, str, Any]]:
        """Reward functions keyed ``measure:target``; values are ``(measure, target, fn)``."""
        band = MV1_BAND
        buses = [self.bus_index(b) for b in (buses if buses is not None else range(self.scenario.grid.n))]
        names = self.bus_names
        out: dict[str, tuple[str, str, Any]] = {}
        for b in buses:
            out[f"p_mv1:{names[b]}"] = ("p_mv1", names[b], lambda tr, b=b: mv1_violation(self.voltage_trace(tr), b, band))
            out[f"uv_fraction:{names[b]}"] = ("uv_fraction", names[b],
                                              lambda tr, b=b: out_of_band(self.voltage_trace(tr), b, band)[0])
            out[f"ov_fraction:{names[b]}"] = ("ov_fraction", names[b],
                                              lambda tr, b=b: out_of_band(self.voltage_trace(tr), b, band)[1])
        for k, e in enumerate(self.oracle.loads):
            out[f"ud:{e}"] = ("ud", e, lambda tr, k=k: unsatisfied_demand(self.ud_trace(tr), k))
        for k, e in enumerate(self.oracle.generators):
            out[f"ca:{e}"] = ("ca", e, lambda tr, k=k: curtailed_available(self.ca_trace(tr), k))
        return out


def _control_topology(n_equipment: int) -> Topology:
    mcs = n_equipment
    return Topology(n_equipment + 1, tuple((mcs, j) for j in range(n_equipment)))


def build_smartgrid(s: SmartGridScenario, strategy: str | None = None,
                    oracle: PowerFlowOracle | None = None) -> SmartGridModel:
    strategy = strategy or s.strategy
    oracle = oracle or PowerFlowOracle(s)
    grid = s.grid
    eq_ids = [e.id for e in grid.equipment]
    n_eq = len(eq_ids)
    mcs = n_eq
    n_tap = oracle.oltc.n_positions if oracle.oltc is not None else 1
    tap0 = oracle.oltc.position if oracle.oltc is not None else 0
    generators = {e.id: e.bus for e in grid.equipment if e.is_generator}
    flexible = {e.id: e.bus for e in grid.equipment if e.kind == "flexible_load"}
    monitored = tuple(b.id for b in grid.buses if b.kind != "slack")
    timing = next((f for f in s.failures if f.kind == "timing"), None)
    delayed = set(timing.devices) if timing is not None and timing.devices is not None else None
    queue_cap = 0
    if timing is not None:
        queue_cap = int(math.ceil(timing.delay / s.control_period)) + 2
    entry = 2 + n_eq  # due time, tap position, one level per equipment

    def device_body(j: int, env: ComponentEnv) -> SanModel:
        ok, lvl = env.state(j, OK), env.state(j, LEVEL)
        places, acts = [], []
        for k, f in enumerate(x for x in s.failures if x.kind == "control_device" and x.target == eq_ids[j]):
            p, a = _failure_activities(f"device{k}", f, ok, on_fail=(Set(lvl, 0),))
            places += p
            acts += a
        return SanModel(eq_ids[j], (*places, *env.places()), tuple(acts))

    def mcs_body(i: int, env: ComponentEnv) -> SanModel:
        oks = [env.state(j, OK) for j in range(n_eq)]
        lvls = [env.state(j, LEVEL) for j in range(n_eq)]
        places = [
            extended("step", 0.0), extended("tap", float(tap0)), token("oltc_ok", 1), token("timing_ok", 1),
            token("trigger", 0), extended("queue", np.zeros(1 + queue_cap * entry)),
            extended("solved", np.full(1 + 1 + n_eq, -1.0)),
            extended("vm", np.ones(grid.n)), extended("pf_ok", 1.0),
            extended("ud", np.zeros(len(oracle.loads))), extended("ca", np.zeros(len(oracle.generators))),
        ]
        acts = []

        def settings_of(v) -> Settings:
            return Settings(int(v["tap"]), {e: int(v[lv]) for e, lv in zip(eq_ids, lvls)})

        def current_key(v) -> np.ndarray:
            return np.array([v["step"], v["tap"], *(v[lv] for lv in lvls)])

        def stale(v) -> bool:
            return not np.array_equal(v["solved"], current_key(v))

        def refresh(v):
            r = oracle.read(int(v["step"]), settings_of(v))
            v["vm"] = r.vm
            v["pf_ok"] = 1.0 if r.feasible else 0.0
            v["ud"] = r.unsatisfied
            v["ca"] = r.curtailed
            v["solved"] = current_key(v)

        def apply_targets(v, tap: int, levels: Mapping[str, int], only=None):
            """Write target settings, skipping frozen or failed devices."""
            if v["oltc_ok"] == 1 and (only is None or "oltc" in only):
                v["tap"] = float(tap)
            for e, ok, lv in zip(eq_ids, oks, lvls):
                if only is not None and e not in only:
                    continue
                if v[ok] == 1:
                    v[lv] = float(levels.get(e, 0))

        def control(v):
            settings = settings_of(v)
            step = int(v["step"])
            state = ControlState(
                vm=np.asarray(v["vm"]), feasible=v["pf_ok"] == 1.0, settings=settings,
                tap_frozen=v["oltc_ok"] == 0, n_tap_positions=n_tap, generators=generators,
                flexible_loads=flexible, controllable={e: v[ok] == 1 for e, ok in zip(eq_ids, oks)},
                monitored=monitored, band=s.band)

            def predict(candidate: Settings):
                r = oracle.read(step, candidate)
                return r.vm, r.feasible

            actions = control_step(state, predict)
            if not actions:
                return
            target = apply_actions(settings, actions)
            if timing is None or v["timing_ok"] == 1:
                apply_targets(v, target.tap_position, target.levels)
                return
            if delayed is not None:
                apply_targets(v, target.tap_position, target.levels, only={"oltc", *eq_ids} - delayed)
            q = v["queue"]
            count = int(q[0])
            if count >= queue_cap:
                raise ScenarioError("pending action queue overflow")
            o = 1 + count * entry
            q[o] = v.time + timing.delay
            q[o + 1] = target.tap_position
            q[o + 2:o + entry] = [target.levels.get(e, 0) for e in eq_ids]
            q[0] = count + 1

        def apply_pending(v):
            q = v["queue"]
            count = int(q[0])
            head = q[1:1 + entry].copy()
            q[1:1 + (count - 1) * entry] = q[1 + entry:1 + count * entry]
            q[1 + (count - 1) * entry:1 + count * entry] = 0.0
            q[0] = count - 1
            levels = {e: int(x) for e, x in zip(eq_ids, head[2:])}
            apply_targets(v, int(head[1]), levels, only=delayed)

        state_places = ("step", "tap", *lvls)
        acts.append(Activity("refresh", Instantaneous(), (InputGate((Pred(stale, (*state_places, "solved")),), (
            Effect(refresh, reads_=state_places, writes_=("vm", "pf_ok", "ud", "ca", "solved")),)),)))
        acts.append(Activity("tick", Deterministic(s.step_min), (InputGate((Cmp("step", "<", s.n_steps - 1),)),),
                             (Case(1.0, OutputGate((Add("step", 1),))),)))
        acts.append(Activity("clock", Deterministic(s.control_period), (),
                             (Case(1.0, OutputGate((Add("trigger", 1),))),)))
        control_reads = ("vm", "pf_ok", "tap", "step", "oltc_ok", "timing_ok", "queue", *oks, *lvls)
        control_effect = Effect(control, reads_=control_reads, writes_=("tap", "queue", *lvls))
        omit = timing.omit_prob if timing is not None else 0.0
        if omit > 0:
            cases = (Case(Fn(lambda v: 1.0 - omit * (1 - v["timing_ok"]), ("timing_ok",)), OutputGate((control_effect,))),
                     Case(Fn(lambda v: omit * (1 - v["timing_ok"]), ("timing_ok",)), OutputGate(())))
        else:
            cases = (Case(1.0, OutputGate((control_effect,))),)
        acts.append(Activity("control", Instantaneous(),
                             (InputGate((has_tokens("trigger"),), (Add("trigger", -1),)),), cases))
        if timing is not None:
            acts.append(Activity(
                "apply_pending",
                Deterministic(Fn(lambda v: max(0.0, v["queue"][1] - v.time), ("queue",))),
                (InputGate((Pred(lambda v: v["queue"][0] >= 1, ("queue",)),)),),
                (Case(1.0, OutputGate((Effect(apply_pending, reads_=("queue", "oltc_ok", *oks),
                                              writes_=("queue", "tap", *lvls)),))),)))
            p, a = _failure_activities("timing", timing, "timing_ok")
            places += p
            acts += a
        for k, f in enumerate(x for x in s.failures if x.kind == "oltc_failure"):
            p, a = _failure_activities(f"oltc{k}", f, "oltc_ok")
            places += p
            acts += a
        return SanModel("mcs", (*places, *env.places()), tuple(acts))

    def body(j: int, env: ComponentEnv) -> SanModel:
        return mcs_body(j, env) if j == mcs else device_body(j, env)

    template = Template(body, (extended(OK, 1.0), extended(LEVEL, 0.0)))
    model = instantiate(template, strategy, _control_topology(n_eq))
    prefix = f"c{mcs}."
    names = {k: prefix + k for k in ("vm", "pf_ok", "ud", "ca", "tap", "step", "oltc_ok", "timing_ok", "queue")}
    return SmartGridModel(model, s, oracle, names, strategy)
