"""Reference discrete-event engine for SAN models.

Race semantics: every enabled timed activity holds a completion time. After a
firing, the activities whose enabling places were written are re-evaluated:
exponential ones are resampled (memoryless, so this is exact), deterministic ones
keep their schedule while they stay enabled. Instantaneous activities fire in
declaration order before time advances.

The random stream is ``numpy.random.RandomState(seed)``; exponential delays use
one uniform ``u`` as ``-log(1 - u) / rate`` and a case is chosen with one uniform
only when an activity has more than one case. The compiled kernel follows the
same contract, so both produce identical trajectories.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from gridsan.san.model import (
    TOKEN,
    Activity,
    BadCaseDistribution,
    Deterministic,
    Exponential,
    InstantaneousLoop,
    Layout,
    Marking,
    ModelError,
    NegativeTokens,
    SanError,
    SanModel,
)

MAX_INSTANTANEOUS = 1_000_000
PROB_TOL = 1e-9

_EXP, _INST, _DET = 0, 1, 2


class _Ctx:
    __slots__ = ("time",)

    def __init__(self, time: float = 0.0):
        self.time = time


@dataclass
class Trajectory:
    seed: int
    events: list[tuple[float, str, int]] | None
    final_marking: Marking
    final_time: float = 0.0
    n_events: int = 0
    stop_time: float = math.inf
    samples: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    @property
    def last_event_time(self) -> float:
        return self.final_time


class CompiledModel:
    """A model bound to slot indices, with static re-evaluation lists."""

    def __init__(self, model: SanModel):
        self.model = model
        self.layout = Layout(model.places)
        lay = self.layout
        acts = model.activities
        self.names = [a.name for a in acts]
        self.index = {a.name: k for k, a in enumerate(acts)}
        self.kind = np.array([_INST if a.instantaneous else (_DET if isinstance(a.timing, Deterministic) else _EXP)
                              for a in acts], dtype=np.int64)
        for a in acts:
            if not a.instantaneous and not isinstance(a.timing, (Exponential, Deterministic)):
                raise ModelError(f"activity {a.name}: unsupported timing {a.timing!r}")
        self.timing = [None if a.instantaneous else (a.timing.rate if isinstance(a.timing, Exponential)
                                                     else a.timing.delay).bind(lay) for a in acts]
        self.preds = [[p.bind(lay) for g in a.input_gates for p in g.predicates] for a in acts]
        self.in_effects = [[e.bind(lay) for g in a.input_gates for e in g.effects] for a in acts]
        self.probs = [[c.probability.bind(lay) for c in a.cases] for a in acts]
        self.case_effects = [[[e.bind(lay) for e in c.gate.effects] for c in a.cases] for a in acts]
        self.token_writes = [[[(lay.slot(p), p) for p in a.writes(c) if lay.kind[p] == TOKEN]
                              for c in range(len(a.cases))] for a in acts]
        self.affected = self._affected_lists(acts)

    def _affected_lists(self, acts: Sequence[Activity]) -> list[list[np.ndarray]]:
        dependents: dict[str, list[int]] = {}
        for k, a in enumerate(acts):
            for p in a.enabling_reads:
                dependents.setdefault(p, []).append(k)
        out = []
        for k, a in enumerate(acts):
            per_case = []
            for c in range(len(a.cases)):
                hit = {k}
                for p in a.writes(c):
                    hit.update(dependents.get(p, ()))
                per_case.append(np.array(sorted(hit), dtype=np.int64))
            out.append(per_case)
        return out

    # -- primitive semantics ---------------------------------------------------

    def is_enabled(self, a: int, m: np.ndarray, ctx: _Ctx) -> bool:
        for p in self.preds[a]:
            if not p(m, ctx):
                return False
        return True

    def case_probabilities(self, a: int, m: np.ndarray, ctx: _Ctx) -> list[float]:
        probs = [p(m, ctx) for p in self.probs[a]]
        if any(p < 0 or not math.isfinite(p) for p in probs) or abs(sum(probs) - 1.0) > PROB_TOL:
            raise BadCaseDistribution(self.names[a], probs)
        return probs

    def choose_case(self, a: int, m: np.ndarray, ctx: _Ctx, rs) -> int:
        probs = self.case_probabilities(a, m, ctx)
        if len(probs) == 1:
            return 0
        u = rs.random()
        acc = 0.0
        for c, p in enumerate(probs):
            acc += p
            if u < acc:
                return c
        return max(c for c, p in enumerate(probs) if p > 0)

    def apply(self, a: int, case: int, m: np.ndarray, ctx: _Ctx) -> None:
        for e in self.in_effects[a]:
            e(m, ctx)
        for e in self.case_effects[a][case]:
            e(m, ctx)
        for slot, name in self.token_writes[a][case]:
            if m[slot] < 0:
                raise NegativeTokens(name)


class Simulator:
    """Executes one compiled model; reusable across batches."""

    def __init__(self, model: SanModel | CompiledModel):
        self.compiled = model if isinstance(model, CompiledModel) else CompiledModel(model)

    @property
    def model(self) -> SanModel:
        return self.compiled.model

    def _resolve(self, a: str | int | Activity) -> int:
        if isinstance(a, Activity):
            a = a.name
        return self.compiled.index[a] if isinstance(a, str) else int(a)

    def _array(self, m: Marking | None) -> np.ndarray:
        cm = self.compiled
        if m is None:
            return cm.layout.initial()
        if m.layout.offset != cm.layout.offset:
            raise ModelError("marking does not belong to this model")
        return m.values.copy()

    def enabled(self, a, m: Marking, time: float = 0.0) -> bool:
        return self.compiled.is_enabled(self._resolve(a), self._array(m), _Ctx(time))

    def fire(self, a, m: Marking, rng, case: int | None = None, time: float = 0.0) -> tuple[Marking, int]:
        """Fire an enabled activity; returns the new marking and the chosen case."""
        cm = self.compiled
        k = self._resolve(a)
        arr = self._array(m)
        ctx = _Ctx(time)
        if not cm.is_enabled(k, arr, ctx):
            raise SanError(f"activity {cm.names[k]!r} is not enabled")
        if case is None:
            case = cm.choose_case(k, arr, ctx, rng)
        else:
            cm.case_probabilities(k, arr, ctx)
        cm.apply(k, case, arr, ctx)
        return Marking(cm.layout, arr), case

    def simulate(self, stop_time: float, seed: int, *, record_events: bool = True,
                 watch: Iterable[str] = (), initial: Marking | None = None,
                 max_events: int | None = None) -> Trajectory:
        if not stop_time > 0:
            raise ValueError("stop_time must be positive")
        cm = self.compiled
        lay = cm.layout
        rs = np.random.RandomState(seed)
        m = self._array(initial)
        ctx = _Ctx(0.0)
        n_act = len(cm.names)
        sched = np.full(n_act, math.inf)
        version = np.zeros(n_act, dtype=np.int64)
        inst_on = np.zeros(n_act, dtype=bool)
        timed: list[tuple[float, int, int]] = []
        inst: list[int] = []
        events: list[tuple[float, str, int]] | None = [] if record_events else None
        watch = list(watch)
        watch_slots = [(w, lay.slot(w), lay.size[w], lay.array[w]) for w in watch]
        samples_t: dict[str, list[float]] = {w: [] for w in watch}
        samples_v: dict[str, list] = {w: [] for w in watch}
        kind = cm.kind
        log = math.log

        def evaluate(a: int):
            en = cm.is_enabled(a, m, ctx)
            k = kind[a]
            if k == _INST:
                if en and not inst_on[a]:
                    heapq.heappush(inst, a)
                inst_on[a] = en
                return
            if not en:
                if sched[a] != math.inf:
                    sched[a] = math.inf
                    version[a] += 1
                return
            if k == _EXP:
                rate = cm.timing[a](m, ctx)
                if not rate > 0 or not math.isfinite(rate):
                    raise SanError(f"activity {cm.names[a]!r} has non-positive rate {rate}")
                t = ctx.time + (-log(1.0 - rs.random())) / rate
            elif sched[a] == math.inf:
                delay = cm.timing[a](m, ctx)
                if not delay >= 0:
                    raise SanError(f"activity {cm.names[a]!r} has negative delay {delay}")
                t = ctx.time + delay
            else:
                return
            sched[a] = t
            version[a] += 1
            heapq.heappush(timed, (t, a, version[a]))

        def record():
            for w, o, size, is_array in watch_slots:
                val = m[o:o + size].copy() if is_array else m[o]
                vals = samples_v[w]
                if vals and (np.array_equal(vals[-1], val) if is_array else vals[-1] == val):
                    continue
                ts = samples_t[w]
                if ts and ts[-1] == ctx.time:
                    vals[-1] = val
                    if len(vals) > 1 and (np.array_equal(vals[-2], val) if is_array else vals[-2] == val):
                        vals.pop()
                        ts.pop()
                    continue
                ts.append(ctx.time)
                vals.append(val)

        def fire(a: int):
            case = cm.choose_case(a, m, ctx, rs)
            cm.apply(a, case, m, ctx)
            if events is not None:
                events.append((ctx.time, cm.names[a], case))
            for b in cm.affected[a][case]:
                evaluate(b)
            return case

        for a in range(n_act):
            evaluate(a)
        record()
        n_events = 0
        last = 0.0
        limit = max_events if max_events is not None else math.inf
        while True:
            count = 0
            while inst:
                a = heapq.heappop(inst)
                if not inst_on[a]:
                    continue
                inst_on[a] = False
                count += 1
                if count > MAX_INSTANTANEOUS:
                    raise InstantaneousLoop(ctx.time, count)
                fire(a)
                n_events += 1
                last = ctx.time
            record()
            if n_events >= limit:
                break
            while timed and version[timed[0][1]] != timed[0][2]:
                heapq.heappop(timed)
            if not timed or timed[0][0] >= stop_time:
                break
            t, a, _ = heapq.heappop(timed)
            ctx.time = t
            sched[a] = math.inf
            version[a] += 1
            fire(a)
            n_events += 1
            last = t
        samples = {w: (np.array(samples_t[w]), np.array(samples_v[w])) for w in watch}
        return Trajectory(seed=seed, events=events, final_marking=Marking(lay, m), final_time=last,
                          n_events=n_events, stop_time=stop_time, samples=samples)

    def replay(self, events: Sequence[tuple[float, str, int]], initial: Marking | None = None) -> Marking:
        """Re-apply a recorded event list through :meth:`fire`."""
        m = initial or Marking(self.compiled.layout, self.compiled.layout.initial())
        for t, name, case in events:
            m, _ = self.fire(name, m, None, case=case, time=t)
        return m


def enabled(model: SanModel, activity, marking: Marking) -> bool:
    return Simulator(model).enabled(activity, marking)


def fire(model: SanModel, activity, marking: Marking, rng) -> tuple[Marking, int]:
    return Simulator(model).fire(activity, marking, rng)


def simulate(model: SanModel, stop_time: float, seed: int, **kwargs) -> Trajectory:
    return Simulator(model).simulate(stop_time, seed, **kwargs)
