"""Stochastic activity network building blocks.

Every gate, rate and effect is a small descriptor naming the places it touches.
Descriptors can be renamed (for composition) and bound to marking slots (for
execution). ``Fn``, ``Pred`` and ``Effect`` wrap plain callables for behaviour
that does not fit the fixed vocabulary; they declare their places explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

TOKEN = "token"
EXTENDED = "extended"


class SanError(RuntimeError):
    pass


class ModelError(SanError, ValueError):
    pass


class NegativeTokens(SanError):
    def __init__(self, place: str):
        self.place = place
        super().__init__(f"token count of place {place!r} would become negative")


class BadCaseDistribution(SanError):
    def __init__(self, activity: str, probs):
        self.activity = activity
        self.probs = tuple(float(p) for p in probs)
        super().__init__(f"case probabilities of {activity!r} are not a distribution: {self.probs}")


class InstantaneousLoop(SanError):
    def __init__(self, time: float, count: int):
        self.time = time
        self.count = count
        super().__init__(f"{count} instantaneous firings at time {time}")


# -- places ------------------------------------------------------------------

@dataclass(frozen=True)
class Place:
    name: str
    initial: Any = 0
    kind: str = TOKEN

    def __post_init__(self):
        if self.kind not in (TOKEN, EXTENDED):
            raise ModelError(f"place {self.name}: unknown kind {self.kind!r}")
        if self.kind == TOKEN:
            if int(self.initial) != self.initial or self.initial < 0:
                raise ModelError(f"place {self.name}: token count must be a nonnegative integer")
            object.__setattr__(self, "initial", int(self.initial))
        elif np.ndim(self.initial) > 0:
            object.__setattr__(self, "initial", tuple(float(x) for x in np.ravel(self.initial)))
        else:
            object.__setattr__(self, "initial", float(self.initial))

    @property
    def is_array(self) -> bool:
        return isinstance(self.initial, tuple)

    @property
    def size(self) -> int:
        return len(self.initial) if self.is_array else 1

    def same_type(self, other: "Place") -> bool:
        return self.kind == other.kind and self.is_array == other.is_array and self.size == other.size


def token(name: str, count: int = 0) -> Place:
    return Place(name, count, TOKEN)


def extended(name: str, value=0.0) -> Place:
    return Place(name, value, EXTENDED)


class Layout:
    """Maps place names to slices of a flat float64 marking vector."""

    def __init__(self, places: Sequence[Place]):
        self.places = tuple(places)
        self.offset: dict[str, int] = {}
        self.size: dict[str, int] = {}
        self.kind: dict[str, str] = {}
        self.array: dict[str, bool] = {}
        off = 0
        for p in self.places:
            self.offset[p.name] = off
            self.size[p.name] = p.size
            self.kind[p.name] = p.kind
            self.array[p.name] = p.is_array
            off += p.size
        self.n_slots = off

    def slot(self, name: str) -> int:
        try:
            return self.offset[name]
        except KeyError:
            raise ModelError(f"unknown place {name!r}") from None

    def scalar_slot(self, name: str) -> int:
        s = self.slot(name)
        if self.array[name]:
            raise ModelError(f"place {name!r} is an array place")
        return s

    def name_at(self, slot: int) -> str:
        for name, off in self.offset.items():
            if off <= slot < off + self.size[name]:
                return name
        raise IndexError(slot)

    def initial(self) -> np.ndarray:
        m = np.empty(self.n_slots)
        for p in self.places:
            o = self.offset[p.name]
            if p.is_array:
                m[o:o + p.size] = p.initial
            else:
                m[o] = p.initial
        return m


class MarkingView:
    """Name-based access to a marking vector, as seen by callback gates."""

    __slots__ = ("_m", "_layout", "_names", "time")

    def __init__(self, m: np.ndarray, layout: Layout, names: Mapping[str, str] | None = None, time: float = 0.0):
        self._m = m
        self._layout = layout
        self._names = names
        self.time = time

    def _resolve(self, name: str) -> str:
        if self._names is None:
            return name
        try:
            return self._names[name]
        except KeyError:
            raise ModelError(f"callback touched undeclared place {name!r}") from None

    def __getitem__(self, name: str):
        g = self._resolve(name)
        o = self._layout.slot(g)
        if self._layout.array[g]:
            return self._m[o:o + self._layout.size[g]]
        v = self._m[o]
        return int(v) if self._layout.kind[g] == TOKEN else float(v)

    def __setitem__(self, name: str, value):
        g = self._resolve(name)
        o = self._layout.slot(g)
        if self._layout.array[g]:
            self._m[o:o + self._layout.size[g]] = value
        else:
            self._m[o] = value

    def __contains__(self, name: str) -> bool:
        return name in (self._names if self._names is not None else self._layout.offset)


class Marking(Mapping[str, Any]):
    """Immutable-by-convention snapshot of a model marking."""

    def __init__(self, layout: Layout, values: np.ndarray):
        self.layout = layout
        self.values = values

    def __getitem__(self, name: str):
        return MarkingView(self.values, self.layout)[name]

    def __iter__(self):
        return iter(self.layout.offset)

    def __len__(self):
        return len(self.layout.offset)

    def copy(self) -> "Marking":
        return Marking(self.layout, self.values.copy())

    def replace(self, **changes) -> "Marking":
        out = self.copy()
        view = MarkingView(out.values, out.layout)
        for k, v in changes.items():
            view[k] = v
        return out

    def as_dict(self) -> dict[str, Any]:
        return {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.items()}

    def __eq__(self, other):
        if isinstance(other, Marking):
            return self.layout.offset == other.layout.offset and np.array_equal(self.values, other.values)
        return NotImplemented

    def __repr__(self):
        return f"Marking({self.as_dict()!r})"


Renamer = Callable[[str], str]


# -- values: rates, delays, case probabilities --------------------------------

@dataclass(frozen=True)
class Const:
    value: float

    @property
    def reads(self) -> tuple[str, ...]:
        return ()

    def renamed(self, f: Renamer) -> "Const":
        return self

    def bind(self, layout: Layout):
        v = float(self.value)
        return lambda m, ctx: v


@dataclass(frozen=True)
class Linear:
    """``intercept + slope * m[place]``."""

    place: str
    intercept: float
    slope: float

    @property
    def reads(self) -> tuple[str, ...]:
        return (self.place,)

    def renamed(self, f: Renamer) -> "Linear":
        return replace(self, place=f(self.place))

    def bind(self, layout: Layout):
        s = layout.scalar_slot(self.place)
        a, b = float(self.intercept), float(self.slope)
        return lambda m, ctx: a + b * m[s]


@dataclass(frozen=True)
class Fn:
    """Marking-dependent value computed by ``fn(view)``."""

    fn: Callable[[MarkingView], float]
    places: tuple[str, ...]
    names: Mapping[str, str] | None = None

    @property
    def reads(self) -> tuple[str, ...]:
        return tuple(self._names().values())

    def _names(self) -> Mapping[str, str]:
        return self.names if self.names is not None else {p: p for p in self.places}

    def renamed(self, f: Renamer) -> "Fn":
        return replace(self, names={k: f(v) for k, v in self._names().items()})

    def bind(self, layout: Layout):
        names = dict(self._names())
        fn = self.fn

        def value(m, ctx):
            return float(fn(MarkingView(m, layout, names, ctx.time)))
        return value


def as_value(v) -> Const | Linear | Fn:
    if isinstance(v, (Const, Linear, Fn)):
        return v
    if callable(v):
        raise ModelError("wrap marking-dependent callables in Fn(fn, places)")
    return Const(float(v))


# -- timing ------------------------------------------------------------------

@dataclass(frozen=True)
class Exponential:
    rate: Any

    def __post_init__(self):
        object.__setattr__(self, "rate", as_value(self.rate))

    @property
    def reads(self) -> tuple[str, ...]:
        return self.rate.reads

    def renamed(self, f: Renamer) -> "Exponential":
        return Exponential(self.rate.renamed(f))


@dataclass(frozen=True)
class Deterministic:
    """Fixed delay, evaluated when the activity becomes enabled."""

    delay: Any

    def __post_init__(self):
        object.__setattr__(self, "delay", as_value(self.delay))

    @property
    def reads(self) -> tuple[str, ...]:
        return self.delay.reads

    def renamed(self, f: Renamer) -> "Deterministic":
        return Deterministic(self.delay.renamed(f))


@dataclass(frozen=True)
class Instantaneous:
    @property
    def reads(self) -> tuple[str, ...]:
        return ()

    def renamed(self, f: Renamer) -> "Instantaneous":
        return self


# -- predicates --------------------------------------------------------------

_CMP = {
    ">=": lambda x, v: x >= v,
    ">": lambda x, v: x > v,
    "<=": lambda x, v: x <= v,
    "<": lambda x, v: x < v,
    "==": lambda x, v: x == v,
    "!=": lambda x, v: x != v,
}
CMP_CODES = {op: k for k, op in enumerate(_CMP)}


@dataclass(frozen=True)
class Cmp:
    place: str
    op: str
    value: float

    def __post_init__(self):
        if self.op not in _CMP:
            raise ModelError(f"unknown comparison {self.op!r}")

    @property
    def reads(self) -> tuple[str, ...]:
        return (self.place,)

    def renamed(self, f: Renamer) -> "Cmp":
        return replace(self, place=f(self.place))

    def bind(self, layout: Layout):
        s = layout.scalar_slot(self.place)
        op = _CMP[self.op]
        v = float(self.value)
        return lambda m, ctx: op(m[s], v)


@dataclass(frozen=True)
class Pred:
    fn: Callable[[MarkingView], bool]
    places: tuple[str, ...]
    names: Mapping[str, str] | None = None

    @property
    def reads(self) -> tuple[str, ...]:
        return tuple(self._names().values())

    def _names(self):
        return self.names if self.names is not None else {p: p for p in self.places}

    def renamed(self, f: Renamer) -> "Pred":
        return replace(self, names={k: f(v) for k, v in self._names().items()})

    def bind(self, layout: Layout):
        names = dict(self._names())
        fn = self.fn
        return lambda m, ctx: bool(fn(MarkingView(m, layout, names, ctx.time)))


def has_tokens(place: str, n: int = 1) -> Cmp:
    return Cmp(place, ">=", n)


# -- effects -----------------------------------------------------------------

@dataclass(frozen=True)
class Add:
    place: str
    amount: float = 1

    @property
    def reads(self):
        return ()

    @property
    def writes(self):
        return (self.place,)

    def renamed(self, f):
        return replace(self, place=f(self.place))

    def bind(self, layout):
        s = layout.scalar_slot(self.place)
        a = float(self.amount)

        def run(m, ctx):
            m[s] += a
        return run


@dataclass(frozen=True)
class Set:
    place: str
    value: float

    @property
    def reads(self):
        return ()

    @property
    def writes(self):
        return (self.place,)

    def renamed(self, f):
        return replace(self, place=f(self.place))

    def bind(self, layout):
        s = layout.scalar_slot(self.place)
        v = float(self.value)

        def run(m, ctx):
            m[s] = v
        return run


@dataclass(frozen=True)
class Copy:
    dst: str
    src: str

    @property
    def reads(self):
        return (self.src,)

    @property
    def writes(self):
        return (self.dst,)

    def renamed(self, f):
        return replace(self, dst=f(self.dst), src=f(self.src))

    def bind(self, layout):
        d = layout.slot(self.dst)
        s = layout.slot(self.src)
        k = layout.size[self.src]

        def run(m, ctx):
            m[d:d + k] = m[s:s + k]
        return run


@dataclass(frozen=True)
class Share:
    """Move the integer amount in ``src`` to the targets holding a positive value.

    Equal shares go to every positive target; the remainder goes to the first
    positive target in ``targets`` order. With no positive target the amount is
    added to ``lost``. ``src`` ends at zero.
    """

    src: str
    targets: tuple[str, ...]
    lost: str

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))

    @property
    def reads(self):
        return (self.src, *self.targets)

    @property
    def writes(self):
        return (self.src, *self.targets, self.lost)

    def renamed(self, f):
        return Share(f(self.src), tuple(f(t) for t in self.targets), f(self.lost))

    def bind(self, layout):
        src = layout.scalar_slot(self.src)
        lost = layout.scalar_slot(self.lost)
        tg = [layout.scalar_slot(t) for t in self.targets]

        def run(m, ctx):
            amount = m[src]
            alive = [t for t in tg if m[t] > 0]
            if alive:
                k = len(alive)
                share = math.floor(amount / k)
                rem = amount - share * k
                for t in alive:
                    m[t] += share
                m[alive[0]] += rem
            else:
                m[lost] += amount
            m[src] = 0.0
        return run


@dataclass(frozen=True)
class Effect:
    """Arbitrary marking update ``fn(view)`` restricted to declared places."""

    fn: Callable[[MarkingView], None]
    reads_: tuple[str, ...] = ()
    writes_: tuple[str, ...] = ()
    names: Mapping[str, str] | None = None

    def _names(self):
        if self.names is not None:
            return self.names
        return {p: p for p in (*self.reads_, *self.writes_)}

    @property
    def reads(self):
        n = self._names()
        return tuple(n[p] for p in self.reads_)

    @property
    def writes(self):
        n = self._names()
        return tuple(n[p] for p in self.writes_)

    def renamed(self, f):
        return replace(self, names={k: f(v) for k, v in self._names().items()})

    def bind(self, layout):
        names = dict(self._names())
        fn = self.fn

        def run(m, ctx):
            fn(MarkingView(m, layout, names, ctx.time))
        return run


# -- gates and activities ----------------------------------------------------

@dataclass(frozen=True)
class InputGate:
    predicates: tuple = ()
    effects: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "predicates", tuple(self.predicates))
        object.__setattr__(self, "effects", tuple(self.effects))

    def renamed(self, f):
        return InputGate(tuple(p.renamed(f) for p in self.predicates), tuple(e.renamed(f) for e in self.effects))


@dataclass(frozen=True)
class OutputGate:
    effects: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "effects", tuple(self.effects))

    def renamed(self, f):
        return OutputGate(tuple(e.renamed(f) for e in self.effects))


@dataclass(frozen=True)
class Case:
    probability: Any = 1.0
    gate: OutputGate = OutputGate()

    def __post_init__(self):
        object.__setattr__(self, "probability", as_value(self.probability))

    def renamed(self, f):
        return Case(self.probability.renamed(f), self.gate.renamed(f))


@dataclass(frozen=True)
class Activity:
    """A timed or instantaneous activity.

    ``arcs`` lists extra places the activity is connected to without a concrete
    read, e.g. every slot of an array accessed through a runtime index. Arcs
    count as enabling dependencies.
    """

    name: str
    timing: Any
    input_gates: tuple[InputGate, ...] = ()
    cases: tuple[Case, ...] = (Case(),)
    arcs: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "input_gates", tuple(self.input_gates))
        object.__setattr__(self, "cases", tuple(self.cases) or (Case(),))
        object.__setattr__(self, "arcs", tuple(self.arcs))

    @property
    def instantaneous(self) -> bool:
        return isinstance(self.timing, Instantaneous)

    @property
    def enabling_reads(self) -> tuple[str, ...]:
        """Places whose change can alter enabling, timing or case choice."""
        out = list(self.timing.reads)
        for g in self.input_gates:
            for p in g.predicates:
                out.extend(p.reads)
        for c in self.cases:
            out.extend(c.probability.reads)
        out.extend(self.arcs)
        return tuple(dict.fromkeys(out))

    def writes(self, case: int | None = None) -> tuple[str, ...]:
        out = []
        for g in self.input_gates:
            for e in g.effects:
                out.extend(e.writes)
        cases = self.cases if case is None else (self.cases[case],)
        for c in cases:
            for e in c.gate.effects:
                out.extend(e.writes)
        return tuple(dict.fromkeys(out))

    @property
    def places(self) -> tuple[str, ...]:
        """Every place the activity is connected to by some arc."""
        out = list(self.enabling_reads)
        for g in self.input_gates:
            for e in g.effects:
                out.extend(e.reads)
        for c in self.cases:
            for e in c.gate.effects:
                out.extend(e.reads)
        out.extend(self.writes())
        return tuple(dict.fromkeys(out))

    def renamed(self, f: Renamer, name: str | None = None) -> "Activity":
        return Activity(
            name=self.name if name is None else name,
            timing=self.timing.renamed(f),
            input_gates=tuple(g.renamed(f) for g in self.input_gates),
            cases=tuple(c.renamed(f) for c in self.cases),
            arcs=tuple(f(a) for a in self.arcs),
        )

    def with_arcs(self, extra: Iterable[str]) -> "Activity":
        return replace(self, arcs=tuple(dict.fromkeys((*self.arcs, *extra))))


@dataclass(frozen=True)
class SanModel:
    """Flat SAN. ``groups`` maps activity names to the component that owns them
    and ``shared`` lists the places a composition operator merged; both are
    empty for atomic models."""

    name: str
    places: tuple[Place, ...]
    activities: tuple[Activity, ...]
    groups: Mapping[str, str] = field(default_factory=dict)
    shared: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "places", tuple(self.places))
        object.__setattr__(self, "activities", tuple(self.activities))
        object.__setattr__(self, "groups", dict(self.groups))
        object.__setattr__(self, "shared", tuple(self.shared))
        names = [p.name for p in self.places]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ModelError(f"duplicate place names {dup}")
        anames = [a.name for a in self.activities]
        if len(set(anames)) != len(anames):
            raise ModelError("duplicate activity names")
        known = set(names)
        for a in self.activities:
            missing = [p for p in a.places if p not in known]
            if missing:
                raise ModelError(f"activity {a.name!r} references unknown places {missing}")

    def place(self, name: str) -> Place:
        for p in self.places:
            if p.name == name:
                return p
        raise KeyError(name)

    def activity(self, name: str) -> Activity:
        for a in self.activities:
            if a.name == name:
                return a
        raise KeyError(name)

    @property
    def place_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.places)

    def layout(self) -> Layout:
        return Layout(self.places)

    def initial_marking(self) -> Marking:
        lay = self.layout()
        return Marking(lay, lay.initial())

    def with_initial(self, **values) -> "SanModel":
        places = tuple(replace(p, initial=values[p.name]) if p.name in values else p for p in self.places)
        return replace(self, places=places)

    def renamed(self, place_map: Renamer, activity_prefix: str = "", name: str | None = None) -> "SanModel":
        return SanModel(
            name=self.name if name is None else name,
            places=tuple(replace(p, name=place_map(p.name)) for p in self.places),
            activities=tuple(a.renamed(place_map, activity_prefix + a.name) for a in self.activities),
            groups={activity_prefix + k: v for k, v in self.groups.items()},
            shared=tuple(place_map(p) for p in self.shared),
        )
