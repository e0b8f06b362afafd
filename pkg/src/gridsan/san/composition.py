"""Join and Rep composition, and the SS, CH and DARep replication strategies.

All operators produce flat :class:`SanModel` objects. Names of places that are
not shared get a child prefix ``c{k}.``; shared places keep their name and exist
once. Each activity is tagged with the component it came from (``groups``),
which is what the shared-place incidence count is measured against.

A :class:`Template` describes one component as a function of its index. Its
body asks a :class:`ComponentEnv` for the place holding component ``j``'s
exported state, so the same body works under every strategy:

* SS declares every exported place in every replica and connects each
  replica's state-touching activities to all of them (indexed access).
* DARep declares only the exported places a component actually depends on.
* CH keeps private copies, shares a single channel place ``ch`` and lets
  per-replica manager activities copy published values into the local copies.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import networkx as nx
import numpy as np

from gridsan.san.model import (
    Activity,
    Case,
    Effect,
    InputGate,
    Instantaneous,
    ModelError,
    OutputGate,
    Place,
    Pred,
    SanError,
    SanModel,
    extended,
)


class CompositionError(ModelError):
    pass


class SharedPlaceTypeMismatch(CompositionError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"shared place {name!r} has different kinds or sizes across children")


class InitialValueConflict(CompositionError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"shared place {name!r} has different initial values across children")


class DanglingDependency(CompositionError):
    def __init__(self, component: int, target: int, place: str = ""):
        self.component = component
        self.target = target
        self.place = place
        what = f" (place {place!r})" if place else ""
        super().__init__(f"component {component} references component {target}{what} outside its dependencies")


class ChannelOverflow(SanError):
    pass


# -- operators ---------------------------------------------------------------

def _label(prefix: str, old: str | None) -> str:
    head = prefix.rstrip(".")
    if old:
        return f"{head}.{old}" if head else old
    return head


def join(shared: Iterable[str], submodels: Sequence[SanModel], name: str = "join",
         prefixes: Sequence[str] | None = None) -> SanModel:
    """Merge submodels, keeping one copy of each shared place."""
    shared = list(dict.fromkeys(shared))
    shared_set = set(shared)
    if prefixes is None:
        prefixes = [f"c{k}." for k in range(len(submodels))]
    if len(prefixes) != len(submodels):
        raise ValueError("one prefix per submodel is required")
    present = {p.name for sm in submodels for p in sm.places}
    missing = [s for s in shared if s not in present]
    if missing:
        raise CompositionError(f"shared places {missing} do not occur in any submodel")

    places: list[Place] = []
    seen: dict[str, Place] = {}
    activities: list[Activity] = []
    groups: dict[str, str] = {}
    for sm, pre in zip(submodels, prefixes):
        def f(p, pre=pre):
            return p if p in shared_set else pre + p
        for p in sm.places:
            if p.name in shared_set:
                first = seen.get(p.name)
                if first is None:
                    seen[p.name] = p
                    places.append(p)
                elif not first.same_type(p):
                    raise SharedPlaceTypeMismatch(p.name)
                elif first.initial != p.initial:
                    raise InitialValueConflict(p.name)
            else:
                places.append(replace(p, name=pre + p.name))
        for a in sm.activities:
            new = a.renamed(f, pre + a.name)
            activities.append(new)
            groups[new.name] = _label(pre, sm.groups.get(a.name))
    return SanModel(name, places, activities, groups, shared=tuple(s for s in shared))


def rep(n: int, shared: Iterable[str], submodel: SanModel | Callable[[int], SanModel], name: str = "rep") -> SanModel:
    """``n`` replicas of ``submodel`` sharing ``shared``.

    ``submodel`` may be a function of the replica index, which is how
    index-dependent parameters are resolved at instantiation.
    """
    if n < 1:
        raise ValueError("n must be positive")
    children = [submodel(k) if callable(submodel) else submodel for k in range(n)]
    return join(shared, children, name=name)


@dataclass(frozen=True)
class Atomic:
    model: SanModel

    def flatten(self) -> SanModel:
        return self.model


@dataclass(frozen=True)
class Join:
    shared: frozenset
    children: tuple

    def flatten(self) -> SanModel:
        return join(sorted(self.shared), [c.flatten() for c in self.children])


@dataclass(frozen=True)
class Rep:
    n: int
    shared: frozenset
    child: object

    def flatten(self) -> SanModel:
        return rep(self.n, sorted(self.shared), self.child.flatten())


# -- topologies --------------------------------------------------------------

@dataclass(frozen=True)
class Topology:
    """Directed dependencies: edge ``(i, j)`` means component i reads component j.

    Edges are stored sorted and unique; self-loops are dropped because a
    component always has access to its own state.
    """

    n: int
    edges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("topology needs at least one component")
        clean = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i}, {j}) outside 0..{self.n - 1}")
            if i != j:
                clean.add((i, j))
        object.__setattr__(self, "edges", tuple(sorted(clean)))
        deps: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in self.edges:
            deps[i].append(j)
        object.__setattr__(self, "_deps", tuple(tuple(d) for d in deps))

    def depends_on(self, i: int) -> tuple[int, ...]:
        return self._deps[i]

    def readable(self, i: int) -> tuple[int, ...]:
        return tuple(sorted({i, *self._deps[i]}))

    @property
    def out_degree(self) -> int:
        return max((len(d) for d in self._deps), default=0)

    @classmethod
    def complete(cls, n: int) -> "Topology":
        return cls(n, tuple((i, j) for i in range(n) for j in range(n) if i != j))

    @classmethod
    def empty(cls, n: int) -> "Topology":
        return cls(n, ())

    @classmethod
    def ring(cls, n: int, d: int) -> "Topology":
        """Component i depends on i+1, ..., i+d (mod n)."""
        if not 0 <= d < n:
            raise ValueError("ring degree must satisfy 0 <= d < n")
        return cls(n, tuple((i, (i + k) % n) for i in range(n) for k in range(1, d + 1)))

    @classmethod
    def random(cls, n: int, d: int, seed: int = 0) -> "Topology":
        """Each component depends on ``d`` distinct others drawn uniformly."""
        if not 0 <= d < n:
            raise ValueError("random degree must satisfy 0 <= d < n")
        rng = np.random.default_rng(seed)
        edges = []
        for i in range(n):
            for j in rng.choice(n - 1, size=d, replace=False):
                edges.append((i, int(j) + (j >= i)))
        return cls(n, tuple(edges))

    def to_dict(self) -> dict:
        return {"n": self.n, "edges": [list(e) for e in self.edges]}

    @classmethod
    def from_dict(cls, data: dict) -> "Topology":
        return cls(int(data["n"]), tuple(tuple(e) for e in data.get("edges", ())))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Topology":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- templates and strategies -------------------------------------------------

def exported_name(proto: str, j: int) -> str:
    return f"{proto}[{j}]"


@dataclass
class ComponentEnv:
    """What component ``i`` sees while its body is being built."""

    i: int
    n: int
    readable: tuple[int, ...]
    exported: tuple[Place, ...]
    requested: set = field(default_factory=set)

    def state(self, j: int, proto: str | None = None) -> str:
        if proto is None:
            if len(self.exported) != 1:
                raise ValueError("template exports several places; name one")
            proto = self.exported[0].name
        if proto not in {p.name for p in self.exported}:
            raise KeyError(f"{proto!r} is not exported")
        if j not in self.readable:
            raise DanglingDependency(self.i, j, exported_name(proto, j))
        self.requested.add((j, proto))
        return exported_name(proto, j)

    @property
    def own(self) -> str:
        return self.state(self.i)

    def places(self) -> list[Place]:
        """Exported-state places the body must declare."""
        return [replace(p, name=exported_name(p.name, j)) for j in self.readable for p in self.exported]


@dataclass(frozen=True)
class Template:
    """A component body ``body(i, env) -> SanModel`` plus its exported places.

    ``exported`` holds one prototype place per exported quantity; component j's
    copy is named ``proto[j]``.
    """

    body: Callable[[int, ComponentEnv], SanModel]
    exported: tuple[Place, ...]

    def __post_init__(self):
        object.__setattr__(self, "exported", tuple(self.exported))

    def build(self, i: int, n: int, readable: Sequence[int]) -> tuple[SanModel, ComponentEnv]:
        env = ComponentEnv(i, n, tuple(sorted(readable)), self.exported)
        model = self.body(i, env)
        names = set(model.place_names)
        for j in env.readable:
            for p in self.exported:
                if exported_name(p.name, j) not in names:
                    raise DanglingDependency(i, j, exported_name(p.name, j))
        return model, env

    def all_exported(self, n: int) -> list[str]:
        return [exported_name(p.name, j) for j in range(n) for p in self.exported]


INDEX_PLACE = "index"


def instantiate_ss(t: Template, n: int) -> SanModel:
    """Every replica declares and is connected to all ``n`` exported places."""
    everything = t.all_exported(n)
    everything_set = set(everything)

    def gencomp(i: int) -> SanModel:
        body, _ = t.build(i, n, range(n))
        acts = tuple(a.with_arcs(everything) if everything_set.intersection(a.places) else a
                     for a in body.activities)
        places = (*body.places, extended(INDEX_PLACE, float(i)))
        return replace(body, places=places, activities=acts)

    return rep(n, everything, gencomp, name="ss")


def instantiate_darep(t: Template, topo: Topology) -> SanModel:
    """Component i declares its own exported state and that of its dependencies only."""
    comps = [t.build(i, topo.n, topo.readable(i))[0] for i in range(topo.n)]
    return join(t.all_exported(topo.n), comps, name="darep")


CHANNEL = "ch"
CURSOR = "cursor"
_REC = 5  # writer, place id, value, sequence number, remaining readers


def _channel_size(capacity: int) -> int:
    return 2 + _REC * capacity


def _publisher(i: int, n: int, capacity: int, local: dict[str, int]) -> Effect:
    """Append one record per written exported copy to the channel."""
    names = tuple(local)
    ids = tuple(local[k] for k in names)

    def publish(v):
        if n == 1:
            return
        ch = v[CHANNEL]
        count, seq = int(ch[0]), int(ch[1])
        for name, pid in zip(names, ids):
            if count >= capacity:
                raise ChannelOverflow(f"channel capacity {capacity} exceeded by component {i}")
            seq += 1
            o = 2 + _REC * count
            ch[o:o + _REC] = (i, pid, v[name], seq, n - 1)
            count += 1
        ch[0], ch[1] = count, seq

    return Effect(publish, reads_=(CHANNEL, *names), writes_=(CHANNEL,))


def _drain(i: int, held: dict[int, str]) -> Effect:
    """Copy records written by other components into the local copies."""
    copies = tuple(held.values())

    def drain(v):
        ch = v[CHANNEL]
        cursor = v[CURSOR]
        count = int(ch[0])
        keep = []
        for r in range(count):
            o = 2 + _REC * r
            writer, pid, value, seq, remaining = ch[o:o + _REC]
            if seq > cursor and int(writer) != i:
                name = held.get(int(pid))
                if name is not None:
                    v[name] = value
                remaining -= 1
            if remaining > 0:
                keep.append((writer, pid, value, seq, remaining))
        body = ch[2:]
        body[:] = 0.0
        for r, rec in enumerate(keep):
            body[_REC * r:_REC * (r + 1)] = rec
        ch[0] = len(keep)
        v[CURSOR] = ch[1]

    return Effect(drain, reads_=(CHANNEL, CURSOR), writes_=(CHANNEL, CURSOR, *copies))


def _pending(v) -> bool:
    return v[CHANNEL][1] > v[CURSOR]


def instantiate_ch(t: Template, n: int, topo: Topology | None = None) -> SanModel:
    """Only the channel ``ch`` is shared; replicas keep private copies.

    ``topo`` decides which copies each replica keeps (complete by default).
    Publishing happens in the output gates of any activity writing a copy; the
    per-replica manager is an instantaneous activity, so copies are in sync
    before time advances.
    """
    topo = topo or Topology.complete(n)
    if topo.n != n:
        raise ValueError("topology size does not match n")
    capacity = n * len(t.exported)
    pid = {exported_name(p.name, j): j * len(t.exported) + k
           for j in range(n) for k, p in enumerate(t.exported)}
    channel = extended(CHANNEL, np.zeros(_channel_size(capacity)))

    def replica(i: int) -> SanModel:
        body, env = t.build(i, n, topo.readable(i))
        copies = {p.name for p in env.places()}
        acts = []
        for a in body.activities:
            cases = []
            for c in range(len(a.cases)):
                written = [w for w in a.writes(c) if w in copies]
                case = a.cases[c]
                if written:
                    pub = _publisher(i, n, capacity, {w: pid[w] for w in written})
                    case = Case(case.probability, OutputGate((*case.gate.effects, pub)))
                cases.append(case)
            acts.append(replace(a, cases=tuple(cases)))
        gencomp = replace(body, places=(*body.places, channel), activities=tuple(acts))
        held = {pid[w]: w for w in sorted(copies, key=pid.get)}
        manager = SanModel("chman", (channel, extended(CURSOR, 0.0), *env.places()), (
            Activity("sync", Instantaneous(), (InputGate((Pred(_pending, (CHANNEL, CURSOR)),), (_drain(i, held),)),)),
        ))
        shared_inside = [CHANNEL, *sorted(copies)]
        return join(shared_inside, [gencomp, manager], name=f"replica{i}", prefixes=["", "chman."])

    return rep(n, [CHANNEL], replica, name="ch")


STRATEGIES = ("ss", "ch", "darep")


def instantiate(t: Template, strategy: str, topo: Topology) -> SanModel:
    if strategy == "ss":
        return instantiate_ss(t, topo.n)
    if strategy == "ch":
        return instantiate_ch(t, topo.n, topo)
    if strategy == "darep":
        return instantiate_darep(t, topo)
    raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


# -- structural measures -------------------------------------------------------

def component_of(model: SanModel, activity: str) -> str:
    label = model.groups.get(activity, "")
    return label.split(".")[0]


def incidence(model: SanModel) -> int:
    """Sum over shared places of the number of components connected to them."""
    shared = set(model.shared)
    users: dict[str, set[str]] = {p: set() for p in shared}
    for a in model.activities:
        comp = component_of(model, a.name)
        for p in shared.intersection(a.places):
            users[p].add(comp)
    return sum(len(u) for u in users.values())


def net_graph(model: SanModel) -> nx.Graph:
    """Bipartite place/activity graph; places with no arc are left out."""
    g = nx.Graph()
    for a in model.activities:
        g.add_node(("a", a.name), role="inst" if a.instantaneous else type(a.timing).__name__)
        for p in a.places:
            pl = model.place(p) if not g.has_node(("p", p)) else None
            if pl is not None:
                g.add_node(("p", p), role=f"{pl.kind}:{pl.size}")
            g.add_edge(("a", a.name), ("p", p))
    return g


def isomorphic(m1: SanModel, m2: SanModel) -> bool:
    g1, g2 = net_graph(m1), net_graph(m2)
    return nx.is_isomorphic(g1, g2, node_match=lambda x, y: x["role"] == y["role"])
