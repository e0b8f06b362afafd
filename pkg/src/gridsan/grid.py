"""Grid data model and bus admittance matrix construction.

All electrical quantities are per-unit on the ``base_mva`` / ``base_kv`` declared
by the grid. Complex numbers are stored in grid files as ``[re, im]`` pairs.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp

BUS_KINDS = ("slack", "pq")
EQUIPMENT_KINDS = ("dg_pv", "dg_wind", "inflexible_load", "flexible_load")
GENERATOR_KINDS = ("dg_pv", "dg_wind")
LOAD_KINDS = ("inflexible_load", "flexible_load")


class GridError(ValueError):
    """Raised for a grid that violates its structural invariants."""


class GridConnectivityError(GridError):
    def __init__(self, unreachable: Iterable[int]):
        self.unreachable = sorted(int(b) for b in unreachable)
        super().__init__(f"buses unreachable from the slack bus: {self.unreachable}")


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str = "pq"
    nominal_kv: float = 1.0
    attached: tuple[str, ...] = ()
    name: str = ""


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    series_admittance: complex
    shunt_admittance: complex = 0j
    switch_closed: bool = True


@dataclass(frozen=True)
class Oltc:
    from_bus: int
    to_bus: int
    series_admittance: complex
    tap: float = 1.0
    tap_min: float = 0.9
    tap_max: float = 1.1
    tap_step: float = 0.0125
    frozen: bool = False

    @property
    def position(self) -> int:
        """Tap position counted in steps from ``tap_min``."""
        return int(round((self.tap - self.tap_min) / self.tap_step))

    @property
    def n_positions(self) -> int:
        return int(round((self.tap_max - self.tap_min) / self.tap_step)) + 1

    def tap_at(self, position: int) -> float:
        return self.tap_min + position * self.tap_step


@dataclass(frozen=True)
class Equipment:
    id: str
    bus: int
    kind: str
    s_rated: complex
    profile: str | None = None

    @property
    def is_generator(self) -> bool:
        return self.kind in GENERATOR_KINDS

    @property
    def is_load(self) -> bool:
        return self.kind in LOAD_KINDS


@dataclass(frozen=True)
class Grid:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...] = ()
    oltcs: tuple[Oltc, ...] = ()
    equipment: tuple[Equipment, ...] = ()
    base_mva: float = 1.0
    base_kv: float = 1.0
    slack_voltage: complex = 1.0 + 0j
    _eq_index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "oltcs", tuple(self.oltcs))
        object.__setattr__(self, "equipment", tuple(self.equipment))
        self._validate()
        object.__setattr__(self, "_eq_index", {e.id: e for e in self.equipment})

    def _validate(self):
        ids = [b.id for b in self.buses]
        if ids != list(range(len(ids))):
            raise GridError("bus ids must be dense 0..n-1 in order")
        slacks = [b.id for b in self.buses if b.kind == "slack"]
        if len(slacks) != 1:
            raise GridError(f"exactly one slack bus required, found {len(slacks)}")
        for b in self.buses:
            if b.kind not in BUS_KINDS:
                raise GridError(f"bus {b.id}: unknown kind {b.kind!r}")
            if not b.nominal_kv > 0:
                raise GridError(f"bus {b.id}: nominal_kv must be positive")
        n = len(ids)
        for k, br in enumerate((*self.lines, *self.oltcs)):
            if not (0 <= br.from_bus < n and 0 <= br.to_bus < n):
                raise GridError(f"branch {k}: bus index out of range")
            if br.from_bus == br.to_bus:
                raise GridError(f"branch {k}: from and to bus coincide")
        for k, ln in enumerate(self.lines):
            if ln.switch_closed and ln.series_admittance == 0:
                raise GridError(f"line {k}: closed line with zero series admittance")
        for k, t in enumerate(self.oltcs):
            if t.series_admittance == 0:
                raise GridError(f"oltc {k}: zero series admittance")
            if not (t.tap_min - 1e-12 <= t.tap <= t.tap_max + 1e-12):
                raise GridError(f"oltc {k}: tap {t.tap} outside [{t.tap_min}, {t.tap_max}]")
            steps = (t.tap - t.tap_min) / t.tap_step
            if abs(steps - round(steps)) * t.tap_step > 1e-9:
                raise GridError(f"oltc {k}: tap {t.tap} is not on the step grid")
        seen = set()
        for e in self.equipment:
            if e.id in seen:
                raise GridError(f"duplicate equipment id {e.id!r}")
            seen.add(e.id)
            if e.kind not in EQUIPMENT_KINDS:
                raise GridError(f"equipment {e.id}: unknown kind {e.kind!r}")
            if not 0 <= e.bus < n:
                raise GridError(f"equipment {e.id}: bus {e.bus} out of range")
            if e.s_rated.real < 0:
                raise GridError(f"equipment {e.id}: negative rated active power")

    @property
    def n(self) -> int:
        return len(self.buses)

    @property
    def slack(self) -> int:
        return next(b.id for b in self.buses if b.kind == "slack")

    def equipment_by_id(self, eid: str) -> Equipment:
        return self._eq_index[eid]

    def with_switch(self, line: int, closed: bool) -> "Grid":
        lines = list(self.lines)
        lines[line] = replace(lines[line], switch_closed=closed)
        return replace(self, lines=tuple(lines))

    def with_tap(self, tap: float, oltc: int = 0) -> "Grid":
        oltcs = list(self.oltcs)
        oltcs[oltc] = replace(oltcs[oltc], tap=tap)
        return replace(self, oltcs=tuple(oltcs))

    def branches(self, closed_only: bool = True) -> list[tuple[int, int]]:
        out = [(ln.from_bus, ln.to_bus) for ln in self.lines if ln.switch_closed or not closed_only]
        out += [(t.from_bus, t.to_bus) for t in self.oltcs]
        return out

    def adjacency(self) -> list[list[int]]:
        """Sorted neighbour lists over closed branches."""
        adj: list[set[int]] = [set() for _ in range(self.n)]
        for f, t in self.branches():
            adj[f].add(t)
            adj[t].add(f)
        return [sorted(a) for a in adj]

    def unreachable(self) -> list[int]:
        adj = self.adjacency()
        seen = {self.slack}
        queue = deque([self.slack])
        while queue:
            b = queue.popleft()
            for nb in adj[b]:
                if nb not in seen:
                    seen.add(nb)
                    queue.append(nb)
        return [b for b in range(self.n) if b not in seen]

    def downstream_of(self, oltc: int = 0) -> list[int]:
        """Buses reached from the regulated side of an OLTC without crossing it."""
        t = self.oltcs[oltc]
        adj: list[set[int]] = [set() for _ in range(self.n)]
        for ln in self.lines:
            if ln.switch_closed:
                adj[ln.from_bus].add(ln.to_bus)
                adj[ln.to_bus].add(ln.from_bus)
        for k, o in enumerate(self.oltcs):
            if k != oltc:
                adj[o.from_bus].add(o.to_bus)
                adj[o.to_bus].add(o.from_bus)
        seen = {t.to_bus}
        queue = deque([t.to_bus])
        while queue:
            b = queue.popleft()
            for nb in adj[b]:
                if nb not in seen and nb != t.from_bus:
                    seen.add(nb)
                    queue.append(nb)
        return sorted(seen)


@dataclass(frozen=True)
class AdmittanceMatrix:
    n: int
    entries: sp.csr_matrix

    def toarray(self) -> np.ndarray:
        return self.entries.toarray()


def build_ybus(grid: Grid) -> AdmittanceMatrix:
    """Assemble the bus admittance matrix from closed lines and OLTCs.

    Lines use the pi-equivalent with the total shunt split half per end. An OLTC
    is an ideal tap ``t`` on its ``from`` side in series with its admittance.
    """
    missing = grid.unreachable()
    if missing:
        raise GridConnectivityError(missing)
    rows: list[int] = []
    cols: list[int] = []
    vals: list[complex] = []

    def stamp(f, t, yff, ytt, yft, ytf):
        rows.extend((f, t, f, t))
        cols.extend((f, t, t, f))
        vals.extend((yff, ytt, yft, ytf))

    for ln in grid.lines:
        if not ln.switch_closed:
            continue
        y = complex(ln.series_admittance)
        half = complex(ln.shunt_admittance) / 2
        stamp(ln.from_bus, ln.to_bus, y + half, y + half, -y, -y)
    for o in grid.oltcs:
        y = complex(o.series_admittance)
        t = float(o.tap)
        stamp(o.from_bus, o.to_bus, y / (t * t), y, -y / t, -y / t)
    n = grid.n
    m = sp.coo_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=(n, n)).tocsr()
    m.sum_duplicates()
    m.sort_indices()
    return AdmittanceMatrix(n=n, entries=m)


def net_injection(grid: Grid, equipment_state: Mapping[str, complex]) -> np.ndarray:
    """Per-bus generated minus demanded complex power.

    ``equipment_state`` maps an equipment id to its actual power: produced power
    for generators, consumed power for loads. Missing ids contribute nothing.
    """
    s = np.zeros(grid.n, dtype=complex)
    for eid, power in equipment_state.items():
        eq = grid.equipment_by_id(eid)
        if eq.is_generator:
            s[eq.bus] += power
        else:
            s[eq.bus] -= power
    return s


def rated_injection(grid: Grid, scale: Mapping[str, float] | None = None) -> np.ndarray:
    """Injection with every equipment at ``scale[id]`` times its rating (default 1)."""
    scale = scale or {}
    return net_injection(grid, {e.id: scale.get(e.id, 1.0) * e.s_rated for e in grid.equipment})


# -- file format -------------------------------------------------------------

def _cx(v) -> complex:
    if isinstance(v, (list, tuple)):
        re, im = v
        return complex(float(re), float(im))
    return complex(v)


def _pair(z: complex) -> list[float]:
    z = complex(z)
    return [z.real, z.imag]


def grid_from_dict(doc: Mapping) -> Grid:
    try:
        buses = [
            Bus(id=int(b["id"]), kind=b.get("kind", "pq"), nominal_kv=float(b.get("nominal_kv", doc.get("base_kv", 1.0))),
                attached=tuple(b.get("attached", ())), name=b.get("name", ""))
            for b in doc["buses"]
        ]
        lines = [
            Line(from_bus=int(ln["from"]), to_bus=int(ln["to"]), series_admittance=_cx(ln["series_admittance"]),
                 shunt_admittance=_cx(ln.get("shunt_admittance", 0)), switch_closed=bool(ln.get("switch_closed", True)))
            for ln in doc.get("lines", ())
        ]
        oltcs = [
            Oltc(from_bus=int(o["from"]), to_bus=int(o["to"]), series_admittance=_cx(o["series_admittance"]),
                 tap=float(o.get("tap", 1.0)), tap_min=float(o.get("tap_min", 0.9)), tap_max=float(o.get("tap_max", 1.1)),
                 tap_step=float(o.get("tap_step", 0.0125)), frozen=bool(o.get("frozen", False)))
            for o in doc.get("oltcs", ())
        ]
        equipment = [
            Equipment(id=str(e["id"]), bus=int(e["bus"]), kind=e["kind"], s_rated=_cx(e["s_rated"]), profile=e.get("profile"))
            for e in doc.get("equipment", ())
        ]
        slack_v = doc.get("slack_voltage")
        if slack_v is None:
            slack = 1.0 + 0j
        else:
            mag, ang = slack_v
            slack = complex(mag * np.cos(ang), mag * np.sin(ang))
        return Grid(buses=tuple(buses), lines=tuple(lines), oltcs=tuple(oltcs), equipment=tuple(equipment),
                    base_mva=float(doc.get("base_mva", 1.0)), base_kv=float(doc.get("base_kv", 1.0)),
                    slack_voltage=slack)
    except KeyError as exc:
        raise GridError(f"grid document is missing field {exc.args[0]!r}") from None


def grid_to_dict(grid: Grid) -> dict:
    doc = {
        "base_mva": grid.base_mva,
        "base_kv": grid.base_kv,
        "buses": [{"id": b.id, "kind": b.kind, "nominal_kv": b.nominal_kv, "attached": list(b.attached),
                   **({"name": b.name} if b.name else {})} for b in grid.buses],
        "lines": [{"from": ln.from_bus, "to": ln.to_bus, "series_admittance": _pair(ln.series_admittance),
                   "shunt_admittance": _pair(ln.shunt_admittance), "switch_closed": ln.switch_closed}
                  for ln in grid.lines],
        "oltcs": [{"from": o.from_bus, "to": o.to_bus, "series_admittance": _pair(o.series_admittance), "tap": o.tap,
                   "tap_min": o.tap_min, "tap_max": o.tap_max, "tap_step": o.tap_step, "frozen": o.frozen}
                  for o in grid.oltcs],
        "equipment": [{"id": e.id, "bus": e.bus, "kind": e.kind, "s_rated": _pair(e.s_rated), "profile": e.profile}
                      for e in grid.equipment],
    }
    if grid.slack_voltage != 1:
        doc["slack_voltage"] = [abs(grid.slack_voltage), float(np.angle(grid.slack_voltage))]
    return doc


def load_grid(path: str | Path) -> Grid:
    with open(path) as fh:
        return grid_from_dict(json.load(fh))
