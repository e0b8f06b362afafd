"""Load-sharing pure-death process.

``n`` stations start with one task-unit of workload each. A working station
fails at rate ``base_rate * (1 + alpha * (w - 1))`` where ``w`` is its current
workload. Just before failing it hands its workload in equal shares to those of
its dependency neighbours that still work (remainder to the lowest index); with
no working neighbour the workload is recorded as lost.

The workload place is the exported state of a station, so a station is
considered working exactly when its workload is positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gridsan.san.composition import ComponentEnv, Template, Topology, instantiate
from gridsan.san.engine import Trajectory
from gridsan.san.model import (
    Activity,
    Add,
    Case,
    Exponential,
    InputGate,
    Linear,
    OutputGate,
    SanModel,
    Share,
    extended,
    has_tokens,
    token,
)

TOPOLOGY_KINDS = ("ring", "random", "complete")


@dataclass(frozen=True)
class DeathProcessParams:
    n: int
    d: int = 1
    base_rate: float = 1.0
    load_rate_slope: float = 0.0
    topology_kind: str = "ring"
    topology_seed: int = 0
    stop_time: float = float("inf")

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("the death process needs at least two stations")
        if not self.base_rate > 0:
            raise ValueError("base_rate must be positive")
        if self.load_rate_slope < 0:
            raise ValueError("load_rate_slope must be nonnegative (monotone load sharing)")
        if self.topology_kind not in TOPOLOGY_KINDS:
            raise ValueError(f"unknown topology kind {self.topology_kind!r}")

    def topology(self) -> Topology:
        if self.topology_kind == "ring":
            return Topology.ring(self.n, self.d)
        if self.topology_kind == "random":
            return Topology.random(self.n, self.d, self.topology_seed)
        return Topology.complete(self.n)

    def rate(self, w: float) -> float:
        return self.base_rate * (1.0 + self.load_rate_slope * (w - 1.0))


def death_template(params: DeathProcessParams, topo: Topology | None = None) -> Template:
    topo = topo or params.topology()
    lam, alpha = params.base_rate, params.load_rate_slope

    def body(i: int, env: ComponentEnv) -> SanModel:
        own = env.own
        targets = tuple(env.state(j) for j in topo.depends_on(i))
        fail = Activity(
            "fail",
            Exponential(Linear(own, lam * (1.0 - alpha), lam * alpha)),
            (InputGate((has_tokens("working"),), (Add("working", -1),)),),
            (Case(1.0, OutputGate((Share(own, targets, "lost"),))),),
        )
        return SanModel(f"station{i}", (token("working", 1), extended("lost", 0.0), *env.places()), (fail,))

    return Template(body, (extended("workload", 1.0),))


def build_death_process(params: DeathProcessParams, strategy: str) -> SanModel:
    topo = params.topology()
    return instantiate(death_template(params, topo), strategy, topo)


def _slots(model: SanModel, suffix: str) -> np.ndarray:
    lay = model.layout()
    return np.array([lay.slot(p.name) for p in model.places if p.name.endswith(suffix)], dtype=np.int64)


def working_count(model: SanModel):
    """Reward factory: number of working stations in the final marking."""
    slots = _slots(model, ".working")
    return lambda tr: float(tr.final_marking.values[slots].sum())


def all_failed(model: SanModel):
    """Reward factory: 1 if every station has failed by the stop time."""
    slots = _slots(model, ".working")
    return lambda tr: float(not tr.final_marking.values[slots].any())


def absorption_time(tr: Trajectory) -> float:
    """Time of the last failure; equals the all-failed time when run to absorption."""
    return tr.final_time


def death_rewards(model: SanModel) -> dict:
    return {"all_failed": all_failed(model), "absorption_time": absorption_time}
