"""Terminating simulation: independent batches and Student-t confidence intervals.

Each batch gets its own seed derived from the master seed with
``numpy.random.SeedSequence``, so results do not depend on the number of worker
threads or on the order in which batches finish.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from gridsan._jit import JIT_ENABLED
from gridsan.san import _kernel
from gridsan.san.engine import CompiledModel, Simulator, Trajectory
from gridsan.san.model import (
    InstantaneousLoop,
    Marking,
    NegativeTokens,
    SanError,
    SanModel,
)

RewardFn = Callable[[Trajectory], float]
ENGINES = ("auto", "python", "jit")


class BatchError(SanError):
    """A simulation error raised inside one batch."""

    def __init__(self, batch: int, seed: int, cause: BaseException):
        self.batch = batch
        self.seed = seed
        self.cause = cause
        super().__init__(f"batch {batch} (seed {seed}): {cause}")


@dataclass(frozen=True)
class MeasureEstimate:
    name: str
    point: float
    half_width: float
    confidence: float
    n_batches: int
    std: float = 0.0

    @property
    def interval(self) -> tuple[float, float]:
        return self.point - self.half_width, self.point + self.half_width

    def covers(self, value: float) -> bool:
        lo, hi = self.interval
        return lo <= value <= hi

    def overlaps(self, other: "MeasureEstimate") -> bool:
        lo, hi = self.interval
        olo, ohi = other.interval
        return lo <= ohi and olo <= hi


def estimate(name: str, values: Sequence[float], confidence: float = 0.99) -> MeasureEstimate:
    """Sample mean, sample standard deviation and Student-t half-width.

    Sums use ``math.fsum`` (correctly rounded), which makes the result exactly
    invariant under permutation of ``values``.
    """
    x = [float(v) for v in values]
    n = len(x)
    if n < 2:
        raise ValueError("need at least two batches for an interval")
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    mean = math.fsum(x) / n
    var = math.fsum((v - mean) ** 2 for v in x) / (n - 1)
    std = math.sqrt(var)
    t = stats.t.ppf(0.5 + confidence / 2.0, n - 1)
    return MeasureEstimate(name, mean, float(t * std / math.sqrt(n)), confidence, n, std)


def batch_seeds(master_seed: int, n: int) -> list[int]:
    """Deterministic 32-bit seeds for ``n`` batches."""
    children = np.random.SeedSequence(master_seed).spawn(n)
    return [int(c.generate_state(1, np.uint32)[0]) for c in children]


@dataclass
class BatchRun:
    estimates: dict[str, MeasureEstimate]
    values: dict[str, np.ndarray]
    seeds: list[int]
    events: np.ndarray
    elapsed: float
    build_time: float
    engine: str
    extra: dict = field(default_factory=dict)


class BatchRunner:
    """Prepared model plus engine choice; :meth:`run` executes the batches.

    Construction does all model-dependent setup (compilation, lowering and a
    warm-up of the compiled loop) so that the timed batch loop excludes it.
    """

    def __init__(self, model: SanModel, engine: str = "auto", watch: Iterable[str] = ()):
        if engine not in ENGINES:
            raise ValueError(f"unknown engine {engine!r}; expected one of {ENGINES}")
        t0 = time.perf_counter()
        self.model = model
        self.watch = tuple(watch)
        self.compiled = CompiledModel(model)
        self.simulator = Simulator(self.compiled)
        self.lowered = None
        if engine != "python" and not self.watch:
            self.lowered = _kernel.lower(model, self.compiled.affected)
        if engine == "jit" and self.lowered is None:
            raise ValueError("model cannot be lowered to the compiled loop (callbacks or watches present)")
        use_kernel = self.lowered is not None and (engine == "jit" or JIT_ENABLED)
        if not use_kernel:
            self.lowered = None
        self.engine = "jit" if use_kernel else "python"
        if use_kernel:
            self._arrays = self.lowered.arrays()
            _kernel.run_one(0, 1.0, self.lowered.m0, False, 0, *self._arrays)
        self.build_time = time.perf_counter() - t0

    def trajectory(self, seed: int, stop_time: float, record_events: bool = False) -> Trajectory:
        if self.lowered is None:
            return self.simulator.simulate(stop_time, seed, record_events=record_events, watch=self.watch)
        low = self.lowered
        status, detail, m, n_events, last, ev_t, ev_a, ev_c = _kernel.run_one(
            seed, float(stop_time), low.m0, record_events, 2 ** 62, *self._arrays)
        if status == _kernel.NEG_TOKENS:
            raise NegativeTokens(low.layout.name_at(int(detail)))
        if status == _kernel.BAD_RATE:
            raise SanError(f"activity {low.names[detail]!r} has non-positive rate")
        if status == _kernel.INST_LOOP:
            raise InstantaneousLoop(last, _kernel.MAX_INSTANTANEOUS + 1)
        events = None
        if record_events:
            events = [(float(t), low.names[a], int(c)) for t, a, c in zip(ev_t, ev_a, ev_c)]
        return Trajectory(seed=seed, events=events, final_marking=Marking(low.layout, m), final_time=float(last),
                          n_events=int(n_events), stop_time=stop_time)

    def run(self, stop_time: float, reward_fns: Mapping[str, RewardFn], n_batches: int, confidence: float = 0.99,
            master_seed: int = 0, threads: int = 1, record_events: bool = False) -> BatchRun:
        if n_batches < 2:
            raise ValueError("n_batches must be at least 2")
        if not stop_time > 0:
            raise ValueError("stop_time must be positive")
        seeds = batch_seeds(master_seed, n_batches)
        names = list(reward_fns)
        values = np.empty((len(names), n_batches))
        events = np.empty(n_batches, dtype=np.int64)

        def one(b: int):
            try:
                tr = self.trajectory(seeds[b], stop_time, record_events)
            except SanError as exc:
                raise BatchError(b, seeds[b], exc) from exc
            return b, [float(reward_fns[k](tr)) for k in names], tr.n_events

        t0 = time.perf_counter()
        if threads <= 1:
            results = [one(b) for b in range(n_batches)]
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(one, range(n_batches)))
        elapsed = time.perf_counter() - t0
        for b, vals, ne in results:
            values[:, b] = vals
            events[b] = ne
        est = {k: estimate(k, values[i], confidence) for i, k in enumerate(names)}
        return BatchRun(est, {k: values[i] for i, k in enumerate(names)}, seeds, events, elapsed,
                        self.build_time, self.engine)


def terminating_batches(model: SanModel, stop_time: float, reward_fns: Mapping[str, RewardFn], n_batches: int,
                        confidence: float = 0.99, master_seed: int = 0, *, threads: int = 1,
                        engine: str = "auto", watch: Iterable[str] = (),
                        record_events: bool = False) -> dict[str, MeasureEstimate]:
    """Run ``n_batches`` independent trajectories and estimate each reward."""
    runner = BatchRunner(model, engine=engine, watch=watch)
    return runner.run(stop_time, reward_fns, n_batches, confidence, master_seed, threads, record_events).estimates
