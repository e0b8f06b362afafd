"""Grid-service indicators computed from piecewise-constant traces.

Traces come from the sampled places of a smart-grid trajectory: a value holds
from its change time until the next change or the end of the horizon. Time is
in minutes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from gridsan.san.batches import MeasureEstimate, estimate

WINDOW_MIN = 10.0
MV1_HORIZON_MIN = 24 * 60.0
MV1_REQUIRED = 0.99


@dataclass(frozen=True)
class PiecewiseTrace:
    """Right-continuous step function on ``[0, horizon]`` (one column per target)."""

    times: np.ndarray
    values: np.ndarray
    horizon: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if len(t) == 0 or t[0] != 0.0:
            raise ValueError("a trace must start at time 0")
        if np.any(np.diff(t) < 0):
            raise ValueError("trace times must be nondecreasing")
        if len(v) != len(t):
            raise ValueError("one row of values per change time")
        if t[-1] > self.horizon:
            raise ValueError("trace extends past the horizon")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def durations(self) -> np.ndarray:
        return np.diff(np.append(self.times, self.horizon))

    def column(self, k: int) -> np.ndarray:
        return self.values[:, k]

    def integral(self, k: int, a: float = 0.0, b: float | None = None) -> float:
        """Integral of column ``k`` over ``[a, b]``."""
        b = self.horizon if b is None else b
        starts = self.times
        ends = np.append(self.times[1:], self.horizon)
        overlap = np.clip(np.minimum(ends, b) - np.maximum(starts, a), 0.0, None)
        return float(overlap @ self.values[:, k])

    def time_average(self, k: int) -> float:
        return self.integral(k) / self.horizon

    def at(self, t: float) -> np.ndarray:
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.values[max(i, 0)]


@dataclass(frozen=True)
class VoltageTrace:
    """Bus voltage magnitudes (per unit) with infeasible intervals flagged."""

    magnitudes: PiecewiseTrace
    feasible: PiecewiseTrace
    nominal: float = 1.0

    @property
    def horizon(self) -> float:
        return self.magnitudes.horizon

    @classmethod
    def constant(cls, values: Sequence[float], horizon: float = MV1_HORIZON_MIN) -> "VoltageTrace":
        v = np.asarray(values, dtype=float)[None, :]
        return cls(PiecewiseTrace([0.0], v, horizon), PiecewiseTrace([0.0], [[1.0]], horizon))

    @classmethod
    def from_steps(cls, times, magnitudes, horizon: float, feasible=None) -> "VoltageTrace":
        times = np.asarray(times, dtype=float)
        feas = np.ones(len(times)) if feasible is None else np.asarray(feasible, dtype=float)
        return cls(PiecewiseTrace(times, magnitudes, horizon), PiecewiseTrace(times, feas, horizon))

    def bus_steps(self, bus: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Merged change times, magnitudes and feasibility flags for one bus."""
        t = np.union1d(self.magnitudes.times, self.feasible.times)
        mi = np.searchsorted(self.magnitudes.times, t, side="right") - 1
        fi = np.searchsorted(self.feasible.times, t, side="right") - 1
        return t, self.magnitudes.values[mi, bus], self.feasible.values[fi, 0] > 0.5


def samples_to_trace(samples: tuple[np.ndarray, np.ndarray], horizon: float) -> PiecewiseTrace:
    times, values = samples
    keep = np.asarray(times) <= horizon
    return PiecewiseTrace(np.asarray(times)[keep], np.asarray(values)[keep], horizon)


def out_of_band(trace: VoltageTrace, bus: int, band: float = 0.10) -> tuple[float, float]:
    """Fractions of the horizon spent in undervoltage and in overvoltage.

    Infeasible intervals count as undervoltage.
    """
    if not 0 < band < 1:
        raise ValueError("band must lie in (0, 1)")
    t, v, ok = trace.bus_steps(bus)
    dur = np.diff(np.append(t, trace.horizon))
    lo, hi = (1 - band) * trace.nominal, (1 + band) * trace.nominal
    uv = float(dur[~ok | (v < lo)].sum()) / trace.horizon
    ov = float(dur[ok & (v > hi)].sum()) / trace.horizon
    return uv, ov


def window_compliance(trace: VoltageTrace, bus: int, band: float = 0.10, window: float = WINDOW_MIN) -> np.ndarray:
    """Per consecutive window: True when its mean magnitude lies within the band.

    A window that overlaps an infeasible interval is non-compliant.
    """
    t, v, ok = trace.bus_steps(bus)
    n_win = int(round(trace.horizon / window))
    if not math.isclose(n_win * window, trace.horizon):
        raise ValueError("the horizon is not a whole number of windows")
    edges = np.arange(n_win + 1) * window
    ends = np.append(t[1:], trace.horizon)

    def cumulative(y):
        seg = np.concatenate(([0.0], np.cumsum((ends - t) * y)))
        pos = np.concatenate((t, [trace.horizon]))
        return np.interp(edges, pos, seg)

    mean = np.diff(cumulative(np.where(ok, v, 0.0))) / window
    bad_time = np.diff(cumulative((~ok).astype(float)))
    lo, hi = (1 - band) * trace.nominal, (1 + band) * trace.nominal
    return (mean >= lo - 1e-12) & (mean <= hi + 1e-12) & (bad_time <= 0.0)


def mv1_violation(trace: VoltageTrace, bus: int, band: float = 0.10) -> int:
    """1 when fewer than 99 % of the 144 ten-minute windows of the day are compliant."""
    if not math.isclose(trace.horizon, MV1_HORIZON_MIN):
        raise ValueError(f"the requirement is evaluated over {MV1_HORIZON_MIN:g} minutes, got {trace.horizon:g}")
    ok = window_compliance(trace, bus, band)
    return int(ok.mean() < MV1_REQUIRED)


def p_mv1(traces: Iterable[VoltageTrace], bus: int, confidence: float = 0.99, name: str = "p_mv1") -> MeasureEstimate:
    return estimate(name, [mv1_violation(tr, bus) for tr in traces], confidence)


def unsatisfied_demand(trace: PiecewiseTrace, load: int) -> float:
    """Time average of demanded minus served power for one load column."""
    return max(0.0, trace.time_average(load))


def curtailed_available(trace: PiecewiseTrace, generator: int) -> float:
    """Time average of available minus produced power for one generator column."""
    return max(0.0, trace.time_average(generator))


# -- CSV output ----------------------------------------------------------------

ESTIMATE_COLUMNS = ("name", "target", "point", "half_width", "confidence", "n_batches")


def write_estimates_csv(path: str | Path, rows: Iterable[tuple[MeasureEstimate, str]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ESTIMATE_COLUMNS)
        for est, target in rows:
            w.writerow((est.name, target, repr(float(est.point)), repr(float(est.half_width)),
                        repr(float(est.confidence)), est.n_batches))


def write_trace_csv(path: str | Path, trace: VoltageTrace, bus: int) -> None:
    """Change points of one bus voltage; infeasible intervals are written as 0."""
    t, v, ok = trace.bus_steps(bus)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t_seconds", "magnitude_pu"))
        for ti, vi, oki in zip(t, v, ok):
            w.writerow((repr(float(ti * 60.0)), repr(float(vi if oki else 0.0))))
