import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridsan.measures import (
    MV1_HORIZON_MIN,
    PiecewiseTrace,
    VoltageTrace,
    curtailed_available,
    mv1_violation,
    out_of_band,
    p_mv1,
    samples_to_trace,
    unsatisfied_demand,
    window_compliance,
    write_estimates_csv,
    write_trace_csv,
)
from gridsan.san.batches import estimate

H = MV1_HORIZON_MIN


def windows_trace(bad, low=0.85):
    """One bus; the listed 10-minute windows sit at ``low``, everything else at 1.0."""
    times, vals = [0.0], [[1.0]]
    for w in sorted(bad):
        times += [10.0 * w, 10.0 * w + 10.0]
        vals += [[low], [1.0]]
    times, vals = np.array(times), np.array(vals)
    keep = np.append(np.diff(times) > 0, True)  # drop zero-length steps between adjacent windows
    keep &= times < H
    return VoltageTrace.from_steps(times[keep], vals[keep], H)


def test_constant_nominal_is_in_band():
    assert out_of_band(VoltageTrace.constant([1.0]), 0) == (0.0, 0.0)


def test_six_hours_low():
    tr = VoltageTrace.from_steps([0.0, 360.0], [[0.85], [1.0]], H)
    assert out_of_band(tr, 0, 0.10) == (0.25, 0.0)


def test_overvoltage_fraction():
    tr = VoltageTrace.from_steps([0.0, 120.0, 240.0], [[1.0], [1.15], [1.0]], H)
    assert out_of_band(tr, 0) == (0.0, pytest.approx(120 / 1440))


def test_infeasible_hour_counts_as_undervoltage():
    tr = VoltageTrace.from_steps([0.0, 60.0, 120.0], [[1.0], [0.0], [1.0]], H, feasible=[1, 0, 1])
    uv, ov = out_of_band(tr, 0)
    assert uv == pytest.approx(60 / 1440) and ov == 0.0
    assert window_compliance(tr, 0)[6:12].sum() == 0


def test_band_must_be_a_fraction():
    with pytest.raises(ValueError):
        out_of_band(VoltageTrace.constant([1.0]), 0, 1.5)


@pytest.mark.parametrize("bad, want", [((), 0), ((17,), 0), ((3, 99), 1), ((0, 143), 1), ((5, 6, 7), 1)])
def test_mv1_threshold(bad, want):
    assert mv1_violation(windows_trace(bad), 0) == want


def test_window_mean_not_pointwise():
    # a 5-minute dip to 0.7 averages to 0.85 over its window: non-compliant;
    # a 1-minute dip to 0.7 averages to 0.97: compliant
    dip5 = VoltageTrace.from_steps([0.0, 20.0, 25.0], [[1.0], [0.7], [1.0]], H)
    dip1 = VoltageTrace.from_steps([0.0, 20.0, 21.0], [[1.0], [0.7], [1.0]], H)
    assert not window_compliance(dip5, 0)[2] and window_compliance(dip1, 0)[2]


def test_mv1_horizon_mismatch():
    with pytest.raises(ValueError):
        mv1_violation(VoltageTrace.constant([1.0], horizon=720.0), 0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.8, 1.2), min_size=144, max_size=144), st.data())
def test_mv1_monotone_under_worsening(levels, data):
    times = np.arange(144) * 10.0
    base = VoltageTrace.from_steps(times, np.array(levels)[:, None], H)
    push = np.array(data.draw(st.lists(st.floats(0.0, 0.2), min_size=144, max_size=144)))
    worse_levels = np.where(np.array(levels) >= 1.0, np.array(levels) + push, np.array(levels) - push)
    worse = VoltageTrace.from_steps(times, worse_levels[:, None], H)
    assert mv1_violation(worse, 0) >= mv1_violation(base, 0)
    uv, ov = out_of_band(worse, 0)
    assert 0.0 <= uv + ov <= 1.0


def test_p_mv1_examples():
    good = [VoltageTrace.constant([1.0])] * 20
    est = p_mv1(good, 0)
    assert est.point == 0.0 and est.half_width == 0.0
    bad = [windows_trace((1, 2))] * 20
    assert p_mv1(bad, 0).point == 1.0


def test_p_mv1_synthetic_thirty_percent():
    rng = np.random.default_rng(30)
    good, bad = VoltageTrace.constant([1.0]), windows_trace((1, 2))
    traces = [bad if u < 0.3 else good for u in rng.random(10_000)]
    est = p_mv1(traces, 0)
    assert abs(est.point - 0.3) <= 0.015
    assert est.half_width <= 0.015 and est.covers(0.3)


def test_bernoulli_coverage():
    rng = np.random.default_rng(97)
    p, covered = 0.3, 0
    for _ in range(100):
        est = estimate("p", (rng.random(1000) < p).astype(float), 0.99)
        covered += est.covers(p)
    assert covered >= 97


def test_unsatisfied_demand_arithmetic():
    tr = PiecewiseTrace([0.0, 600.0, 720.0], [[0.0], [0.1], [0.0]], H)
    assert unsatisfied_demand(tr, 0) == pytest.approx(0.1 * 2 / 24)


def test_curtailment_average_and_zero():
    tr = PiecewiseTrace([0.0, 360.0], [[0.0, 0.2], [0.0, 0.0]], H)
    assert curtailed_available(tr, 0) == 0.0
    assert curtailed_available(tr, 1) == pytest.approx(0.2 / 4)


def test_trace_validation():
    with pytest.raises(ValueError):
        PiecewiseTrace([1.0], [[1.0]], H)
    with pytest.raises(ValueError):
        PiecewiseTrace([0.0, 5.0, 2.0], [[1.0]] * 3, H)
    with pytest.raises(ValueError):
        PiecewiseTrace([0.0, 2000.0], [[1.0]] * 2, H)


def test_samples_to_trace_drops_points_past_horizon():
    tr = samples_to_trace((np.array([0.0, 100.0, 1500.0]), np.array([[1.0], [2.0], [3.0]])), H)
    assert list(tr.times) == [0.0, 100.0] and tr.at(1000.0)[0] == 2.0


def test_estimates_csv(tmp_path):
    est = estimate("p_mv1", [0.0, 1.0, 0.0, 1.0], 0.99)
    path = tmp_path / "est.csv"
    write_estimates_csv(path, [(est, "B11")])
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["name", "target", "point", "half_width", "confidence", "n_batches"]
    assert rows[1][:2] == ["p_mv1", "B11"] and float(rows[1][2]) == 0.5 and rows[1][5] == "4"


def test_trace_csv(tmp_path):
    tr = VoltageTrace.from_steps([0.0, 60.0], [[1.01], [0.0]], H, feasible=[1, 0])
    path = tmp_path / "trace.csv"
    write_trace_csv(path, tr, 0)
    rows = list(csv.reader(path.open()))
    assert rows == [["t_seconds", "magnitude_pu"], ["0.0", "1.01"], ["3600.0", "0.0"]]
