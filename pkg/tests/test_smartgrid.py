import json

import numpy as np
import pytest

from gridsan.measures import out_of_band
from gridsan.san import BatchRunner
from gridsan.scenarios.control import Settings
from gridsan.scenarios.smartgrid import (
    DATA_DIR,
    FailureSpec,
    ScenarioError,
    SmartGridScenario,
    build_smartgrid,
    bundled,
    load_scenario,
    scenario_from_dict,
)

BASELINE = bundled("fig2_baseline")


def run(scenario, seed=0, strategy=None):
    sgm = build_smartgrid(scenario, strategy)
    tr = BatchRunner(sgm.model, watch=sgm.watch).trajectory(seed, sgm.stop_time)
    return sgm, tr


def flat(scenario, level):
    return SmartGridScenario(scenario.grid, {k: np.full_like(v, level) for k, v in scenario.profiles.items()},
                             scenario.step_min, scenario.control_period, scenario.band, (), scenario.horizon_h,
                             scenario.strategy, "flat")


def test_light_flat_load_stays_in_band():
    sgm, tr = run(flat(BASELINE, 0.2))
    vt = sgm.voltage_trace(tr)
    for b in range(1, BASELINE.grid.n):
        assert out_of_band(vt, b) == (0.0, 0.0)
    assert np.all(sgm.ud_trace(tr).values == 0) and np.all(sgm.ca_trace(tr).values == 0)
    times, taps = tr.samples[sgm.places["tap"]]
    assert len(set(np.ravel(taps))) == 1  # nothing to correct, so the tap never moves


def test_oltc_failure_at_start_freezes_the_tap():
    sgm, tr = run(bundled("fig2_oltc"))
    _, taps = tr.samples[sgm.places["tap"]]
    assert np.all(np.ravel(taps) == np.ravel(taps)[0])
    # the healthy baseline does use the tap on this day
    sgm0, tr0 = run(BASELINE)
    assert len(set(np.ravel(tr0.samples[sgm0.places["tap"]][1]))) > 1


def test_failed_wind_control_is_never_curtailed():
    wp_dead = BASELINE.with_failures([FailureSpec("control_device", ("at_time", 0.0), target="WP")], "wp_dead")
    wp_dead_oltc = wp_dead.with_failures([*wp_dead.failures, FailureSpec("oltc_failure", ("at_time", 0.0))])
    for sc in (wp_dead, wp_dead_oltc):
        sgm, tr = run(sc)
        k = sgm.oracle.generators.index("WP")
        assert np.all(sgm.ca_trace(tr).column(k) == 0.0)
    # with the tap frozen and wind control healthy, curtailment does happen
    oltc = bundled("fig2_oltc")
    sgm, tr = run(oltc)
    k = sgm.oracle.generators.index("WP")
    assert sgm.ca_trace(tr).column(k).max() > 0


@pytest.mark.parametrize("name", ["fig2_baseline", "fig2_timing20_wp"])
def test_curtailment_and_unsatisfied_demand_nonnegative(name):
    sc = bundled(name)
    for seed in range(3):
        sgm, tr = run(sc, seed)
        assert np.all(sgm.ud_trace(tr).values >= 0) and np.all(sgm.ca_trace(tr).values >= 0)
        rewards = sgm.rewards()
        for key, (measure, _, fn) in rewards.items():
            if measure in ("ud", "ca"):
                assert fn(tr) >= 0


def test_same_seed_same_trajectory():
    sc = bundled("fig2_timing10_wp")
    (s1, a), (_, b) = run(sc, 7), run(sc, 7)
    for place in s1.watch:
        ta, va = a.samples[place]
        tb, vb = b.samples[place]
        assert np.array_equal(ta, tb) and np.array_equal(va, vb)


def test_frozen_tap_degrades_voltage_quality():
    sgm0, tr0 = run(BASELINE)
    sgm1, tr1 = run(bundled("fig2_oltc"))
    v0, v1 = sgm0.voltage_trace(tr0), sgm1.voltage_trace(tr1)
    for b in range(1, BASELINE.grid.n):
        assert sum(out_of_band(v1, b)) >= sum(out_of_band(v0, b))


def test_strategies_agree_on_deterministic_scenario():
    ref = None
    for strategy in ("ss", "ch", "darep"):
        sgm, tr = run(bundled("fig2_oltc"), 0, strategy)
        t, v = tr.samples[sgm.places["vm"]]
        if ref is None:
            ref = (t, v)
        else:
            assert np.array_equal(ref[0], t) and np.array_equal(ref[1], v)


def test_ss_and_ch_agree_with_failures():
    sc = bundled("fig2_timing20_wp")
    runs = [run(sc, 3, s) for s in ("ss", "ch")]
    (sa, a), (sb, b) = runs
    assert np.array_equal(a.samples[sa.places["vm"]][1], b.samples[sb.places["vm"]][1])


def test_timing_failure_delays_actions():
    sc = BASELINE.with_failures([FailureSpec("timing", ("at_time", 0.0), delay=20.0)], "late")
    sgm0, tr0 = run(BASELINE)
    sgm1, tr1 = run(sc)
    t0 = tr0.samples[sgm0.places["tap"]][0]
    t1 = tr1.samples[sgm1.places["tap"]][0]
    assert t1[1] == pytest.approx(t0[1] + 20.0)


def test_bundled_files_load():
    names = sorted(p.stem for p in DATA_DIR.glob("fig2_*.json") if p.stem != "fig2_profiles")
    assert "fig2_baseline" in names and "fig2_timing20_wp" in names
    for n in names:
        sc = bundled(n)
        assert sc.grid.n == 11 and sc.horizon_min == 1440.0
        assert sc.name == n


def test_failure_spec_roundtrip():
    for f in (FailureSpec("timing", ("exponential", 0.1 / 60), delay=10.0, omit_prob=0.2, devices=("oltc",)),
              FailureSpec("control_device", ("at_time", 30.0), repair_rate=0.5, target="WP"),
              FailureSpec("oltc_failure", ("at_time", 0.0))):
        back = FailureSpec.from_dict(json.loads(json.dumps(f.to_dict())))
        assert back.kind == f.kind and back.target == f.target and back.devices == f.devices
        assert back.occurrence[1] == pytest.approx(f.occurrence[1])
        assert (back.repair_rate is None) == (f.repair_rate is None)


@pytest.mark.parametrize("bad", [
    {"kind": "meteor", "occurrence": {"t_min": 0}},
    {"kind": "timing", "occurrence": {"t_min": 0}, "delay_min": 0},
    {"kind": "timing", "occurrence": {"t_min": 0}, "delay_min": 5, "omit_prob": 2},
    {"kind": "control_device", "occurrence": {"rate_per_h": 0}, "target": "WP"},
    {"kind": "control_device", "occurrence": {"t_min": 0}},
    {"kind": "control_device", "occurrence": {"t_min": 0}, "target": "NOPE"},
])
def test_invalid_failures(bad):
    doc = json.loads((DATA_DIR / "fig2_baseline.json").read_text())
    doc["failures"] = [bad]
    with pytest.raises(ScenarioError):
        scenario_from_dict(doc)


def test_invalid_scenarios():
    doc = json.loads((DATA_DIR / "fig2_baseline.json").read_text())
    with pytest.raises(ScenarioError):
        scenario_from_dict({**doc, "control": {"band": 1.5}})
    with pytest.raises(ScenarioError):
        scenario_from_dict({**doc, "horizon_h": 48})
    two = {"kind": "timing", "occurrence": {"t_min": 0}, "delay_min": 5}
    with pytest.raises(ScenarioError):
        scenario_from_dict({**doc, "failures": [two, two]})
    with pytest.raises(FileNotFoundError):
        load_scenario("/nonexistent/scenario.json")


def test_infeasible_step_reads_as_full_unserved_demand():
    heavy = SmartGridScenario(BASELINE.grid, {k: np.full_like(v, 40.0) for k, v in BASELINE.profiles.items()},
                              horizon_h=1.0, name="heavy")
    sgm = build_smartgrid(heavy)
    r = sgm.oracle.read(0, Settings(2))
    assert not r.feasible and np.all(r.vm == 0)
    served = [heavy.grid.equipment_by_id(e) for e in sgm.oracle.loads]
    assert r.unsatisfied == pytest.approx([40.0 * e.s_rated.real for e in served])
