import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridsan.san import BatchRunner, Simulator, simulate
from gridsan.scenarios.death import (
    DeathProcessParams,
    absorption_time,
    all_failed,
    build_death_process,
    death_rewards,
    working_count,
)


def walk(model, seed):
    """Replay one trajectory event by event, yielding every intermediate marking."""
    tr = simulate(model, math.inf, seed)
    sim = Simulator(model)
    m = model.initial_marking()
    yield m
    for time, name, case in tr.events:
        m, _ = sim.fire(name, m, None, case=case, time=time)
        yield m


def names(model, key):
    return [p.name for p in model.places if key in p.name]


@pytest.mark.parametrize("strategy", ["ss", "darep", "ch"])
def test_two_stations_full_sharing_mean(strategy):
    # alpha = 1 makes the rate equal to the workload: Exp(2) then Exp(2), mean 1 / lambda.
    m = build_death_process(DeathProcessParams(2, 1, load_rate_slope=1.0), strategy)
    est = BatchRunner(m).run(math.inf, {"t": absorption_time}, 10_000, 0.99, master_seed=5).estimates["t"]
    assert est.covers(1.0), est


@pytest.mark.parametrize("strategy", ["ss", "darep"])
def test_three_independent_stations_mean(strategy):
    # alpha = 0: the maximum of three unit exponentials, mean 1 + 1/2 + 1/3.
    m = build_death_process(DeathProcessParams(3, 1, load_rate_slope=0.0), strategy)
    est = BatchRunner(m).run(math.inf, {"t": absorption_time}, 10_000, 0.99, master_seed=6).estimates["t"]
    assert est.covers(11 / 6), est


def test_base_rate_scales_time():
    m = build_death_process(DeathProcessParams(2, 1, base_rate=4.0, load_rate_slope=1.0), "darep")
    est = BatchRunner(m).run(math.inf, {"t": absorption_time}, 10_000, 0.99, master_seed=8).estimates["t"]
    assert est.covers(0.25), est


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10_000), st.sampled_from([0.0, 0.5, 1.0]), st.sampled_from(["ss", "darep"]))
def test_invariants_along_trajectory(n, seed, alpha, strategy):
    params = DeathProcessParams(n, min(2, n - 1), load_rate_slope=alpha)
    model = build_death_process(params, strategy)
    working = names(model, ".working")
    loads = names(model, "workload[")
    lost = names(model, ".lost")
    prev_working = n + 1
    prev_rate = {}
    for m in walk(model, seed):
        count = sum(m[w] for w in working)
        assert count <= prev_working  # working count never increases
        prev_working = count
        total = sum(m[w] for w in loads) + sum(m[x] for x in lost)
        assert total == pytest.approx(n, abs=1e-9)  # workload is conserved
        for i in range(n):
            if m[f"c{i}.working"]:
                rate = params.rate(m[f"workload[{i}]"])
                assert rate >= prev_rate.get(i, 0.0) - 1e-12  # load sharing never slows a station
                prev_rate[i] = rate
    assert count == 0


def test_failed_station_holds_no_workload():
    model = build_death_process(DeathProcessParams(6, 2, load_rate_slope=0.5), "darep")
    for m in walk(model, 4):
        for i in range(6):
            assert m[f"c{i}.working"] == (m[f"workload[{i}]"] > 0)


def test_reward_factories():
    model = build_death_process(DeathProcessParams(4, 1), "darep")
    tr = simulate(model, math.inf, 0)
    assert working_count(model)(tr) == 0.0
    assert all_failed(model)(tr) == 1.0
    early = simulate(model, 1e-9, 0)
    assert working_count(model)(early) == 4.0 and all_failed(model)(early) == 0.0
    assert set(death_rewards(model)) == {"all_failed", "absorption_time"}


def test_invalid_params():
    for kwargs in ({"n": 1}, {"n": 3, "base_rate": 0.0}, {"n": 3, "load_rate_slope": -1.0},
                   {"n": 3, "topology_kind": "star"}):
        with pytest.raises(ValueError):
            DeathProcessParams(**kwargs)


def test_topology_kinds():
    assert DeathProcessParams(5, 2).topology().out_degree == 2
    assert DeathProcessParams(5, 2, topology_kind="complete").topology().out_degree == 4
    t = DeathProcessParams(9, 3, topology_kind="random", topology_seed=2).topology()
    assert all(len(t.depends_on(i)) == 3 for i in range(9))
