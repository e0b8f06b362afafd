import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridsan.grid import (
    Bus,
    Equipment,
    Grid,
    GridConnectivityError,
    GridError,
    Line,
    Oltc,
    build_ybus,
    grid_from_dict,
    grid_to_dict,
    load_grid,
    net_injection,
    rated_injection,
)
from gridsan.scenarios.smartgrid import DATA_DIR


def test_two_bus_ybus_matches_construction_formula():
    g = Grid((Bus(0, "slack"), Bus(1, "pq")), (Line(0, 1, -10j),))
    np.testing.assert_array_equal(build_ybus(g).toarray(), [[-10j, 10j], [10j, -10j]])


def test_open_switch_disconnects_bus():
    g = Grid((Bus(0, "slack"), Bus(1, "pq")), (Line(0, 1, -10j, switch_closed=False),))
    with pytest.raises(GridConnectivityError) as err:
        build_ybus(g)
    assert err.value.unreachable == [1]
    assert "[1]" in str(err.value)


def test_fig2_ybus_pattern_and_symmetry(fig2, fig2_doc):
    y = build_ybus(fig2).toarray()
    # Expected pattern from the file: one off-diagonal pair per distinct branch.
    pairs = {tuple(sorted((b["from"], b["to"]))) for b in fig2_doc["lines"] + fig2_doc["oltcs"]}
    assert len(pairs) == 11
    off = y - np.diag(np.diag(y))
    assert np.count_nonzero(off) == 10 * 2 + 1 * 2
    for i, j in zip(*np.nonzero(off)):
        assert tuple(sorted((i, j))) in pairs
    np.testing.assert_array_equal(y, y.T)


def test_fig2_grid_shape(fig2):
    assert fig2.n == 11 and len(fig2.lines) == 10 and len(fig2.oltcs) == 1
    o = fig2.oltcs[0]
    assert (o.from_bus, o.to_bus) == (0, 1)
    kinds = {e.id: (e.kind, e.bus) for e in fig2.equipment}
    assert kinds["PV"] == ("dg_pv", 3)
    assert kinds["WP"] == ("dg_wind", 10)
    assert kinds["INDUSTRY"] == ("flexible_load", 2)
    assert sum(e.is_load for e in fig2.equipment) == 5


def test_zero_shunt_row_sums_vanish(fig2):
    y = build_ybus(fig2).toarray()
    assert np.abs(y.sum(axis=1)).max() <= 1e-12


def test_row_sums_equal_shunts():
    g = Grid((Bus(0, "slack"), Bus(1, "pq"), Bus(2, "pq")),
             (Line(0, 1, 2 - 4j, shunt_admittance=0.02j), Line(1, 2, 1 - 3j, shunt_admittance=0.04j)))
    rows = build_ybus(g).toarray().sum(axis=1)
    np.testing.assert_allclose(rows, [0.01j, 0.03j, 0.02j], atol=1e-12)


def test_oltc_stamp_puts_tap_on_from_side():
    y_t, t = 1 / complex(0.01, 0.1), 1.05
    g = Grid((Bus(0, "slack"), Bus(1, "pq")), (), (Oltc(0, 1, y_t, tap=t, tap_min=0.9, tap_max=1.1),))
    want = np.array([[y_t / t**2, -y_t / t], [-y_t / t, y_t]])
    np.testing.assert_allclose(build_ybus(g).toarray(), want, rtol=1e-14)


def test_open_switch_equals_grid_without_line(fig2):
    opened = fig2.with_switch(9, False)
    without = Grid(fig2.buses, fig2.lines[:9], fig2.oltcs, fig2.equipment)
    np.testing.assert_array_equal(build_ybus(opened).toarray(), build_ybus(without).toarray())


@settings(max_examples=25, deadline=None)
@given(st.permutations(list(range(11))))
def test_ybus_is_permutation_equivariant(fig2, perm):
    perm = list(perm)
    # Keep bus ids dense by relabelling old bus b -> inv[b].
    inv = {old: new for new, old in enumerate(perm)}
    buses = tuple(Bus(inv[b.id], b.kind, b.nominal_kv) for b in sorted(fig2.buses, key=lambda b: inv[b.id]))
    lines = tuple(Line(inv[ln.from_bus], inv[ln.to_bus], ln.series_admittance) for ln in fig2.lines)
    oltcs = tuple(Oltc(inv[o.from_bus], inv[o.to_bus], o.series_admittance, o.tap, o.tap_min, o.tap_max)
                  for o in fig2.oltcs)
    y = build_ybus(fig2).toarray()
    y2 = build_ybus(Grid(buses, lines, oltcs)).toarray()
    np.testing.assert_array_equal(y2, y[np.ix_(perm, perm)])


def test_net_injection_signed_sum():
    g = Grid((Bus(0, "slack"), Bus(1, "pq"), Bus(2, "pq")), (Line(0, 1, 1.0), Line(1, 2, 1.0)), (),
             (Equipment("L", 1, "inflexible_load", 0.5 + 0.1j), Equipment("G", 1, "dg_pv", 0.2)))
    s = net_injection(g, {"L": 0.5 + 0.1j, "G": 0.2})
    assert s[1] == pytest.approx(-0.3 - 0.1j)
    assert s[2] == 0


def test_fig2_injection_at_t0_matches_hand_sum(fig2, fig2_doc):
    profiles = json.loads((DATA_DIR / "fig2_profiles.json").read_text())["curves"]
    # Independent summation straight from the JSON entries.
    want = [0j] * 11
    for e in fig2_doc["equipment"]:
        p = profiles[e["profile"]][0] * complex(*e["s_rated"])
        sign = 1 if e["kind"].startswith("dg_") else -1
        want[e["bus"]] += sign * p
    state = {e.id: profiles[e.profile][0] * e.s_rated for e in fig2.equipment}
    np.testing.assert_allclose(net_injection(fig2, state), want, atol=1e-15)


def test_grid_roundtrip(tmp_path, fig2):
    path = tmp_path / "g.json"
    path.write_text(json.dumps(grid_to_dict(fig2)))
    g = load_grid(path)
    np.testing.assert_array_equal(build_ybus(g).toarray(), build_ybus(fig2).toarray())
    assert g.slack_voltage == pytest.approx(fig2.slack_voltage)
    np.testing.assert_allclose(rated_injection(g), rated_injection(fig2))


@pytest.mark.parametrize("mutate, message", [
    (lambda d: d["buses"][1].update(kind="slack"), "exactly one slack"),
    (lambda d: d["lines"][0].update(to=d["lines"][0]["from"]), "coincide"),
    (lambda d: d["oltcs"][0].update(tap=1.2), "outside"),
    (lambda d: d["oltcs"][0].update(tap=1.003), "step grid"),
    (lambda d: d["equipment"][0].update(s_rated=[-1.0, 0.0]), "negative"),
    (lambda d: d.pop("buses"), "missing field"),
])
def test_invalid_grid_documents(fig2, mutate, message):
    doc = json.loads(json.dumps(grid_to_dict(fig2)))
    mutate(doc)
    with pytest.raises(GridError, match=message):
        grid_from_dict(doc)


def test_oltc_positions(fig2):
    o = fig2.oltcs[0]
    assert o.n_positions == 5
    assert o.tap_at(o.position) == pytest.approx(o.tap)
    assert fig2.downstream_of(0) == list(range(1, 11))
