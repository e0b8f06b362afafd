"""Regenerate the bundled 11-bus scenario files under src/gridsan/scenarios/data/.

Line impedances, ratings and profiles are invented, representative MV values
chosen so that the wind park at B11 can push its bus above the band when the
control loop is late or cannot curtail.

    python3 scripts/make_fig2_data.py
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from gridsan.grid import Bus, Equipment, Grid, Line, Oltc, grid_to_dict
from gridsan.scenarios import profiles as P

OUT = Path(__file__).resolve().parents[1] / "src" / "gridsan" / "scenarios" / "data"
NOTE = "invented, artifact plumbing: representative MV values, not measured data"

TIMING_RATE_PER_H = 0.1
WP_FAILURE_RATE_PER_H = 0.05


def fig2_grid() -> Grid:
    buses = [Bus(0, "slack", 20.0, name="B1")] + [Bus(i, "pq", 20.0, name=f"B{i + 1}") for i in range(1, 11)]
    y_a = 1 / complex(0.03, 0.04)
    y_b = 1 / complex(0.07, 0.08)
    feeder_a = [(1, 2), (2, 3), (3, 4), (4, 5)]
    feeder_b = [(1, 6), (6, 7), (7, 8), (8, 9), (9, 10)]
    lines = ([Line(a, b, y_a) for a, b in feeder_a] + [Line(a, b, y_b) for a, b in feeder_b]
             + [Line(5, 9, 0.5 * y_b)])
    oltc = Oltc(0, 1, 1 / complex(0.005, 0.05), tap=1.0, tap_min=0.975, tap_max=1.025)
    equipment = [
        Equipment("PV", 3, "dg_pv", 0.3 + 0j, "pv"),
        Equipment("WP", 10, "dg_wind", 0.9 + 0j, "wind"),
        Equipment("INDUSTRY", 2, "flexible_load", 0.35 + 0.12j, "industry"),
    ] + [Equipment(f"IFL_B{b + 1}", b, "inflexible_load", 0.14 + 0.05j, "residential") for b in (4, 5, 7, 8)]
    return Grid(buses, lines, (oltc,), equipment, base_mva=10.0, base_kv=20.0, slack_voltage=1.04)


def fig2_profiles(seed: int = 7) -> dict:
    h = P.hours()
    wind_mean = (0.45 + 0.4 * np.exp(-0.5 * ((h - 4.0) / 2.5) ** 2)
                 + 0.35 * np.exp(-0.5 * ((h - 15.0) / 2.0) ** 2))
    curves = {
        "pv": P.photovoltaic(),
        "wind": P.wind(seed, wind_mean),
        "residential": P.residential(),
        "industry": P.industrial(),
    }
    return {"note": NOTE, "step_min": P.STEP_MIN,
            "curves": {k: [round(float(x), 6) for x in v] for k, v in curves.items()}}


def timing(delay_min: float) -> dict:
    return {"kind": "timing", "occurrence": {"rate_per_h": TIMING_RATE_PER_H}, "repair": None,
            "delay_min": delay_min, "omit_prob": 0.0}


WP_CTRL = {"kind": "control_device", "occurrence": {"rate_per_h": WP_FAILURE_RATE_PER_H}, "repair": None,
           "target": "WP"}


def scenario(name: str, failures: list) -> dict:
    return {"name": name, "note": NOTE, "grid": "fig2.json", "profiles": "fig2_profiles.json",
            "control": {"period_min": 15, "band": 0.08}, "failures": failures, "horizon_h": 24,
            "strategy": "darep"}


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    files = {
        "fig2.json": {"note": NOTE, **grid_to_dict(fig2_grid())},
        "fig2_profiles.json": fig2_profiles(),
        "fig2_baseline.json": scenario("fig2_baseline", []),
        "fig2_timing10.json": scenario("fig2_timing10", [timing(10)]),
        "fig2_timing20.json": scenario("fig2_timing20", [timing(20)]),
        "fig2_wp_ctrl.json": scenario("fig2_wp_ctrl", [WP_CTRL]),
        "fig2_timing10_wp.json": scenario("fig2_timing10_wp", [timing(10), WP_CTRL]),
        "fig2_timing20_wp.json": scenario("fig2_timing20_wp", [timing(20), WP_CTRL]),
        "fig2_oltc.json": scenario("fig2_oltc", [{"kind": "oltc_failure", "occurrence": {"t_min": 0.0},
                                                 "repair": None}]),
    }
    for name, doc in files.items():
        (OUT / name).write_text(json.dumps(doc, indent=1) + "\n")
        print("wrote", OUT / name)


if __name__ == "__main__":
    main()
