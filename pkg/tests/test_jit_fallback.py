"""The numpy fallback (GRIDSAN_DISABLE_JIT=1) must give the same answers as the compiled path."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

WORKER = r"""
import json
from gridsan import JIT_ENABLED
from gridsan.checks import fig2_grid
from gridsan.grid import rated_injection
from gridsan.powerflow import PfProblem, SolverOptions, solve
from gridsan.san import BatchRunner
from gridsan.scenarios.death import DeathProcessParams, build_death_process, death_rewards

g = fig2_grid()
p = PfProblem.from_grid(g, rated_injection(g))
out = {"jit": JIT_ENABLED}
for method in ("nr", "ink"):
    s = solve(p, SolverOptions(method=method))
    out[method] = [list(map(float, s.voltage.magnitudes)), list(map(float, s.voltage.angles)), s.newton_iters]
m = build_death_process(DeathProcessParams(6, 2, load_rate_slope=0.5), "darep")
runner = BatchRunner(m)
run = runner.run(float("inf"), death_rewards(m), 50, master_seed=9)
out["engine"] = run.engine
out["death"] = {k: [e.point, e.half_width] for k, e in run.estimates.items()}
print(json.dumps(out))
"""


def run_worker(disable: bool) -> dict:
    env = dict(os.environ, GRIDSAN_DISABLE_JIT="1" if disable else "0")
    res = subprocess.run([sys.executable, "-c", WORKER], env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def both():
    return run_worker(False), run_worker(True)


def test_flag_toggles_the_jit(both):
    jit, ref = both
    assert jit["jit"] is True and ref["jit"] is False
    assert jit["engine"] != ref["engine"]


@pytest.mark.parametrize("method", ["nr", "ink"])
def test_power_flow_agrees(both, method):
    jit, ref = both
    assert np.allclose(jit[method][0], ref[method][0], rtol=0, atol=1e-12)
    assert np.allclose(jit[method][1], ref[method][1], rtol=0, atol=1e-12)
    assert jit[method][2] == ref[method][2]


def test_simulation_is_bit_identical(both):
    jit, ref = both
    assert jit["death"] == ref["death"]
