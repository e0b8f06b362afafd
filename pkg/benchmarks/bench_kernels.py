"""Compare the numba kernels with the pure numpy/Python fallback.

The JIT switch is read at import time, so each path runs in its own
interpreter with ``GRIDSAN_DISABLE_JIT`` set accordingly.

    python3 benchmarks/bench_kernels.py [--batches 200] [--n 100] [--repeat 3]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from gridsan import JIT_ENABLED
from gridsan.grid import build_ybus, rated_injection
from gridsan.checks import fig2_grid
from gridsan.powerflow import PfProblem, SolverOptions, solve
from gridsan.powerflow._kernels import bus_power, jacobian_matrix
from gridsan.san import BatchRunner
from gridsan.scenarios.death import DeathProcessParams, build_death_process, death_rewards

batches, n, repeat = map(int, sys.argv[1:4])

def best(fn):
    fn()  # warm-up (includes compilation on the JIT path)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter(); fn(); times.append(time.perf_counter() - t0)
    return min(times)

g = fig2_grid()
y = build_ybus(g).entries
v = np.exp(1j * np.linspace(0, 0.1, g.n)) * np.linspace(1.0, 1.05, g.n)
order = np.arange(1, g.n)
p = PfProblem.from_grid(g, rated_injection(g))
out = {"jit": JIT_ENABLED}
out["bus_power x2000"] = best(lambda: [bus_power(y, v) for _ in range(2000)])
out["jacobian x2000"] = best(lambda: [jacobian_matrix(y, v, order) for _ in range(2000)])
out["nr solve x200"] = best(lambda: [solve(p, SolverOptions(method="nr")) for _ in range(200)])
for strategy in ("ss", "darep"):
    model = build_death_process(DeathProcessParams(n, 3, load_rate_slope=0.5), strategy)
    runner = BatchRunner(model)
    rewards = death_rewards(model)
    out[f"death {strategy} n={n} x{batches}"] = best(lambda: runner.run(float("inf"), rewards, batches))
print(json.dumps(out))
"""


def run(disable: bool, args) -> dict:
    env = dict(os.environ, GRIDSAN_DISABLE_JIT="1" if disable else "0")
    res = subprocess.run([sys.executable, "-c", WORKER, str(args.batches), str(args.n), str(args.repeat)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--batches", type=int, default=200)
    ap.add_argument("--n", type=int, default=100, help="death-process stations")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    jit = run(False, args)
    ref = run(True, args)
    if not jit.pop("jit") or ref.pop("jit"):
        print("warning: could not toggle the JIT (is numba installed?)")
    print(f"{'kernel':<28} {'numba s':>10} {'numpy s':>10} {'speed-up':>9}")
    for key in jit:
        print(f"{key:<28} {jit[key]:>10.4f} {ref[key]:>10.4f} {ref[key] / jit[key]:>8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
