"""Compare the numba kernels with the pure numpy fallback.

Each backend runs in its own interpreter because the choice is fixed at
import time by ``MULTIVIRUS_DISABLE_NUMBA``. Compilation is excluded by a
warm-up call before timing.

    python3 benchmarks/bench_kernels.py --repeat 3
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from multivirus import InfectionState, IntegratorConfig, MobilityConfig, MobilityModel, SystemSpec, simulate
from multivirus import kernels
from multivirus.spectral import spectral_abscissa

n, steps, repeat = (int(x) for x in sys.argv[1:4])
rng = np.random.default_rng(0)
m = 3
betas = rng.uniform(0, 1, (m, n, n)) * (rng.random((m, n, n)) < 0.3)
deltas = rng.uniform(0.5, 1.5, (m, n))
p0 = InfectionState.random(m, n, 1)
static = SystemSpec.from_arrays(betas, deltas)
mob = MobilityModel(MobilityConfig.random(n, [0.3, 0.4, 0.5], 4.0, r_hat=2.0, seed=2))
moving = SystemSpec.from_arrays(mob.beta_at(0.0), deltas, mob)
metzler = betas[0] - np.diag(deltas[0]) * n

def best(fn):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)

cfg = IntegratorConfig(dt=1e-2, t_end=steps * 1e-2, record_every=steps)
out = {
    "backend": kernels.BACKEND,
    "static_rk4": best(lambda: simulate(static, p0, cfg)),
    "mobility_rk4": best(lambda: simulate(moving, p0, cfg)),
    "spectral_abscissa_x100": best(lambda: [spectral_abscissa(metzler) for _ in range(100)]),
}
print(json.dumps(out))
"""


def run_backend(disable, n, steps, repeat):
    env = dict(os.environ, MULTIVIRUS_DISABLE_NUMBA="1" if disable else "0")
    proc = subprocess.run(
        [sys.executable, "-c", WORKER, str(n), str(steps), str(repeat)],
        env=env, capture_output=True, text=True, check=True,
    )
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=20, help="agents")
    parser.add_argument("--steps", type=int, default=5000, help="integration steps")
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    nb = run_backend(False, args.n, args.steps, args.repeat)
    np_ = run_backend(True, args.n, args.steps, args.repeat)
    print(f"m=3 n={args.n} steps={args.steps} (best of {args.repeat})")
    print(f"{'workload':<26}{nb['backend']:>12}{np_['backend']:>12}{'speedup':>10}")
    for key in ("static_rk4", "mobility_rk4", "spectral_abscissa_x100"):
        print(f"{key:<26}{nb[key]:>11.4f}s{np_[key]:>11.4f}s{np_[key] / nb[key]:>9.1f}x")


if __name__ == "__main__":
    main()
