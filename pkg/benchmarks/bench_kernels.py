"""Compare the numba kernels with the pure-numpy fallback.

Each backend runs in its own interpreter because DOASIM_NO_JIT is read at
import time.  The compiled path is timed after a warm-up call, so numba's
compilation (or cache load) is reported separately.

    python benchmarks/bench_kernels.py [--horizon 30] [--repeat 3]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import doasim
from doasim.control import ControllerConfig
from doasim.pkpd import TABLE1_PATIENTS
from doasim.simloop import SimConfig, run_sim
from doasim.woa import WoaConfig, tune_controller

horizon, repeat = float(sys.argv[1]), int(sys.argv[2])
sim = SimConfig(horizon=horizon)
p = TABLE1_PATIENTS[0]
cases = {
    "pid": ControllerConfig("pid", kp=0.4, ki=0.1, kd=0.05),
    "fopid": ControllerConfig("fopid", kp=0.4, ki=0.3, kd=0.2, alpha=0.8, beta=0.6),
    "fofpid": ControllerConfig("fofpid", gain_ranges=(1.0, 0.6, 0.4), alpha=0.8, beta=0.6),
}
out = {"backend": doasim.backend(), "first_call_s": {}, "run_sim_s": {}}
for name, c in cases.items():
    t0 = time.perf_counter()
    run_sim(p, c, sim)
    out["first_call_s"][name] = time.perf_counter() - t0
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        run_sim(p, c, sim)
        best = min(best, time.perf_counter() - t0)
    out["run_sim_s"][name] = best
t0 = time.perf_counter()
tune_controller("fopid", TABLE1_PATIENTS[:2], sim, WoaConfig(4, 2, seed=0), prune=False)
out["tune_4x2_s"] = time.perf_counter() - t0
json.dump(out, sys.stdout)
"""


def run(no_jit: bool, horizon: float, repeat: int) -> dict:
    env = dict(os.environ)
    env.pop("DOASIM_NO_JIT", None)
    if no_jit:
        env["DOASIM_NO_JIT"] = "1"
    r = subprocess.run([sys.executable, "-c", WORKER, str(horizon), str(repeat)],
                       capture_output=True, text=True, env=env, check=True)
    return json.loads(r.stdout)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--horizon", type=float, default=30.0, help="simulated minutes per run")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    jit = run(False, args.horizon, args.repeat)
    plain = run(True, args.horizon, args.repeat)
    print(f"closed loop, {args.horizon:g} min at dt = 0.01 (best of {args.repeat})")
    print(f"{'controller':<10} {'numba [ms]':>12} {'numpy [ms]':>12} {'speed-up':>9} {'numba 1st call [s]':>19}")
    for name in jit["run_sim_s"]:
        a, b = jit["run_sim_s"][name], plain["run_sim_s"][name]
        print(f"{name:<10} {a * 1e3:12.2f} {b * 1e3:12.1f} {b / a:9.0f} {jit['first_call_s'][name]:19.2f}")
    a, b = jit["tune_4x2_s"], plain["tune_4x2_s"]
    print(f"{'tune 4x2':<10} {a * 1e3:12.1f} {b * 1e3:12.1f} {b / a:9.0f}")


if __name__ == "__main__":
    main()
