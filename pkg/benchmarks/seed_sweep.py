"""Tune FOPID and FOFPID on the packaged experiment for several seeds.

Uses the same cohort, bounds, controller settings and WOA budget as
``doasim tune``; only the seed changes.  Metrics are computed from the
unrounded series, so they can differ from the CLI summaries in the last
few digits.

    python benchmarks/seed_sweep.py [--seeds 1 2 3 4 5 20240601]
"""

import argparse
import time
from dataclasses import replace

from doasim.config import default_experiment, variant_bounds
from doasim.simloop import run_cohort
from doasim.woa import tune_controller


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5, 20240601])
    args = ap.parse_args()

    exp = default_experiment()
    print(f"WOA {exp.woa.pop_size} agents x {exp.woa.max_iter} iterations, {len(exp.patients)} patients")
    print(f"{'seed':>9} {'variant':<7} {'cost':>8} {'iae':>8} {'itae':>8} {'max settle':>10} {'in band':>7} {'time':>6}")
    wins = 0
    for seed in args.seeds:
        woa = replace(exp.woa, seed=seed)
        cost = {}
        for v in ("fopid", "fofpid"):
            t0 = time.perf_counter()
            res = tune_controller(v, exp.patients, exp.sim, woa, variant_bounds(exp, v), exp.base_controller())
            c = run_cohort(exp.patients, res.config, exp.sim)
            m = c.means
            settle = max(r.metrics.settling_time for r in c.reports)
            band = all(r.metrics.in_band_after_settling for r in c.reports)
            cost[v] = m["cost"]
            print(f"{seed:>9} {v:<7} {m['cost']:8.3f} {m['iae']:8.3f} {m['itae']:8.3f} {settle:10.3f} "
                  f"{str(band):>7} {time.perf_counter() - t0:5.0f}s", flush=True)
        wins += cost["fofpid"] < cost["fopid"]
    print(f"FOFPID lower mean cost for {wins} of {len(args.seeds)} seeds")


if __name__ == "__main__":
    main()
