"""Count isolated roots of the population system for random identifiable models.

    python3 scripts/root_count_scan.py --K 3 --systems 50
"""

from __future__ import annotations

import argparse
import collections

import numpy as np

from polyiv.dgp import DgpSpec, Gaussian, Uniform
from polyiv.identify import bezout_bound, check_relevance
from polyiv.moments import population_table
from polyiv.polysys import build_system
from polyiv.solver import SolverConfig, solve_zero_set


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--K", type=int, default=3)
    ap.add_argument("--systems", type=int, default=50)
    ap.add_argument("--radius", type=float, default=5.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    counts = collections.Counter()
    worst_miss = 0.0
    done = 0
    while done < args.systems:
        fam = Gaussian(1.0) if done % 2 == 0 else Uniform(-1.5, 1.5)
        dgp = DgpSpec(rng.dirichlet(np.ones(args.K), size=2), rng.uniform(-2, 2, args.K), fam)
        if check_relevance(population_table(dgp, 1)).min_margin < 0.05:
            continue
        zs = solve_zero_set(build_system(population_table(dgp)), args.radius, SolverConfig(seed=done))
        counts[len(zs.roots)] += 1
        if len(zs.roots):
            worst_miss = max(worst_miss, float(np.min(np.linalg.norm(zs.roots - dgp.g, axis=1))))
        done += 1
    print(f"K={args.K}, bound K!={bezout_bound(args.K)}, systems={args.systems}")
    for c in sorted(counts):
        print(f"  {c} root(s): {counts[c]}")
    print(f"largest distance from the truth to the nearest root: {worst_miss:.3g}")


if __name__ == "__main__":
    main()
