"""Monte Carlo RMSE across sample sizes and delta-method interval coverage.

    python3 scripts/rate_and_coverage.py --reps 200 --threads 1
"""

from __future__ import annotations

import argparse
import json
from dataclasses import asdict, dataclass

from polyiv.dgp import DgpSpec, Gaussian
from polyiv.sim import StudyConfig, run_study


@dataclass
class Experiment:
    p0: tuple = (0.7, 0.3)
    p1: tuple = (0.3, 0.7)
    g: tuple = (1.0, -0.5)
    sigma: float = 1.0
    rate_sizes: tuple = (1000, 10000, 100000)
    coverage_n: int = 5000
    reps: int = 200
    seed: int = 0
    threads: int = 1


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--json", help="write the summaries here")
    args = ap.parse_args(argv)
    exp = Experiment(reps=args.reps, seed=args.seed, threads=args.threads)
    dgp = DgpSpec([exp.p0, exp.p1], exp.g, Gaussian(exp.sigma))

    rate = run_study(dgp, exp.rate_sizes, exp.reps, StudyConfig(infer=False, seed=exp.seed, threads=exp.threads))
    print(f"{'n':>8} {'rmse':>10} {'failures':>9}")
    for s in rate.summaries:
        print(f"{s.n:>8} {s.rmse:>10.5f} {s.failures:>9}")
    first, last = rate.summaries[0], rate.summaries[-1]
    print(f"rmse ratio n={last.n} / n={first.n}: {last.rmse / first.rmse:.4f}")

    cov = run_study(dgp, [exp.coverage_n], exp.reps, StudyConfig(seed=exp.seed + 1, threads=exp.threads))
    s = cov.summaries[0]
    print(f"95% interval coverage at n={s.n}: " + ", ".join(f"{c:.3f}" for c in s.coverage))

    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(
                {"experiment": asdict(exp), "rate": [x.to_dict() for x in rate.summaries], "coverage": s.to_dict()},
                fh, indent=2, sort_keys=True,
            )


if __name__ == "__main__":
    main()
