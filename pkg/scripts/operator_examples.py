"""Kernel margin, x-invariant residual and indicator search for the built-in density pairs.

    python3 scripts/operator_examples.py --budget 1000
"""

from __future__ import annotations

import argparse

from polyiv.operator_diag import (
    UNIT_X,
    Affine,
    discretize_T,
    identical_pair,
    indicator_kernel_search,
    kernel_margin,
    separable_pair,
    smooth_equal_pair,
    tiled_pair,
    v_residual,
)


def cases():
    yield "identical", (*identical_pair(), 0.5), {}
    yield "separable", (*separable_pair(), 0.5), {"basis_nb": 1}
    yield "smooth", (*smooth_equal_pair(), 0.25), {"basis_nx": 4, "basis_nb": 2}
    f0, f1, B, tiles = tiled_pair()
    yield "tiled", (f0, f1, B), {"basis_nx": tiles, "basis_nb": 1}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--budget", type=int, default=1000)
    args = ap.parse_args(argv)
    print(f"{'pair':<10} {'margin':>10} {'v_resid':>10} {'search':>10}")
    for name, (f0, f1, B), kw in cases():
        op = discretize_T(f0, f1, B, **kw)
        margin, _ = kernel_margin(op)
        val, _ = indicator_kernel_search(op, Affine(UNIT_X), budget=args.budget)
        print(f"{name:<10} {margin:>10.4g} {v_residual(op):>10.3g} {val:>10.4g}")


if __name__ == "__main__":
    main()
