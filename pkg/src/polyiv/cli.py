"""Command-line front end.

Each subcommand writes a JSON artifact (the machine contract) and an aligned
text table. Exit status: 0 success, 1 a statistical requirement fails on the
data, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import load_csv, save_csv, split_counts
from .dgp import DgpSpec, Gaussian, load_dgp
from .errors import AssumptionError, DataError
from .identify import (
    bezout_bound,
    check_relevance,
    default_t_grid,
    estimate_identified_set,
    nonidentified_dgp,
)
from .moments import estimate_moments
from .operator_diag import (
    Affine,
    PiecewiseLinear,
    default_t_grid as operator_t_grid,
    discretize_T,
    embed_discrete,
    identical_pair,
    indicator_kernel_search,
    kernel_margin,
    load_density,
    separable_pair,
    smooth_equal_pair,
    tiled_pair,
    v_residual,
)
from .pipeline import fit
from .sim import StudyConfig, resolve_threads, run_study, simulate
from .solver import SolverConfig

SCHEMA = 1


class UsageError(Exception):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def parse_schema(text: str | None) -> dict | None:
    if not text:
        return None
    out = {}
    for part in text.split(","):
        if "=" not in part:
            raise UsageError(f"schema entry {part!r} is not key=value")
        key, val = (s.strip() for s in part.split("=", 1))
        if key not in ("y", "x", "w", "K"):
            raise UsageError(f"unknown schema key {key!r}")
        out[key] = int(val) if key == "K" else val
    return out


def _positive(kind):
    def conv(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v

    return conv


def _level(text):
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError("level must lie in (0, 1)")
    return v


def _int_list(text):
    try:
        vals = [int(float(t)) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("sizes must be positive integers")
    return vals


def _float_list(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polyiv", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"polyiv {__version__}")
    p.add_argument("--threads", type=_positive(int), default=None, help="worker cap (default: $POLYIV_THREADS or 1)")
    sub = p.add_subparsers(dest="command", required=True)

    def data_args(sp):
        sp.add_argument("--input", required=True, help="CSV with columns y, x, w")
        sp.add_argument("--schema", default=None, help="column remapping, e.g. y=out,x=cat,w=z,K=4")
        sp.add_argument("--output", default=None, help="output stem; writes <stem>.json and <stem>.txt")

    sp = sub.add_parser("moments", help="plug-in moment table")
    data_args(sp)
    sp.add_argument("--J", type=_positive(int), default=None, help="maximum power (default K+1)")

    sp = sub.add_parser("estimate", help="two-stage point estimate of g")
    data_args(sp)
    sp.add_argument("--radius", type=_positive(float), default=10.0)
    sp.add_argument("--starts", type=_positive(int), default=None)
    sp.add_argument("--root-tol", type=_positive(float), default=None)
    sp.add_argument("--dedup-tol", type=_positive(float), default=None)
    sp.add_argument("--max-iter", type=_positive(int), default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--infer", action="store_true", help="add delta-method covariance and intervals")
    sp.add_argument("--level", type=_level, default=0.95)

    sp = sub.add_parser("identify", help="relevance audit and root-count bound")
    data_args(sp)
    sp.add_argument("--min-margin", type=float, default=0.0, help="exit 1 when the smallest margin is at or below this")

    sp = sub.add_parser("partial-set", help="characteristic-function set estimate over candidates")
    data_args(sp)
    sp.add_argument("--candidates-file", required=True, help="CSV with one K-vector per row")
    sp.add_argument("--eta", type=_positive(float), default=None, help="threshold (default n^-1/3)")
    sp.add_argument("--t-grid", type=_positive(int), default=64, help="number of t points on [0, 1]")

    sp = sub.add_parser("operator-diag", help="kernel diagnostics for the continuous-X operator")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--f0", help="density grid for W=0 (JSON or CSV); needs --f1")
    src.add_argument("--example", choices=["identical", "separable", "smooth", "tiled", "counterexample"])
    sp.add_argument("--f1", help="density grid for W=1")
    sp.add_argument("--B", type=_positive(float), default=None, help="bound on |g| (default depends on input)")
    sp.add_argument("--nx", type=_positive(int), default=32, help="x cells for built-in examples")
    sp.add_argument("--nu", type=_positive(int), default=64, help="u cells for built-in examples")
    sp.add_argument("--basis-nx", type=_positive(int), default=None)
    sp.add_argument("--basis-nb", type=_positive(int), default=None)
    sp.add_argument("--t-res", type=_positive(float), default=1.0, help="t spacing in units of the u cell width")
    sp.add_argument("--family", choices=["affine", "piecewise"], default="piecewise")
    sp.add_argument("--knots", type=_float_list, default=None, help="x positions for the piecewise family")
    sp.add_argument("--budget", type=_positive(int), default=2000)
    sp.add_argument("--output", default=None)

    sp = sub.add_parser("simulate", help="draw a sample from a model file")
    sp.add_argument("--dgp", required=True, help="key = value model file")
    sp.add_argument("--n", type=_positive(int), required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output", required=True, help="CSV path")

    sp = sub.add_parser("study", help="Monte Carlo study of the estimator")
    sp.add_argument("--dgp", required=True)
    sp.add_argument("--n", type=_int_list, required=True, help="comma-separated sample sizes")
    sp.add_argument("--reps", type=_positive(int), default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--radius", type=_positive(float), default=10.0)
    sp.add_argument("--starts", type=_positive(int), default=None)
    sp.add_argument("--level", type=_level, default=0.95)
    sp.add_argument("--no-infer", action="store_true")
    sp.add_argument("--output", default=None)
    return p


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _table(rows) -> str:
    rows = [[str(c) for c in r] for r in rows]
    if not rows:
        return ""
    widths = [max(len(r[i]) for r in rows if i < len(r)) for i in range(max(len(r) for r in rows))]
    return "\n".join("  ".join(c.ljust(widths[i]) for i, c in enumerate(r)).rstrip() for r in rows) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _emit(args, payload: dict, table_rows) -> None:
    text = _dump(payload)
    table = _table(table_rows)
    if args.output:
        out = Path(args.output)
        stem = out.with_suffix("") if out.suffix.lower() == ".json" else out
        stem.parent.mkdir(parents=True, exist_ok=True)
        Path(str(stem) + ".json").write_text(text, encoding="utf-8")
        Path(str(stem) + ".txt").write_text(table, encoding="utf-8")
    else:
        sys.stdout.write(text)
        sys.stderr.write(table)


def _config(args, drop=("output", "threads", "command")) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in drop}


def _envelope(args, result: dict, inputs: dict) -> dict:
    return {
        "schema": SCHEMA,
        "version": __version__,
        "command": args.command,
        "config": _config(args),
        "inputs": inputs,
        "result": result,
    }


def _load_sample(args):
    return load_csv(args.input, parse_schema(args.schema))


def cmd_moments(args):
    sample = _load_sample(args)
    table = estimate_moments(sample, args.J)
    result = table.to_dict()
    result["Q"] = table.Q.tolist()
    result["counts"] = split_counts(sample).tolist()
    rows = [["j", "l", "k", "C", "Q"]]
    for j in range(table.J + 1):
        for l in range(2):
            for k in range(table.K):
                rows.append([j, l, k + 1, _fmt(float(table.C[j, l, k])), _fmt(float(table.Q[j, l, k]))])
    _emit(args, _envelope(args, result, {"input": sha256_file(args.input)}), rows)
    return 0


def cmd_estimate(args):
    sample = _load_sample(args)
    cfg = SolverConfig(
        starts=args.starts, root_tol=args.root_tol, dedup_tol=args.dedup_tol,
        max_iter=args.max_iter, seed=args.seed,
    )
    res = fit(sample, args.radius, cfg, infer=args.infer, level=args.level)
    result = res.to_dict()
    result["n"] = sample.n
    result["K"] = sample.K
    rows = [["k", "g_tilde"] + (["se", "ci_lo", "ci_hi"] if res.report is not None else [])]
    for k in range(sample.K):
        row = [k + 1, _fmt(float(res.g_tilde[k]))]
        if res.report is not None:
            row += [_fmt(float(res.report.se[k])), _fmt(float(res.report.ci[k, 0])), _fmt(float(res.report.ci[k, 1]))]
        rows.append(row)
    rows.append(["roots", len(res.solutions.roots)])
    rows.append(["flags", ",".join(res.flags) or "-"])
    _emit(args, _envelope(args, result, {"input": sha256_file(args.input)}), rows)
    return 0


def cmd_identify(args):
    sample = _load_sample(args)
    table = estimate_moments(sample, 1)
    rep = check_relevance(table)
    result = rep.to_dict()
    result["bezout_bound"] = bezout_bound(sample.K)
    rows = [["J", "margin"]] + [[",".join(map(str, J)), _fmt(m)] for J, m in rep.margins.items()]
    rows.append(["min", f"{_fmt(rep.min_margin)} at {{{','.join(map(str, rep.min_subset))}}}"])
    _emit(args, _envelope(args, result, {"input": sha256_file(args.input)}), rows)
    if rep.min_margin <= args.min_margin:
        raise AssumptionError(f"relevance condition fails: {rep.describe()}")
    return 0


def _load_candidates(path, K):
    path = Path(path)
    if not path.exists():
        raise UsageError(f"no such file: {path}")
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        for i, rec in enumerate(csv.reader(fh), 1):
            if not rec or all(not c.strip() for c in rec):
                continue
            try:
                vals = [float(c) for c in rec]
            except ValueError:
                if not rows and i == 1:
                    continue  # header
                raise UsageError(f"non-numeric candidate, row {i}") from None
            if len(vals) != K:
                raise UsageError(f"candidate row {i} has {len(vals)} entries, expected K={K}")
            rows.append(vals)
    if not rows:
        raise UsageError(f"candidates file {path} is empty")
    return np.array(rows)


def cmd_partial_set(args):
    sample = _load_sample(args)
    cands = _load_candidates(args.candidates_file, sample.K)
    est = estimate_identified_set(sample, cands, default_t_grid(args.t_grid), args.eta)
    result = est.to_dict()
    rows = [["candidate", "criterion", "member"]]
    for h, c, m in zip(est.candidates, est.criterion, est.members):
        rows.append([_fmt(h.tolist()), _fmt(float(c)), "yes" if m else "no"])
    rows.append(["eta", _fmt(est.eta)])
    inputs = {"input": sha256_file(args.input), "candidates": sha256_file(args.candidates_file)}
    _emit(args, _envelope(args, result, inputs), rows)
    return 0


def _example_pair(args):
    """(f0, f1, B, basis_nx, basis_nb, knots) for a built-in example."""
    name = args.example
    nx, nb, knots = args.basis_nx, args.basis_nb, None
    if name == "identical":
        f0, f1 = identical_pair(args.nx, args.nu)
        B = 0.5
    elif name == "separable":
        f0, f1 = separable_pair(args.nx, args.nu)
        B = 0.5
    elif name == "smooth":
        f0, f1 = smooth_equal_pair(args.nx, args.nu)
        B, nx, nb = 0.25, nx or 4, nb or 2
    elif name == "tiled":
        f0, f1, B, tiles = tiled_pair(args.nx, args.nu)
        nx, nb = nx or tiles, nb or 1
    else:
        # categories 1 and 2 have equal total probability under both instrument values
        base = DgpSpec([[0.3, 0.2, 0.1, 0.4], [0.15, 0.35, 0.3, 0.2]], [0.0] * 4, Gaussian(0.5))
        original, _, _ = nonidentified_dgp(4, (1, 2), base, 0.5)
        f0, f1, blocks = embed_discrete(original, n_x=args.nx, n_u=args.nu)
        x0, dx = f0.x_range[0], f0.dx
        knots = (f0.x_range[0], x0 + blocks[1][1] * dx, x0 + blocks[2][0] * dx, f0.x_range[1])
        B = 0.5
    return f0, f1, args.B or B, nx, nb, knots


def cmd_operator_diag(args):
    inputs = {}
    example_knots = None
    if args.example:
        f0, f1, B, basis_nx, basis_nb, example_knots = _example_pair(args)
    else:
        if not args.f1:
            raise UsageError("--f0 needs --f1")
        f0, f1 = load_density(args.f0), load_density(args.f1)
        B = args.B or 0.25 * (f0.u_range[1] - f0.u_range[0])
        basis_nx, basis_nb = args.basis_nx, args.basis_nb
        inputs = {"f0": sha256_file(args.f0), "f1": sha256_file(args.f1)}
    t = operator_t_grid(f0, B, args.t_res * f0.du)
    op = discretize_T(f0, f1, B, t, basis_nx, basis_nb)
    result = {"operator": op.to_dict(), "v_residual": v_residual(op)}
    rows = [["quantity", "value"], ["B", _fmt(B)], ["shape", _fmt(list(op.values.shape))]]
    rows.append(["v_residual", _fmt(result["v_residual"])])
    if op.basis_nx >= 2:
        margin, witness = kernel_margin(op)
        result["kernel_margin"] = margin
        result["witness"] = witness.tolist()
        rows.append(["kernel_margin", _fmt(margin)])
    if args.family == "affine":
        family = Affine(f0.x_range)
    else:
        knots = args.knots or example_knots or list(np.linspace(f0.x_range[0], f0.x_range[1], 4))
        family = PiecewiseLinear(tuple(knots))
    value, params = indicator_kernel_search(op, family, args.budget)
    result["indicator_search"] = {"objective": value, "params": list(map(float, params)), "knots": list(family.knots)}
    rows.append(["indicator_objective", _fmt(value)])
    rows.append(["indicator_params", _fmt(list(map(float, params)))])
    _emit(args, _envelope(args, result, inputs), rows)
    return 0


def cmd_simulate(args):
    dgp = load_dgp(args.dgp)
    sample = simulate(dgp, args.n, args.seed)
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    save_csv(sample, args.output)
    return 0


def cmd_study(args):
    dgp = load_dgp(args.dgp)
    cfg = StudyConfig(
        R=args.radius, solver=SolverConfig(starts=args.starts, seed=args.seed),
        level=args.level, infer=not args.no_infer, seed=args.seed, threads=resolve_threads(args.threads),
    )
    rep = run_study(dgp, args.n, args.reps, cfg)
    result = rep.to_dict()
    rows = [["n", "reps", "failures", "rmse", "coverage", "mean_roots"]]
    for s in rep.summaries:
        rows.append([s.n, s.reps, s.failures, _fmt(s.rmse), _fmt(s.coverage) if s.coverage else "-", _fmt(s.mean_roots)])
    _emit(args, _envelope(args, result, {"dgp": sha256_file(args.dgp)}), rows)
    if args.output:
        stem = Path(args.output)
        stem = stem.with_suffix("") if stem.suffix.lower() == ".json" else stem
        with open(str(stem) + ".csv", "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh, lineterminator="\n")
            K = dgp.K
            out.writerow(["n", "rep"] + [f"g{k + 1}" for k in range(K)] + [f"cover{k + 1}" for k in range(K)] + ["n_roots", "error"])
            for r in rep.records:
                g = list(r.g_tilde) if r.g_tilde else [""] * K
                c = [int(v) for v in r.covered] if r.covered else [""] * K
                out.writerow([r.n, r.rep] + [repr(v) if v != "" else "" for v in g] + c + [r.n_roots, r.error or ""])
    return 0


COMMANDS = {
    "moments": cmd_moments,
    "estimate": cmd_estimate,
    "identify": cmd_identify,
    "partial-set": cmd_partial_set,
    "operator-diag": cmd_operator_diag,
    "simulate": cmd_simulate,
    "study": cmd_study,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except AssumptionError as exc:
        print(f"polyiv: {exc}", file=sys.stderr)
        return 1
    except (UsageError, DataError, FileNotFoundError, ValueError) as exc:
        print(f"polyiv: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
