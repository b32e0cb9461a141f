"""Simulation from a DgpSpec and the Monte Carlo study harness.

Every replication draws from its own substream ``SeedSequence(seed,
spawn_key=(n_index, rep))``, so results do not depend on scheduling or on
how many worker threads run the study.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Sample
from .dgp import DgpSpec
from .errors import PolyIVError
from .solver import SolverConfig


def rng_for(seed: int, stream=()) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(stream))))


def simulate(dgp: DgpSpec, n: int, seed: int = 0, stream=()) -> Sample:
    """Draw n iid observations of (Y, X, W)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = rng_for(seed, stream)
    w = (rng.random(n) >= dgp.pW0).astype(np.int64)
    cum = np.cumsum(dgp.p, axis=1)
    cum[:, -1] = 1.0
    u = rng.random(n)
    x = np.empty(n, dtype=np.int64)
    for l in (0, 1):
        m = w == l
        x[m] = np.searchsorted(cum[l], u[m], side="right") + 1
    x = np.minimum(x, dgp.K)
    if dgp.cell_errors is None:
        err = dgp.error.draw(rng, n)
    else:
        err = np.empty(n)
        for k in range(dgp.K):
            m = x == k + 1
            err[m] = dgp.family(k).draw(rng, int(m.sum()))
    y = dgp.g[x - 1] + err
    return Sample(y, x, w, dgp.K)


@dataclass(frozen=True)
class StudyConfig:
    R: float = 10.0
    solver: SolverConfig = field(default_factory=SolverConfig)
    level: float = 0.95
    infer: bool = True
    seed: int = 0
    threads: int | None = None

    def to_dict(self) -> dict:
        # thread count is excluded: it never changes results
        return {
            "R": self.R,
            "solver": self.solver.to_dict(),
            "level": self.level,
            "infer": self.infer,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class RepRecord:
    n: int
    rep: int
    g_tilde: tuple | None
    sq_error: float | None
    covered: tuple | None
    n_roots: int | None
    flags: tuple = ()
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "rep": self.rep,
            "g_tilde": None if self.g_tilde is None else list(self.g_tilde),
            "sq_error": self.sq_error,
            "covered": None if self.covered is None else list(self.covered),
            "n_roots": self.n_roots,
            "flags": list(self.flags),
            "error": self.error,
        }


@dataclass(frozen=True)
class StudySummary:
    n: int
    reps: int
    failures: int
    rmse: float
    rmse_by_component: tuple
    coverage: tuple | None
    mean_roots: float

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "reps": self.reps,
            "failures": self.failures,
            "rmse": self.rmse,
            "rmse_by_component": list(self.rmse_by_component),
            "coverage": None if self.coverage is None else list(self.coverage),
            "mean_roots": self.mean_roots,
        }


@dataclass(frozen=True)
class StudyReport:
    dgp: dict
    config: dict
    summaries: tuple
    records: tuple

    def summary_for(self, n: int) -> StudySummary:
        for s in self.summaries:
            if s.n == n:
                return s
        raise KeyError(n)

    def to_dict(self) -> dict:
        return {
            "dgp": self.dgp,
            "config": self.config,
            "summaries": [s.to_dict() for s in self.summaries],
            "records": [r.to_dict() for r in self.records],
        }


def _one_rep(dgp: DgpSpec, n: int, n_index: int, rep: int, cfg: StudyConfig) -> RepRecord:
    from .pipeline import fit

    sample = simulate(dgp, n, cfg.seed, stream=(n_index, rep))
    try:
        res = fit(sample, cfg.R, cfg.solver, infer=cfg.infer, level=cfg.level)
    except (PolyIVError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return RepRecord(n, rep, None, None, None, None, (), f"{type(exc).__name__}: {exc}")
    g = res.g_tilde
    err = g - dgp.g
    covered = None
    if res.report is not None:
        covered = tuple(bool(c) for c in res.report.covers(dgp.g))
    return RepRecord(
        n, rep, tuple(float(v) for v in g), float(err @ err), covered, len(res.solutions.roots), res.flags
    )


def _summarize(n: int, records: list, g: np.ndarray) -> StudySummary:
    K = len(g)
    ok = [r for r in records if r.error is None]
    if not ok:
        return StudySummary(n, len(records), len(records), math.nan, (math.nan,) * K, None, math.nan)
    err = np.array([r.g_tilde for r in ok]) - g
    rmse = math.sqrt(math.fsum(r.sq_error for r in ok) / len(ok))
    by_comp = tuple(math.sqrt(math.fsum(col * col) / len(ok)) for col in err.T)
    cov = None
    if all(r.covered is not None for r in ok):
        hits = np.array([r.covered for r in ok])
        cov = tuple(float(c) for c in hits.mean(axis=0))
    roots = float(math.fsum(r.n_roots for r in ok) / len(ok))
    return StudySummary(n, len(records), len(records) - len(ok), rmse, by_comp, cov, roots)


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("POLYIV_THREADS", "1") or 1)
    return max(1, int(threads))


def run_study(dgp: DgpSpec, n_list, reps: int, config: StudyConfig | None = None) -> StudyReport:
    """Simulate, estimate and aggregate ``reps`` replications at each sample size."""
    cfg = config or StudyConfig()
    if reps < 1:
        raise ValueError("reps must be at least 1")
    n_list = [int(n) for n in n_list]
    if len(set(n_list)) != len(n_list):
        raise ValueError("sample sizes must be distinct")
    tasks = [(n, i, rep) for i, n in enumerate(n_list) for rep in range(reps)]

    def work(task):
        n, i, rep = task
        return _one_rep(dgp, n, i, rep, cfg)

    threads = resolve_threads(cfg.threads)
    if threads == 1:
        records = [work(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(work, tasks))
    summaries = []
    for n in n_list:
        recs = [r for r in records if r.n == n]
        summaries.append(_summarize(n, recs, dgp.g))
    return StudyReport(dgp.describe(), cfg.to_dict(), tuple(summaries), tuple(records))
