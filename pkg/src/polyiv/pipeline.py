"""Sample -> moments -> polynomial system -> estimate (-> inference)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Sample
from .inference import EstimateReport, asymptotic_report, require_populated_cells
from .moments import MomentTable, estimate_moments
from .polysys import PolySystem, build_system
from .solver import SolutionSet, SolverConfig, estimate_g_tilde


@dataclass(frozen=True, eq=False)
class FitResult:
    g_tilde: np.ndarray
    table: MomentTable
    system: PolySystem
    solutions: SolutionSet
    report: EstimateReport | None
    flags: tuple

    def to_dict(self) -> dict:
        out = {
            "g_tilde": self.g_tilde.tolist(),
            "roots": self.solutions.roots.tolist(),
            "residuals": self.solutions.residuals.tolist(),
            "solution_set": self.solutions.to_dict(),
            "flags": list(self.flags),
        }
        if self.report is not None:
            out["inference"] = self.report.to_dict()
            out["cov"] = self.report.cov.tolist()
            out["ci"] = self.report.ci.tolist()
        return out


def fit(
    sample: Sample,
    R: float = 10.0,
    cfg: SolverConfig | None = None,
    infer: bool = False,
    level: float = 0.95,
) -> FitResult:
    """Two-stage estimate of g, optionally with delta-method intervals."""
    cfg = cfg or SolverConfig()
    require_populated_cells(sample)
    table = estimate_moments(sample)
    sys = build_system(table)
    g, zs = estimate_g_tilde(sys, R, cfg)
    flags = tuple(zs.flags)
    report = None
    if infer:
        report = asymptotic_report(sample, g, sys, level, flags)
        flags = report.flags
    return FitResult(g, table, sys, zs, report, flags)
