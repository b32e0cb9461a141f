"""Delta-method covariance for the two-stage estimator.

The root g~ is an implicit function omega(w) of the raw coefficient vector w,
so ``cov(g~) ~ n^-1 D Omega D'`` with ``D = -V^-1 Delta``, where V and Delta
are the Jacobians of Psi in h and in w and Omega is the covariance of the
per-observation monomials that average to w.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats

from .data import Sample, split_counts
from .errors import AssumptionError
from .moments import estimate_moments, iota
from .polysys import PolySystem, jacobian_h, jacobian_w

COND_LIMIT = 1e10
NEAR_SINGULAR = 1e6
PSD_TOL = 1e-10


def monomials(sample: Sample) -> np.ndarray:
    """Per-observation vector whose mean is the coefficient vector w (shape n x (2K^2+2))."""
    K = sample.K
    n = sample.n
    Z = np.zeros((n, 2 * K * K + 2))
    ypow = np.ones(n)
    for j in range(K):
        for l in range(2):
            for k in range(1, K + 1):
                mask = (sample.w == l) & (sample.x == k)
                Z[mask, iota(j, l, k, K) - 1] = ypow[mask]
        ypow = ypow * sample.y
    Z[:, 2 * K * K] = sample.w == 0
    Z[:, 2 * K * K + 1] = sample.w == 1
    return Z


def omega_hat(sample: Sample) -> np.ndarray:
    """Plug-in covariance of :func:`monomials`, symmetric (2K^2+2) square matrix.

    Computed in centred form around the first observation and with correctly
    rounded column sums, which is algebraically the uncentred-minus-outer
    product estimator but avoids its cancellation.
    """
    Z = monomials(sample)
    n = Z.shape[0]
    Zs = Z - Z[0]
    mean_s = np.array([math.fsum(col) for col in Zs.T]) / n
    D = Zs - mean_s
    omega = D.T @ D / n
    return 0.5 * (omega + omega.T)


def psd_repair(M: np.ndarray, tol: float = PSD_TOL) -> np.ndarray:
    """Clip eigenvalues in (-tol, 0) to zero; more negative ones raise."""
    M = 0.5 * (M + M.T)
    lam, Qm = np.linalg.eigh(M)
    if lam.min(initial=0.0) < -tol:
        raise ArithmeticError(f"covariance has eigenvalue {lam.min():.3g} below -{tol:g}")
    if lam.min(initial=0.0) < 0:
        lam = np.clip(lam, 0.0, None)
        M = (Qm * lam) @ Qm.T
        M = 0.5 * (M + M.T)
    return M


def normal_quantile(p: float) -> float:
    return float(stats.norm.ppf(p))


@dataclass(frozen=True, eq=False)
class EstimateReport:
    g_tilde: np.ndarray
    cov: np.ndarray
    ci: np.ndarray  # (K, 2)
    n: int
    level: float
    condition_V: float
    flags: tuple = ()

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def standardized(self, g) -> np.ndarray:
        """``Sigma^-1/2 (g~ - g)`` with ``Sigma = cov``; approximately N(0, I)."""
        root = linalg.sqrtm(self.cov).real
        return np.linalg.solve(root, self.g_tilde - np.asarray(g, dtype=float))

    def covers(self, g) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        return (self.ci[:, 0] <= g) & (g <= self.ci[:, 1])

    def to_dict(self) -> dict:
        return {
            "g_tilde": self.g_tilde.tolist(),
            "cov": self.cov.tolist(),
            "se": self.se.tolist(),
            "ci": self.ci.tolist(),
            "n": self.n,
            "level": self.level,
            "condition_V": self.condition_V,
            "flags": list(self.flags),
        }


def require_populated_cells(sample: Sample) -> None:
    counts = split_counts(sample)
    if np.any(counts.sum(axis=1) == 0):
        raise AssumptionError("instrument degenerate: only one value of W observed")
    empty = np.argwhere(counts == 0)
    if empty.size:
        l, k = empty[0]
        raise AssumptionError(f"empty cell W={l}, X={k + 1}: every (W, X) cell needs observations")


def delta_matrix(sys: PolySystem, g_tilde, w) -> tuple[np.ndarray, float]:
    """``D = -V^-1 Delta`` at ``g_tilde`` and the condition number of V."""
    K = sys.K
    V = jacobian_h(sys, g_tilde)
    cond = float(np.linalg.cond(V)) if np.all(np.isfinite(V)) else math.inf
    if not np.isfinite(cond) or cond >= COND_LIMIT:
        raise AssumptionError(
            f"Jacobian V of the identifying equations is numerically singular at the "
            f"estimate (condition number {cond:.3g})"
        )
    Delta = jacobian_w(K, g_tilde, w)
    return -np.linalg.solve(V, Delta), cond


def asymptotic_report(
    sample: Sample, g_tilde, sys: PolySystem, level: float = 0.95, flags: tuple = ()
) -> EstimateReport:
    """Delta-method covariance and per-component intervals at confidence ``level``."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if sample.K < 2:
        raise ValueError("inference needs K >= 2")
    require_populated_cells(sample)
    g_tilde = np.asarray(g_tilde, dtype=float)
    table = sys.table if (sys.table is not None and sys.table.n == sample.n) else estimate_moments(sample)
    D, cond = delta_matrix(sys, g_tilde, table.coefficient_vector())
    omega = omega_hat(sample)
    cov = psd_repair(D @ omega @ D.T / sample.n)
    z = normal_quantile(0.5 + level / 2.0)
    half = z * np.sqrt(np.diag(cov))
    ci = np.column_stack([g_tilde - half, g_tilde + half])
    out_flags = list(flags)
    if cond >= NEAR_SINGULAR:
        out_flags.append("near_singular_V")
    return EstimateReport(g_tilde, cov, ci, sample.n, float(level), cond, tuple(out_flags))
