"""The moment polynomials P_0..P_{K+1} and their derivatives.

Every P_m is a sum over categories of a univariate polynomial in
``z_k = -h_k``. The system stores, for each row m and category k, the
coefficients of ``z_k**p``:

* m >= 1: ``binom(m, j) * (Q[j,0,k] - Q[j,1,k])`` at ``p = m - j``
  (the difference of conditional m-th moments of Y - h(X) across W);
* m == 0: ``Q[1,0,k]`` at ``p = 0`` and ``Q[0,0,k]`` at ``p = 1``
  (the W=0 mean of Y - h(X)).

Evaluation and both Jacobians read this single tensor.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .moments import MomentTable, iota


@dataclass(frozen=True, eq=False)
class PolySystem:
    K: int
    coeffs: np.ndarray  # (K+2, K, K+2): [m, k, power of -h_k]
    n: int = 0
    source: str = ""
    table: MomentTable | None = None

    @property
    def lambda_rows(self) -> range:
        return range(self.K)

    @property
    def gamma_rows(self) -> range:
        return range(self.K + 2)

    def to_dict(self) -> dict:
        return {"K": self.K, "n": self.n, "coeffs": self.coeffs.tolist(), "source_sha256": self.source}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def build_system(table: MomentTable) -> PolySystem:
    K = table.K
    if table.J < K + 1:
        raise ValueError(f"moment table has J={table.J}; need at least K+1={K + 1}")
    if np.any(table.pW <= 0):
        raise ValueError("both instrument values need positive probability")
    Q = table.Q
    c = np.zeros((K + 2, K, K + 2))
    c[0, :, 0] = Q[1, 0]
    c[0, :, 1] = Q[0, 0]
    for m in range(1, K + 2):
        for j in range(m + 1):
            c[m, :, m - j] = math.comb(m, j) * (Q[j, 0] - Q[j, 1])
    c.setflags(write=False)
    return PolySystem(K, c, table.n, table.digest(), table)


def _horner(c, z):
    """Sum over k of univariate polynomials; ``c`` is (r, K, P), ``z`` is (..., K)."""
    acc = np.zeros(z.shape[:-1] + c.shape[:2])
    zz = z[..., None, :]
    for p in range(c.shape[2] - 1, -1, -1):
        acc = acc * zz + c[:, :, p]
    return acc


def eval_rows(sys: PolySystem, h, rows) -> np.ndarray:
    """P_m(h) for m in ``rows``; ``h`` may carry leading batch axes."""
    h = np.asarray(h, dtype=float)
    c = sys.coeffs[list(rows)]
    return _horner(c, -h).sum(axis=-1)


def eval_gamma(sys: PolySystem, h) -> np.ndarray:
    return eval_rows(sys, h, sys.gamma_rows)


def eval_lambda(sys: PolySystem, h) -> np.ndarray:
    return eval_rows(sys, h, sys.lambda_rows)


def jacobian_h(sys: PolySystem, h, rows=None) -> np.ndarray:
    """Analytic dP_m/dh_k, shape (..., len(rows), K); rows default to P_0..P_{K-1}."""
    rows = sys.lambda_rows if rows is None else rows
    h = np.asarray(h, dtype=float)
    c = sys.coeffs[list(rows)]
    P = c.shape[2]
    dc = c[:, :, 1:] * np.arange(1, P)[None, None, :]
    # d/dh = -d/dz
    return -_horner(dc, -h)


def psi(K: int, v, w) -> np.ndarray:
    """P_0..P_{K-1} at ``v`` written as rational functions of the raw coefficient vector ``w``."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    a, b = w[2 * K * K], w[2 * K * K + 1]
    out = np.zeros(K)
    for k in range(1, K + 1):
        out[0] += (w[iota(1, 0, k, K) - 1] - v[k - 1] * w[iota(0, 0, k, K) - 1]) / a
    for m in range(1, K):
        for k in range(1, K + 1):
            z = -v[k - 1]
            for j in range(m + 1):
                diff = w[iota(j, 0, k, K) - 1] / a - w[iota(j, 1, k, K) - 1] / b
                out[m] += math.comb(m, j) * diff * z ** (m - j)
    return out


def jacobian_w(K: int, h, w) -> np.ndarray:
    """Analytic K x (2K^2+2) Jacobian of ``psi(K, h, w)`` with respect to ``w``."""
    h = np.asarray(h, dtype=float)
    w = np.asarray(w, dtype=float)
    a, b = w[2 * K * K], w[2 * K * K + 1]
    if a <= 0 or b <= 0:
        raise ValueError("instrument probabilities in w must be positive")
    D = np.zeros((K, 2 * K * K + 2))
    for k in range(1, K + 1):
        i1, i0 = iota(1, 0, k, K) - 1, iota(0, 0, k, K) - 1
        D[0, i1] += 1.0 / a
        D[0, i0] += -h[k - 1] / a
        D[0, 2 * K * K] += -(w[i1] - h[k - 1] * w[i0]) / a**2
    for m in range(1, K):
        for k in range(1, K + 1):
            z = -h[k - 1]
            for j in range(m + 1):
                coef = math.comb(m, j) * z ** (m - j)
                i0, i1 = iota(j, 0, k, K) - 1, iota(j, 1, k, K) - 1
                D[m, i0] += coef / a
                D[m, i1] += -coef / b
                D[m, 2 * K * K] += -coef * w[i0] / a**2
                D[m, 2 * K * K + 1] += coef * w[i1] / b**2
    return D
