"""Independent reference computations used by the test suite.

Nothing here calls the package's solver or Jacobian code; the oracles only
read the coefficient tensor of a PolySystem or the raw DgpSpec fields.
"""

from __future__ import annotations

import math

import numpy as np


# ---------------------------------------------------------------------------
# polynomial evaluation straight from moments (no shared code with polysys)


def lambda_direct(table, h, rows):
    """P_m(h) computed from the expanded binomial sums over the Q table."""
    Q = table.Q
    K = table.K
    out = []
    for m in rows:
        if m == 0:
            out.append(sum(Q[1, 0, k] - h[k] * Q[0, 0, k] for k in range(K)))
            continue
        tot = 0.0
        for k in range(K):
            for j in range(m + 1):
                tot += math.comb(m, j) * (Q[j, 0, k] - Q[j, 1, k]) * (-h[k]) ** (m - j)
        out.append(tot)
    return np.array(out)


def fd_jacobian(f, x, step=1e-6):
    """Central differences with a relative step."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x))
    J = np.zeros((f0.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        hstep = step * max(1.0, abs(x[i]))
        e[i] = hstep
        J[:, i] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * hstep)
    return J


# ---------------------------------------------------------------------------
# exhaustive root enclosure for separable polynomial systems


def _univariate_range(coef, lo, hi):
    """Exact range of sum_p coef[..., p] z^p over z in [lo, hi], vectorised over boxes.

    ``coef`` has shape (P,), ``lo``/``hi`` shape (N,). Returns (min, max) arrays.
    """
    pts = [lo, hi]
    der = np.polyder(coef[::-1])
    if der.size > 1:
        for r in np.roots(der):
            if abs(r.imag) < 1e-12:
                r = r.real
                pts.append(np.clip(np.full_like(lo, r), lo, hi))
    vals = np.array([np.polyval(coef[::-1], p) for p in pts])
    return vals.min(axis=0), vals.max(axis=0)


def enclose_roots(coeffs, rows, radius, resolution):
    """Boxes of side <= resolution in [-radius, radius]^K that may hold a root.

    ``coeffs`` is the (rows, K, powers) tensor of P_m in ``z_k = -h_k``.
    A box is discarded only when some P_m provably has no zero on it; the
    range of a separable sum over a box is the sum of univariate ranges, so
    the test is exact up to rounding. Returns (lo, hi) arrays in h.
    """
    c = np.asarray(coeffs)[list(rows)]
    K = c.shape[1]
    lo = np.full((1, K), -float(radius))
    hi = np.full((1, K), float(radius))
    while True:
        keep = np.ones(len(lo), dtype=bool)
        for m in range(c.shape[0]):
            smin = np.zeros(len(lo))
            smax = np.zeros(len(lo))
            for k in range(K):
                # z = -h reverses the interval
                a, b = _univariate_range(c[m, k], -hi[:, k], -lo[:, k])
                smin += a
                smax += b
            slack = 1e-9 * (1.0 + np.abs(smin) + np.abs(smax))
            keep &= (smin <= slack) & (smax >= -slack)
        lo, hi = lo[keep], hi[keep]
        # drop boxes entirely outside the ball
        near = np.linalg.norm(np.maximum(0.0, np.maximum(lo, -hi)), axis=1) <= radius
        lo, hi = lo[near], hi[near]
        if len(lo) == 0 or (hi - lo).max() <= resolution:
            return lo, hi
        mid = 0.5 * (lo + hi)
        new_lo, new_hi = [], []
        for corner in range(2**K):
            bits = np.array([(corner >> k) & 1 for k in range(K)], dtype=bool)
            new_lo.append(np.where(bits, mid, lo))
            new_hi.append(np.where(bits, hi, mid))
        lo = np.concatenate(new_lo)
        hi = np.concatenate(new_hi)


def _separable_eval(c, H):
    """Values (N, M) and Jacobians (N, M, K) of P_m(h) = sum_k c[m, k](-h_k)."""
    M, K, P = c.shape
    Z = -H
    powers = Z[:, None, :, None] ** np.arange(P)  # (N, 1, K, P)
    F = (powers * c[None]).sum(axis=(2, 3))
    dpow = np.zeros_like(powers)
    dpow[..., 1:] = np.arange(1, P) * powers[..., :-1]
    J = -(dpow * c[None]).sum(axis=3)
    return F, J


def oracle_roots(coeffs, rows, radius, resolution=0.05, tol=1e-7, iters=300):
    """Root points of P_rows inside the ball, from polishing every surviving box.

    Every surviving box centre seeds a batched Levenberg-Marquardt iteration;
    converged points within one box width of their box and inside the ball
    are kept.
    """
    c = np.asarray(coeffs, dtype=float)[list(rows)]
    K = c.shape[1]
    lo, hi = enclose_roots(coeffs, rows, radius, resolution)
    if len(lo) == 0:
        return np.zeros((0, K)), (lo, hi)
    H = 0.5 * (lo + hi)
    mu = np.full(len(H), 1e-3)
    F, J = _separable_eval(c, H)
    cost = (F * F).sum(axis=1)
    eye = np.eye(K)
    for _ in range(iters):
        JtJ = np.einsum("nmi,nmj->nij", J, J)
        g = np.einsum("nmi,nm->ni", J, F)
        step = np.linalg.solve(JtJ + mu[:, None, None] * (np.trace(JtJ, axis1=1, axis2=2)[:, None, None] + 1e-300) * eye, -g[..., None])[..., 0]
        F2, J2 = _separable_eval(c, H + step)
        cost2 = (F2 * F2).sum(axis=1)
        ok = cost2 < cost
        H = np.where(ok[:, None], H + step, H)
        F = np.where(ok[:, None], F2, F)
        J = np.where(ok[:, None, None], J2, J)
        cost = np.where(ok, cost2, cost)
        mu = np.where(ok, mu * 0.3, mu * 10.0).clip(1e-15, 1e10)
    scale = 1.0 + np.abs(c).max()
    width = (hi - lo).max(axis=1, keepdims=True)
    good = (np.sqrt(cost) <= tol * scale)
    good &= np.all(H >= lo - width, axis=1) & np.all(H <= hi + width, axis=1)
    good &= np.linalg.norm(H, axis=1) <= radius
    return H[good], (lo, hi)


# ---------------------------------------------------------------------------
# closed-form covariance of the raw moment vector for a Gaussian model


def omega_gaussian(dgp, iota):
    """Exact covariance of the (2K^2+2)-vector of monomials for a DgpSpec.

    ``E[Z_a Z_b]`` is nonzero only when both monomials live in the same
    (W, X) cell (or involve the W indicators), where it is a moment of Y of
    order j_a + j_b.
    """
    K = dgp.K
    pW = dgp.pW
    d = 2 * K * K + 2
    cell_of = {}
    for j in range(K):
        for l in range(2):
            for k in range(1, K + 1):
                cell_of[iota(j, l, k, K) - 1] = (j, l, k)

    def cm(j, k):
        return dgp.cond_moment(j, 0, k - 1)

    mean = np.zeros(d)
    for a, (j, l, k) in cell_of.items():
        mean[a] = pW[l] * dgp.p[l, k - 1] * cm(j, k)
    mean[2 * K * K] = pW[0]
    mean[2 * K * K + 1] = pW[1]
    second = np.zeros((d, d))
    for a, (ja, la, ka) in cell_of.items():
        for b, (jb, lb, kb) in cell_of.items():
            if la == lb and ka == kb:
                second[a, b] = pW[la] * dgp.p[la, ka - 1] * cm(ja + jb, ka)
        for l in range(2):
            # 1{W=l} times a monomial of cell (la, ka)
            second[a, 2 * K * K + l] = second[2 * K * K + l, a] = mean[a] if la == l else 0.0
    second[2 * K * K, 2 * K * K] = pW[0]
    second[2 * K * K + 1, 2 * K * K + 1] = pW[1]
    return second - np.outer(mean, mean), second


def norm_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def psi_direct(K, h, w):
    """P_0..P_{K-1} at ``h`` from the raw coefficient vector, indexing it by hand.

    Position ``2K j + 2k + l - 2`` (0-based) holds E[Y^j 1{W=l, X=k}];
    the last two entries are P(W=0), P(W=1).
    """
    a, b = w[2 * K * K], w[2 * K * K + 1]

    def C(j, l, k):
        return w[2 * K * j + 2 * k + l - 2]

    out = [sum(C(1, 0, k) / a - h[k - 1] * C(0, 0, k) / a for k in range(1, K + 1))]
    for m in range(1, K):
        tot = 0.0
        for k in range(1, K + 1):
            for j in range(m + 1):
                tot += math.comb(m, j) * (C(j, 0, k) / a - C(j, 1, k) / b) * (-h[k - 1]) ** (m - j)
        out.append(tot)
    return np.array(out)
