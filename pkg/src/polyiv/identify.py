"""Identification diagnostics and the characteristic-function set estimator.

* :func:`check_relevance` audits every strict subset J of categories for
  ``P(X in J | W=0) != P(X in J | W=1)``.
* :func:`nonidentified_dgp` builds two observationally equivalent models
  with different structural functions when relevance fails for some J.
* :func:`estimate_identified_set` keeps the candidates h for which
  ``Y - h(X)`` has mean near zero and near-equal characteristic functions in
  the two instrument groups.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .data import Sample
from .dgp import DgpSpec, Shifted
from .moments import MomentTable

MAX_SUBSET_K = 20
TIE_TOL = 1e-12


@dataclass(frozen=True)
class RelevanceReport:
    margins: dict  # tuple of 1-based categories -> margin
    min_margin: float
    min_subset: tuple

    def describe(self) -> str:
        subset = ",".join(str(k) for k in self.min_subset)
        return f"relevance margin {self.min_margin:.6g} at J={{{subset}}}"

    def to_dict(self) -> dict:
        return {
            "margins": {",".join(map(str, J)): m for J, m in self.margins.items()},
            "min_margin": self.min_margin,
            "min_subset": list(self.min_subset),
            "subsets_audited": len(self.margins),
        }


def strict_subsets(K: int):
    """Nonempty strict subsets of 1..K, by size then lexicographically."""
    for size in range(1, K):
        yield from itertools.combinations(range(1, K + 1), size)


def check_relevance(table: MomentTable) -> RelevanceReport:
    K = table.K
    if K > MAX_SUBSET_K:
        raise ValueError(f"K={K} gives 2^K - 2 subsets; exhaustive audit is limited to K <= {MAX_SUBSET_K}, sample subsets instead")
    if K < 2:
        raise ValueError("relevance needs K >= 2")
    p = table.p
    diff = p[0] - p[1]
    margins = {}
    best, best_J = math.inf, ()
    for J in strict_subsets(K):
        m = abs(math.fsum(diff[k - 1] for k in J))
        margins[J] = m
        if m < best - TIE_TOL:
            best, best_J = m, J
    return RelevanceReport(margins, best, best_J)


def bezout_bound(K: int) -> int:
    """Largest possible number of isolated roots of Lambda: K!."""
    if K < 1:
        raise ValueError("K must be at least 1")
    if K > MAX_SUBSET_K:
        raise OverflowError(f"K! for K={K} exceeds 64-bit range")
    return math.factorial(K)


def nonidentified_dgp(K: int, J, base: DgpSpec, delta0: float, error_out=None):
    """Observationally equivalent pair of models for a subset J on which relevance fails.

    The first model gives categories in J the error ``base.error`` and the
    rest ``error_out`` (default: the same family). The second has structural
    function ``g + delta`` with ``delta = delta0`` on J and
    ``delta1 = -delta0 * P(J | W=0) / P(J^c | W=0)`` off J, and errors
    ``U - delta(X)``; both keep U independent of W with mean zero.

    Returns ``(original, shifted, g + delta)``.
    """
    if base.K != K:
        raise ValueError(f"base has K={base.K}, expected {K}")
    J = tuple(sorted(set(int(k) for k in J)))
    if not J or len(J) >= K or J[0] < 1 or J[-1] > K:
        raise ValueError("J must be a nonempty strict subset of 1..K")
    if delta0 == 0:
        raise ValueError("delta0 must be nonzero")
    inJ = np.zeros(K, dtype=bool)
    inJ[np.array(J) - 1] = True
    pJ0, pJ1 = base.p[0, inJ].sum(), base.p[1, inJ].sum()
    if abs(pJ0 - pJ1) > 1e-12:
        raise ValueError(
            f"P(X in J | W=0) = {pJ0:.6g} differs from P(X in J | W=1) = {pJ1:.6g}; "
            "the construction needs them equal"
        )
    err_in = base.error
    err_out = base.error if error_out is None else error_out
    if abs(err_in.moment(1)) > 1e-12 or abs(err_out.moment(1)) > 1e-12:
        raise ValueError("error families must have mean zero")
    delta1 = -delta0 * pJ0 / (1.0 - pJ0)
    delta = np.where(inJ, delta0, delta1)
    cells = tuple(err_in if inJ[k] else err_out for k in range(K))
    original = DgpSpec(base.p, base.g, base.error, base.pW0, cells)
    shifted_cells = tuple(Shifted(cells[k], -float(delta[k])) for k in range(K))
    g_alt = base.g + delta
    shifted = DgpSpec(base.p, g_alt, base.error, base.pW0, shifted_cells)
    return original, shifted, g_alt


def ecf(sample: Sample, h, t: float, l: int) -> complex:
    """Empirical characteristic function of ``Y - h(X)`` within ``W = l`` (0 for an empty group)."""
    h = np.asarray(h, dtype=float)
    mask = sample.w == l
    if not mask.any():
        return 0j
    r = sample.y[mask] - h[sample.x[mask] - 1]
    return complex(np.mean(np.exp(1j * t * r)))


def default_t_grid(size: int = 64) -> np.ndarray:
    return np.linspace(0.0, 1.0, size)


def default_eta(n: int, c: float = 1.0, gamma: float = 1.0 / 3.0) -> float:
    return c * n ** (-gamma)


@dataclass(frozen=True, eq=False)
class IdentifiedSetEstimate:
    candidates: np.ndarray  # (C, K)
    criterion: np.ndarray
    mean_part: np.ndarray
    ecf_part: np.ndarray
    eta: float
    t_grid: np.ndarray
    members: np.ndarray  # bool mask

    def member_points(self) -> np.ndarray:
        return self.candidates[self.members]

    def to_dict(self) -> dict:
        return {
            "candidates": self.candidates.tolist(),
            "criterion": self.criterion.tolist(),
            "mean_part": self.mean_part.tolist(),
            "ecf_part": self.ecf_part.tolist(),
            "eta": self.eta,
            "t_grid": self.t_grid.tolist(),
            "members": np.flatnonzero(self.members).tolist(),
        }


def _check_t_grid(t_grid) -> np.ndarray:
    t = np.asarray(t_grid, dtype=float).ravel()
    if t.size == 0:
        raise ValueError("t_grid is empty")
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError("t_grid must lie in [0, 1]")
    return t


def _group_ecf(r: np.ndarray, t: np.ndarray) -> np.ndarray:
    if r.size == 0:
        return np.zeros(t.size, dtype=complex)
    phase = np.outer(t, r)
    return (np.cos(phase).sum(axis=1) + 1j * np.sin(phase).sum(axis=1)) / r.size


def sample_criterion(sample: Sample, candidates, t_grid) -> tuple[np.ndarray, np.ndarray]:
    """(mean part, ECF part) of the criterion for each candidate."""
    H = np.atleast_2d(np.asarray(candidates, dtype=float))
    t = _check_t_grid(t_grid)
    idx0 = sample.w == 0
    idx1 = ~idx0
    mean_part = np.empty(len(H))
    ecf_part = np.empty(len(H))
    for c, h in enumerate(H):
        r = sample.y - h[sample.x - 1]
        mean_part[c] = abs(math.fsum(r) / sample.n)
        d = _group_ecf(r[idx0], t) - _group_ecf(r[idx1], t)
        ecf_part[c] = np.abs(d).max()
    return mean_part, ecf_part


def estimate_identified_set(
    sample: Sample, candidates, t_grid=None, eta: float | None = None
) -> IdentifiedSetEstimate:
    """Candidates whose criterion ``max(|mean|, max_t |ECF_0 - ECF_1|)`` is at most ``eta``.

    ``t_grid`` defaults to 64 points on [0, 1] and ``eta`` to ``n^(-1/3)``.
    """
    H = np.atleast_2d(np.asarray(candidates, dtype=float))
    if H.size == 0 or len(H) == 0:
        raise ValueError("candidate list is empty")
    if H.shape[1] != sample.K:
        raise ValueError(f"candidates have length {H.shape[1]}, expected K={sample.K}")
    t = _check_t_grid(default_t_grid() if t_grid is None else t_grid)
    eta = default_eta(sample.n) if eta is None else float(eta)
    if not eta > 0:
        raise ValueError("eta must be positive")
    mean_part, ecf_part = sample_criterion(sample, H, t)
    crit = np.maximum(mean_part, ecf_part)
    return IdentifiedSetEstimate(H, crit, mean_part, ecf_part, eta, t, crit <= eta)


def population_criterion(dgp: DgpSpec, candidates, t_grid=None) -> np.ndarray:
    """Criterion evaluated with exact expectations and characteristic functions."""
    H = np.atleast_2d(np.asarray(candidates, dtype=float))
    t = _check_t_grid(default_t_grid() if t_grid is None else t_grid)
    px = dgp.marginal_x()
    cfs = np.array([dgp.family(k).cf(t) for k in range(dgp.K)])  # (K, T)
    means = np.array([dgp.family(k).moment(1) for k in range(dgp.K)])
    out = np.empty(len(H))
    for c, h in enumerate(H):
        shift = dgp.g - h
        mean = abs(float(px @ (shift + means)))
        rot = np.exp(1j * np.outer(shift, t)) * cfs
        d = (dgp.p[0] - dgp.p[1]) @ rot
        out[c] = max(mean, float(np.abs(d).max()))
    return out
