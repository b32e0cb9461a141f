"""Plug-in estimates of the moment coefficients C, Q and the instrument marginals."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .data import Sample
from .errors import AssumptionError


@dataclass(frozen=True, eq=False)
class MomentTable:
    """Moment coefficients indexed ``[j, l, k-1]``.

    ``C[j, l, k-1]`` estimates E[Y^j 1{W=l, X=k}], ``pW[l]`` estimates
    P(W=l) and ``Q = C / pW``. ``n == 0`` marks a population table.
    """

    K: int
    J: int
    C: np.ndarray
    pW: np.ndarray
    n: int = 0

    def __post_init__(self):
        C = np.array(self.C, dtype=float)
        pW = np.array(self.pW, dtype=float)
        if C.shape != (self.J + 1, 2, self.K):
            raise ValueError(f"C has shape {C.shape}, expected {(self.J + 1, 2, self.K)}")
        if pW.shape != (2,) or np.any(pW < 0):
            raise ValueError("pW must be two nonnegative numbers")
        C.setflags(write=False)
        pW.setflags(write=False)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "pW", pW)

    @property
    def Q(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            Q = np.where(self.pW[None, :, None] > 0, self.C / self.pW[None, :, None], 0.0)
        return Q

    @property
    def empty(self) -> np.ndarray:
        """(2, K) mask of cells with no mass."""
        return self.C[0] == 0

    @property
    def p(self) -> np.ndarray:
        """Conditional category probabilities ``P(X=k | W=l)`` as a (2, K) array."""
        return self.Q[0]

    def coefficient_vector(self) -> np.ndarray:
        """The 2K^2 + 2 vector of raw coefficients (powers 0..K-1) followed by pW.

        Position ``iota(j, l, k) - 1`` holds ``C[j, l, k-1]``.
        """
        K = self.K
        if self.J < K - 1:
            raise ValueError("table needs powers up to K-1")
        w = np.empty(2 * K * K + 2)
        for j in range(K):
            for l in range(2):
                for k in range(1, K + 1):
                    w[iota(j, l, k, K) - 1] = self.C[j, l, k - 1]
        w[2 * K * K] = self.pW[0]
        w[2 * K * K + 1] = self.pW[1]
        return w

    def with_coefficient_vector(self, w) -> "MomentTable":
        """Copy with powers 0..K-1 and pW replaced by the entries of ``w``."""
        K = self.K
        w = np.asarray(w, dtype=float)
        C = self.C.copy()
        for j in range(K):
            for l in range(2):
                for k in range(1, K + 1):
                    C[j, l, k - 1] = w[iota(j, l, k, K) - 1]
        return MomentTable(K, self.J, C, w[2 * K * K:], self.n)

    def relabel(self, perm) -> "MomentTable":
        perm = np.asarray(perm) - 1
        C = np.empty_like(self.C)
        C[:, :, perm] = self.C
        return MomentTable(self.K, self.J, C, self.pW, self.n)

    def to_dict(self) -> dict:
        return {"K": self.K, "J": self.J, "n": self.n, "pW": self.pW.tolist(), "C": self.C.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MomentTable":
        return cls(int(d["K"]), int(d["J"]), np.array(d["C"]), np.array(d["pW"]), int(d.get("n", 0)))

    def digest(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


def iota(j: int, l: int, k: int, K: int) -> int:
    """1-based flat position of (power j, instrument l, category k)."""
    return 2 * K * j + 2 * k + l - 1


def estimate_moments(sample: Sample, J: int | None = None) -> MomentTable:
    """Plug-in table from a sample; ``J`` defaults to K+1.

    Sums are correctly rounded (``math.fsum``) per cell, so results do not
    depend on observation order within a cell.
    """
    K = sample.K
    J = K + 1 if J is None else int(J)
    if J < 1:
        raise ValueError("J must be at least 1")
    n = sample.n
    nw = np.bincount(sample.w, minlength=2)
    if nw[0] == 0 or nw[1] == 0:
        raise AssumptionError("instrument degenerate: only one value of W observed")
    C = np.zeros((J + 1, 2, K))
    order = np.lexsort((sample.x, sample.w))
    ys, xs, ws = sample.y[order], sample.x[order], sample.w[order]
    cell = ws * K + (xs - 1)
    bounds = np.searchsorted(cell, np.arange(2 * K + 1))
    for c in range(2 * K):
        lo, hi = bounds[c], bounds[c + 1]
        if hi == lo:
            continue
        l, k = divmod(c, K)
        yc = ys[lo:hi]
        powers = np.ones_like(yc)
        C[0, l, k] = (hi - lo) / n
        for j in range(1, J + 1):
            powers = powers * yc
            C[j, l, k] = math.fsum(powers) / n
    pW = nw / n
    return MomentTable(K, J, C, pW, n)


def population_table(dgp, J: int | None = None) -> MomentTable:
    """Exact moment table implied by a DgpSpec (``n = 0``)."""
    K = dgp.K
    J = K + 1 if J is None else int(J)
    if J < 1:
        raise ValueError("J must be at least 1")
    for k in range(K):
        if not hasattr(dgp.family(k), "moment"):
            raise ValueError(f"error family of category {k + 1} has no closed-form moments")
    pW = dgp.pW
    C = np.zeros((J + 1, 2, K))
    for j in range(J + 1):
        for l in range(2):
            for k in range(K):
                C[j, l, k] = pW[l] * dgp.p[l, k] * dgp.cond_moment(j, l, k)
    return MomentTable(K, J, C, pW, 0)
