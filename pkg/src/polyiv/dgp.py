"""Data-generating processes Y = g(X) + U with U independent of a binary W.

Error families carry closed-form raw moments and characteristic functions so
that population moment tables and population ECF criteria are exact.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError


def _gaussian_central_moment(j: int, sigma: float) -> float:
    if j % 2:
        return 0.0
    # (j-1)!! sigma^j
    return float(np.prod(np.arange(j - 1, 0, -2, dtype=float))) * sigma**j


@dataclass(frozen=True)
class Gaussian:
    sigma: float = 1.0
    mean: float = 0.0

    def moment(self, j: int) -> float:
        return sum(
            math.comb(j, i) * self.mean ** (j - i) * _gaussian_central_moment(i, self.sigma)
            for i in range(j + 1)
        )

    def cf(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(1j * t * self.mean - 0.5 * (self.sigma * t) ** 2)

    def pdf(self, u):
        u = np.asarray(u, dtype=float)
        if self.sigma <= 0:
            raise ValueError("degenerate gaussian has no density")
        z = (u - self.mean) / self.sigma
        return np.exp(-0.5 * z * z) / (self.sigma * math.sqrt(2.0 * math.pi))

    def draw(self, rng, size):
        return self.mean + self.sigma * rng.standard_normal(size)

    def describe(self):
        if self.mean == 0.0:
            return f"gaussian({self.sigma!r})"
        return f"gaussian({self.sigma!r},{self.mean!r})"


@dataclass(frozen=True)
class Uniform:
    a: float = -1.0
    b: float = 1.0

    def __post_init__(self):
        if not self.b > self.a:
            raise DataError("uniform(a, b) needs b > a")

    def moment(self, j: int) -> float:
        return (self.b ** (j + 1) - self.a ** (j + 1)) / ((j + 1) * (self.b - self.a))

    def cf(self, t):
        t = np.asarray(t, dtype=float)
        out = np.ones_like(t, dtype=complex)
        nz = t != 0
        tn = t[nz]
        out[nz] = (np.exp(1j * tn * self.b) - np.exp(1j * tn * self.a)) / (1j * tn * (self.b - self.a))
        return out

    def pdf(self, u):
        u = np.asarray(u, dtype=float)
        return np.where((u >= self.a) & (u <= self.b), 1.0 / (self.b - self.a), 0.0)

    def draw(self, rng, size):
        return rng.uniform(self.a, self.b, size)

    def describe(self):
        return f"uniform({self.a!r},{self.b!r})"


@dataclass(frozen=True)
class TwoPoint:
    """U = -v or +v with probability 1/2 each."""

    v: float = 1.0

    def moment(self, j: int) -> float:
        return 0.0 if j % 2 else self.v**j

    def cf(self, t):
        return np.cos(np.asarray(t, dtype=float) * self.v).astype(complex)

    def draw(self, rng, size):
        return self.v * (2.0 * rng.integers(0, 2, size) - 1.0)

    def describe(self):
        return f"two_point({self.v!r})"


@dataclass(frozen=True)
class Mixture:
    weights: tuple
    components: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(w) != len(self.components) or len(w) == 0:
            raise DataError("mixture weights and components differ in length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DataError("mixture weights must be a probability vector")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))
        object.__setattr__(self, "components", tuple(self.components))

    def moment(self, j: int) -> float:
        return sum(w * c.moment(j) for w, c in zip(self.weights, self.components))

    def cf(self, t):
        return sum(w * c.cf(t) for w, c in zip(self.weights, self.components))

    def pdf(self, u):
        return sum(w * c.pdf(u) for w, c in zip(self.weights, self.components))

    def draw(self, rng, size):
        which = rng.choice(len(self.weights), size=size, p=self.weights)
        out = np.empty(size)
        for i, comp in enumerate(self.components):
            mask = which == i
            out[mask] = comp.draw(rng, int(mask.sum()))
        return out

    def describe(self):
        parts = ",".join(f"{w!r}:{c.describe()}" for w, c in zip(self.weights, self.components))
        return f"mixture({parts})"


@dataclass(frozen=True)
class Shifted:
    """``base + shift``; used for cell-dependent counterexample errors."""

    base: object
    shift: float

    def moment(self, j: int) -> float:
        return sum(math.comb(j, i) * self.shift ** (j - i) * self.base.moment(i) for i in range(j + 1))

    def cf(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(1j * t * self.shift) * self.base.cf(t)

    def pdf(self, u):
        return self.base.pdf(np.asarray(u, dtype=float) - self.shift)

    def draw(self, rng, size):
        return self.base.draw(rng, size) + self.shift

    def describe(self):
        return f"shifted({self.base.describe()},{self.shift!r})"


def _check_probability_row(row, name):
    row = np.asarray(row, dtype=float)
    if np.any(row < 0) or abs(row.sum() - 1.0) > 1e-12:
        raise DataError(f"{name} is not a probability vector: {row.tolist()}")
    return row


@dataclass(frozen=True, eq=False)
class DgpSpec:
    """Discrete-X model with conditional category probabilities ``p[l, k-1] = P(X=k | W=l)``.

    ``cell_errors`` (one family per category) is reserved for the
    non-identification construction; ordinary specs share ``error`` across
    categories so that U is independent of (X, W).
    """

    p: np.ndarray
    g: np.ndarray
    error: object = field(default_factory=Gaussian)
    pW0: float = 0.5
    cell_errors: tuple | None = None

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        g = np.array(self.g, dtype=float)
        if p.ndim != 2 or p.shape[0] != 2:
            raise DataError("p must have shape (2, K)")
        if g.shape != (p.shape[1],):
            raise DataError("g must have length K")
        _check_probability_row(p[0], "p(0)")
        _check_probability_row(p[1], "p(1)")
        if not 0.0 < self.pW0 < 1.0:
            raise DataError("pW0 must lie in (0, 1)")
        if self.cell_errors is not None:
            if len(self.cell_errors) != p.shape[1]:
                raise DataError("cell_errors needs one family per category")
            # U must not depend on W: categories sharing a family carry equal
            # total probability under both instrument values.
            groups: dict = {}
            for k, fam in enumerate(self.cell_errors):
                groups.setdefault(fam, []).append(k)
            for ks in groups.values():
                if abs(p[0, ks].sum() - p[1, ks].sum()) > 1e-12:
                    raise DataError("cell errors make U depend on W")
        p.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "g", g)
        if abs(self.error_mean()) > 1e-12:
            raise DataError(f"error has nonzero mean {self.error_mean():.3g}")

    @property
    def K(self) -> int:
        return self.p.shape[1]

    @property
    def pW(self) -> np.ndarray:
        return np.array([self.pW0, 1.0 - self.pW0])

    def family(self, k: int):
        """Error family in category ``k`` (0-based)."""
        return self.error if self.cell_errors is None else self.cell_errors[k]

    def marginal_x(self) -> np.ndarray:
        return self.pW0 * self.p[0] + (1.0 - self.pW0) * self.p[1]

    def error_mean(self) -> float:
        px = self.marginal_x()
        return float(sum(px[k] * self.family(k).moment(1) for k in range(self.K)))

    def cond_moment(self, j: int, l: int, k: int) -> float:
        """E[Y^j | W=l, X=k+1]; does not depend on ``l`` by construction."""
        fam = self.family(k)
        gk = self.g[k]
        return sum(math.comb(j, i) * gk ** (j - i) * fam.moment(i) for i in range(j + 1))

    def with_g(self, g) -> "DgpSpec":
        return DgpSpec(self.p, g, self.error, self.pW0, self.cell_errors)

    def describe(self) -> dict:
        out = {
            "K": self.K,
            "p0": self.p[0].tolist(),
            "p1": self.p[1].tolist(),
            "g": self.g.tolist(),
            "pW0": self.pW0,
            "error": self.error.describe(),
        }
        if self.cell_errors is not None:
            out["cell_errors"] = [f.describe() for f in self.cell_errors]
        return out


_FAMILY_RE = re.compile(r"^\s*([a-z_]+)\s*\((.*)\)\s*$")


def parse_family(text: str):
    """Parse ``gaussian(1.0)``, ``uniform(-1,1)``, ``two_point(0.5)`` or
    ``mixture(0.5:gaussian(1,-1),0.5:gaussian(1,1))``."""
    m = _FAMILY_RE.match(text)
    if not m:
        raise DataError(f"cannot parse error family {text!r}")
    name, args = m.group(1), m.group(2).strip()
    if name == "mixture":
        weights, comps = [], []
        for part in _split_top_level(args):
            wtxt, ctxt = part.split(":", 1)
            weights.append(float(wtxt))
            comps.append(parse_family(ctxt))
        return Mixture(tuple(weights), tuple(comps))
    nums = [float(a) for a in args.split(",")] if args else []
    if name == "gaussian":
        return Gaussian(*nums)
    if name == "uniform":
        return Uniform(*nums)
    if name == "two_point":
        return TwoPoint(*nums)
    raise DataError(f"unknown error family {name!r}")


def _split_top_level(text):
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
            continue
        depth += ch == "("
        depth -= ch == ")"
        cur.append(ch)
    if cur:
        parts.append("".join(cur))
    return [p.strip() for p in parts if p.strip()]


def _floats(text):
    return [float(t) for t in text.replace(",", " ").split()]


def load_dgp(path) -> DgpSpec:
    """Read a DgpSpec from ``key = value`` lines (``#`` starts a comment).

    Keys: ``p0``, ``p1``, ``g`` (lists), ``error`` (family), ``pW0``, optional ``K``.
    """
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"expected key = value, line {lineno}")
        key, val = (s.strip() for s in line.split("=", 1))
        values[key] = val
    for key in ("p0", "p1", "g"):
        if key not in values:
            raise DataError(f"missing key {key!r} in {path}")
    spec = DgpSpec(
        p=[_floats(values["p0"]), _floats(values["p1"])],
        g=_floats(values["g"]),
        error=parse_family(values.get("error", "gaussian(1.0)")),
        pW0=float(values.get("pW0", 0.5)),
    )
    if "K" in values and int(values["K"]) != spec.K:
        raise DataError(f"K={values['K']} disagrees with vector lengths ({spec.K})")
    return spec
