"""Grid discretisation of the continuous-X operator

    (T h)(t) = int int h(x, u) (f0 - f1)(x, t + u) du dx,

with h supported on X x [0, 2B], plus diagnostics on its kernel.

Densities are stored as cell averages on an equal-width (x, u) grid. In u
they are interpolated linearly between cell centres, held constant out to
the grid edges and set to zero beyond; in x they are piecewise constant.
Operator entries integrate this interpolant exactly over each basis cell.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import optimize

from .errors import DataError


@dataclass(frozen=True, eq=False)
class DensityGrid:
    x_range: tuple
    u_range: tuple
    values: np.ndarray  # (n_x, n_u) cell averages

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or min(v.shape) < 1:
            raise DataError("density values must be a nonempty 2-d array")
        xr = tuple(float(a) for a in self.x_range)
        ur = tuple(float(a) for a in self.u_range)
        if not (xr[1] > xr[0] and ur[1] > ur[0]):
            raise DataError("grid ranges must have positive width")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise DataError("density values must be finite and nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "x_range", xr)
        object.__setattr__(self, "u_range", ur)
        if abs(self.mass - 1.0) > 1e-9:
            raise DataError(f"density has total mass {self.mass:.12g}, expected 1")

    @property
    def n_x(self) -> int:
        return self.values.shape[0]

    @property
    def n_u(self) -> int:
        return self.values.shape[1]

    @property
    def dx(self) -> float:
        return (self.x_range[1] - self.x_range[0]) / self.n_x

    @property
    def du(self) -> float:
        return (self.u_range[1] - self.u_range[0]) / self.n_u

    @property
    def cell_mass(self) -> np.ndarray:
        return self.values * self.dx * self.du

    @property
    def mass(self) -> float:
        return math.fsum(self.cell_mass.ravel())

    def x_centers(self) -> np.ndarray:
        return self.x_range[0] + (np.arange(self.n_x) + 0.5) * self.dx

    def u_centers(self) -> np.ndarray:
        return self.u_range[0] + (np.arange(self.n_u) + 0.5) * self.du

    def same_grid(self, other: "DensityGrid") -> bool:
        return (
            self.values.shape == other.values.shape
            and self.x_range == other.x_range
            and self.u_range == other.u_range
        )

    @classmethod
    def from_function(cls, f, x_range, u_range, n_x: int, n_u: int, normalize: bool = True) -> "DensityGrid":
        """Sample ``f(x, u)`` at cell centres, optionally rescaled to unit mass."""
        xc = x_range[0] + (np.arange(n_x) + 0.5) * (x_range[1] - x_range[0]) / n_x
        uc = u_range[0] + (np.arange(n_u) + 0.5) * (u_range[1] - u_range[0]) / n_u
        v = np.asarray(f(xc[:, None], uc[None, :]), dtype=float) * np.ones((n_x, n_u))
        if normalize:
            area = (x_range[1] - x_range[0]) * (u_range[1] - u_range[0]) / (n_x * n_u)
            v = v / (math.fsum(v.ravel()) * area)
        return cls(tuple(x_range), tuple(u_range), v)

    def to_dict(self) -> dict:
        return {"x_range": list(self.x_range), "u_range": list(self.u_range), "values": self.values.tolist()}


def load_density(path) -> DensityGrid:
    """Read a DensityGrid from JSON (``x_range``, ``u_range``, ``values``) or CSV.

    The CSV layout is one header row ``x_lo,x_hi,u_lo,u_hi`` with the ranges
    on the next row, followed by one row of cell values per x cell.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    if path.suffix.lower() == ".json":
        d = json.loads(path.read_text(encoding="utf-8"))
        for key in ("x_range", "u_range", "values"):
            if key not in d:
                raise DataError(f"density file lacks {key!r}")
        return DensityGrid(tuple(d["x_range"]), tuple(d["u_range"]), np.array(d["values"], dtype=float))
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if len(rows) < 3:
        raise DataError(f"density CSV {path} needs a header, a range row and values")
    try:
        xlo, xhi, ulo, uhi = (float(c) for c in rows[1][:4])
        values = np.array([[float(c) for c in r] for r in rows[2:]])
    except ValueError as exc:
        raise DataError(f"non-numeric entry in density CSV {path}: {exc}") from None
    return DensityGrid((xlo, xhi), (ulo, uhi), values)


def save_density(grid: DensityGrid, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".json":
        path.write_text(json.dumps(grid.to_dict(), sort_keys=True), encoding="utf-8")
        return
    with path.open("w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["x_lo", "x_hi", "u_lo", "u_hi"])
        out.writerow([repr(v) for v in (*grid.x_range, *grid.u_range)])
        for row in grid.values.tolist():
            out.writerow([repr(v) for v in row])


def row_antiderivative(values: np.ndarray, u_range, s) -> np.ndarray:
    """``int_{u_lo}^{s}`` of each row's u-interpolant; shape (rows, len(s))."""
    values = np.atleast_2d(values)
    n_u = values.shape[1]
    lo, hi = u_range
    du = (hi - lo) / n_u
    knots = np.concatenate([[lo], lo + (np.arange(n_u) + 0.5) * du, [hi]])
    kv = np.concatenate([values[:, :1], values, values[:, -1:]], axis=1)
    widths = np.diff(knots)
    seg_int = 0.5 * (kv[:, :-1] + kv[:, 1:]) * widths
    cum = np.concatenate([np.zeros((values.shape[0], 1)), np.cumsum(seg_int, axis=1)], axis=1)
    s = np.clip(np.asarray(s, dtype=float), lo, hi)
    seg = np.clip(np.searchsorted(knots, s, side="right") - 1, 0, n_u)
    d = s - knots[seg]
    slope = (kv[:, seg + 1] - kv[:, seg]) / widths[seg]
    return cum[:, seg] + d * (kv[:, seg] + 0.5 * slope * d)


def interpolate_rows(values: np.ndarray, u_range, s) -> np.ndarray:
    """Pointwise value of each row's u-interpolant (zero outside the grid)."""
    values = np.atleast_2d(values)
    n_u = values.shape[1]
    lo, hi = u_range
    du = (hi - lo) / n_u
    centers = lo + (np.arange(n_u) + 0.5) * du
    s = np.asarray(s, dtype=float)
    out = np.array([np.interp(s, centers, row) for row in values])
    out[:, (s < lo) | (s > hi)] = 0.0
    return out


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    t_grid: np.ndarray
    values: np.ndarray  # (n_t, basis_nx * basis_nb); column i * basis_nb + b
    B: float
    x_range: tuple
    basis_nx: int
    basis_nb: int

    @property
    def dt(self) -> float:
        if len(self.t_grid) < 2:
            return 1.0
        return float(np.mean(np.diff(self.t_grid)))

    @property
    def basis_dx(self) -> float:
        return (self.x_range[1] - self.x_range[0]) / self.basis_nx

    @property
    def basis_du(self) -> float:
        return 2.0 * self.B / self.basis_nb

    @property
    def cell_area(self) -> float:
        return self.basis_dx * self.basis_du

    def apply(self, coef) -> np.ndarray:
        """T applied to the function with cell values ``coef``."""
        return self.values @ np.asarray(coef, dtype=float)

    def normalized(self) -> np.ndarray:
        """Matrix from orthonormal cell coordinates to (approximately) L2 norm in t."""
        return math.sqrt(self.dt) * self.values / math.sqrt(self.cell_area)

    def basis_x_centers(self) -> np.ndarray:
        return self.x_range[0] + (np.arange(self.basis_nx) + 0.5) * self.basis_dx

    def x_invariant_basis(self) -> np.ndarray:
        """Orthonormal coordinates of the discretised x-invariant subspace, columns per u cell."""
        e = np.ones((self.basis_nx, 1)) / math.sqrt(self.basis_nx)
        return np.kron(e, np.eye(self.basis_nb))

    def x_complement_basis(self) -> np.ndarray:
        """Orthonormal basis of the complement of the x-invariant subspace."""
        if self.basis_nx < 2:
            raise ValueError("one x cell: the complement of x-invariant functions is trivial")
        Q, _ = np.linalg.qr(np.column_stack([np.ones(self.basis_nx), np.eye(self.basis_nx)[:, :-1]]))
        H = Q[:, 1:]
        return np.kron(H, np.eye(self.basis_nb))

    def to_dict(self) -> dict:
        return {
            "t_grid": self.t_grid.tolist(),
            "B": self.B,
            "x_range": list(self.x_range),
            "basis_nx": self.basis_nx,
            "basis_nb": self.basis_nb,
            "shape": list(self.values.shape),
        }


def default_t_grid(f: DensityGrid, B: float, step: float | None = None) -> np.ndarray:
    """Points from ``u_lo - 2B`` to ``u_hi`` spaced by the u cell width (or ``step``)."""
    step = f.du if step is None else float(step)
    lo, hi = f.u_range[0] - 2.0 * B, f.u_range[1]
    count = int(round((hi - lo) / step)) + 1
    return lo + step * np.arange(count)


def discretize_T(
    f0: DensityGrid,
    f1: DensityGrid,
    B: float,
    t_grid=None,
    basis_nx: int | None = None,
    basis_nb: int | None = None,
) -> OperatorMatrix:
    """Operator matrix on a cell-indicator basis of X x [0, 2B].

    ``basis_nx`` must divide the density's x resolution; it defaults to that
    resolution. ``basis_nb`` defaults to the number of u cells covering 2B.
    """
    if not f0.same_grid(f1):
        raise DataError("f0 and f1 must share one grid")
    if not B > 0:
        raise ValueError("B must be positive")
    if 2.0 * B > f0.u_range[1] - f0.u_range[0] + 1e-12:
        raise ValueError("2B exceeds the width of the u grid")
    basis_nx = f0.n_x if basis_nx is None else int(basis_nx)
    if basis_nx < 1 or f0.n_x % basis_nx:
        raise ValueError(f"basis_nx={basis_nx} must divide n_x={f0.n_x}")
    if basis_nb is None:
        basis_nb = max(1, int(round(2.0 * B / f0.du)))
    basis_nb = int(basis_nb)
    if basis_nb < 1:
        raise ValueError("basis_nb must be positive")
    t = default_t_grid(f0, B) if t_grid is None else np.asarray(t_grid, dtype=float).ravel()
    if t.size == 0:
        raise ValueError("t_grid is empty")

    gamma = f0.values - f1.values
    width = 2.0 * B / basis_nb
    edges = t[:, None] + width * np.arange(basis_nb + 1)[None, :]  # (n_t, nb+1)
    A = row_antiderivative(gamma, f0.u_range, edges.ravel()).reshape(f0.n_x, t.size, basis_nb + 1)
    cell = A[:, :, 1:] - A[:, :, :-1]  # (n_x, n_t, nb)
    r = f0.n_x // basis_nx
    agg = cell.reshape(basis_nx, r, t.size, basis_nb).sum(axis=1) * f0.dx  # (bnx, n_t, nb)
    M = np.transpose(agg, (1, 0, 2)).reshape(t.size, basis_nx * basis_nb)
    M.setflags(write=False)
    t.setflags(write=False)
    return OperatorMatrix(t, M, float(B), f0.x_range, basis_nx, basis_nb)


def kernel_margin(op: OperatorMatrix) -> tuple[float, np.ndarray]:
    """Smallest singular value of T on the complement of x-invariant functions.

    Returns the margin and a unit witness vector in orthonormal cell
    coordinates. More unknowns than t points means a nontrivial kernel, so
    the margin is then zero.
    """
    P = op.x_complement_basis()
    AP = op.normalized() @ P
    _, s, Vt = np.linalg.svd(AP, full_matrices=True)
    if AP.shape[1] > AP.shape[0]:
        margin = 0.0
    else:
        margin = float(s[-1])
    return margin, P @ Vt[-1]


def v_residual(op: OperatorMatrix) -> float:
    """Largest ||T v|| over unit x-invariant v (spectral norm on that subspace)."""
    return float(np.linalg.norm(op.normalized() @ op.x_invariant_basis(), 2))


@dataclass(frozen=True)
class PiecewiseLinear:
    """delta(x) interpolating ``values`` at ``knots`` (x positions); constant beyond them.

    ``upper`` bounds the values (defaults to 2B); ``max_slope`` bounds the
    slope between consecutive knots.
    """

    knots: tuple
    max_slope: float = math.inf
    upper: float | None = None

    def __post_init__(self):
        k = tuple(float(v) for v in self.knots)
        if len(k) < 2 or any(b <= a for a, b in zip(k, k[1:])):
            raise ValueError("knots must be at least two increasing x positions")
        object.__setattr__(self, "knots", k)
        if not self.max_slope > 0:
            raise ValueError("max_slope must be positive")

    @property
    def n_params(self) -> int:
        return len(self.knots)

    def delta(self, params, x) -> np.ndarray:
        return np.interp(x, self.knots, params)

    def feasible(self, params, upper: float) -> bool:
        p = np.asarray(params, dtype=float)
        if np.any(p < 0) or np.any(p > upper):
            return False
        slopes = np.abs(np.diff(p)) / np.diff(self.knots)
        return bool(np.all(slopes <= self.max_slope * (1 + 1e-12)))


def Affine(x_range, max_slope: float = math.inf, upper: float | None = None) -> PiecewiseLinear:
    """delta(x) = a + b x, parametrised by its values at the two ends of X."""
    return PiecewiseLinear((float(x_range[0]), float(x_range[1])), max_slope, upper)


def indicator_coefficients(op: OperatorMatrix, deltas: np.ndarray) -> np.ndarray:
    """Fractional cell coverage of 1{0 <= u <= delta(x)}; ``deltas`` is (C, basis_nx)."""
    width = op.basis_du
    lo = width * np.arange(op.basis_nb)
    cov = np.clip((deltas[:, :, None] - lo) / width, 0.0, 1.0)  # (C, bnx, nb)
    return cov.reshape(len(deltas), -1)


def indicator_objective(op: OperatorMatrix, deltas: np.ndarray, A: np.ndarray | None = None) -> np.ndarray:
    """``||T 1{u <= delta}|| / ||delta - mean(delta)||`` for each row of ``deltas``.

    The denominator removes the trivial approach to zero through nearly
    constant delta (constants lie in the kernel).
    """
    A = op.normalized() if A is None else A
    deltas = np.atleast_2d(deltas)
    coef = indicator_coefficients(op, deltas) * math.sqrt(op.cell_area)
    num = np.linalg.norm(A @ coef.T, axis=0)
    spread = np.sqrt(op.basis_dx * ((deltas - deltas.mean(axis=1, keepdims=True)) ** 2).sum(axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(spread > 1e-12, num / spread, np.inf)
    return out


def indicator_kernel_search(op: OperatorMatrix, family: PiecewiseLinear, budget: int = 2000):
    """Minimise the normalised indicator objective over ``family``.

    Coarse grid search over knot values, then Nelder-Mead from the best grid
    points. A small result exhibits a near-kernel indicator function. The
    search is one-sided: it can expose failure of point identification but
    not certify it. Returns ``(objective, params)``.
    """
    upper = 2.0 * op.B if family.upper is None else float(family.upper)
    if upper > 2.0 * op.B + 1e-12 or upper <= 0:
        raise ValueError(f"family upper bound {upper} must lie in (0, 2B={2.0 * op.B}]")
    if budget < 4:
        raise ValueError("budget must be at least 4")
    d = family.n_params
    xc = op.basis_x_centers()
    if not np.any(op.values):
        p = np.zeros(d)
        p[-1] = upper
        return 0.0, p
    A = op.normalized()

    levels = max(2, int(math.floor((budget / 2) ** (1.0 / d))))
    while levels ** d > budget / 2 and levels > 2:
        levels -= 1
    grid_vals = np.linspace(0.0, upper, levels)
    mesh = np.array(np.meshgrid(*([grid_vals] * d), indexing="ij")).reshape(d, -1).T
    feas = np.array([family.feasible(p, upper) for p in mesh])
    mesh = mesh[feas]
    used = len(mesh)
    deltas = np.array([family.delta(p, xc) for p in mesh])
    vals = indicator_objective(op, deltas, A) if len(mesh) else np.zeros(0)
    order = np.lexsort((*mesh.T[::-1], vals)) if len(mesh) else np.zeros(0, dtype=int)
    if len(order) == 0:
        raise ValueError("no feasible parameter on the search grid")
    best_p, best_v = mesh[order[0]].copy(), float(vals[order[0]])

    def penalized(p):
        q = np.clip(p, 0.0, upper)
        pen = float(np.sum((p - q) ** 2))
        slopes = np.abs(np.diff(q)) / np.diff(family.knots)
        pen += float(np.sum(np.clip(slopes - family.max_slope, 0.0, None) ** 2))
        v = indicator_objective(op, family.delta(q, xc)[None, :], A)[0]
        return v + 1e3 * pen

    remaining = budget - used
    seeds = [mesh[i] for i in order[: min(3, len(order))] if np.isfinite(vals[i])]
    per = max(0, remaining // max(1, len(seeds)))
    for s in seeds:
        if per < d + 1:
            break
        r = optimize.minimize(
            penalized, s, method="Nelder-Mead",
            options={"maxfev": per, "xatol": 1e-10, "fatol": 1e-14, "initial_simplex": None},
        )
        q = np.clip(r.x, 0.0, upper)
        if family.feasible(q, upper):
            v = float(indicator_objective(op, family.delta(q, xc)[None, :], A)[0])
            if v < best_v or (v == best_v and tuple(q) < tuple(best_p)):
                best_p, best_v = q, v
    return best_v, best_p


# Example constructions, shared by the CLI and the test suite.

UNIT_X = (0.0, 1.0)
UNIT_U = (-1.0, 1.0)


def _pair_from_difference(base: np.ndarray, gamma: np.ndarray, x_range, u_range):
    """``(base + gamma/2, base - gamma/2)`` as density grids."""
    return (
        DensityGrid(x_range, u_range, base + 0.5 * gamma),
        DensityGrid(x_range, u_range, base - 0.5 * gamma),
    )


def _uniform_base(n_x, n_u, x_range, u_range):
    area = (x_range[1] - x_range[0]) * (u_range[1] - u_range[0])
    return np.full((n_x, n_u), 1.0 / area)


def identical_pair(n_x: int = 32, n_u: int = 64):
    f = DensityGrid.from_function(lambda x, u: 1.0 + 0.5 * np.cos(np.pi * x) * np.exp(-u * u), UNIT_X, UNIT_U, n_x, n_u)
    return f, f


def separable_pair(n_x: int = 32, n_u: int = 64, amp: float = 0.8):
    """Difference ``s(x) phi(u)`` with ``sum_i s_i = 0``: a rank-one operator."""
    base = _uniform_base(n_x, n_u, UNIT_X, UNIT_U)
    xc = (np.arange(n_x) + 0.5) / n_x
    uc = UNIT_U[0] + (np.arange(n_u) + 0.5) * (UNIT_U[1] - UNIT_U[0]) / n_u
    s = np.cos(2.0 * np.pi * xc)
    s -= s.mean()
    phi = np.exp(-((uc / 0.4) ** 2))
    gamma = np.outer(s, phi)
    gamma *= amp * 2.0 * base.min() / np.abs(gamma).max()
    return _pair_from_difference(base, gamma, UNIT_X, UNIT_U)


def smooth_equal_pair(n_x: int = 32, n_u: int = 64, amp: float = 0.8):
    """Smooth, non-separable difference with identical u-marginals."""
    base = _uniform_base(n_x, n_u, UNIT_X, UNIT_U)
    xc = (np.arange(n_x) + 0.5) / n_x
    uc = UNIT_U[0] + (np.arange(n_u) + 0.5) * (UNIT_U[1] - UNIT_U[0]) / n_u
    gamma = sum(
        np.outer(np.cos(r * np.pi * xc), np.exp(-(((uc - c) / 0.25) ** 2)))
        for r, c in ((1, -0.5), (2, 0.0), (3, 0.5))
    )
    gamma = gamma - gamma.mean(axis=0)
    gamma *= amp * 2.0 * base.min() / np.abs(gamma).max()
    return _pair_from_difference(base, gamma, UNIT_X, UNIT_U)


def tiled_pair(n_x: int = 32, n_u: int = 64, tiles: int = 8, amp: float = 1.0):
    """x-block ``i`` carries an indicator of u-tile ``i``, centred across blocks.

    With ``B`` at most half a tile width and the basis aligned to the blocks
    (``basis_nx = tiles``), every non-x-invariant function has a distinct
    image, so the kernel margin is bounded away from zero. Returns
    ``(f0, f1, B, tiles)``.
    """
    if n_x % tiles or n_u % tiles:
        raise ValueError("tiles must divide both grid sizes")
    base = _uniform_base(n_x, n_u, UNIT_X, UNIT_U)
    pat = np.zeros((n_x, n_u))
    rows, cols = n_x // tiles, n_u // tiles
    for i in range(tiles):
        pat[i * rows:(i + 1) * rows, i * cols:(i + 1) * cols] = 1.0
    pat -= pat.mean(axis=0)
    gamma = pat * amp * 2.0 * base.min() / np.abs(pat).max()
    B = 0.5 * (UNIT_U[1] - UNIT_U[0]) / tiles
    f0, f1 = _pair_from_difference(base, gamma, UNIT_X, UNIT_U)
    return f0, f1, B, tiles


def embed_discrete(dgp, x_range=UNIT_X, u_range=(-2.5, 2.5), n_x: int = 32, n_u: int = 64, gap_cells: int = 2):
    """Continuous-X version of a discrete model: category k becomes an x-block.

    Blocks are separated by ``gap_cells`` empty x cells; within block k the
    density is ``p_k(l)`` times the category's error density in u,
    renormalised on the grid. Returns ``(f0, f1, blocks)`` with ``blocks[k]``
    the half-open range of x cells of category k+1.
    """
    K = dgp.K
    width = (n_x - gap_cells * (K - 1)) // K
    if width < 1:
        raise ValueError("grid too coarse for the number of categories")
    dx = (x_range[1] - x_range[0]) / n_x
    du = (u_range[1] - u_range[0]) / n_u
    uc = u_range[0] + (np.arange(n_u) + 0.5) * du
    blocks = []
    vals = np.zeros((2, n_x, n_u))
    for k in range(K):
        start = k * (width + gap_cells)
        blocks.append((start, start + width))
        dens = np.asarray(dgp.family(k).pdf(uc), dtype=float)
        dens = dens / (math.fsum(dens) * du)
        for l in range(2):
            vals[l, start:start + width] = dgp.p[l, k] * dens / (width * dx)
    f0 = DensityGrid(x_range, u_range, vals[0])
    f1 = DensityGrid(x_range, u_range, vals[1])
    return f0, f1, blocks
