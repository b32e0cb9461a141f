"""Bounded zero set of Lambda and the two point estimators built on it.

Roots are found by damped Newton from many quasi-random starts in the ball
``||h|| <= R``. The Newton step is a regularised SVD solve (equivalently a
Levenberg-Marquardt step with fixed damping ``tau``), so it stays defined
where the Jacobian is singular. For population systems ``tau`` is negligible;
for sample systems it is tied to the sampling noise of the coefficients.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats
from scipy.stats import qmc

from .polysys import PolySystem, eval_gamma, eval_lambda, jacobian_h

log = logging.getLogger(__name__)

_ST_RUNNING, _ST_STEP, _ST_STALL, _ST_MAXITER, _ST_DIVERGED = range(5)


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for the multi-start search.

    ``None`` entries are resolved per system: ``starts`` to ``200 * K!``,
    ``root_tol`` to ``1e-8 * (1 + coefficient scale)`` and ``dedup_tol`` to
    ``1e-4 * (1 + R)``. ``noise_mult`` scales the sampling-noise allowance
    used for finite-sample systems: near-singular points whose residual is
    within that allowance are accepted as roots, and Newton takes no step
    along directions the noisy Jacobian cannot resolve.
    """

    starts: int | None = None
    root_tol: float | None = None
    dedup_tol: float | None = None
    max_iter: int = 100
    seed: int = 0
    noise_mult: float = 4.0
    ghat_starts: int = 16

    def __post_init__(self):
        if self.starts is not None and self.starts < 1:
            raise ValueError("starts must be positive")
        if self.root_tol is not None and not self.root_tol > 0:
            raise ValueError("root_tol must be positive")
        if self.dedup_tol is not None and not self.dedup_tol > 0:
            raise ValueError("dedup_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.noise_mult < 0:
            raise ValueError("noise_mult must be nonnegative")
        if self.ghat_starts < 1:
            raise ValueError("ghat_starts must be positive")

    def to_dict(self) -> dict:
        return {
            "starts": self.starts,
            "root_tol": self.root_tol,
            "dedup_tol": self.dedup_tol,
            "max_iter": self.max_iter,
            "seed": self.seed,
            "noise_mult": self.noise_mult,
            "ghat_starts": self.ghat_starts,
        }


@dataclass(frozen=True, eq=False)
class SolutionSet:
    roots: np.ndarray  # (r, K), lexicographically sorted
    residuals: np.ndarray  # ||Lambda(root)||
    rank_deficient: np.ndarray  # bool per root
    R: float
    root_tol: float  # acceptance threshold actually applied, noise allowance included
    dedup_tol: float
    starts_used: int
    converged_fraction: float
    flags: tuple = ()
    best_point: np.ndarray | None = None
    best_residual: float = math.inf

    @property
    def no_root(self) -> bool:
        return len(self.roots) == 0

    def to_dict(self) -> dict:
        return {
            "roots": self.roots.tolist(),
            "residuals": self.residuals.tolist(),
            "rank_deficient": self.rank_deficient.tolist(),
            "R": self.R,
            "root_tol": self.root_tol,
            "dedup_tol": self.dedup_tol,
            "starts_used": self.starts_used,
            "converged_fraction": self.converged_fraction,
            "flags": list(self.flags),
            "best_point": None if self.best_point is None else self.best_point.tolist(),
            "best_residual": self.best_residual,
        }


@dataclass(frozen=True, eq=False)
class MinimizerResult:
    """Output of the direct minimiser of ||Gamma||."""

    g: np.ndarray
    objective: float
    boundary: bool
    flags: tuple = ()


def sobol_ball(K: int, count: int, R: float, seed: int) -> np.ndarray:
    """``count`` scrambled Sobol points mapped uniformly into the K-ball of radius R."""
    sampler = qmc.Sobol(d=K + 1, scramble=True, seed=seed)
    m = max(0, math.ceil(math.log2(max(count, 1))))
    u = sampler.random_base2(m)[:count]
    u = np.clip(u, 1e-12, 1 - 1e-12)
    z = stats.norm.ppf(u[:, :K])
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    r = R * u[:, K] ** (1.0 / K)
    return z * r[:, None]


def noise_bounds(sys: PolySystem, R: float) -> tuple[np.ndarray, np.ndarray]:
    """Coefficient-magnitude bounds on |P_m| and |dP_m/dh| over the ball, rows 0..K-1.

    Used to translate the O(n^-1/2) error in the coefficients into residual
    and Jacobian tolerances.
    """
    c = np.abs(sys.coeffs[: sys.K])
    P = c.shape[2]
    powers = float(R) ** np.arange(P)
    val = (c * powers).sum(axis=(1, 2))
    dpow = np.arange(1, P) * float(R) ** np.arange(P - 1)
    jac = (c[:, :, 1:] * dpow).sum(axis=2)
    return val, jac


@dataclass(frozen=True)
class _Tolerances:
    strict: float
    noisy: float
    tau: float
    rank_tol: float


def _tolerances(sys: PolySystem, R: float, cfg: SolverConfig) -> _Tolerances:
    val, jac = noise_bounds(sys, R)
    scale = float(np.abs(sys.coeffs[: sys.K]).max(initial=0.0))
    strict = cfg.root_tol if cfg.root_tol is not None else 1e-8 * (1.0 + scale)
    jnorm = float(np.linalg.norm(jac))
    if sys.n > 0:
        noisy = strict + cfg.noise_mult * float(np.linalg.norm(val)) / math.sqrt(sys.n)
        tau = cfg.noise_mult * jnorm / math.sqrt(sys.n)
        rank_tol = tau
    else:
        noisy = strict
        tau = 1e-12 * max(jnorm, 1e-300)
        rank_tol = 1e-8 * max(jnorm, 1e-300)
    return _Tolerances(strict, noisy, tau, rank_tol)


def local_jacobian_noise(sys: PolySystem, H: np.ndarray) -> np.ndarray:
    """Per-point Jacobian noise scale: ``noise_bounds`` at radius ``max(1, |h|_inf)``."""
    c = np.abs(sys.coeffs[: sys.K])
    P = c.shape[2]
    r = np.maximum(1.0, np.abs(H).max(axis=1))
    dpow = np.arange(1, P) * r[:, None] ** np.arange(P - 1)  # (S, P-1)
    jac = np.einsum("mkp,sp->smk", c[:, :, 1:], dpow)
    return np.linalg.norm(jac, axis=(1, 2))


def _newton(sys: PolySystem, H: np.ndarray, R: float, tau: float, max_iter: int, resolution: float = 0.0):
    """Batched damped Newton; returns final points and per-start status codes.

    ``tau`` regularises small singular values. With ``resolution > 0``,
    directions whose singular value is below ``resolution`` times the local
    Jacobian noise scale get no step at all: along them the system does not
    determine the root, so iterates settle onto a near-root set instead of
    drifting along it.
    """
    H = np.array(H, dtype=float)
    S = len(H)
    status = np.zeros(S, dtype=int)
    F = eval_lambda(sys, H)
    f = np.einsum("si,si->s", F, F)
    for _ in range(max_iter):
        idx = np.flatnonzero(status == _ST_RUNNING)
        if idx.size == 0:
            break
        Ja = jacobian_h(sys, H[idx])
        U, s, Vt = np.linalg.svd(Ja)
        proj = np.einsum("aik,ai->ak", U, F[idx])
        coef = s / (s * s + tau * tau) * proj
        if resolution > 0:
            cut = resolution * local_jacobian_noise(sys, H[idx])
            coef = np.where(s > cut[:, None], coef, 0.0)
        step = -np.einsum("ak,akj->aj", coef, Vt)
        h0 = H[idx]
        tiny = np.linalg.norm(step, axis=1) <= 1e-15 * (1.0 + np.linalg.norm(h0, axis=1))
        alpha = np.ones(idx.size)
        done = tiny.copy()
        newF = F[idx].copy()
        newf = f[idx].copy()
        for _ in range(40):
            todo = np.flatnonzero(~done)
            if todo.size == 0:
                break
            trial = h0[todo] + alpha[todo, None] * step[todo]
            Ft = eval_lambda(sys, trial)
            ft = np.einsum("si,si->s", Ft, Ft)
            ok = ft <= (1.0 - 1e-4 * alpha[todo]) * f[idx[todo]]
            hit = todo[ok]
            newF[hit] = Ft[ok]
            newf[hit] = ft[ok]
            done[hit] = True
            alpha[todo[~ok]] *= 0.5
        moved = done & ~tiny
        H[idx[moved]] = h0[moved] + alpha[moved, None] * step[moved]
        F[idx[moved]] = newF[moved]
        f[idx[moved]] = newf[moved]
        status[idx[tiny]] = _ST_STEP
        status[idx[~done]] = _ST_STALL
        far = np.linalg.norm(H[idx], axis=1) > 10.0 * R
        status[idx[far & (status[idx] == _ST_RUNNING)]] = _ST_DIVERGED
    status[status == _ST_RUNNING] = _ST_MAXITER
    return H, status


def _lexsorted(points: np.ndarray) -> np.ndarray:
    """Indices ordering rows lexicographically (first coordinate most significant)."""
    if len(points) == 0:
        return np.zeros(0, dtype=int)
    return np.lexsort(points.T[::-1])


def _dedup(points: np.ndarray, residuals: np.ndarray, tol: float) -> np.ndarray:
    """Greedy clustering; representatives are the lowest-residual member of each cluster."""
    order = _lexsorted(points)
    order = order[np.argsort(residuals[order], kind="stable")]
    keep: list[int] = []
    reps = np.empty((0, points.shape[1]))
    for i in order:
        if reps.shape[0] and np.min(np.linalg.norm(reps - points[i], axis=1)) < tol:
            continue
        keep.append(i)
        reps = np.vstack([reps, points[i]])
    return np.array(keep, dtype=int)


def solve_zero_set(sys: PolySystem, R: float, cfg: SolverConfig | None = None) -> SolutionSet:
    """Roots of Lambda inside the closed ball of radius ``R``."""
    cfg = cfg or SolverConfig()
    if not R > 0:
        raise ValueError("radius must be positive")
    K = sys.K
    starts = cfg.starts if cfg.starts is not None else 200 * math.factorial(K)
    dedup_tol = cfg.dedup_tol if cfg.dedup_tol is not None else 1e-4 * (1.0 + R)
    tol = _tolerances(sys, R, cfg)

    H0 = sobol_ball(K, starts, R, cfg.seed)
    resolution = cfg.noise_mult / math.sqrt(sys.n) if sys.n > 0 else 0.0
    H, status = _newton(sys, H0, R, tol.tau, cfg.max_iter, resolution)
    res = np.linalg.norm(eval_lambda(sys, H), axis=1)
    inball = np.linalg.norm(H, axis=1) <= R * (1.0 + 1e-12)
    smin = np.linalg.svd(jacobian_h(sys, H), compute_uv=False)[:, -1]

    strict = inball & (res <= tol.strict)
    noisy = inball & ~strict & (res <= tol.noisy) & (smin <= tol.tau)
    accepted = strict | noisy
    flags = []

    cand = np.flatnonzero(inball)
    if cand.size:
        b = cand[np.lexsort((*H[cand].T[::-1], res[cand]))[0]]
        best_point, best_res = H[b].copy(), float(res[b])
    else:
        best_point, best_res = np.zeros(K), float(np.linalg.norm(eval_lambda(sys, np.zeros(K))))

    idx = np.flatnonzero(accepted)
    if idx.size:
        keep = idx[_dedup(H[idx], res[idx], dedup_tol)]
        keep = keep[_lexsorted(H[keep])]
    else:
        keep = idx
        flags.append("no_root")
    roots = H[keep]
    rank_def = noisy[keep] | (smin[keep] <= tol.rank_tol)
    if rank_def.any():
        flags.append("rank_deficient")
    if len(roots) > math.factorial(K):
        flags.append("bezout_exceeded")
        log.warning("zero set has %d points, above the bound %d", len(roots), math.factorial(K))
    for a in (roots, rank_def):
        a.setflags(write=False)
    return SolutionSet(
        roots=roots,
        residuals=res[keep],
        rank_deficient=rank_def,
        R=float(R),
        root_tol=float(max(tol.strict, tol.noisy)),
        dedup_tol=float(dedup_tol),
        starts_used=int(starts),
        converged_fraction=float(accepted.mean()),
        flags=tuple(flags),
        best_point=best_point,
        best_residual=best_res,
    )


def refine_root(sys: PolySystem, h0, max_iter: int = 100) -> np.ndarray:
    """Undamped-in-practice Newton polish from a single point."""
    h0 = np.asarray(h0, dtype=float)[None, :]
    scale = float(np.linalg.norm(noise_bounds(sys, 1.0 + float(np.linalg.norm(h0)))[1]))
    H, _ = _newton(sys, h0, 10.0 * (1.0 + np.linalg.norm(h0)), 1e-14 * max(scale, 1e-300), max_iter)
    return H[0]


def select_root(sys: PolySystem, roots: np.ndarray) -> int:
    """Index of the root minimising ||Gamma||, then ||h||, then lexicographic order."""
    gnorm = np.linalg.norm(eval_gamma(sys, roots), axis=1)
    best = gnorm.min()
    tied = np.flatnonzero(gnorm <= best + 1e-12 * (1.0 + best))
    norms = np.linalg.norm(roots[tied], axis=1)
    tied = tied[norms <= norms.min() + 1e-12 * (1.0 + norms.min())]
    return int(tied[_lexsorted(roots[tied])[0]])


def estimate_g_tilde(sys: PolySystem, R: float, cfg: SolverConfig | None = None):
    """Two-stage estimator: the root of Lambda with the smallest ||Gamma||.

    Without any root the direct minimiser is used instead and the returned
    set carries the ``no_root`` flag.
    """
    cfg = cfg or SolverConfig()
    zs = solve_zero_set(sys, R, cfg)
    if zs.no_root:
        return estimate_g_hat(sys, R, cfg).g, zs
    return zs.roots[select_root(sys, zs.roots)].copy(), zs


def estimate_g_hat(sys: PolySystem, R: float, cfg: SolverConfig | None = None) -> MinimizerResult:
    """Multi-start constrained minimisation of ||Gamma(h)||^2 over ``||h|| <= R``."""
    cfg = cfg or SolverConfig()
    if not R > 0:
        raise ValueError("radius must be positive")
    K = sys.K

    def obj(h):
        G = eval_gamma(sys, h)
        return float(G @ G)

    def grad(h):
        G = eval_gamma(sys, h)
        return 2.0 * jacobian_h(sys, h, sys.gamma_rows).T @ G

    cons = {
        "type": "ineq",
        "fun": lambda h: R * R - h @ h,
        "jac": lambda h: -2.0 * h,
    }
    starts = np.vstack([np.zeros(K), sobol_ball(K, cfg.ghat_starts, 0.9 * R, cfg.seed)])
    best_h, best_f = None, math.inf
    for h0 in starts:
        r = optimize.minimize(
            obj, h0, jac=grad, method="SLSQP", constraints=[cons],
            options={"ftol": 1e-20, "maxiter": 500},
        )
        h = r.x
        nh = np.linalg.norm(h)
        if nh > R:
            h = h * (R / nh)
        fh = obj(h)
        if best_h is None or fh < best_f - 1e-15 * (1.0 + best_f) or (
            abs(fh - best_f) <= 1e-15 * (1.0 + best_f) and tuple(h) < tuple(best_h)
        ):
            best_h, best_f = h, fh
    boundary = bool(np.linalg.norm(best_h) >= R - 1e-3)
    return MinimizerResult(best_h, math.sqrt(best_f), boundary, ("boundary_solution",) if boundary else ())
