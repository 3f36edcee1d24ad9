"""Pinning profiles a_eps and the pinned density rho_eps.

rho_eps is the positive minimizer of

    E(rho) = 1/2 sum_links v |grad rho|^2 + sum_cells v (a - rho^2)^2 / (4 eps^2)

over omega cells, whose Euler-Lagrange equation is the Neumann problem
``-lap rho = rho (a - rho^2) / eps^2`` with the graph Laplacian of the omega
cells (links leaving omega are simply absent).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import GridSpec, ScalarField, ComplexField, Box

log = logging.getLogger(__name__)

KINDS = ("constant", "inclusion-set", "periodic", "random-checkerboard")


class SolverError(RuntimeError):
    pass


class ResolutionError(ValueError):
    pass


@dataclass(frozen=True)
class PinningProfile:
    kind: str = "constant"
    b: float = 1.0
    value: float = 1.0  # constant level (constant kind) or inclusion value
    centers: tuple = ()
    radii: tuple = ()
    period: float = 0.5
    cell_size: float = 0.25
    seed: int = 0
    boundary_margin: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown pinning kind {self.kind!r}; expected one of {KINDS}")
        if not (0.0 < self.b <= 1.0):
            raise ValueError(f"floor b must lie in (0,1], got {self.b}")
        if len(self.centers) != len(self.radii):
            raise ValueError("one radius per inclusion center")


def make_pinning(profile: PinningProfile, grid: GridSpec) -> ScalarField:
    p = profile
    x = grid.cell_centers()
    if p.kind == "constant":
        a = np.full(grid.n, p.value, dtype=float)
    elif p.kind == "inclusion-set":
        a = np.ones(grid.n)
        for c, r in zip(p.centers, p.radii):
            c = np.asarray(c, dtype=float)
            if grid.omega.sdf(c[None])[0] > -r:
                raise ValueError(f"inclusion at {tuple(c)} radius {r} escapes omega")
            inside = np.linalg.norm(x - c, axis=-1) < r
            a[inside] = p.value
    elif p.kind == "periodic":
        k = 2 * np.pi / p.period
        wave = np.cos(k * x[..., 0]) * np.cos(k * x[..., 1]) * np.cos(k * x[..., 2])
        a = p.b + (1 - p.b) * 0.5 * (1 + wave)
    else:
        idx = np.floor((x - np.asarray(grid.box_min)) / p.cell_size).astype(np.int64)
        nb = idx.max(axis=(0, 1, 2)) + 1
        rng = np.random.default_rng(p.seed)
        table = rng.uniform(p.b, 1.0, size=tuple(nb))
        a = table[idx[..., 0], idx[..., 1], idx[..., 2]]
    a = np.clip(a, p.b, 1.0)
    # constant (=1) near the boundary and outside omega
    a[grid.sdf_cells >= -p.boundary_margin] = 1.0
    return ScalarField(grid, a)


# ------------------------------------------------------------------ energy


def energy_eps(u, a: ScalarField, eps: float) -> float:
    """Discrete E_eps over omega; ``u`` may be real (ScalarField) or complex."""
    g = a.grid
    m = g.cell_mask.ravel()
    uv = u.flat[m]
    G = g.omega_grad
    du = G @ uv
    s = np.abs(uv) ** 2
    return g.dv * (0.5 * np.sum(np.abs(du) ** 2)
                   + np.sum((a.flat[m] - s) ** 2) / (4 * eps ** 2))


def weighted_energy_eps(u: ComplexField, rho: ScalarField, eps: float) -> float:
    """1/2 sum w |grad u|^2 + sum rho^4 (1-|u|^2)^2 / (4 eps^2), w = rho_i rho_j on links.

    With this link weight E(rho u) = E(rho) + weighted_energy_eps(u) holds
    exactly at a discrete critical point rho.
    """
    g = rho.grid
    m = g.cell_mask.ravel()
    G = g.omega_grad
    r = rho.flat[m]
    w = _link_weight(G, r)
    uv = u.flat[m]
    du = G @ uv
    return g.dv * (0.5 * np.sum(w * np.abs(du) ** 2)
                   + np.sum(r ** 4 * (1 - np.abs(uv) ** 2) ** 2) / (4 * eps ** 2))


def _link_weight(G, r):
    # G rows have one positive and one negative entry: tail and head.
    Gc = G.tocoo()
    prod = np.ones(G.shape[0])
    np.multiply.at(prod, Gc.row, r[Gc.col])
    return prod


def pde_residual(rho_flat, a_flat, L, eps):
    return L @ rho_flat - rho_flat * (a_flat - rho_flat ** 2) / eps ** 2


# ------------------------------------------------------------------ solver


@dataclass(frozen=True, eq=False)
class DensitySolution:
    rho: ScalarField
    epsilon: float
    residual_norm: float
    energy: float
    iterations: int = 0
    energy_history: tuple = field(default=(), repr=False)


def check_resolution(grid: GridSpec, eps: float):
    hmax = float(np.max(grid.h))
    if eps < hmax / 4:
        raise ResolutionError(f"eps={eps} under-resolved: need eps >= h/4 = {hmax / 4:.4g}")


def solve_rho(a: ScalarField, eps: float, tol=None, max_iter=100) -> DensitySolution:
    if eps <= 0:
        raise ValueError("eps must be positive")
    g = a.grid
    check_resolution(g, eps)
    m = g.cell_mask.ravel()
    av = a.flat[m]
    if av.min() <= 0 or av.max() > 1:
        raise ValueError("pinning values must lie in (0,1]")
    L = g.omega_laplacian
    dv = g.dv
    tol = 1e-8 / eps ** 2 if tol is None else tol
    # aim well below the contract so downstream identities close at roundoff
    # (floored at the roundoff level of the discrete operator)
    floor = 64 * np.finfo(float).eps * (abs(L).sum(axis=1).max() + 1 / eps ** 2)
    target = max(min(tol, 1e-11 / eps ** 2), floor)

    def E(r):
        return dv * (0.5 * r @ (L @ r) + np.sum((av - r ** 2) ** 2) / (4 * eps ** 2))

    r = np.sqrt(av)
    res = pde_residual(r, av, L, eps)
    if np.abs(res).max() > 0:
        # one Jacobi sweep on the linearized system
        diag = L.diagonal() + (3 * r ** 2 - av) / eps ** 2
        r = np.clip(r - res / diag, np.sqrt(av.min()), 1.0)
    hist = [E(r)]
    it = 0
    res = pde_residual(r, av, L, eps)
    while np.abs(res).max() > target:
        if it >= max_iter:
            raise SolverError(f"density Newton did not converge: residual {np.abs(res).max():.3e}")
        it += 1
        J = (L + sp.diags((3 * r ** 2 - av) / eps ** 2)).tocsc()
        step = spla.splu(J).solve(-res)
        if step @ res > 0:  # not a descent direction; fall back to scaled gradient
            step = -res / (L.diagonal() + 2 / eps ** 2)
        t, e0 = 1.0, hist[-1]
        while t > 1e-8:
            cand = r + t * step
            e1 = E(cand)
            if e1 <= e0 + 1e-14 * abs(e0) + 1e-300:
                break
            t *= 0.5
        else:
            raise SolverError("line search failed in density solve")
        r = cand
        hist.append(e1)
        res = pde_residual(r, av, L, eps)
        log.debug("rho newton it=%d res=%.3e E=%.12g t=%g", it, np.abs(res).max(), e1, t)
    lo = np.sqrt(av.min())
    if r.min() < lo - 1e-8 or r.max() > 1 + 1e-8:
        raise SolverError("density left [sqrt(b), 1]: maximum principle violated")
    r = np.clip(r, lo, 1.0) if (r.min() < lo or r.max() > 1) else r
    full = np.ones(int(np.prod(g.n)))
    full[m] = r
    rho = ScalarField(g, full.reshape(g.n))
    return DensitySolution(rho, float(eps), float(np.abs(pde_residual(r, av, L, eps)).max()),
                           float(E(r)), it, tuple(hist))


def sqrt_a_candidate(a: ScalarField, eps: float) -> float:
    """E at the smoothed sqrt(a) candidate (minimality witness)."""
    g = a.grid
    m = g.cell_mask.ravel()
    av = a.flat[m]
    L = g.omega_laplacian
    r = np.sqrt(av)
    r = r - 0.5 * (L @ r) / (L.diagonal() + 1e-300) * (L.diagonal() > 0)
    full = np.ones(int(np.prod(g.n)))
    full[m] = r
    return energy_eps(ScalarField(g, full.reshape(g.n)), a, eps)


# ------------------------------------------------------------------ locking


@dataclass(frozen=True)
class LockingReport:
    sup_deviation: float
    precondition_ok: bool
    n_cells: int
    message: str = ""


def check_exponential_locking(solution: DensitySolution, a: ScalarField, center, R,
                              const_tol=1e-12) -> LockingReport:
    g = a.grid
    x = g.cell_centers()
    ball = (np.linalg.norm(x - np.asarray(center, float), axis=-1) <= R) & g.cell_mask
    if R <= 0 or ball.sum() < 2:
        return LockingReport(float("nan"), False, int(ball.sum()),
                             "probe ball degenerate: radius must cover at least two cells")
    av = a.values[ball]
    if av.max() - av.min() > const_tol:
        return LockingReport(float("nan"), False, int(ball.sum()),
                             "pinning is not constant on the probe ball")
    dev = np.abs(np.sqrt(av) - solution.rho.values[ball]).max()
    return LockingReport(float(dev), True, int(ball.sum()))


@dataclass(frozen=True)
class LockingTrend:
    eps: tuple
    deviations: tuple
    slope: float  # d log(dev) / d (1/eps)
    intercept: float
    r2: float

    @property
    def affine_decreasing(self):
        return self.slope < 0


def fit_locking_trend(eps_list, deviations) -> LockingTrend:
    x = 1.0 / np.asarray(eps_list, dtype=float)
    y = np.log(np.asarray(deviations, dtype=float))
    slope, icpt = np.polyfit(x, y, 1)
    fit = slope * x + icpt
    ss_res = np.sum((y - fit) ** 2)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return LockingTrend(tuple(map(float, eps_list)), tuple(map(float, deviations)),
                        float(slope), float(icpt), float(r2))


def locking_sweep(a: ScalarField, eps_list, center, R) -> LockingTrend:
    devs = []
    for eps in eps_list:
        sol = solve_rho(a, eps)
        rep = check_exponential_locking(sol, a, center, R)
        if not rep.precondition_ok:
            raise ValueError(rep.message)
        devs.append(rep.sup_deviation)
    return fit_locking_trend(eps_list, devs)


# ------------------------------------------------------------------ fixtures


def slab_step_grid(n_long=400, n_trans=2, length=1.0):
    """1D-extruded slab omega = [0,L] x [0,w]^2 with one exterior cell layer."""
    h = length / n_long
    w = n_trans * h
    omega = Box((0.0, 0.0, 0.0), (length, w, w))
    return GridSpec((-h, -h, -h), (length + h, w + h, w + h),
                    (n_long + 2, n_trans + 2, n_trans + 2), omega)


def slab_step_pinning(grid: GridSpec, low=0.25, split=0.5) -> ScalarField:
    x = grid.cell_centers()[..., 0]
    a = np.where(x < split, low, 1.0)
    a[~grid.cell_mask] = 1.0
    return ScalarField(grid, a)


def slab_step_oracle(eps, low=0.25, split=0.5, length=1.0, tol=1e-10):
    """High-accuracy 1D solution of the slab-step problem via collocation.

    The interval is folded at the jump so both halves become smooth problems
    on [0, s]: y1(t) = rho(split - t) and y2(t) = rho(split + t*(L-split)/split),
    glued by continuity and flux matching at t = 0.
    """
    from scipy.integrate import solve_bvp

    s1, s2 = split, length - split

    def f(t, y):
        r1, p1, r2, p2 = y
        # y1 on [0, s1] in variable t1 = t*s1, y2 on [0, s2] in t2 = t*s2; t in [0,1]
        return np.vstack([s1 * p1, -s1 * r1 * (low - r1 ** 2) / eps ** 2,
                          s2 * p2, -s2 * r2 * (1.0 - r2 ** 2) / eps ** 2])

    def bc(ya, yb):
        # t=0 at the jump: rho continuous, rho' continuous (p1 = -rho', p2 = rho')
        # t=1 at the outer walls: Neumann
        return np.array([ya[0] - ya[2], ya[1] + ya[3], yb[1], yb[3]])

    t = np.linspace(0, 1, 2001)
    y0 = np.vstack([np.full_like(t, np.sqrt(low)), 0 * t, np.ones_like(t), 0 * t])
    sol = solve_bvp(f, bc, t, y0, tol=tol, max_nodes=2_000_000)
    if not sol.success:
        raise SolverError("1D oracle failed: " + sol.message)

    def rho(x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        left = x < split
        out[left] = sol.sol((split - x[left]) / s1)[0]
        out[~left] = sol.sol((x[~left] - split) / s2)[2]
        return out

    return rho
