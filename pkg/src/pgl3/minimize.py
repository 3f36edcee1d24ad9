"""Descent on the full pinned GL functional and the applied-field sweep.

Nonlinear conjugate gradients (Polak-Ribiere+) alternating a u-step and an
A-step, each with its own search direction and a safeguarded quadratic line
search.  Every 25 iterations A is projected to the Coulomb gauge on the box
(with the matching gauge change of u) and the global phase of u is fixed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .density import solve_rho
from .energy import (Configuration, EnergyBreakdown, from_split_variables, gl_energy,
                     gl_energy_grad, meissner_configuration, split_energy, vorticity)
from .isoflux import PolyCurrent, critical_field, maximize_ratio
from .meissner import MeissnerState, box_poisson, coulomb_A0ex, minimize_J
from .mesh import ComplexField, ScalarField, VectorField

log = logging.getLogger(__name__)

INITS = ("meissner", "random", "vortex-seeded")


class DescentError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class MinimizeResult:
    config: Configuration
    breakdown: EnergyBreakdown | None
    energy: float
    iterations: int
    converged: bool
    history: np.ndarray
    init: str


# ------------------------------------------------------------------ gauge


def gauge_project(u: np.ndarray, A: np.ndarray, grid, rho=None):
    """Coulomb gauge on the box plus global phase fixing; returns (u, A).

    (u e^{-i psi}, A - grad psi) has the same lattice energy as (u, A).
    """
    G = grid.ops.grad
    psi = box_poisson(grid, G.T @ A)
    A2 = A - G @ psi
    u2 = u * np.exp(-1j * psi)
    m = grid.cell_mask.ravel()
    w = np.ones(m.sum()) if rho is None else rho.flat[m]
    z = np.sum(w * u2[m])
    if abs(z) > 1e-300:
        u2 = u2 * (abs(z) / z)
    return u2, A2


# ------------------------------------------------------------------ vortex seeding


def polylines(current: PolyCurrent, decimals=9):
    """Chain the segments of a current into ordered vertex lists (open or closed)."""
    def key(p):
        return tuple(np.round(p, decimals) + 0.0)

    segs = []
    for sg, m in zip(current.segments, current.mult):
        a, b = key(sg[:3]), key(sg[3:])
        segs.extend([(a, b) if m > 0 else (b, a)] * abs(int(m)))
    out_of = {}
    for i, (a, b) in enumerate(segs):
        out_of.setdefault(a, []).append(i)
    indeg = {}
    for a, b in segs:
        indeg[b] = indeg.get(b, 0) + 1
    used = [False] * len(segs)
    lines = []
    starts = [i for i, (a, b) in enumerate(segs) if indeg.get(a, 0) == 0] + list(range(len(segs)))
    for s0 in starts:
        if used[s0]:
            continue
        path = [segs[s0][0]]
        i = s0
        while i is not None and not used[i]:
            used[i] = True
            b = segs[i][1]
            path.append(b)
            nxt = [j for j in out_of.get(b, []) if not used[j]]
            i = nxt[0] if nxt else None
        lines.append(np.array(path))
    return lines


def _solid_angle(pts, loop):
    """Signed solid angle of a closed polygon seen from pts (fan triangulation)."""
    c = loop.mean(axis=0)
    tot = np.zeros(len(pts))
    for i in range(len(loop)):
        a = loop[i] - pts
        b = loop[(i + 1) % len(loop)] - pts
        o = c - pts
        na, nb, no = (np.linalg.norm(x, axis=1) for x in (a, b, o))
        num = np.einsum("ij,ij->i", o, np.cross(a, b))
        den = na * nb * no + np.einsum("ij,ij->i", o, a) * nb \
            + np.einsum("ij,ij->i", o, b) * na + np.einsum("ij,ij->i", a, b) * no
        tot += 2 * np.arctan2(num, den)
    return tot


def _close_outside(line, omega, far):
    """Close an open polyline by radial legs to a large sphere and an arc on it."""
    c = np.asarray(omega.bounds()[0] + omega.bounds()[1]) / 2
    s, e = line[0], line[-1]

    def out(p):
        d = p - c
        n = np.linalg.norm(d)
        return c + far * (d / n if n > 0 else np.array([0, 0, 1.0]))

    es, ss = out(e), out(s)
    # great-circle arc from e_far to s_far
    a, b = (es - c) / far, (ss - c) / far
    ang = math.acos(np.clip(a @ b, -1, 1))
    if ang < 1e-9:
        arc = []
    else:
        k = max(8, int(ang / 0.1))
        t = np.linspace(0, 1, k + 1)[1:-1]
        if abs(ang - math.pi) < 1e-6:
            perp = np.cross(a, [1, 0, 0]) if abs(a[0]) < 0.9 else np.cross(a, [0, 1, 0])
            perp /= np.linalg.norm(perp)
            arc = [c + far * (math.cos(math.pi * ti) * a + math.sin(math.pi * ti) * perp) for ti in t]
        else:
            arc = [c + far * (math.sin((1 - ti) * ang) * a + math.sin(ti * ang) * b) / math.sin(ang)
                   for ti in t]
    return np.vstack([line, [es], *([np.array(arc)] if len(arc) else []), [ss]])


def _dist_to_polyline(pts, line):
    d = np.full(len(pts), np.inf)
    for a, b in zip(line[:-1], line[1:]):
        ab = b - a
        t = np.clip((pts - a) @ ab / (ab @ ab), 0, 1)
        d = np.minimum(d, np.linalg.norm(pts - a - t[:, None] * ab, axis=1))
    return d


def vortex_seed(grid, current: PolyCurrent, eps, degree=1):
    """tanh-core phase singularity along a current: tanh(d/eps) exp(i degree Omega/2)."""
    pts = grid.cell_centers().reshape(-1, 3)
    lo, hi = grid.omega.bounds()
    far = 10.0 * float(np.max(np.asarray(hi) - np.asarray(lo)))
    phase = np.zeros(len(pts))
    mod = np.ones(len(pts))
    for line in polylines(current):
        closed = np.allclose(line[0], line[-1])
        loop = line[:-1] if closed else _close_outside(line, grid.omega, far)
        phase += 0.5 * _solid_angle(pts, loop)
        mod *= np.tanh(_dist_to_polyline(pts, line) / eps)
    return (mod * np.exp(1j * degree * phase)).reshape(grid.n)


# ------------------------------------------------------------------ descent


def _line_search(f0, df0, fun, alpha0):
    """Quadratic-model line search with Armijo backtracking; returns (alpha, f) or (0, f0)."""
    if df0 >= 0:
        return 0.0, f0
    a1 = alpha0
    f1 = fun(a1)
    best = (0.0, f0)
    for _ in range(30):
        if f1 < best[1]:
            best = (a1, f1)
        curv = f1 - f0 - df0 * a1
        if curv > 0:
            a2 = -df0 * a1 * a1 / (2 * curv)
            a2 = min(a2, 4 * a1)
            f2 = fun(a2)
            if f2 < best[1]:
                best = (a2, f2)
            if best[1] <= f0 + 1e-4 * best[0] * df0:
                return best
            a1, f1 = (a2, f2) if a2 < a1 else (0.5 * a1, fun(0.5 * a1))
        else:
            if f1 <= f0 + 1e-4 * a1 * df0:
                # still descending steeply: try a longer step once
                a2 = 2 * a1
                f2 = fun(a2)
                return (a2, f2) if f2 < f1 else (a1, f1)
            a1 = 0.5 * a1
            f1 = fun(a1)
    return best if best[1] < f0 else (0.0, f0)


def minimize_gl(a: ScalarField, eps: float, H0ex: VectorField, h_ex: float, init="meissner",
                state: MeissnerState | None = None, u0=None, A0=None, seed=0,
                max_iter=4000, rtol=1e-10, window=50, project_every=25, seed_current=None,
                breakdown=True) -> MinimizeResult:
    """Minimize GL_eps over (u, A) for the applied field h_ex * H0ex."""
    if init not in INITS:
        raise ValueError(f"unknown init {init!r}")
    g = a.grid
    H = h_ex * H0ex.flat
    if u0 is not None:
        u = np.asarray(u0.values if hasattr(u0, "values") else u0, complex).ravel().copy()
        A = np.asarray(A0.flat if hasattr(A0, "flat") else A0, float).copy()
    elif init == "meissner":
        if state is None:
            raise ValueError("init='meissner' needs the Meissner state")
        cfg = meissner_configuration(state, h_ex)
        u, A = cfg.u.flat.copy(), cfg.A.flat.copy()
    elif init == "random":
        rng = np.random.default_rng(seed)
        base = state.rho.flat if state is not None else np.sqrt(a.flat)
        u = base * np.exp(1j * rng.uniform(-np.pi, np.pi, base.size)) * rng.uniform(0.5, 1, base.size)
        A = h_ex * (state.A0.flat if state is not None else np.zeros(g.size("face")))
    else:
        if state is None:
            raise ValueError("init='vortex-seeded' needs the Meissner state")
        cfg = meissner_configuration(state, h_ex)
        if seed_current is None:
            eta = ScalarField(g, state.rho.values ** 2)
            seed_current = maximize_ratio(state.B0, eta).best_current
        u = cfg.u.flat * vortex_seed(g, seed_current, eps).ravel()
        A = cfg.A.flat.copy()
    af = a.flat
    E, gu, gA = gl_energy_grad(u, A, g, af, eps, H)
    if not np.isfinite(E):
        raise DescentError("initial energy is not finite")
    hist = [E]
    du, dA = -gu, -gA
    pu_old, pA_old = gu, gA
    step_u = step_A = 0.1 * float(np.min(g.h)) ** 2 / g.dv
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        # ---- u block
        df = float(np.real(np.vdot(gu, du)))
        if df >= 0:
            du = -gu
            df = float(np.real(np.vdot(gu, du)))
        au, E1 = _line_search(E, df, lambda t: gl_energy_grad(u + t * du, A, g, af, eps, H)[0], step_u)
        if au > 0:
            u = u + au * du
            step_u = au
        E, gu_new, gA = gl_energy_grad(u, A, g, af, eps, H)
        beta = max(0.0, float(np.real(np.vdot(gu_new, gu_new - gu))) / max(float(np.real(np.vdot(gu, gu))), 1e-300))
        du = -gu_new + beta * du
        gu = gu_new
        # ---- A block
        df = float(np.dot(gA, dA))
        if df >= 0:
            dA = -gA
            df = float(np.dot(gA, dA))
        aA, E1 = _line_search(E, df, lambda t: gl_energy_grad(u, A + t * dA, g, af, eps, H)[0], step_A)
        if aA > 0:
            A = A + aA * dA
            step_A = aA
        E, gu, gA_new = gl_energy_grad(u, A, g, af, eps, H)
        beta = max(0.0, float(np.dot(gA_new, gA_new - gA)) / max(float(np.dot(gA, gA)), 1e-300))
        dA = -gA_new + beta * dA
        gA = gA_new
        if not np.isfinite(E):
            raise DescentError("energy became NaN during descent")
        if E > hist[-1] + 1e-12 * max(1.0, abs(hist[-1])):
            raise DescentError(f"energy increased {hist[-1]:.12g} -> {E:.12g}")
        hist.append(E)
        if it % project_every == 0:
            u, A = gauge_project(u, A, g, state.rho if state is not None else None)
            E, gu, gA = gl_energy_grad(u, A, g, af, eps, H)
            du, dA = -gu, -gA
        if au == 0 and aA == 0:
            # steepest directions failed twice in a row: stationary to roundoff
            if np.real(np.vdot(gu, gu)) + np.dot(gA, gA) < 1e-24 or (len(hist) > 2 and hist[-1] == hist[-2]):
                converged = True
                break
        if len(hist) > window and hist[-window - 1] - hist[-1] <= rtol * max(abs(hist[-1]), 1e-300):
            converged = True
            break
        if abs(hist[-1]) < 1e-300:
            converged = True
            break
    u, A = gauge_project(u, A, g, state.rho if state is not None else None)
    cfg = Configuration(ComplexField(g, u.reshape(g.n)), VectorField(g, A, "face"), h_ex)
    bd = None
    if breakdown and state is not None:
        bd = split_energy(cfg, state, a, eps)
    Efin = gl_energy(cfg, a, eps, VectorField(g, H0ex.flat, "edge"))
    log.info("minimize_gl(%s, h=%.4g): E=%.10g after %d iterations", init, h_ex, Efin, it)
    return MinimizeResult(cfg, bd, float(Efin), it, converged, np.array(hist), init)


def meissner_gap(cfg: Configuration, state: MeissnerState, a: ScalarField, eps: float) -> float:
    """GL(cfg) - GL(Meissner configuration at the same h_ex), same quadrature."""
    ref = meissner_configuration(state, cfg.h_ex)
    return float(gl_energy(cfg, a, eps, state.H0ex) - gl_energy(ref, a, eps, state.H0ex))


# ------------------------------------------------------------------ sweep


@dataclass
class SweepRecord:
    h_ex: float
    energy: float
    meissner_energy: float
    free_energy: float
    nu_mass: float
    min_u_over_rho: float
    dual_norm_mu: float
    iterations: int
    basin: str = "meissner"
    gap: float = 0.0
    above_meissner: bool = False

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class SweepResult:
    records: list
    hc1: float
    ratio: float
    onset: float | None
    onset_over_hc1: float | None
    eps: float
    extras: dict = field(default_factory=dict)


def sweep_record(res: MinimizeResult, state: MeissnerState, a, eps, delta=None,
                 dual_seed=0, dual_count=512) -> SweepRecord:
    from .vortex_detect import DetectionError, SignedMeasure, assemble_nu, dual_norm_estimate
    cfg = res.config
    g = cfg.grid
    m = g.cell_mask
    ratio = np.abs(cfg.u.values[m]) / state.rho.values[m]
    delta = delta if delta is not None else max(4 * float(np.max(g.h)), 0.25)
    try:
        nu_mass = assemble_nu(cfg.u, cfg.A, state.rho, eps, delta).mass
    except DetectionError as exc:
        # no admissible grid: cores on every candidate skeleton, count as vortices present
        log.warning("vortex detection failed: %s", exc)
        nu_mass = float("inf")
    mu = vorticity(cfg.u, cfg.A).flat
    dn = dual_norm_estimate(SignedMeasure(g, mu, None), 1.0, dual_seed, dual_count)
    gap = meissner_gap(cfg, state, a, eps)
    meis = gl_energy(meissner_configuration(state, cfg.h_ex), a, eps, state.H0ex)
    tol = 1e-8 * max(1.0, abs(meis))
    return SweepRecord(cfg.h_ex, res.energy, float(meis),
                       float(res.breakdown.free_energy) if res.breakdown else float("nan"),
                       float(nu_mass), float(ratio.min()), float(dn), res.iterations, res.init,
                       gap, bool(res.energy > meis + tol))


def hex_sweep(a: ScalarField, eps: float, ext, h_list, state: MeissnerState | None = None,
              max_iter=4000, delta=None, inits=("meissner", "vortex-seeded"), dual_count=512,
              relative=False):
    """Minimize at every h_ex (ascending) from each init, keep the lower energy.

    With ``relative=True`` the schedule is read in units of the lower critical field.
    """
    h_list = [float(h) for h in h_list]
    if any(b < a_ for a_, b in zip(h_list, h_list[1:])):
        raise ValueError("h_list must be ascending")
    g = a.grid
    if state is None:
        sol = solve_rho(a, eps)
        state = minimize_J(sol.rho, coulomb_A0ex(ext, g))
    eta = ScalarField(g, state.rho.values ** 2)
    iso = maximize_ratio(state.B0, eta, eps=eps)
    hc1 = critical_field(iso.ratio, eps)
    if relative:
        h_list = [h * hc1 for h in h_list]
    records = []
    for h in h_list:
        best = None
        for init in inits:
            res = minimize_gl(a, eps, state.H0ex, h, init, state=state, max_iter=max_iter,
                              seed_current=iso.best_current)
            if best is None or res.energy < best.energy:
                best = res
        records.append(sweep_record(best, state, a, eps, delta, dual_count=dual_count))
        log.info("sweep h=%.4g E=%.8g |nu|=%.4g", h, records[-1].energy, records[-1].nu_mass)
    onset = next((r.h_ex for r in records if r.nu_mass > math.pi / 2), None)
    return SweepResult(records, hc1, iso.ratio, onset, onset / hc1 if onset is not None else None, eps,
                       {"isoflux": iso})
