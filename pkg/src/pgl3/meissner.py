"""Approximating Meissner configuration.

Discrete counterparts of the continuum objects:

* link weight ``w = rho_i rho_j`` on omega links stands in for rho^2;
* ``phi_A`` solves the weighted Neumann problem grad^T w (A - grad phi) = 0 on
  omega cells;
* ``B_A`` lives on omega plaquettes (so its tangential trace vanishes) and
  satisfies curl^T B_A = w (A - grad phi_A) exactly;
* ``A0`` minimizes J(A) = 1/2 sum_omega w |A - grad phi_A|^2
  + 1/2 sum_box |curl(A - A0ex)|^2 over the whole computational box, with
  natural boundary conditions on the box walls, in the Coulomb gauge.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import GridSpec, ScalarField, VectorField, StaggeringError, edge_to_cells
from .density import SolverError

log = logging.getLogger(__name__)

DIRECT_LIMIT = 20_000  # unknowns; above this use AMG-preconditioned CG


class GaugeError(ValueError):
    pass


class IncompatibleInputError(ValueError):
    pass


# ------------------------------------------------------------------ helpers


def link_weights(rho2: ScalarField) -> np.ndarray:
    """w_l = sqrt(rho2_i rho2_j) on omega links, 0 elsewhere (box-face layout)."""
    g = rho2.grid
    from .mesh import link_endpoints
    t, hd = link_endpoints(g)
    r2 = rho2.flat
    if np.any(r2[g.cell_mask.ravel()] <= 0):
        raise ValueError("rho^2 must be positive on omega")
    w = np.zeros(g.size("face"))
    m = g.face_mask
    w[m] = np.sqrt(r2[t[m]] * r2[hd[m]])
    return w


def box_poisson(grid: GridSpec, f: np.ndarray) -> np.ndarray:
    """Solve grad^T grad psi = f on the whole box (Neumann walls), mean-zero psi.

    Uses the DCT-II diagonalization of the separable Neumann graph Laplacian.
    """
    n, h = grid.n, grid.h
    f = f.reshape(n)
    lam = np.zeros(n)
    for k in range(3):
        lk = (2 - 2 * np.cos(np.pi * np.arange(n[k]) / n[k])) / h[k] ** 2
        shp = [1, 1, 1]
        shp[k] = n[k]
        lam = lam + lk.reshape(shp)
    fh = sfft.dctn(f, type=2, norm="ortho")
    lam[0, 0, 0] = 1.0
    ph = fh / lam
    ph[0, 0, 0] = 0.0
    return sfft.idctn(ph, type=2, norm="ortho").ravel()


def coulomb_project(A: VectorField) -> VectorField:
    """A - grad psi with grad^T (A - grad psi) = 0 on every box cell."""
    g = A.grid
    G = g.ops.grad
    psi = box_poisson(g, G.T @ A.flat)
    return VectorField(g, A.flat - G @ psi, "face")


def potential_from_field(H: VectorField) -> VectorField:
    """Coulomb-gauge face potential A with curl A = H for a discrete H (div H = 0)."""
    g = H.grid
    if H.location != "edge":
        raise StaggeringError("field samples must live on edges")
    ops = g.ops
    if np.abs(ops.div @ H.flat).max() > 1e-8 * (1 + np.abs(H.flat).max()) / g.h.min():
        raise IncompatibleInputError("sampled field is not discretely divergence-free")
    C, G = ops.curl, ops.grad
    M = (C.T @ C + G @ G.T).tocsr()
    A = _spd_solve(M, C.T @ H.flat, rtol=1e-13)
    return coulomb_project(VectorField(g, A, "face"))


def _spd_solve(M, rhs, rtol=1e-13, maxiter=2000, floor=1e-10):
    """SPD solve; AMG-CG in restarted chunks above DIRECT_LIMIT.

    CG in floating point can drift away once the residual reaches roundoff level, so
    the best iterate by true residual is kept and accepted if it is below ``floor``.
    """
    if M.shape[0] <= DIRECT_LIMIT:
        return spla.splu(M.tocsc()).solve(rhs)
    import pyamg
    M = M.tocsr()
    ml = pyamg.smoothed_aggregation_solver(M, symmetry="symmetric")
    r0 = np.linalg.norm(rhs)
    if r0 == 0:
        return np.zeros_like(rhs)
    x = np.zeros_like(rhs)
    best, best_res = x, 1.0
    for _ in range(0, maxiter, 100):
        x = ml.solve(rhs, x0=x, tol=rtol, maxiter=100, accel="cg")
        rel = np.linalg.norm(rhs - M @ x) / r0
        stalled = rel > 0.5 * best_res
        if rel < best_res:
            best, best_res = x, rel
        if stalled or rel <= 10 * rtol:
            break
    if best_res > max(10 * rtol, floor):
        raise SolverError(f"AMG-CG stagnated at relative residual {best_res:.2e}")
    return best


class _Factor:
    """Cached factorization of a singular Neumann operator on omega cells."""

    def __init__(self, K):
        self.n = K.shape[0]
        self.lu = spla.splu(K[1:, 1:].tocsc()) if self.n > 1 else None

    def solve(self, f):
        x = np.zeros(self.n)
        if self.n > 1:
            x[1:] = self.lu.solve(f[1:])
        return x - x.mean()


def _phi_solver(g, w):
    import hashlib

    def build():
        G = g.omega_grad
        return _Factor((G.T @ sp.diags(w[g.face_mask]) @ G).tocsr())

    return g.cached(("phi", hashlib.sha1(w.tobytes()).hexdigest()), build)


# ------------------------------------------------------------------ phi, B


def solve_phi(A: VectorField, rho2: ScalarField, rtol=1e-10) -> ScalarField:
    """Zero-mean phi on omega with grad^T [w (A - grad phi)] = 0 on omega cells.

    Solved by a sparse direct factorization (cached per weight), which meets
    the residual contract with orders of magnitude to spare.
    """
    g = A.grid
    if not g.same(rho2.grid):
        from .mesh import GridMismatchError
        raise GridMismatchError("A and rho2 on different grids")
    if A.location != "face":
        raise StaggeringError("solve_phi takes a face field")
    w = link_weights(rho2)
    G = g.omega_grad
    fm = g.face_mask
    rhs = G.T @ (w[fm] * A.flat[fm])
    phi_o = _phi_solver(g, w).solve(rhs)
    resid = G.T @ (w[fm] * (A.flat[fm] - G @ phi_o))
    scale = np.abs(rhs).max() + 1e-300
    if np.abs(resid).max() > rtol * max(scale, 1.0):
        raise SolverError(f"phi solve residual {np.abs(resid).max():.2e} above tolerance")
    phi = np.zeros(int(np.prod(g.n)))
    phi[g.cell_mask.ravel()] = phi_o
    return ScalarField(g, phi.reshape(g.n))


def reduced_current(A: VectorField, phi: ScalarField, rho2: ScalarField) -> np.ndarray:
    """w (A - grad phi) on omega links, zero elsewhere (box-face layout)."""
    w = link_weights(rho2)
    g = A.grid
    return w * (A.flat - g.ops.grad @ phi.flat) * g.face_mask


def _b_factor(g):
    def build():
        C = g.ops.curl[g.edge_mask][:, g.face_mask]
        G = g.omega_grad
        return C, spla.splu((C.T @ C + G @ G.T).tocsc())

    return g.cached("recover_B", build)


def recover_B(A: VectorField, phi: ScalarField, rho2: ScalarField, tol=1e-8) -> VectorField:
    """B on omega plaquettes with curl^T B = w (A - grad phi) and div B = 0."""
    g = A.grid
    F = reduced_current(A, phi, rho2)
    fm = g.face_mask
    Fo = F[fm]
    scale = np.abs(Fo).max()
    B = np.zeros(g.size("edge"))
    if scale == 0:
        return VectorField(g, B, "edge")
    div_in = g.omega_grad.T @ Fo
    if np.abs(div_in).max() > tol * scale / g.h.min():
        raise IncompatibleInputError("input has nonzero discrete divergence; solve phi first")
    C, lu = _b_factor(g)
    V = lu.solve(Fo)
    B[g.edge_mask] = C @ V
    res = g.ops.curl.T @ B - F
    if np.abs(res).max() > tol * scale:
        raise IncompatibleInputError(
            f"curl^T B misses the target by {np.abs(res).max():.2e}; omega_h may not be simply connected")
    return VectorField(g, B, "edge")


def hodge_decompose(V: VectorField):
    """V = curl B_V + grad phi_V on omega (rho = 1); returns (curl_part, grad_part, B_V, phi_V)."""
    g = V.grid
    one = ScalarField(g, np.ones(g.n))
    Vo = VectorField(g, V.flat * g.face_mask, "face")
    phi = solve_phi(Vo, one)
    gp = (g.ops.grad @ phi.flat) * g.face_mask
    cp = Vo.flat - gp
    BV = recover_B(Vo, phi, one)
    return VectorField(g, cp, "face"), VectorField(g, gp, "face"), BV, phi


# ------------------------------------------------------------------ J and A0


@dataclass(frozen=True, eq=False)
class MeissnerState:
    rho: ScalarField
    A0: VectorField
    phi0: ScalarField
    B0: VectorField
    J_value: float
    h0: VectorField
    A0ex: VectorField
    H0ex: VectorField

    @property
    def grid(self):
        return self.rho.grid

    @functools.cached_property
    def weights(self):
        return link_weights(ScalarField(self.grid, self.rho.values ** 2))

    @functools.cached_property
    def reduced_potential(self):
        """A0 - grad phi0 on omega links (zero elsewhere)."""
        g = self.grid
        return (self.A0.flat - g.ops.grad @ self.phi0.flat) * g.face_mask


def J_functional(A: VectorField, rho: ScalarField, A0ex: VectorField) -> float:
    g = A.grid
    rho2 = ScalarField(g, rho.values ** 2)
    phi = solve_phi(A, rho2)
    w = link_weights(rho2)
    red = (A.flat - g.ops.grad @ phi.flat) * g.face_mask
    cW = g.ops.curl @ (A.flat - A0ex.flat)
    return 0.5 * g.dv * (np.sum(w * red ** 2) + np.sum(cW ** 2))


def coulomb_A0ex(ext, grid: GridSpec) -> VectorField:
    from .fields import raw_potential
    return coulomb_project(raw_potential(ext, grid))


def _check_gauge(A0ex: VectorField, tol=1e-8):
    g = A0ex.grid
    d = g.ops.grad.T @ A0ex.flat
    scale = (np.abs(A0ex.flat).max() + 1e-300) / g.h.min()
    if np.abs(d).max() > tol * scale:
        raise GaugeError("A0ex is not in the discrete Coulomb gauge on the box")


def minimize_J(rho: ScalarField, A0ex: VectorField, rtol=1e-13) -> MeissnerState:
    g = rho.grid
    if not g.same(A0ex.grid):
        from .mesh import GridMismatchError
        raise GridMismatchError("rho and A0ex on different grids")
    _check_gauge(A0ex)
    ops = g.ops
    C, G = ops.curl, ops.grad
    rho2 = ScalarField(g, rho.values ** 2)
    w = link_weights(rho2)
    nf = g.size("face")
    a0 = A0ex.flat
    H0ex = VectorField(g, C @ a0, "edge")
    if not np.any(a0 != 0):
        z = VectorField(g, np.zeros(nf), "face")
        zs = ScalarField(g, np.zeros(g.n))
        ze = VectorField(g, np.zeros(g.size("edge")), "edge")
        return MeissnerState(rho, z, zs, ze, 0.0, ze, A0ex, H0ex)
    # Unknown W' = A - A0ex - grad(phi) in the gauge where phi is absorbed.  The
    # kernel {grad psi : psi constant on omega} is removed by penalizing the
    # divergence on exterior cells only, which vanishes at the true minimizer.
    ext = (~g.cell_mask).ravel().astype(float)
    M = (sp.diags(w) + C.T @ C + G @ sp.diags(ext) @ G.T).tocsr()
    Wp = _spd_solve(M, -w * a0, rtol=rtol)
    # back to the Coulomb gauge on the box
    psi = box_poisson(g, G.T @ Wp)
    A0 = VectorField(g, a0 + Wp - G @ psi, "face")
    phi0 = solve_phi(A0, rho2)
    B0 = recover_B(A0, phi0, rho2)
    red = (A0.flat - G @ phi0.flat) * g.face_mask
    cW = C @ (A0.flat - a0)
    J = 0.5 * g.dv * (np.sum(w * red ** 2) + np.sum(cW ** 2))
    state = MeissnerState(rho, A0, phi0, B0, float(J), VectorField(g, C @ A0.flat, "edge"),
                          A0ex, H0ex)
    log.info("minimize_J: J=%.10g EL residual=%.2e", J, euler_lagrange_residual(state))
    return state


def meissner_state(a, eps, ext, grid=None):
    """Convenience pipeline: solve rho, build A0ex, minimize J."""
    from .density import solve_rho
    grid = a.grid if grid is None else grid
    sol = solve_rho(a, eps)
    return minimize_J(sol.rho, coulomb_A0ex(ext, grid)), sol


# ------------------------------------------------------------------ checks


def euler_lagrange_residual(state: MeissnerState) -> float:
    """max |curl^T(H0 - H0ex) + chi_omega curl^T B0| / max |curl^T H0ex| over box faces."""
    g = state.grid
    C = g.ops.curl
    r = C.T @ (state.h0.flat - state.H0ex.flat) + C.T @ state.B0.flat
    scale = np.abs(C.T @ state.H0ex.flat).max() + np.abs(state.H0ex.flat).max() + 1e-300
    return float(np.abs(r).max() / scale)


def _rng(seed):
    return np.random.default_rng(seed)


def admissible_test_fields(grid: GridSpec, count=10, seed=0):
    """Random discrete divergence-free fields supported in omega: curl of
    face fields living on interior links (zero normal trace by construction)."""
    rng = _rng(seed)
    mask = grid.interior_face_mask
    C = grid.ops.curl
    out = []
    for _ in range(count):
        phi = np.zeros(grid.size("face"))
        phi[mask] = rng.standard_normal(int(mask.sum()))
        out.append(C @ phi)
    return out


def variational_residual(state: MeissnerState, count=10, seed=0) -> float:
    """max over test V of |<curl(curl B0 / rho^2) + B0 - H0ex, V>_omega| / (|H0ex| |V|)."""
    g = state.grid
    C = g.ops.curl
    w = state.weights
    em = g.edge_mask
    cb = C.T @ state.B0.flat
    q = np.zeros_like(cb)
    q[g.face_mask] = cb[g.face_mask] / w[g.face_mask]
    lhs = (C @ q + state.B0.flat - state.H0ex.flat) * em
    hn = np.sqrt(g.dv * np.sum(state.H0ex.flat[em] ** 2)) + 1e-300
    worst = 0.0
    for V in admissible_test_fields(g, count, seed):
        vn = np.sqrt(g.dv * np.sum(V ** 2)) + 1e-300
        worst = max(worst, abs(g.dv * np.dot(lhs, V)) / (hn * vn))
    return float(worst)


def orthogonality_residual(state_or_B, count=10, seed=0) -> float:
    """max over random zeta of |<curl B, grad zeta>_omega| / (|curl B| |grad zeta|)."""
    B = state_or_B.B0 if isinstance(state_or_B, MeissnerState) else state_or_B
    g = B.grid
    rng = _rng(seed)
    cb = (g.ops.curl.T @ B.flat) * g.face_mask
    nb = np.sqrt(g.dv * np.sum(cb ** 2))
    if nb == 0:
        return 0.0
    worst = 0.0
    for _ in range(count):
        z = rng.standard_normal(int(np.prod(g.n)))
        gz = (g.ops.grad @ z) * g.face_mask
        worst = max(worst, abs(g.dv * cb @ gz) / (nb * np.sqrt(g.dv * np.sum(gz ** 2))))
    return float(worst)


def system_residuals(state: MeissnerState) -> dict:
    """Residuals of the discrete optimality system for B0."""
    g = state.grid
    ops = g.ops
    B = state.B0.flat
    F = state.weights * state.reduced_potential
    scale = np.abs(F).max() + 1e-300
    div = ops.div @ B
    return {
        "div_B": float(np.abs(div[g.node_mask.ravel()]).max(initial=0.0) * g.h.min() / scale),
        "curl_B": float(np.abs(ops.curl.T @ B - F).max() / scale),
        "tangential_B": float(np.abs(B[~g.edge_mask]).max(initial=0.0)),
        "normal_curl_B": float(np.abs((ops.curl.T @ B)[~g.face_mask]).max(initial=0.0) / scale),
        "phi_mean": float(state.phi0.values[g.cell_mask].mean()),
    }


@dataclass(frozen=True)
class RegularityReport:
    w1q: dict
    holder: dict
    h_l3: float
    ratios: dict
    tangential_trace: float
    sup_norm: float


def _cell_B(state):
    g = state.grid
    return edge_to_cells(g, state.B0.flat)


def regularity_report(state: MeissnerState) -> RegularityReport:
    g = state.grid
    m = g.cell_mask
    Bc = _cell_B(state)  # (3, n0, n1, n2)
    mag = np.sqrt((Bc ** 2).sum(axis=0))
    sup = float(mag[m].max()) if m.any() else 0.0
    dv = g.dv
    # finite-difference gradient between omega cells
    grads = []
    for k in range(3):
        sl0 = [slice(None)] * 3
        sl1 = [slice(None)] * 3
        sl0[k], sl1[k] = slice(0, -1), slice(1, None)
        pair = m[tuple(sl0)] & m[tuple(sl1)]
        d = (Bc[(slice(None),) + tuple(sl1)] - Bc[(slice(None),) + tuple(sl0)]) / g.h[k]
        grads.append((np.sqrt((d ** 2).sum(axis=0)), pair))
    w1q = {}
    for q in (2, 4, 6):
        tot = dv * np.sum(mag[m] ** q)
        for gm, pair in grads:
            tot += dv * np.sum(gm[pair] ** q)
        w1q[q] = float(tot ** (1.0 / q))
    holder = {}
    for gamma in (0.5, 0.9):
        best = 0.0
        for k in range(3):
            s = 1
            while s < g.n[k]:
                sl0 = [slice(None)] * 3
                sl1 = [slice(None)] * 3
                sl0[k], sl1[k] = slice(0, -s), slice(s, None)
                pair = m[tuple(sl0)] & m[tuple(sl1)]
                if pair.any():
                    diff = Bc[(slice(None),) + tuple(sl1)] - Bc[(slice(None),) + tuple(sl0)]
                    q = np.sqrt((diff ** 2).sum(axis=0))[pair].max() / (s * g.h[k]) ** gamma
                    best = max(best, float(q))
                s *= 2
        holder[gamma] = max(best, sup)
    Hc = edge_to_cells(g, state.H0ex.flat)
    hl3 = float((dv * np.sum(np.sqrt((Hc ** 2).sum(axis=0))[m] ** 3)) ** (1 / 3))
    ratios = {f"W1,{q}": (v / hl3 if hl3 > 0 else 0.0) for q, v in w1q.items()}
    ratios.update({f"C0,{gm}": (v / hl3 if hl3 > 0 else 0.0) for gm, v in holder.items()})
    # tangential trace on the boundary layer of omega
    bc = g.boundary_cells & m
    tang = 0.0
    if bc.any() and sup > 0:
        x = g.cell_centers()[bc]
        eps_fd = 0.5 * g.h.min()
        nrm = np.stack([(g.omega.sdf(x + eps_fd * e) - g.omega.sdf(x - eps_fd * e)) for e in np.eye(3)], -1)
        nrm /= np.maximum(np.linalg.norm(nrm, axis=-1, keepdims=True), 1e-300)
        Bb = Bc[:, bc].T
        tang = float(np.linalg.norm(np.cross(Bb, nrm), axis=-1).max())
    return RegularityReport(w1q, holder, hl3, ratios, tang, sup)
