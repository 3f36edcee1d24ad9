"""Ginzburg-Landau energies, vorticity and the Meissner energy splitting.

All energies use link variables: on the link l from cell i to cell j along
axis k (length h_k) the transported value is X = u_j exp(-i h_k A_l), Y = u_i
and |grad_A u|^2 is sampled as |X - Y|^2 / h_k^2.  This keeps every energy
exactly gauge invariant on the lattice.  Omega integrals run over the omega
cells / links / plaquettes of the grid, the magnetic integral over the whole
computational box.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .mesh import (ComplexField, GridMismatchError, ScalarField, StaggeringError, VectorField,
                   link_endpoints)


@dataclass(frozen=True, eq=False)
class Configuration:
    u: ComplexField
    A: VectorField
    h_ex: float = 0.0

    def __post_init__(self):
        if not self.u.grid.same(self.A.grid):
            raise GridMismatchError("u and A live on different grids")
        if self.A.location != "face":
            raise StaggeringError("A must be a face field")
        if self.h_ex < 0:
            raise ValueError("h_ex must be nonnegative")

    @property
    def grid(self):
        return self.u.grid


@dataclass(frozen=True)
class EnergyBreakdown:
    total: float
    meissner_term: float
    free_energy: float
    exterior_term: float
    coupling_term: float
    remainder: float
    lattice_term: float = 0.0

    def reconstructed(self):
        return (self.meissner_term + self.free_energy + self.exterior_term
                - self.coupling_term + self.remainder + self.lattice_term)

    def residual(self):
        """|total - reconstruction| / (1 + |total|)."""
        return abs(self.total - self.reconstructed()) / (1.0 + abs(self.total))

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


# ------------------------------------------------------------------ links


def _links(u: np.ndarray, a: np.ndarray, grid):
    """(X, Y, hk) on omega links."""
    t, hd = link_endpoints(grid)
    m = grid.face_mask
    hk = grid.ops.face_len[m]
    X = u[hd[m]] * np.exp(-1j * hk * a[m])
    Y = u[t[m]]
    return X, Y, hk


def _link_rho(rho_flat, grid):
    t, hd = link_endpoints(grid)
    m = grid.face_mask
    return rho_flat[t[m]] * rho_flat[hd[m]]


def _check(*objs):
    g = objs[0].grid
    for o in objs[1:]:
        if o is not None and not g.same(o.grid):
            raise GridMismatchError("inputs live on different grids")


def supercurrent(u: ComplexField, A: VectorField) -> np.ndarray:
    """(iu, grad_A u) on omega links, Im(X conj Y)/h_k; zero off omega (face layout)."""
    _check(u, A)
    g = u.grid
    X, Y, hk = _links(u.flat, A.flat, g)
    j = np.zeros(g.size("face"))
    j[g.face_mask] = np.imag(X * np.conj(Y)) / hk
    return j


def vorticity(u: ComplexField, A: VectorField) -> VectorField:
    """mu = curl(j + A) on edges; exactly divergence-free as a discrete curl."""
    j = supercurrent(u, A)
    g = u.grid
    return VectorField(g, g.ops.curl @ (j + A.flat), "edge")


# ------------------------------------------------------------------ energies


def gl_energy(cfg: Configuration, a: ScalarField, eps: float, Hex: VectorField | None = None,
              parts=False):
    """GL energy of cfg; the applied field is cfg.h_ex * Hex (Hex of unit intensity)."""
    g = cfg.grid
    _check(cfg.u, a, Hex)
    v = g.dv
    X, Y, hk = _links(cfg.u.flat, cfg.A.flat, g)
    kin = 0.5 * v * np.sum(np.abs(X - Y) ** 2 / hk ** 2)
    m = g.cell_mask.ravel()
    pot = v * np.sum((a.flat[m] - np.abs(cfg.u.flat[m]) ** 2) ** 2) / (4 * eps ** 2)
    b = g.ops.curl @ cfg.A.flat
    if Hex is not None:
        if Hex.location != "edge":
            raise StaggeringError("Hex must be an edge field")
        b = b - cfg.h_ex * Hex.flat
    mag = 0.5 * v * np.sum(b ** 2)
    if parts:
        return {"kinetic": kin, "potential": pot, "magnetic": mag, "total": kin + pot + mag}
    return kin + pot + mag


def _free(u, A, rho_flat, eps):
    g = u.grid
    v = g.dv
    X, Y, hk = _links(u.flat, A.flat, g)
    w = _link_rho(rho_flat, g)
    m = g.cell_mask.ravel()
    r = rho_flat[m]
    kin = 0.5 * v * np.sum(w * np.abs(X - Y) ** 2 / hk ** 2)
    pot = v * np.sum(r ** 4 * (1 - np.abs(u.flat[m]) ** 2) ** 2) / (4 * eps ** 2)
    b = (g.ops.curl @ A.flat)[g.edge_mask]
    return kin + pot + 0.5 * v * np.sum(b ** 2)


def free_energy(u: ComplexField, A: VectorField, eps: float) -> float:
    """Homogeneous free energy F_eps within omega."""
    _check(u, A)
    return _free(u, A, np.ones(int(np.prod(u.grid.n))), eps)


def free_energy_weighted(u: ComplexField, A: VectorField, rho: ScalarField, eps: float) -> float:
    """F_{eps,rho}: link weight rho_i rho_j on |grad_A u|^2, rho^4 on the potential."""
    _check(u, A, rho)
    return _free(u, A, rho.flat, eps)


def exterior_energy(A: VectorField) -> float:
    g = A.grid
    b = (g.ops.curl @ A.flat)[~g.edge_mask]
    return 0.5 * g.dv * np.sum(b ** 2)


# ------------------------------------------------------------------ splitting


class InvalidStateError(ValueError):
    pass


def meissner_configuration(state, h_ex: float) -> Configuration:
    g = state.grid
    u = state.rho.values * np.exp(1j * h_ex * state.phi0.values)
    return Configuration(ComplexField(g, u), VectorField(g, h_ex * state.A0.flat, "face"), h_ex)


def to_split_variables(cfg: Configuration, state):
    """(u, A) with cfg = (rho u e^{i h phi0}, A + h A0)."""
    g = cfg.grid
    h = cfg.h_ex
    u = cfg.u.values * np.exp(-1j * h * state.phi0.values) / state.rho.values
    A = cfg.A.flat - h * state.A0.flat
    return ComplexField(g, u), VectorField(g, A, "face")


def from_split_variables(u: ComplexField, A: VectorField, state, h_ex: float) -> Configuration:
    g = u.grid
    U = state.rho.values * u.values * np.exp(1j * h_ex * state.phi0.values)
    return Configuration(ComplexField(g, U), VectorField(g, A.flat + h_ex * state.A0.flat, "face"), h_ex)


def remainder_r(u: ComplexField, state, h_ex: float, eps: float | None = None) -> float:
    """(h^2/2) sum_omega w |A0 - grad phi0|^2 (|u|^2 - 1), |u|^2 averaged on each link.

    On links w |A0 - grad phi0|^2 = |curl^T B0|^2 / w, the discrete |curl B0|^2 / rho^2.
    """
    g = u.grid
    t, hd = link_endpoints(g)
    m = g.face_mask
    w = state.weights[m]
    at = state.reduced_potential[m]
    s = np.abs(u.flat) ** 2
    ml = 0.5 * (s[t[m]] + s[hd[m]])
    return 0.5 * h_ex ** 2 * g.dv * np.sum(w * at ** 2 * (ml - 1.0))


def coupling_term(u: ComplexField, A: VectorField, state, h_ex: float) -> float:
    """h_ex * integral over omega of mu(u,A) . B0."""
    g = u.grid
    mu = vorticity(u, A).flat
    em = g.edge_mask
    return h_ex * g.dv * np.dot(mu[em], state.B0.flat[em])


def coupling_by_parts(u: ComplexField, A: VectorField, state, h_ex: float) -> float:
    """h_ex * integral over omega of ((iu, grad_A u) + A) . curl B0."""
    g = u.grid
    j = supercurrent(u, A)
    cb = g.ops.curl.T @ state.B0.flat
    m = g.face_mask
    return h_ex * g.dv * np.dot((j + A.flat)[m], cb[m])


def lattice_term(u: ComplexField, A: VectorField, state, h_ex: float) -> float:
    """Closed-form lattice correction of the splitting.

    With theta = h_ex h_k (A0 - grad phi0) and Z = X conj(Y) on each omega link it
    equals sum v w / h_k^2 [(Re Z - 1)(1 - cos theta) - (sin theta - theta) Im Z] - r.
    It is O(h^2 + theta^4) for smooth fields and vanishes when h_ex = 0.
    """
    g = u.grid
    m = g.face_mask
    X, Y, hk = _links(u.flat, A.flat, g)
    Z = X * np.conj(Y)
    w = state.weights[m]
    th = h_ex * hk * state.reduced_potential[m]
    one_m_cos = 2.0 * np.sin(0.5 * th) ** 2
    bracket = (Z.real - 1.0) * one_m_cos - (np.sin(th) - th) * Z.imag
    return g.dv * np.sum(w * bracket / hk ** 2) - remainder_r(u, state, h_ex)


def split_energy(cfg: Configuration, state, a: ScalarField, eps: float) -> EnergyBreakdown:
    g = cfg.grid
    _check(cfg.u, state.rho, a)
    m = g.cell_mask
    av = a.values[m]
    floor = np.sqrt(av.min()) / 2
    if np.any(state.rho.values[m] < floor):
        raise InvalidStateError("rho drops below sqrt(b)/2: state inconsistent with pinning")
    h = cfg.h_ex
    u, A = to_split_variables(cfg, state)
    total = gl_energy(cfg, a, eps, state.H0ex)
    meis = gl_energy(meissner_configuration(state, h), a, eps, state.H0ex)
    return EnergyBreakdown(
        total=float(total),
        meissner_term=float(meis),
        free_energy=float(free_energy_weighted(u, A, state.rho, eps)),
        exterior_term=float(exterior_energy(A)),
        coupling_term=float(coupling_term(u, A, state, h)),
        remainder=float(remainder_r(u, state, h, eps)),
        lattice_term=float(lattice_term(u, A, state, h)),
    )


# ------------------------------------------------------------------ gradients


def gl_energy_grad(u: np.ndarray, A: np.ndarray, grid, a: np.ndarray, eps: float,
                   H: np.ndarray | None):
    """Energy and gradients for flat arrays; H is the full applied edge field.

    The u-gradient is dE/dRe u + i dE/dIm u.
    """
    v = grid.dv
    t, hd = link_endpoints(grid)
    fm = grid.face_mask
    hk = grid.ops.face_len[fm]
    ti, hi = t[fm], hd[fm]
    ph = np.exp(-1j * hk * A[fm])
    X = u[hi] * ph
    Y = u[ti]
    z = X - Y
    kin = 0.5 * v * np.sum(np.abs(z) ** 2 / hk ** 2)
    gu = np.zeros_like(u)
    c = v * z / hk ** 2
    np.add.at(gu, hi, c * np.conj(ph))
    np.add.at(gu, ti, -c)
    gA = np.zeros_like(A)
    gA[fm] = -v * np.imag(X * np.conj(Y)) / hk
    m = grid.cell_mask.ravel()
    s = np.abs(u[m]) ** 2
    d = a[m] - s
    pot = v * np.sum(d ** 2) / (4 * eps ** 2)
    gu[m] += -v * d * u[m] / eps ** 2
    C = grid.ops.curl
    b = C @ A
    if H is not None:
        b = b - H
    mag = 0.5 * v * np.sum(b ** 2)
    gA += v * (C.T @ b)
    return kin + pot + mag, gu, gA


def random_configuration(grid, rng, h_ex=0.0, smooth=False) -> Configuration:
    """Test configuration: white noise, or a smooth modulated phase with a polynomial A."""
    if smooth:
        x = grid.cell_centers()
        k = rng.normal(size=3)
        u = np.exp(1j * (x @ k + x[..., 1] * x[..., 2])) * (0.9 + 0.1 * np.cos(x[..., 2]))
        c = rng.normal(size=3) * 0.3
        A = VectorField.from_function(
            grid, lambda p: np.stack([c[0] * p[..., 1], c[1] * p[..., 2] ** 2, c[2] * p[..., 0]], -1))
        return Configuration(ComplexField(grid, u), A, h_ex)
    u = rng.normal(size=grid.n) + 1j * rng.normal(size=grid.n)
    A = rng.normal(size=grid.size("face"))
    return Configuration(ComplexField(grid, u), VectorField(grid, A), h_ex)
