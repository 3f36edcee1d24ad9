"""Vortex filament detection at fixed eps.

Pipeline: pick a cubic grid of side delta whose 1-skeleton avoids the vortex
cores (|u| > 5/8 on every cube edge), extract face vortices by winding numbers,
join entry and exit points inside every cube by a minimal connection, close
the leftover points in the region outside the cubes through the boundary, and
collect everything into a polyhedral current nu carrying 2*pi per unit degree.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment

from .isoflux import PolyCurrent, weighted_mass
from .mesh import (ComplexField, GridSpec, ScalarField, VectorField, edge_to_cells,
                   extend_from_omega, link_endpoints, sample_vector, trilinear)

log = logging.getLogger(__name__)

TWO_PI = 2 * np.pi
EDGE_FLOOR = 5 / 8
CORE_LEVEL = 0.5


class DetectionError(RuntimeError):
    pass


class InvariantError(AssertionError):
    pass


# ------------------------------------------------------------------ energy density


def energy_density(u: ComplexField, A: VectorField, rho: ScalarField | None, eps: float):
    """Cell density of F_{eps,rho} (kinetic + potential + magnetic within omega)."""
    g = u.grid
    t, hd = link_endpoints(g)
    m = g.face_mask
    hk = g.ops.face_len[m]
    uf = u.flat
    r = np.ones(uf.shape) if rho is None else rho.flat
    X = uf[hd[m]] * np.exp(-1j * hk * A.flat[m])
    Y = uf[t[m]]
    link = 0.25 * r[t[m]] * r[hd[m]] * np.abs(X - Y) ** 2 / hk ** 2
    dens = np.bincount(t[m], link, minlength=uf.size) + np.bincount(hd[m], link, minlength=uf.size)
    cm = g.cell_mask.ravel()
    dens[cm] += r[cm] ** 4 * (1 - np.abs(uf[cm]) ** 2) ** 2 / (4 * eps ** 2)
    b = g.ops.curl @ A.flat
    b2 = np.where(g.edge_mask, 0.5 * b ** 2, 0.0)
    dens += edge_to_cells(g, b2).sum(axis=0).ravel()
    return dens.reshape(g.n)


# ------------------------------------------------------------------ faces


@dataclass(frozen=True)
class Face:
    """Square face of side ``size`` spanned by unit axes s, t from ``origin``.

    The orienting normal is s x t; degrees are counted counterclockwise in (s, t).
    """

    origin: tuple
    axis_s: tuple
    axis_t: tuple
    size: float
    samples: int

    def points(self):
        a = np.linspace(0.0, self.size, self.samples)
        S, T = np.meshgrid(a, a, indexing="ij")
        return (np.asarray(self.origin) + S[..., None] * np.asarray(self.axis_s)
                + T[..., None] * np.asarray(self.axis_t))

    @property
    def spacing(self):
        return self.size / (self.samples - 1)

    @property
    def normal(self):
        return tuple(np.cross(self.axis_s, self.axis_t))


@dataclass(frozen=True)
class FaceVortex:
    face: int
    centroid: np.ndarray
    degree: int
    radius: float = 0.0


def _wrap(z1, z0):
    return np.angle(z1 * np.conj(z0))


def plaquette_phase(vals):
    """Sum of wrapped phase increments around every sample plaquette (counterclockwise in s, t).

    Shared edges cancel exactly, so sums over a region give 2 pi times the
    winding along its outer contour even when single plaquettes touch a zero.
    """
    c00, c10 = vals[:-1, :-1], vals[1:, :-1]
    c11, c01 = vals[1:, 1:], vals[:-1, 1:]
    return _wrap(c10, c00) + _wrap(c11, c10) + _wrap(c01, c11) + _wrap(c00, c01)


def plaquette_winding(vals):
    """Integer winding of every sample plaquette."""
    return np.rint(plaquette_phase(vals) / TWO_PI).astype(np.int64)


def _components(vals, level=CORE_LEVEL, valid=None):
    """Label low-modulus components (8-connected), seeded also by winding plaquettes.

    With ``valid`` only plaquettes whose four corners are valid samples count.
    """
    wind = plaquette_phase(vals)
    low = np.abs(vals) <= level
    if valid is not None:
        full = valid[:-1, :-1] & valid[1:, :-1] & valid[1:, 1:] & valid[:-1, 1:]
        wind = np.where(full, wind, 0.0)
        low &= valid
    seed = np.zeros(vals.shape, dtype=bool)
    nz = np.abs(wind) > np.pi
    for di in (0, 1):
        for dj in (0, 1):
            seed[di:di + nz.shape[0], dj:dj + nz.shape[1]] |= nz
    lab, nlab = ndimage.label(low | seed, structure=np.ones((3, 3)))
    return lab, nlab, wind


def face_vortices(vals, face: Face | None = None, face_id=-1, check_boundary=True):
    """Vortices of u sampled on a face lattice (2D complex array)."""
    vals = np.asarray(vals)
    if face is None:
        n = vals.shape[0]
        face = Face((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), 1.0, n)
    if check_boundary:
        rim = np.concatenate([vals[0], vals[-1], vals[:, 0], vals[:, -1]])
        if np.abs(rim).min() <= EDGE_FLOOR:
            raise DetectionError(
                f"|u| = {np.abs(rim).min():.3f} <= 5/8 on the boundary of face {face_id}")
    lab, nlab, wind = _components(vals)
    if nlab == 0:
        return []
    # plaquette -> component through any labelled corner (components never share plaquettes)
    corner = np.stack([lab[:-1, :-1], lab[1:, :-1], lab[1:, 1:], lab[:-1, 1:]]).max(axis=0)
    deg = np.bincount(corner.ravel(), wind.ravel(), minlength=nlab + 1) / TWO_PI
    out = []
    ds = face.spacing
    idx = np.indices(vals.shape)
    for c in range(1, nlab + 1):
        d = int(round(deg[c]))
        if d == 0:
            continue
        sel = lab == c
        a, b = idx[0][sel] * ds, idx[1][sel] * ds
        ca, cb = a.mean(), b.mean()
        rad = float(np.sqrt(((a - ca) ** 2 + (b - cb) ** 2).max())) + ds
        cen = (np.asarray(face.origin) + ca * np.asarray(face.axis_s)
               + cb * np.asarray(face.axis_t))
        out.append(FaceVortex(face_id, cen, d, rad))
    return out


# ------------------------------------------------------------------ detection grid


_FACE_AXES = {0: (1, 2), 1: (2, 0), 2: (0, 1)}


@dataclass(frozen=True, eq=False)
class DetectionGrid:
    offset: np.ndarray
    delta: float
    cubes: np.ndarray  # (K, 3) integer cube indices, cube = offset + delta * [i, i + 1]
    shape: tuple
    retained: np.ndarray  # boolean over the cube lattice
    theta_cells: np.ndarray  # omega cells outside every retained cube
    edge_min: float
    edge_energy: float
    face_energy: float
    total_energy: float
    samples: int
    candidates_tried: int

    @property
    def budget_constants(self):
        F = self.total_energy
        if F <= 0:
            return 0.0, 0.0
        return self.edge_energy * self.delta ** 2 / F, self.face_energy * self.delta / F

    def corner(self, idx):
        return self.offset + self.delta * np.asarray(idx, float)


def _cube_lattice(grid, offset, delta):
    lo, hi = grid.omega.bounds()
    K = np.ceil((np.asarray(hi) - offset) / delta).astype(int) + 1
    K = np.maximum(K, 1)
    # probe corners, edge midpoints and face centres of every cube
    probe = np.array(list(itertools.product((0.0, 0.5, 1.0), repeat=3)))
    idx = np.stack(np.meshgrid(*[np.arange(k) for k in K], indexing="ij"), -1).reshape(-1, 3)
    pts = offset + delta * (idx[:, None, :] + probe[None])
    inside = (grid.omega.sdf(pts) < 0).all(axis=1)
    return inside.reshape(tuple(K)), tuple(K)


def _edges_and_faces(Q):
    """Unique skeleton edges (k, i, j, l) and faces (normal, i, j, l) of retained cubes."""
    K = Q.shape
    P = np.pad(Q, 1)
    faces, bfaces = [], []
    for k in range(3):
        lo = [slice(1, 1 + K[a] + (a == k)) for a in range(3)]
        lo_prev = list(lo)
        lo_prev[k] = slice(0, K[k] + 1)
        cur = P[tuple(lo)]            # cube on the high side of the face
        prev = P[tuple(lo_prev)]      # cube on the low side
        any_ = cur | prev
        one = cur ^ prev
        for p in np.argwhere(any_):
            faces.append((k, *p))
        for p in np.argwhere(one):
            # +1: union lies on the low side, so the face normal (+k) points outward
            bfaces.append((k, *p, 1 if prev[tuple(p)] else -1))
    edges = []
    for k in range(3):
        a, b = [x for x in range(3) if x != k]
        acc = np.zeros(tuple(K[x] + (x != k) for x in range(3)), dtype=bool)
        for sa in (0, 1):
            for sb in (0, 1):
                sl = [slice(1, 1 + K[x] + (x != k)) for x in range(3)]
                sl[a] = slice(1 - sa, 1 - sa + K[a] + 1)
                sl[b] = slice(1 - sb, 1 - sb + K[b] + 1)
                acc |= P[tuple(sl)]
        for p in np.argwhere(acc):
            edges.append((k, *p))
    return (np.array(edges, dtype=np.int64).reshape(-1, 4), np.array(faces, dtype=np.int64).reshape(-1, 4),
            np.array(bfaces, dtype=np.int64).reshape(-1, 5))


def _face_geometry(offset, delta, f, m):
    k, p = int(f[0]), np.asarray(f[1:4])
    s, t = _FACE_AXES[k]
    e = np.eye(3)
    return Face(tuple(offset + delta * p), tuple(e[s]), tuple(e[t]), delta, m)


def _sample_u(grid, uext, pts):
    return trilinear(grid.lattice_axes("cell"), uext, pts)


def _skeleton(grid, uext, dens, offset, delta, m):
    Q, K = _cube_lattice(grid, offset, delta)
    if not Q.any():
        return None
    edges, faces, _ = _edges_and_faces(Q)
    a = np.linspace(0.0, 1.0, m)
    e = np.eye(3)
    ep = offset + delta * (edges[:, None, 1:4] + a[None, :, None] * e[edges[:, 0]][:, None, :])
    umin = float(np.abs(_sample_u(grid, uext, ep)).min())
    axes = grid.lattice_axes("cell")
    w = np.full(m, 1.0)
    w[[0, -1]] = 0.5
    w *= delta / (m - 1)
    E_edge = float(np.sum(trilinear(axes, dens, ep) * w[None]))
    S, T = np.meshgrid(a, a, indexing="ij")
    fs = np.array([_FACE_AXES[k][0] for k in faces[:, 0]])
    ft = np.array([_FACE_AXES[k][1] for k in faces[:, 0]])
    fp = (offset + delta * (faces[:, None, None, 1:4] + S[None, ..., None] * e[fs][:, None, None, :]
                            + T[None, ..., None] * e[ft][:, None, None, :]))
    E_face = float(np.sum(trilinear(axes, dens, fp) * (w[:, None] * w[None, :])[None]))
    return Q, K, umin, E_edge, E_face


def choose_grid(u: ComplexField, A: VectorField, rho: ScalarField | None, eps: float,
                delta: float, per_axis=4, samples=None) -> DetectionGrid:
    """Deterministic scan of per_axis**3 offsets; keep the admissible one of least skeleton energy."""
    g = u.grid
    hmax = float(np.max(g.h))
    if delta < 4 * hmax - 1e-12:
        raise ValueError(f"delta = {delta} below 4h = {4 * hmax}")
    m = samples or int(math.ceil(2 * delta / float(np.min(g.h)))) + 1
    uext = extend_from_omega(g, u.values)
    dens = energy_density(u, A, rho, eps)
    F = float(g.dv * dens[g.cell_mask].sum())
    dens = extend_from_omega(g, dens)
    lo, _ = g.omega.bounds()
    best, tried, best_umin = None, 0, -1.0
    for ijk in itertools.product(range(per_axis), repeat=3):
        off = np.asarray(lo, float) + delta * np.asarray(ijk) / per_axis
        sk = _skeleton(g, uext, dens, off, delta, m)
        tried += 1
        if sk is None:
            continue
        Q, K, umin, Ee, Ef = sk
        best_umin = max(best_umin, umin)
        if umin <= EDGE_FLOOR:
            continue
        if best is None or Ee + Ef < best[3] + best[4]:
            best = (off, Q, K, Ee, Ef, umin)
    if best is None:
        raise DetectionError(
            f"no offset keeps |u| > 5/8 on the cube edges (best min |u| = {best_umin:.3f}); "
            "refine the grid or enlarge delta")
    off, Q, K, Ee, Ef, umin = best
    cubes = np.argwhere(Q)
    # omega cells not covered by a retained cube
    cc = g.cell_centers()
    ci = np.floor((cc - off) / delta).astype(int)
    ok = np.all((ci >= 0) & (ci < np.asarray(K)), axis=-1)
    covered = np.zeros(g.n, dtype=bool)
    covered[ok] = Q[tuple(ci[ok].T)]
    theta = g.raw_cell_mask & ~covered
    return DetectionGrid(off, float(delta), cubes, K, Q, theta, umin, Ee, Ef, F, m, tried)


# ------------------------------------------------------------------ minimal connection


def _expand(points, degrees=None):
    pts = np.asarray(points, float).reshape(-1, 3)
    if degrees is None:
        return pts
    reps = np.abs(np.asarray(degrees, dtype=np.int64))
    return np.repeat(pts, reps, axis=0)


def minimal_connection(plus_points, minus_points, geometry="within-cube", omega=None,
                       weight=TWO_PI):
    """Min-cost pairing of + to - points; segments run from + to -.

    through-boundary: a point may instead be sent to its nearest boundary point
    (+ p gives p -> proj p, - q gives proj q -> q).
    """
    P = np.asarray(plus_points, float).reshape(-1, 3)
    M = np.asarray(minus_points, float).reshape(-1, 3)
    if geometry not in ("within-cube", "through-boundary"):
        raise ValueError(f"unknown geometry {geometry!r}")
    if geometry == "within-cube" and len(P) != len(M):
        raise DetectionError(f"unbalanced cube: {len(P)} plus vs {len(M)} minus points")
    if len(P) == 0 and len(M) == 0:
        return PolyCurrent.empty(weight)
    D = np.linalg.norm(P[:, None, :] - M[None, :, :], axis=-1)
    segs = []
    if geometry == "within-cube":
        r, c = linear_sum_assignment(D)
        segs = [np.r_[P[i], M[j]] for i, j in zip(r, c)]
    else:
        if omega is None:
            raise ValueError("through-boundary connection needs the domain")
        pp = omega.project(P) if len(P) else P
        pm = omega.project(M) if len(M) else M
        dp = np.linalg.norm(P - pp, axis=1)
        dm = np.linalg.norm(M - pm, axis=1)
        nP, nM = len(P), len(M)
        big = 1e6 * (1.0 + D.max(initial=0.0) + dp.max(initial=0.0) + dm.max(initial=0.0))
        C = np.full((nP + nM, nM + nP), big)
        C[:nP, :nM] = D
        C[:nP, nM:][np.arange(nP), np.arange(nP)] = dp
        C[nP:, :nM][np.arange(nM), np.arange(nM)] = dm
        C[nP:, nM:] = 0.0
        r, c = linear_sum_assignment(C)
        for i, j in zip(r, c):
            if i < nP and j < nM:
                segs.append(np.r_[P[i], M[j]])
            elif i < nP:
                segs.append(np.r_[P[i], pp[i]])
            elif j < nM:
                segs.append(np.r_[pm[j], M[j]])
    segs = [s for s in segs if np.linalg.norm(s[3:] - s[:3]) > 1e-14]
    if not segs:
        return PolyCurrent.empty(weight)
    kind = "mixed" if geometry == "through-boundary" else "mixed"
    return PolyCurrent(np.array(segs), np.ones(len(segs), dtype=np.int64), weight, kind)


def connection_cost(current: PolyCurrent):
    return float(np.sum(current.lengths)) if len(current) else 0.0


# ------------------------------------------------------------------ assembly


@dataclass(frozen=True, eq=False)
class VortexApproximation:
    nu: PolyCurrent
    support_cells: np.ndarray
    mass: float
    weighted_mass: float
    vortices: list = field(default_factory=list)
    grid: DetectionGrid | None = None
    cubes_used: int = 0
    closed: bool = True
    open_ends: dict = field(default_factory=dict)

    @property
    def length(self):
        return self.mass / TWO_PI


def relative_boundary(nu: PolyCurrent, omega, tol=1e-9):
    """Endpoints of nu not cancelled and not lying on the boundary of omega."""
    b = nu.boundary()
    out = {}
    for p, m in b.items():
        if abs(float(omega.sdf(np.asarray(p)))) > tol:
            out[p] = m
    return out


def assemble_nu(u: ComplexField, A: VectorField, rho: ScalarField | None, eps: float,
                delta: float, dgrid: DetectionGrid | None = None) -> VortexApproximation:
    g = u.grid
    dg = dgrid or choose_grid(u, A, rho, eps, delta)
    uext = extend_from_omega(g, u.values)
    edges, faces, bfaces = _edges_and_faces(dg.retained)
    fid = {tuple(f): i for i, f in enumerate(faces)}
    vort = []
    by_face = {}
    for i, f in enumerate(faces):
        fc = _face_geometry(dg.offset, dg.delta, f, dg.samples)
        vals = _sample_u(g, uext, fc.points())
        vs = face_vortices(vals, fc, i)
        if vs:
            by_face[i] = vs
            vort.extend(vs)
    nu = PolyCurrent.empty()
    used = np.zeros(dg.shape, dtype=bool)
    for c in dg.cubes:
        plus, minus, diag = [], [], []
        for k in range(3):
            for side, sign in ((0, -1), (1, 1)):
                p = c.copy()
                p[k] += side
                i = fid[(k, *p)]
                for v in by_face.get(i, []):
                    out = sign * v.degree
                    diag.append((k, side, out))
                    # entry (inward degree > 0) is a plus point, exit a minus point
                    (plus if out < 0 else minus).extend([v.centroid] * abs(out))
        if len(plus) != len(minus):
            raise DetectionError(f"degree imbalance in cube {tuple(c)}: faces {diag}")
        if plus:
            used[tuple(c)] = True
            nu = nu.concat(minimal_connection(plus, minus, "within-cube"))
    # region outside the cubes: entries are union-outward vortices on the cube-union boundary
    plus, minus = [], []
    for bf in bfaces:
        i = fid[tuple(bf[:4])]
        for v in by_face.get(i, []):
            out = int(bf[4]) * v.degree
            (plus if out > 0 else minus).extend([v.centroid] * abs(out))
    theta_used = bool(plus or minus)
    if theta_used:
        nu = nu.concat(minimal_connection(plus, minus, "through-boundary", g.omega))
    if len(nu):
        nu = PolyCurrent(nu.segments, nu.mult, TWO_PI, "mixed")
    # support set S_nu
    cc = g.cell_centers()
    ci = np.floor((cc - dg.offset) / dg.delta).astype(int)
    ok = np.all((ci >= 0) & (ci < np.asarray(dg.shape)), axis=-1)
    support = np.zeros(g.n, dtype=bool)
    support[ok] = used[tuple(ci[ok].T)]
    support &= g.raw_cell_mask
    if theta_used:
        support |= dg.theta_cells
    mass = nu.mass()
    if len(nu):
        eta = ScalarField(g, (rho.values ** 2) if rho is not None else np.ones(g.n))
        wm = weighted_mass(nu, eta)
    else:
        wm = 0.0
    hmax = float(np.max(g.h))
    ends = relative_boundary(nu, g.omega, tol=1e-6 * hmax)
    return VortexApproximation(nu, support, mass, wm, vort, dg, int(used.sum()), not ends, ends)


def segments_inside_support(approx: VortexApproximation, grid: GridSpec, samples=5):
    """Fraction of sample points of nu (interior of segments) inside S_nu cells (dilated by one cell)."""
    if len(approx.nu) == 0:
        return 1.0
    s = approx.nu.segments
    t = np.linspace(0.05, 0.95, samples)
    pts = s[:, None, :3] + t[None, :, None] * (s[:, None, 3:] - s[:, None, :3])
    sup = ndimage.binary_dilation(approx.support_cells, iterations=1)
    ci = np.floor((pts.reshape(-1, 3) - np.asarray(grid.box_min)) / grid.h).astype(int)
    ci = np.clip(ci, 0, np.asarray(grid.n) - 1)
    return float(sup[tuple(ci.T)].mean())


def hausdorff_to_line(current: PolyCurrent, point, direction, omega=None, samples=9):
    """Hausdorff distance between nu and a straight line clipped to omega (sampled)."""
    d = np.asarray(direction, float)
    d /= np.linalg.norm(d)
    p0 = np.asarray(point, float)
    s = current.segments
    t = np.linspace(0, 1, samples)
    pts = (s[:, None, :3] + t[None, :, None] * (s[:, None, 3:] - s[:, None, :3])).reshape(-1, 3)
    rel = pts - p0
    d1 = np.linalg.norm(rel - (rel @ d)[:, None] * d, axis=1).max()
    # line samples inside omega to the current
    L = np.linspace(-10, 10, 4001)
    lp = p0 + L[:, None] * d
    if omega is not None:
        lp = lp[omega.sdf(lp) < 0]
    a, b = s[:, :3], s[:, 3:]
    ab = b - a
    tt = np.clip(np.einsum("pmk,mk->pm", lp[:, None, :] - a[None], ab) / np.sum(ab * ab, 1), 0, 1)
    proj = a[None] + tt[..., None] * ab[None]
    d2 = np.linalg.norm(lp[:, None, :] - proj, axis=-1).min(axis=1).max()
    return float(max(d1, d2))


# ------------------------------------------------------------------ 2D vorticity estimate


def _face_energy(vals, eps, ds):
    dx = np.abs(np.diff(vals, axis=0)) ** 2 / ds ** 2
    dy = np.abs(np.diff(vals, axis=1)) ** 2 / ds ** 2
    pot = (1 - np.abs(vals) ** 2) ** 2 / (4 * eps ** 2)
    F = ds * ds * (0.5 * dx.sum() + 0.5 * dy.sum() + pot.sum())
    rim = np.concatenate([vals[0], vals[-1], vals[:, 0], vals[:, -1]])
    Fb = ds * float(((1 - np.abs(rim) ** 2) ** 2).sum()) / (4 * eps ** 2)
    for side in (vals[0], vals[-1], vals[:, 0], vals[:, -1]):
        Fb += 0.5 * float((np.abs(np.diff(side)) ** 2).sum()) / ds
    return float(F), float(Fb)


def face_vorticity(vals, face: Face, A: VectorField | None):
    """Plaquette fluxes of curl(j + A) on the face sample lattice and plaquette centres."""
    ds = face.spacing
    pts = face.points()
    es, et = np.asarray(face.axis_s), np.asarray(face.axis_t)

    def link_flux(a_vals, b_vals, mid, e):
        if A is None:
            ad = np.zeros(mid.shape[:-1])
        else:
            ad = sample_vector(A, mid) @ e * ds
        return np.imag(b_vals * np.conj(a_vals) * np.exp(-1j * ad)) + ad

    fs = link_flux(vals[:-1, :], vals[1:, :], 0.5 * (pts[:-1, :] + pts[1:, :]), es)
    ft = link_flux(vals[:, :-1], vals[:, 1:], 0.5 * (pts[:, :-1] + pts[:, 1:]), et)
    flux = fs[:, :-1] + ft[1:, :] - fs[:, 1:] - ft[:-1, :]
    centers = 0.25 * (pts[:-1, :-1] + pts[1:, :-1] + pts[1:, 1:] + pts[:-1, 1:])
    return flux, centers


def _lipschitz_dictionary(face: Face, count, seed):
    rng = np.random.default_rng(seed)
    L = face.size
    fns = [lambda s, t: np.ones_like(s), lambda s, t: s / L, lambda s, t: t / L]
    for _ in range(count - len(fns)):
        s0, t0 = rng.uniform(0, L, 2)
        sig = L * rng.uniform(0.05, 0.6)
        sg = rng.choice([-1.0, 1.0])
        fns.append(lambda s, t, s0=s0, t0=t0, sig=sig, sg=sg:
                   sg * np.exp(-((s - s0) ** 2 + (t - t0) ** 2) / sig ** 2))
    return fns


def _lip_norm(vals, ds):
    lip = max(np.abs(np.diff(vals, axis=0)).max(initial=0.0),
              np.abs(np.diff(vals, axis=1)).max(initial=0.0)) / ds
    return max(float(np.abs(vals).max()), float(lip))


def vorticity_estimate_check(u_vals, A: VectorField | None, face: Face, vortices, eps,
                             kappa=None, count=256, seed=0, scale=1.0):
    """Dictionary lower estimate of |mu - 2 pi sum d_i delta_{a_i}| in the dual Lipschitz norm.

    Returns (defect, rhs_scale) with rhs_scale = max(eps, r)(1 + F + F_boundary).
    ``scale`` multiplies the measure (homogeneity check).
    """
    flux, centers = face_vorticity(np.asarray(u_vals), face, A)
    o = np.asarray(face.origin)
    es, et = np.asarray(face.axis_s), np.asarray(face.axis_t)
    cs, ct = (centers - o) @ es, (centers - o) @ et
    pts = face.points()
    ps, pt = (pts - o) @ es, (pts - o) @ et
    va = [((v.centroid - o) @ es, (v.centroid - o) @ et, v.degree) for v in vortices]
    best = 0.0
    for fn in _lipschitz_dictionary(face, count, seed):
        nrm = _lip_norm(fn(ps, pt), face.spacing)
        pair = float(np.sum(flux * fn(cs, ct)))
        pair -= sum(TWO_PI * d * float(fn(np.array(a), np.array(b))) for a, b, d in va)
        best = max(best, abs(scale * pair) / nrm)
    F, Fb = _face_energy(np.asarray(u_vals), eps, face.spacing)
    r = max((v.radius for v in vortices), default=0.0)
    rhs = max(eps, r) * (1 + F + Fb)
    if kappa is not None and best > kappa * rhs:
        raise InvariantError(f"vorticity defect {best:.3g} exceeds {kappa} x {rhs:.3g}")
    return best, rhs


# ------------------------------------------------------------------ ball construction


@dataclass(frozen=True)
class Ball2D:
    center: tuple
    radius: float
    degree: int


@dataclass(frozen=True)
class BallConstruction:
    balls: list
    bound: float
    measured_energy: float
    initial_balls: list
    steps: int


def slice_energy(u, rho, mask, eps, hs):
    """E_{eps,rho} on a 2D slice: rho^2/2 |grad u|^2 + rho^4 (1-|u|^2)^2 / (4 eps^2)."""
    u = np.asarray(u)
    r = np.ones(u.shape) if rho is None else np.broadcast_to(np.asarray(rho, float), u.shape)
    E = 0.0
    for ax in (0, 1):
        sl0 = [slice(None)] * 2
        sl1 = [slice(None)] * 2
        sl0[ax] = slice(0, -1)
        sl1[ax] = slice(1, None)
        both = mask[tuple(sl0)] & mask[tuple(sl1)]
        w = r[tuple(sl0)] * r[tuple(sl1)]
        du = np.abs(u[tuple(sl1)] - u[tuple(sl0)]) ** 2 / hs ** 2
        E += 0.5 * hs * hs * float(np.sum((w * du)[both]))
    pot = r ** 4 * (1 - np.abs(u) ** 2) ** 2 / (4 * eps ** 2)
    return E + hs * hs * float(pot[mask].sum())


def _merge(balls):
    changed = True
    while changed:
        changed = False
        for i in range(len(balls)):
            for j in range(i + 1, len(balls)):
                (ci, ri, di), (cj, rj, dj) = balls[i], balls[j]
                if np.linalg.norm(ci - cj) < ri + rj:
                    c = (ri * ci + rj * cj) / (ri + rj)
                    balls[i] = (c, ri + rj, di + dj)
                    del balls[j]
                    changed = True
                    break
            if changed:
                break
    return balls


def ball_construction(u, rho, eps, M_eps, xs, ys, mask, clearance=None, growth=0.05):
    """Growth-and-merge ball construction on a 2D slice sampled on the lattice xs x ys."""
    u = np.asarray(u)
    hs = float(xs[1] - xs[0])
    mask = np.asarray(mask, bool)
    dist = ndimage.distance_transform_edt(mask) * hs
    clearance = 0.1 * float(dist.max()) if clearance is None else clearance
    near = mask & (dist < clearance)
    if near.any() and np.abs(u[near]).min() < CORE_LEVEL:
        raise DetectionError("|u| < 1/2 within the clearance band of the slice boundary")
    lab, nlab, wind = _components(u, valid=mask)
    corner = np.stack([lab[:-1, :-1], lab[1:, :-1], lab[1:, 1:], lab[:-1, 1:]]).max(axis=0)
    deg = np.bincount(corner.ravel(), wind.ravel(), minlength=nlab + 1) / TWO_PI
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    balls = []
    for c in range(1, nlab + 1):
        sel = lab == c
        if not sel.any():
            continue
        p = np.stack([X[sel], Y[sel]], axis=1)
        cen = p.mean(axis=0)
        rad = float(np.linalg.norm(p - cen, axis=1).max()) + hs
        balls.append((cen, rad, int(round(deg[c]))))
    balls = _merge(balls)
    initial = [Ball2D(tuple(c), r, d) for c, r, d in balls]

    def room(b):
        c, r, _ = b
        i = np.clip(np.rint((c - [xs[0], ys[0]]) / hs).astype(int), 0, np.array(mask.shape) - 1)
        return dist[tuple(i)] - clearance - r

    steps = 0
    while balls and all(room((c, r * (1 + growth), d)) > 0 for c, r, d in balls):
        balls = _merge([(c, r * (1 + growth), d) for c, r, d in balls])
        steps += 1
        if steps > 10000:
            break
    final = [Ball2D(tuple(c), r, d) for c, r, d in balls]
    rmin = float(np.min(np.asarray(rho, float)[mask])) if np.ndim(rho) else float(rho if rho is not None else 1.0)
    rho2min = rmin ** 2 if rho is not None else 1.0
    D = sum(abs(b.degree) for b in final if b.degree != 0)
    bound = math.pi * D * rho2min * (math.log(1 / eps) - math.log(M_eps))
    bound = max(bound, 0.0)
    measured = slice_energy(u, rho, mask, eps, hs)
    if bound > 0 and measured < bound:
        raise InvariantError(f"measured energy {measured:.4g} below ball bound {bound:.4g}")
    return BallConstruction(final, bound, measured, initial, steps)


# ------------------------------------------------------------------ dual norm


@dataclass(frozen=True, eq=False)
class SignedMeasure:
    """mu (edge field over omega plaquettes, density per volume) minus the current nu."""

    grid: GridSpec
    mu: np.ndarray | None = None
    nu: PolyCurrent | None = None
    scale: float = 1.0

    def scaled(self, c):
        return SignedMeasure(self.grid, self.mu, self.nu, self.scale * c)


def _nhat(omega, pts, step=1e-4):
    g = np.stack([(omega.sdf(pts + step * e) - omega.sdf(pts - step * e)) / (2 * step)
                  for e in np.eye(3)], axis=-1)
    return g / np.maximum(np.linalg.norm(g, axis=-1, keepdims=True), 1e-300)


def _test_field_dictionary(grid: GridSpec, count, seed, anchors=None):
    """Seeded vector test fields with zero tangential trace on the boundary.

    Half are random bumps over the domain; with ``anchors`` = (points, directions,
    weights) the other half are centred at points drawn from the measure itself,
    aligned with its local direction, at widths down to the grid scale.
    """
    rng = np.random.default_rng(seed)
    lo, hi = grid.omega.bounds()
    size = float(np.max(np.asarray(hi) - np.asarray(lo)))
    hmin = float(np.min(grid.h))
    om = grid.omega
    ell = max(2 * float(np.max(grid.h)), 0.1 * size)

    def tangential_free(X, pts):
        # blend to the normal projection near the boundary
        phi = np.clip(-om.sdf(pts) / ell, 0.0, 1.0)
        phi = phi * phi * (3 - 2 * phi)
        n = _nhat(om, pts)
        Xn = np.sum(X * n, axis=-1, keepdims=True) * n
        return phi[..., None] * X + (1 - phi[..., None]) * Xn

    def bump(x0, sig, c, curl):
        def fn(p):
            d = p - x0
            gb = np.exp(-np.sum(d * d, -1) / sig ** 2)
            if curl:
                return tangential_free(np.cross(-2 * d / sig ** 2 * gb[..., None], c) * sig, p)
            return tangential_free(gb[..., None] * c, p)
        return fn

    def tube(x0, sig, length, c):
        # tent across the axis c, tent along it: Lipschitz max(1/sig, 1/length)
        def fn(p):
            d = p - x0
            along = d @ c
            perp = np.linalg.norm(d - along[..., None] * c, axis=-1)
            w = np.maximum(0, 1 - perp / sig) * np.maximum(0, 1 - np.abs(along) / length)
            return tangential_free(w[..., None] * c, p)
        return fn

    fns = []
    for k in range(3):
        c = np.eye(3)[k]
        fns.append(lambda p, c=c: tangential_free(np.broadcast_to(c, p.shape).copy(), p))
    n_anchor = 2 * (count - len(fns)) // 3 if anchors is not None else 0
    if n_anchor:
        P, Dir, W = anchors
        prob = W / W.sum()
        pick = rng.choice(len(P), size=n_anchor, p=prob)
        for j, i in enumerate(pick):
            sig = math.exp(rng.uniform(math.log(hmin), math.log(size)))
            c = Dir[i] + 0.05 * rng.normal(size=3)
            c /= np.linalg.norm(c)
            x0 = P[i] + 0.5 * hmin * rng.normal(size=3)
            if j % 2:
                fns.append(tube(x0, sig, sig * math.exp(rng.uniform(0, math.log(4))), c))
            else:
                fns.append(bump(x0, sig, c, False))
    while len(fns) < count:
        x0 = rng.uniform(lo, hi)
        sig = size * rng.uniform(0.05, 0.5)
        c = rng.normal(size=3)
        c /= np.linalg.norm(c)
        fns.append(bump(x0, sig, c, rng.random() < 0.5))
    return fns


def holder_norm(values, mask, h, gamma):
    """max(max |X|, max Holder quotient over axis pairs at dyadic distances)."""
    vals = np.where(mask[..., None], values, 0.0)
    sup = float(np.sqrt((vals ** 2).sum(-1)).max())
    q = 0.0
    for k in range(3):
        s = 1
        while s < mask.shape[k]:
            a = [slice(None)] * 3
            b = [slice(None)] * 3
            a[k] = slice(0, mask.shape[k] - s)
            b[k] = slice(s, None)
            both = mask[tuple(a)] & mask[tuple(b)]
            if both.any():
                d = np.sqrt(((values[tuple(a)] - values[tuple(b)]) ** 2).sum(-1))[both]
                q = max(q, float(d.max()) / (s * h[k]) ** gamma)
            s *= 2
    return max(sup, q)


def _pair_current(nu: PolyCurrent, fn, h):
    if nu is None or len(nu) == 0:
        return 0.0
    s = nu.segments
    L = np.linalg.norm(s[:, 3:] - s[:, :3], axis=1)
    npiece = np.maximum(1, np.ceil(L / (0.5 * h)).astype(int))
    total = 0.0
    xg, wg = np.polynomial.legendre.leggauss(3)
    xg, wg = 0.5 * (xg + 1), 0.5 * wg
    for i in range(len(s)):
        t = (np.arange(npiece[i])[:, None] + xg[None, :]) / npiece[i]
        w = np.broadcast_to(wg / npiece[i], t.shape)
        d = s[i, 3:] - s[i, :3]
        pts = s[i, :3] + t[..., None] * d
        total += nu.mult[i] * float(np.sum(w * (fn(pts) @ d)))
    return nu.weight * total


def _current_points(nu: PolyCurrent, h):
    s = nu.segments
    L = np.linalg.norm(s[:, 3:] - s[:, :3], axis=1)
    npiece = np.maximum(1, np.ceil(L / (0.5 * h)).astype(int))
    sid = np.repeat(np.arange(len(s)), npiece)
    t = (np.arange(npiece.sum()) - np.repeat(np.cumsum(npiece) - npiece, npiece) + 0.5) / npiece[sid]
    d = s[sid, 3:] - s[sid, :3]
    pts = s[sid, :3] + t[:, None] * d
    return pts, d / np.linalg.norm(d, axis=1, keepdims=True), (L / npiece)[sid] * np.abs(nu.mult[sid])


def dual_norm_estimate(measure: SignedMeasure, gamma=1.0, seed=0, count=512):
    """Lower estimate of the (C^{0,gamma}_T)* norm by a seeded dictionary of test fields.

    Every field is paired with the measure and divided by its discrete
    C^{0,gamma} norm: Holder quotients over dyadic axis pairs of omega cells,
    and the sup over those cells and over every point where the pairing samples it.
    """
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    g = measure.grid
    has_mu = measure.mu is not None and np.any(measure.mu != 0)
    has_nu = measure.nu is not None and len(measure.nu) > 0
    if not (has_mu or has_nu) or measure.scale == 0:
        return 0.0
    em = g.edge_mask
    hmin = float(np.min(g.h))
    anchor_p, anchor_d, anchor_w = [], [], []
    pts_e, vals_e, comp_e = np.zeros((0, 3)), np.zeros(0), np.zeros(0, dtype=int)
    if has_mu:
        pts_e, vals_e, comp_e = [], [], []
        start = 0
        for k in range(3):
            sz = int(np.prod(g.shape("edge", k)))
            sel = em[start:start + sz]
            P = g.lattice_points("edge", k).reshape(-1, 3)[sel]
            pts_e.append(P)
            vals_e.append(measure.mu[start:start + sz][sel])
            comp_e.append(np.full(len(P), k))
            start += sz
        pts_e, vals_e, comp_e = np.concatenate(pts_e), np.concatenate(vals_e), np.concatenate(comp_e)
        nz = vals_e != 0
        anchor_p.append(pts_e[nz])
        anchor_d.append(np.eye(3)[comp_e[nz]] * np.sign(vals_e[nz])[:, None])
        anchor_w.append(np.abs(vals_e[nz]) * g.dv)
    if has_nu:
        qp, qd, qw = _current_points(measure.nu, hmin)
        anchor_p.append(qp)
        anchor_d.append(-qd * np.sign(measure.nu.weight))
        anchor_w.append(qw * abs(measure.nu.weight))
    anchors = (np.concatenate(anchor_p), np.concatenate(anchor_d), np.concatenate(anchor_w))
    cells = g.cell_centers()
    mask = g.raw_cell_mask
    extra = [pts_e] + ([qp] if has_nu else [])
    extra = np.concatenate(extra)
    best = 0.0
    for fn in _test_field_dictionary(g, count, seed, anchors):
        nrm = max(holder_norm(fn(cells), mask, g.h, gamma),
                  float(np.sqrt((fn(extra) ** 2).sum(-1)).max()) if len(extra) else 0.0)
        if nrm == 0:
            continue
        pair = 0.0
        if has_mu:
            X = fn(pts_e)
            pair += g.dv * float(np.sum(vals_e * X[np.arange(len(X)), comp_e]))
        if has_nu:
            pair -= _pair_current(measure.nu, fn, hmin)
        best = max(best, abs(pair) / nrm)
    return abs(measure.scale) * best
