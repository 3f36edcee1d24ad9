"""Staggered structured grid over a box containing the sample.

Scalars live at cell centers.  Vector potentials (``face`` fields) live on
the links joining neighbouring cell centers, i.e. on primal faces, one
staggered lattice per component.  Curls of face fields (``edge`` fields)
live on primal edges, i.e. on the plaquettes of the cell-center lattice.
With this placement::

    cells --grad--> faces --curl--> edges --div--> nodes

is an exact cochain complex, so ``curl(grad f)`` and ``div(curl V)`` vanish
identically.  The divergence of a face field back to cells is ``-grad^T``,
and the curl of an edge field back to faces is ``curl^T``.  Every sample
carries the same quadrature weight ``h0*h1*h2``, which makes these
transposes exact adjoints for the shared midpoint quadrature.
"""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator


class GridMismatchError(ValueError):
    pass


class StaggeringError(ValueError):
    pass


# ---------------------------------------------------------------- domains


@dataclass(frozen=True)
class Ball:
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 1.0

    def sdf(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.linalg.norm(pts - np.asarray(self.center), axis=-1) - self.radius

    def project(self, pts):
        """Closest point of the sphere."""
        pts = np.asarray(pts, dtype=float)
        c = np.asarray(self.center)
        d = pts - c
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        r = np.where(r == 0, 1.0, r)
        return c + d * (self.radius / r)

    def bounds(self):
        c = np.asarray(self.center)
        return c - self.radius, c + self.radius

    def to_dict(self):
        return {"kind": "ball", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Box:
    lo: tuple = (-1.0, -1.0, -1.0)
    hi: tuple = (1.0, 1.0, 1.0)

    def sdf(self, pts):
        pts = np.asarray(pts, dtype=float)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        q = np.maximum(lo - pts, pts - hi)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    def project(self, pts):
        pts = np.asarray(pts, dtype=float)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        inside = np.clip(pts, lo, hi)
        gaps = np.stack([inside - lo, hi - inside], axis=-1)  # (..., 3, 2)
        flat = gaps.reshape(gaps.shape[:-2] + (6,))
        which = flat.argmin(axis=-1)
        out = inside.copy()
        axis = which // 2
        side = which % 2
        target = np.where(side == 0, lo[axis], hi[axis])
        np.put_along_axis(out, axis[..., None], target[..., None], axis=-1)
        return out

    def bounds(self):
        return np.asarray(self.lo, float), np.asarray(self.hi, float)

    def to_dict(self):
        return {"kind": "box", "lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True, eq=False)
class SignedDistance:
    """Signed-distance samples on the cell centers of a reference grid."""

    box_min: tuple
    box_max: tuple
    samples: np.ndarray = field(repr=False)

    @functools.cached_property
    def _interp(self):
        n = self.samples.shape
        h = (np.asarray(self.box_max) - np.asarray(self.box_min)) / n
        axes = [self.box_min[k] + (np.arange(n[k]) + 0.5) * h[k] for k in range(3)]
        return RegularGridInterpolator(axes, self.samples, bounds_error=False,
                                       fill_value=None)

    def sdf(self, pts):
        pts = np.asarray(pts, dtype=float)
        return self._interp(pts.reshape(-1, 3)).reshape(pts.shape[:-1])

    def project(self, pts, step=1e-3):
        pts = np.asarray(pts, dtype=float)
        out = pts.copy()
        for _ in range(3):
            d = self.sdf(out)
            g = np.stack([(self.sdf(out + step * e) - self.sdf(out - step * e)) / (2 * step)
                          for e in np.eye(3)], axis=-1)
            g /= np.maximum(np.linalg.norm(g, axis=-1, keepdims=True), 1e-12)
            out = out - d[..., None] * g
        return out

    def bounds(self):
        return np.asarray(self.box_min, float), np.asarray(self.box_max, float)

    def to_dict(self):
        return {"kind": "sdf", "box_min": list(self.box_min), "box_max": list(self.box_max),
                "shape": list(self.samples.shape),
                "samples": [float(x) for x in self.samples.ravel()]}


def domain_from_dict(d):
    kind = d["kind"]
    if kind == "ball":
        return Ball(tuple(d["center"]), float(d["radius"]))
    if kind == "box":
        return Box(tuple(d["lo"]), tuple(d["hi"]))
    if kind == "sdf":
        s = np.asarray(d["samples"], dtype=float).reshape(d["shape"])
        return SignedDistance(tuple(d["box_min"]), tuple(d["box_max"]), s)
    raise ValueError(f"unknown domain kind {kind!r}")


# ---------------------------------------------------------------- grid


@dataclass(frozen=True, eq=False)
class GridSpec:
    box_min: tuple
    box_max: tuple
    n: tuple
    omega: object = field(default_factory=Ball)
    _cache: dict = field(default_factory=dict, repr=False, compare=False, init=False)

    def __post_init__(self):
        object.__setattr__(self, "box_min", tuple(float(x) for x in self.box_min))
        object.__setattr__(self, "box_max", tuple(float(x) for x in self.box_max))
        object.__setattr__(self, "n", tuple(int(x) for x in self.n))
        if len(self.n) != 3 or min(self.n) < 2:
            raise ValueError("need at least 2 cells per axis")
        if np.any(self.h <= 0):
            raise ValueError("box_max must exceed box_min on every axis")
        if not self.node_mask.any():
            raise ValueError("omega contains no full cube of cell centers; refine the grid")
        m = self.raw_cell_mask
        if m[0].any() or m[-1].any() or m[:, 0].any() or m[:, -1].any() \
                or m[:, :, 0].any() or m[:, :, -1].any():
            raise ValueError("omega must lie strictly inside the computational box")

    @classmethod
    def around(cls, omega, n, margin=2.0):
        """Cubic box of side ``margin`` times the diameter of ``omega``."""
        lo, hi = omega.bounds()
        c = 0.5 * (lo + hi)
        half = 0.5 * margin * float(np.max(hi - lo))
        if np.isscalar(n):
            n = (n, n, n)
        return cls(tuple(c - half), tuple(c + half), tuple(n), omega)

    @property
    def h(self):
        return (np.asarray(self.box_max) - np.asarray(self.box_min)) / np.asarray(self.n)

    @property
    def dv(self):
        return float(np.prod(self.h))

    @property
    def key(self):
        om = self.omega
        okey = om.to_dict() if not isinstance(om, SignedDistance) else ("sdf", id(om))
        return (self.box_min, self.box_max, self.n, repr(okey))

    def same(self, other):
        return self is other or self.key == other.key

    # coordinates -------------------------------------------------------

    def axis_centers(self, k):
        return self.box_min[k] + (np.arange(self.n[k]) + 0.5) * self.h[k]

    def axis_nodes(self, k):
        """Interior primal node coordinates (midpoints between centers)."""
        return self.box_min[k] + np.arange(1, self.n[k]) * self.h[k]

    def _lattice_axes(self, staggered):
        return [self.axis_nodes(k) if s else self.axis_centers(k)
                for k, s in enumerate(staggered)]

    def lattice_axes(self, location, comp=None):
        if location == "cell":
            st = (0, 0, 0)
        elif location == "face":
            st = tuple(int(a == comp) for a in range(3))
        elif location == "edge":
            st = tuple(int(a != comp) for a in range(3))
        elif location == "node":
            st = (1, 1, 1)
        else:
            raise StaggeringError(location)
        return self._lattice_axes(st)

    def lattice_points(self, location, comp=None):
        axes = self.lattice_axes(location, comp)
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def cell_centers(self):
        return self.lattice_points("cell")

    def shape(self, location, comp=None):
        return tuple(len(a) for a in self.lattice_axes(location, comp))

    def size(self, location):
        if location in ("cell", "node"):
            return int(np.prod(self.shape(location)))
        return sum(int(np.prod(self.shape(location, k))) for k in range(3))

    # masks ---------------------------------------------------------------

    @functools.cached_property
    def sdf_cells(self):
        return self.omega.sdf(self.cell_centers())

    @functools.cached_property
    def raw_cell_mask(self):
        """Cells whose centers lie in omega."""
        return self.sdf_cells < 0

    # The discrete sample Omega_h is the closed cubical complex formed by the
    # dual cubes (8 neighbouring cell centers) lying entirely in omega.  Its
    # vertices, links and plaquettes are the omega cells, faces and edges.
    # Working with a closed complex keeps the discrete Hodge theory of Omega_h
    # exact: every plaquette's links and every link's cells are again in it.

    @functools.cached_property
    def node_mask(self):
        m = self.raw_cell_mask
        out = np.ones(self.shape("node"), dtype=bool)
        for a in (0, 1):
            for b in (0, 1):
                for c in (0, 1):
                    out &= m[a:m.shape[0] - 1 + a, b:m.shape[1] - 1 + b, c:m.shape[2] - 1 + c]
        return out

    def _closure(self, offsets_axes, shape):
        q = np.pad(self.node_mask, 1)
        out = np.zeros(shape, dtype=bool)
        ranges = [(0, 1) if a in offsets_axes else (0,) for a in range(3)]
        for o0 in ranges[0]:
            for o1 in ranges[1]:
                for o2 in ranges[2]:
                    sl = []
                    for a, o in enumerate((o0, o1, o2)):
                        start = 1 - o if a in offsets_axes else 1
                        sl.append(slice(start, start + shape[a]))
                    out |= q[tuple(sl)]
        return out

    @functools.cached_property
    def cell_mask(self):
        return self._closure((0, 1, 2), self.n)

    @functools.cached_property
    def face_mask(self):
        parts = []
        for k in range(3):
            others = tuple(a for a in range(3) if a != k)
            parts.append(self._closure(others, self.shape("face", k)).ravel())
        return np.concatenate(parts)

    @functools.cached_property
    def edge_mask(self):
        parts = []
        for k in range(3):
            parts.append(self._closure((k,), self.shape("edge", k)).ravel())
        return np.concatenate(parts)

    @functools.cached_property
    def boundary_cells(self):
        """Omega cells with at least one face-neighbour outside omega."""
        m = self.cell_mask
        inner = m.copy()
        inner[1:] &= m[:-1]
        inner[:-1] &= m[1:]
        inner[:, 1:] &= m[:, :-1]
        inner[:, :-1] &= m[:, 1:]
        inner[:, :, 1:] &= m[:, :, :-1]
        inner[:, :, :-1] &= m[:, :, 1:]
        return m & ~inner

    @functools.cached_property
    def interior_face_mask(self):
        """Omega faces all of whose adjacent edges are omega edges.

        Face fields supported here have curls supported on omega edges; they
        play the role of compactly supported test fields.
        """
        ops = self.ops
        outside_edges = (~self.edge_mask).astype(float)
        touched = np.abs(ops.curl).T @ outside_edges
        return self.face_mask & (touched == 0)

    def cached(self, key, build):
        """Per-grid memo for factorizations and other derived operators."""
        if key not in self._cache:
            if len(self._cache) > 32:
                self._cache.clear()
            self._cache[key] = build()
        return self._cache[key]

    @property
    def ops(self):
        return lattice_ops(self.n, tuple(self.h))

    @functools.cached_property
    def omega_grad(self):
        """Gradient from omega cells to omega faces (rows/cols restricted)."""
        G = self.ops.grad[self.face_mask]
        return G[:, self.cell_mask.ravel()].tocsr()

    @functools.cached_property
    def omega_laplacian(self):
        """Graph Laplacian on omega cells (Neumann: links leaving omega are dropped)."""
        G = self.omega_grad
        return (G.T @ G).tocsr()

    def volume(self):
        return self.dv * int(self.cell_mask.sum())

    def __repr__(self):
        return f"GridSpec(n={self.n}, box={self.box_min}..{self.box_max}, omega={self.omega!r})"


# ---------------------------------------------------------------- operators


def _d1(m, h):
    return sp.diags([-np.ones(m - 1), np.ones(m - 1)], [0, 1], shape=(m - 1, m)) / h


def _i(m):
    return sp.identity(m, format="csr")


def _k3(a, b, c):
    return sp.kron(sp.kron(a, b), c, format="csr")


@dataclass(frozen=True)
class LatticeOps:
    grad: sp.csr_matrix  # cells -> faces
    curl: sp.csr_matrix  # faces -> edges
    div: sp.csr_matrix   # edges -> nodes
    face_len: np.ndarray  # h_k for every face sample (link length)
    edge_len: np.ndarray  # h_k for every edge sample


@functools.lru_cache(maxsize=16)
def lattice_ops(n, h):
    n0, n1, n2 = n
    h0, h1, h2 = h
    D = [_d1(n0, h0), _d1(n1, h1), _d1(n2, h2)]
    I = [_i(n0), _i(n1), _i(n2)]
    Im = [_i(n0 - 1), _i(n1 - 1), _i(n2 - 1)]
    grad = sp.vstack([
        _k3(D[0], I[1], I[2]),
        _k3(I[0], D[1], I[2]),
        _k3(I[0], I[1], D[2]),
    ], format="csr")
    # face component blocks: A0 (n0-1,n1,n2), A1 (n0,n1-1,n2), A2 (n0,n1,n2-1)
    z = None
    c0 = [z, -_k3(I[0], Im[1], D[2]), _k3(I[0], D[1], Im[2])]
    c1 = [_k3(Im[0], I[1], D[2]), z, -_k3(D[0], I[1], Im[2])]
    c2 = [-_k3(Im[0], D[1], I[2]), _k3(D[0], Im[1], I[2]), z]
    curl = sp.bmat([c0, c1, c2], format="csr")
    div = sp.hstack([
        _k3(D[0], Im[1], Im[2]),
        _k3(Im[0], D[1], Im[2]),
        _k3(Im[0], Im[1], D[2]),
    ], format="csr")
    face_sizes = [(n0 - 1) * n1 * n2, n0 * (n1 - 1) * n2, n0 * n1 * (n2 - 1)]
    edge_sizes = [n0 * (n1 - 1) * (n2 - 1), (n0 - 1) * n1 * (n2 - 1), (n0 - 1) * (n1 - 1) * n2]
    face_len = np.concatenate([np.full(s, hk) for s, hk in zip(face_sizes, h)])
    edge_len = np.concatenate([np.full(s, hk) for s, hk in zip(edge_sizes, h)])
    return LatticeOps(grad, curl, div, face_len, edge_len)


# ---------------------------------------------------------------- fields


def _freeze(values, dtype):
    arr = np.array(values, dtype=dtype, copy=True)
    if not np.all(np.isfinite(arr)):
        raise ValueError("field samples must be finite")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = _freeze(self.values, float)
        if v.shape != self.grid.n:
            v = v.reshape(self.grid.n) if v.size == int(np.prod(self.grid.n)) else None
            if v is None:
                raise StaggeringError("scalar field must have one sample per cell")
        object.__setattr__(self, "values", v)

    location = "cell"

    @property
    def flat(self):
        return self.values.ravel()


@dataclass(frozen=True, eq=False)
class ComplexField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = _freeze(self.values, complex)
        if v.size != int(np.prod(self.grid.n)):
            raise StaggeringError("complex field must have one sample per cell")
        object.__setattr__(self, "values", v.reshape(self.grid.n))

    location = "cell"

    @property
    def flat(self):
        return self.values.ravel()


@dataclass(frozen=True, eq=False)
class VectorField:
    """Component samples on a staggered lattice, stored as one flat array."""

    grid: GridSpec
    values: np.ndarray
    location: str = "face"

    def __post_init__(self):
        if self.location not in ("face", "edge"):
            raise StaggeringError(f"vector fields live on faces or edges, not {self.location!r}")
        v = _freeze(self.values, float).ravel()
        if v.size != self.grid.size(self.location):
            raise StaggeringError(
                f"{self.location} field needs {self.grid.size(self.location)} samples, got {v.size}")
        object.__setattr__(self, "values", v)

    @property
    def flat(self):
        return self.values

    def components(self):
        out, start = [], 0
        for k in range(3):
            shp = self.grid.shape(self.location, k)
            size = int(np.prod(shp))
            out.append(self.values[start:start + size].reshape(shp))
            start += size
        return out

    @classmethod
    def from_function(cls, grid, fn, location="face"):
        """Sample ``fn(points) -> (..., 3)`` componentwise on the staggered lattices."""
        parts = []
        for k in range(3):
            pts = grid.lattice_points(location, k)
            parts.append(np.asarray(fn(pts))[..., k].ravel())
        return cls(grid, np.concatenate(parts), location)

    def __add__(self, other):
        _check_same(self, other)
        if self.location != other.location:
            raise StaggeringError("cannot add face and edge fields")
        return VectorField(self.grid, self.values + other.values, self.location)

    def __sub__(self, other):
        return self + (-1.0) * other

    def __rmul__(self, c):
        return VectorField(self.grid, c * self.values, self.location)


def scalar_from_function(grid, fn):
    return ScalarField(grid, fn(grid.cell_centers()))


def _check_same(*fields):
    g = fields[0].grid
    for f in fields[1:]:
        if not g.same(f.grid):
            raise GridMismatchError("fields live on different grids")


# ---------------------------------------------------------------- diff ops


def grad(f):
    if not isinstance(f, ScalarField):
        raise StaggeringError("grad maps cell scalars to face vectors")
    return VectorField(f.grid, f.grid.ops.grad @ f.flat, "face")


def div(V):
    """Divergence.  Face fields go to cells (Neumann at the box), edge fields to nodes."""
    if not isinstance(V, VectorField):
        raise StaggeringError("div takes a vector field")
    ops = V.grid.ops
    if V.location == "face":
        return ScalarField(V.grid, -(ops.grad.T @ V.flat))
    return ops.div @ V.flat  # node samples, shape grid.shape('node') when reshaped


def curl(V):
    """Curl.  Face fields go to edges; edge fields go back to faces (adjoint)."""
    if not isinstance(V, VectorField):
        raise StaggeringError("curl takes a vector field")
    ops = V.grid.ops
    if V.location == "face":
        return VectorField(V.grid, ops.curl @ V.flat, "edge")
    return VectorField(V.grid, ops.curl.T @ V.flat, "face")


def covariant_grad(u, A):
    """Gauge-covariant difference on each link.

    On the link from cell i to cell j = i + e_k this is
    ``(u_j e^{-i h_k A/2} - u_i e^{+i h_k A/2}) / h_k``: the parallel transport
    of u to the link midpoint, so gauge transformations act on it by a pure
    phase and its modulus is exactly gauge invariant.
    """
    _check_same(u, A)
    if A.location != "face":
        raise StaggeringError("the connection A must be a face field")
    return link_covariant_diff(u.grid, u.flat, A.flat)


def _link_endpoints(grid):
    n = grid.n
    idx = np.arange(int(np.prod(n))).reshape(n)
    tails = np.concatenate([idx[:-1].ravel(), idx[:, :-1].ravel(), idx[:, :, :-1].ravel()])
    heads = np.concatenate([idx[1:].ravel(), idx[:, 1:].ravel(), idx[:, :, 1:].ravel()])
    return tails, heads


@functools.lru_cache(maxsize=16)
def _endpoints_cached(n):
    g = type("G", (), {"n": n})
    return _link_endpoints(g)


def link_endpoints(grid):
    """(tail, head) flat cell indices of every face sample."""
    return _endpoints_cached(grid.n)


def link_covariant_diff(grid, u, a):
    tails, heads = link_endpoints(grid)
    hl = grid.ops.face_len
    half = np.exp(-0.5j * hl * a)
    return (u[heads] * half - u[tails] * np.conj(half)) / hl


# ---------------------------------------------------------------- quadrature


def integrate(density, region="omega"):
    """Midpoint rule over the cells whose centers lie in ``region``."""
    if not isinstance(density, (ScalarField, ComplexField)):
        raise StaggeringError("integrate takes a cell-centered density")
    g = density.grid
    if isinstance(region, str):
        if region == "omega":
            mask = g.cell_mask
        elif region == "box":
            mask = np.ones(g.n, dtype=bool)
        else:
            raise ValueError(f"unknown region {region!r}")
    else:
        mask = np.asarray(region, dtype=bool).reshape(g.n)
    if not mask.any():
        warnings.warn("integration region is empty", RuntimeWarning, stacklevel=2)
        return 0.0
    return g.dv * density.values[mask].sum()


def edge_to_cells(grid, b):
    """Average each edge-field component onto cell centers (3 x cells array).

    Edge samples absent from the lattice (at the box skin) count as zero.
    """
    n0, n1, n2 = grid.n
    out = np.zeros((3,) + grid.n)
    start = 0
    for k in range(3):
        shp = grid.shape("edge", k)
        comp = b[start:start + int(np.prod(shp))].reshape(shp)
        start += int(np.prod(shp))
        pad = [(0, 0)] * 3
        for a in range(3):
            if a != k:
                pad[a] = (1, 1)
        p = np.pad(comp, pad)
        acc = np.zeros(grid.n)
        others = [a for a in range(3) if a != k]
        for s0 in (0, 1):
            for s1 in (0, 1):
                sl = [slice(None)] * 3
                sl[others[0]] = slice(s0, s0 + grid.n[others[0]])
                sl[others[1]] = slice(s1, s1 + grid.n[others[1]])
                acc += p[tuple(sl)]
        out[k] = 0.25 * acc
    return out


def face_to_cells(grid, a):
    out = np.zeros((3,) + grid.n)
    start = 0
    for k in range(3):
        shp = grid.shape("face", k)
        comp = a[start:start + int(np.prod(shp))].reshape(shp)
        start += int(np.prod(shp))
        pad = [(0, 0)] * 3
        pad[k] = (1, 1)
        p = np.pad(comp, pad)
        sl0 = [slice(None)] * 3
        sl1 = [slice(None)] * 3
        sl0[k] = slice(0, grid.n[k])
        sl1[k] = slice(1, grid.n[k] + 1)
        out[k] = 0.5 * (p[tuple(sl0)] + p[tuple(sl1)])
    return out


def trilinear(axes, values, pts):
    """Trilinear interpolation on a rectilinear lattice, linear extrapolation outside."""
    pts = np.asarray(pts, dtype=float)
    flat = pts.reshape(-1, 3)
    idx, frac = [], []
    for k in range(3):
        ax = axes[k]
        if len(ax) == 1:
            idx.append(np.zeros(len(flat), dtype=int))
            frac.append(np.zeros(len(flat)))
            continue
        i = np.clip(np.searchsorted(ax, flat[:, k]) - 1, 0, len(ax) - 2)
        idx.append(i)
        frac.append((flat[:, k] - ax[i]) / (ax[i + 1] - ax[i]))
    out = np.zeros(len(flat), dtype=values.dtype)
    for a in (0, 1):
        for b in (0, 1):
            for c in (0, 1):
                w = ((frac[0] if a else 1 - frac[0]) * (frac[1] if b else 1 - frac[1])
                     * (frac[2] if c else 1 - frac[2]))
                ii = [np.minimum(idx[0] + a, len(axes[0]) - 1),
                      np.minimum(idx[1] + b, len(axes[1]) - 1),
                      np.minimum(idx[2] + c, len(axes[2]) - 1)]
                out += w * values[ii[0], ii[1], ii[2]]
    return out.reshape(pts.shape[:-1])


def sample_vector(V, pts):
    """Evaluate a staggered vector field at arbitrary points (..., 3)."""
    comps = V.components()
    return np.stack([trilinear(V.grid.lattice_axes(V.location, k), comps[k], pts)
                     for k in range(3)], axis=-1)


def sample_scalar(f, pts, extend=True):
    """Trilinear interpolation of a cell field.

    With ``extend`` the omega values are first continued outward by nearest
    neighbour, so samples near the boundary do not see exterior garbage.
    """
    vals = f.values
    if extend:
        vals = extend_from_omega(f.grid, vals)
    return trilinear(f.grid.lattice_axes("cell"), vals, pts)


def extend_from_omega(grid, vals):
    from scipy.ndimage import distance_transform_edt
    m = grid.cell_mask
    if m.all():
        return vals
    _, ind = distance_transform_edt(~m, return_indices=True)
    return vals[tuple(ind)]


def ensure_same(*fields: Sequence):
    _check_same(*fields)
