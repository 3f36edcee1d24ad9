"""Polyhedral 1-currents and the weighted isoflux ratio.

The ratio <Gamma, B> / |eta Gamma| is maximized over lattice curves: closed
loops, and paths joining two boundary nodes.  Boundary paths are turned into
cycles through a virtual super-node joined to every boundary node by arcs of
zero gain and zero cost.  The maximum ratio is found by Dinkelbach iteration,
each step detecting a negative cycle for the arc weights lam*c - g with a
vectorized Bellman-Ford that inspects its predecessor graph every round.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .mesh import GridSpec, ScalarField, VectorField, extend_from_omega, sample_vector, trilinear, edge_to_cells

log = logging.getLogger(__name__)

_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(3)
_GAUSS_X = 0.5 * (_GAUSS_X + 1.0)
_GAUSS_W = 0.5 * _GAUSS_W


class IsofluxError(RuntimeError):
    pass


# ------------------------------------------------------------------ currents


@dataclass(frozen=True, eq=False)
class PolyCurrent:
    """Oriented segments (M, 6) = (x0 y0 z0 x1 y1 z1) with integer multiplicities.

    ``weight`` scales the current as a whole (2*pi for vorticity currents).
    """

    segments: np.ndarray
    mult: np.ndarray
    weight: float = 1.0
    kind: str = "mixed"

    def __post_init__(self):
        seg = np.asarray(self.segments, dtype=float).reshape(-1, 6)
        mult = np.asarray(self.mult, dtype=np.int64).reshape(-1)
        if len(seg) != len(mult):
            raise ValueError("one multiplicity per segment")
        if np.any(mult == 0):
            raise ValueError("segment multiplicities must be nonzero")
        if len(seg) and np.any(np.linalg.norm(seg[:, 3:] - seg[:, :3], axis=1) <= 0):
            raise ValueError("segments must have positive length")
        if self.kind not in ("loop", "boundary-to-boundary", "mixed"):
            raise ValueError(f"bad current kind {self.kind!r}")
        object.__setattr__(self, "segments", seg)
        object.__setattr__(self, "mult", mult)

    @classmethod
    def empty(cls, weight=1.0):
        return cls(np.zeros((0, 6)), np.zeros(0, dtype=np.int64), weight, "loop")

    def __len__(self):
        return len(self.mult)

    @property
    def lengths(self):
        return np.linalg.norm(self.segments[:, 3:] - self.segments[:, :3], axis=1)

    def mass(self):
        return float(abs(self.weight) * np.sum(np.abs(self.mult) * self.lengths))

    def boundary(self, decimals=9):
        """Signed endpoint counts {point: multiplicity}, zero entries dropped."""
        acc = {}
        for s, m in zip(self.segments, self.mult):
            for p, sg in ((s[3:], 1), (s[:3], -1)):
                key = tuple(np.round(p, decimals) + 0.0)
                acc[key] = acc.get(key, 0) + sg * int(m)
        return {k: v for k, v in acc.items() if v != 0}

    def is_closed(self):
        return not self.boundary()

    def concat(self, other: "PolyCurrent"):
        if len(self) and len(other) and self.weight != other.weight:
            raise ValueError("cannot concatenate currents with different weights")
        w = self.weight if len(self) else other.weight
        return PolyCurrent(np.vstack([self.segments, other.segments]),
                           np.concatenate([self.mult, other.mult]), w, "mixed")

    def to_text(self):
        lines = [f"# weight {self.weight!r}", f"# kind {self.kind}"]
        for s, m in zip(self.segments, self.mult):
            lines.append(" ".join(repr(float(x)) for x in s) + f" {int(m)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        weight, kind, segs, mult = 1.0, "mixed", [], []
        for ln, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] == "weight":
                    weight = float(parts[1])
                elif len(parts) == 2 and parts[0] == "kind":
                    kind = parts[1]
                continue
            parts = line.split()
            if len(parts) != 7:
                raise ValueError(f"line {ln}: expected 'x0 y0 z0 x1 y1 z1 mult'")
            segs.append([float(x) for x in parts[:6]])
            mult.append(int(parts[6]))
        if not segs:
            return cls(np.zeros((0, 6)), np.zeros(0, dtype=np.int64), weight, kind)
        return cls(np.array(segs), np.array(mult), weight, kind)


# ------------------------------------------------------------------ quadrature


def _pieces(P0, P1, grid: GridSpec):
    """Split segments at every half-cell lattice plane; returns (seg_id, t0, t1)."""
    lo = np.asarray(grid.box_min)
    half = 0.5 * grid.h
    ids, ts = [np.arange(len(P0)), np.arange(len(P0))], [np.zeros(len(P0)), np.ones(len(P0))]
    for k in range(3):
        a = (P0[:, k] - lo[k]) / half[k]
        b = (P1[:, k] - lo[k]) / half[k]
        jlo = np.floor(np.minimum(a, b)) + 1
        jhi = np.ceil(np.maximum(a, b)) - 1
        cnt = np.maximum(jhi - jlo + 1, 0).astype(np.int64)
        if cnt.sum() == 0:
            continue
        sid = np.repeat(np.arange(len(P0)), cnt)
        off = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        j = jlo[sid] + off
        t = (j - a[sid]) / (b[sid] - a[sid])
        ids.append(sid)
        ts.append(t)
    sid = np.concatenate(ids)
    t = np.clip(np.concatenate(ts), 0.0, 1.0)
    order = np.lexsort((t, sid))
    sid, t = sid[order], t[order]
    same = sid[1:] == sid[:-1]
    keep = same & (t[1:] - t[:-1] > 1e-14)
    return sid[:-1][keep], t[:-1][keep], t[1:][keep]


def _quad_points(P0, P1, grid):
    sid, t0, t1 = _pieces(P0, P1, grid)
    tq = t0[:, None] + (t1 - t0)[:, None] * _GAUSS_X[None, :]
    d = P1 - P0
    pts = P0[sid][:, None, :] + tq[..., None] * d[sid][:, None, :]
    wq = (t1 - t0)[:, None] * _GAUSS_W[None, :]
    return sid, pts, wq


def _check_inside(P0, P1, grid):
    lo, hi = np.asarray(grid.box_min), np.asarray(grid.box_max)
    tol = 1e-12 * float(np.max(hi - lo))
    for P in (P0, P1):
        if len(P) and (np.any(P < lo - tol) or np.any(P > hi + tol)):
            raise ValueError("segment leaves the computational box")


def line_gains(P0, P1, B: VectorField):
    """int_seg B . t ds for each segment (before multiplicities)."""
    P0, P1 = np.atleast_2d(P0), np.atleast_2d(P1)
    _check_inside(P0, P1, B.grid)
    if len(P0) == 0:
        return np.zeros(0)
    sid, pts, wq = _quad_points(P0, P1, B.grid)
    vals = sample_vector(B, pts)  # (P, 3, 3)
    d = P1 - P0
    piece = np.einsum("pq,pqk,pk->p", wq, vals, d[sid])
    return np.bincount(sid, piece, minlength=len(P0))


def _eta_values(eta: ScalarField):
    return extend_from_omega(eta.grid, eta.values)


def line_costs(P0, P1, eta: ScalarField, eta_ext=None):
    P0, P1 = np.atleast_2d(P0), np.atleast_2d(P1)
    _check_inside(P0, P1, eta.grid)
    if len(P0) == 0:
        return np.zeros(0)
    ev = _eta_values(eta) if eta_ext is None else eta_ext
    sid, pts, wq = _quad_points(P0, P1, eta.grid)
    vals = trilinear(eta.grid.lattice_axes("cell"), ev, pts)
    if np.any(vals <= 0):
        raise ValueError("eta must be positive along the current")
    L = np.linalg.norm(P1 - P0, axis=1)
    piece = np.sum(wq * vals, axis=1) * L[sid]
    return np.bincount(sid, piece, minlength=len(P0))


def circulation(gamma: PolyCurrent, B: VectorField) -> float:
    if len(gamma) == 0:
        return 0.0
    g = line_gains(gamma.segments[:, :3], gamma.segments[:, 3:], B)
    return float(gamma.weight * np.sum(gamma.mult * g))


def weighted_mass(gamma: PolyCurrent, eta: ScalarField) -> float:
    if len(gamma) == 0:
        return 0.0
    c = line_costs(gamma.segments[:, :3], gamma.segments[:, 3:], eta)
    return float(abs(gamma.weight) * np.sum(np.abs(gamma.mult) * c))


# ------------------------------------------------------------------ star ratio


@dataclass(frozen=True)
class StarRatio:
    ratio: float
    lower_bound_L2: float
    zero_field: bool = False


def star_ratio(B: VectorField, eta: ScalarField) -> StarRatio:
    """int |B|^2 / int eta |B| over omega cells and the bound |B|_2 / |eta|_2."""
    g = B.grid
    m = g.cell_mask
    if B.location == "edge":
        Bc = edge_to_cells(g, B.flat)
    else:
        from .mesh import face_to_cells
        Bc = face_to_cells(g, B.flat)
    mag = np.sqrt((Bc ** 2).sum(axis=0))[m]
    e = eta.values[m]
    dv = g.dv
    num = dv * np.sum(mag ** 2)
    den = dv * np.sum(e * mag)
    lb = math.sqrt(num) / math.sqrt(dv * np.sum(e ** 2))
    if num == 0:
        return StarRatio(0.0, 0.0, True)
    r = num / den
    if r < lb - 1e-10 * max(1.0, lb):
        raise AssertionError("Cauchy-Schwarz violated in star_ratio")
    return StarRatio(float(r), float(lb))


# ------------------------------------------------------------------ graphs


@dataclass(frozen=True, eq=False)
class RatioGraph:
    """Undirected edges (u, v) with gain g (for u->v; -g for v->u) and cost c > 0."""

    n_nodes: int
    edges: np.ndarray
    gains: np.ndarray
    costs: np.ndarray
    boundary: np.ndarray
    positions: np.ndarray | None = None

    def arcs(self):
        """Directed arcs including the super-node n_nodes: (src, dst, gain, cost, edge, sign)."""
        u, v = self.edges[:, 0], self.edges[:, 1]
        E = len(u)
        s = self.n_nodes
        b = np.asarray(self.boundary, dtype=np.int64)
        src = np.concatenate([u, v, np.full(len(b), s), b])
        dst = np.concatenate([v, u, b, np.full(len(b), s)])
        gain = np.concatenate([self.gains, -self.gains, np.zeros(2 * len(b))])
        cost = np.concatenate([self.costs, self.costs, np.zeros(2 * len(b))])
        eid = np.concatenate([np.arange(E), np.arange(E), np.full(2 * len(b), -1)])
        sign = np.concatenate([np.ones(E), -np.ones(E), np.zeros(2 * len(b))])
        return src, dst, gain, cost, eid, sign


def find_negative_cycle(n, src, dst, w, delta=0.0, max_rounds=None):
    """Return the arc indices of a negative cycle, or None.

    Bellman-Ford from a virtual source at distance 0 to every node; an update
    needs an improvement of more than ``delta``.  Ties between incoming arcs
    are broken by the smallest arc index (arcs pre-sorted by target, source),
    and among predecessor-graph cycles the one through the smallest node wins.
    """
    order = np.lexsort((src, dst))
    src_s, dst_s, w_s = src[order], dst[order], w[order]
    starts = np.flatnonzero(np.r_[True, dst_s[1:] != dst_s[:-1]])
    targets = dst_s[starts]
    dist = np.zeros(n)
    pred = np.full(n, -1, dtype=np.int64)  # sorted-arc index
    max_rounds = n + 1 if max_rounds is None else max_rounds
    idx_all = np.arange(len(src_s))
    for _ in range(max_rounds):
        cand = dist[src_s] + w_s
        best = np.minimum.reduceat(cand, starts)
        improve = best < dist[targets] - delta
        if not improve.any():
            return None
        # first arc (lowest source) attaining the minimum for each improving target
        seg = np.repeat(np.arange(len(starts)), np.diff(np.r_[starts, len(src_s)]))
        hit = cand == best[seg]
        first = np.full(len(starts), -1, dtype=np.int64)
        hi = idx_all[hit][::-1]
        first[seg[hi]] = hi
        tg = targets[improve]
        dist[tg] = best[improve]
        pred[tg] = first[improve]
        cyc = _pred_cycle(n, pred, src_s)
        if cyc is not None:
            arcs = cyc
            tot = float(np.sum(w_s[arcs]))
            if tot < -delta:
                return order[arcs]
    raise IsofluxError("Bellman-Ford exceeded its round cap without settling")


def _pred_cycle(n, pred, src_s):
    parent = np.where(pred >= 0, src_s[np.maximum(pred, 0)], np.arange(n))
    x = parent.copy()
    steps = 1
    while steps < n:
        x = x[x]
        steps *= 2
    # x[v] lies on a cycle of the functional graph or is a root (parent == self)
    on = np.unique(x)
    on = on[parent[on] != on]
    if len(on) == 0:
        return None
    start = int(on.min())
    arcs, v = [], start
    seen = set()
    while v not in seen:
        seen.add(v)
        arcs.append(int(pred[v]))
        v = int(parent[v])
    # v is the first repeated node; trim the tail before it
    k = 0
    node = start
    while node != v:
        node = int(parent[node])
        k += 1
    return np.array(arcs[k:], dtype=np.int64)


@dataclass(frozen=True)
class RatioSolution:
    ratio: float
    arcs: np.ndarray
    iterations: int
    method: str
    bracket: tuple


def max_ratio(graph: RatioGraph, tol=1e-9, max_dinkelbach=200) -> RatioSolution:
    src, dst, gain, cost, _, _ = graph.arcs()
    n = graph.n_nodes + 1
    scale = float(np.abs(gain).sum() + np.abs(cost).sum()) or 1.0
    delta = 1e-13 * scale / max(len(src), 1)

    def probe(lam):
        return find_negative_cycle(n, src, dst, lam * cost - gain, delta)

    def ratio_of(arcs):
        c = cost[arcs].sum()
        return gain[arcs].sum() / c if c > 0 else 0.0

    lam, best = 0.0, np.zeros(0, dtype=np.int64)
    it = 0
    method = "dinkelbach"
    while True:
        cyc = probe(lam)
        if cyc is None:
            break
        it += 1
        r = ratio_of(cyc)
        if r <= lam:  # no progress: floating-point tie
            method = "bisection"
            break
        lam, best = r, cyc
        if it >= max_dinkelbach:
            method = "bisection"
            break
    hi = lam
    if method == "bisection":
        pos = cost > 0
        hi = float(np.max(gain[pos] / cost[pos])) if pos.any() else lam
        lo = lam
        while hi - lo > tol * max(1.0, abs(hi)):
            mid = 0.5 * (lo + hi)
            cyc = probe(mid)
            it += 1
            if cyc is None:
                hi = mid
            else:
                r = ratio_of(cyc)
                if r > lo:
                    lo, best = r, cyc
                else:
                    lo = mid
        lam = ratio_of(best) if len(best) else 0.0
    return RatioSolution(float(lam), best, it, method, (float(lam), float(max(hi, lam))))


# ------------------------------------------------------------------ lattice graph


_DIRS6 = [(1, 0, 0), (0, 1, 0), (0, 0, 1)]
_DIRS26 = [d for d in np.ndindex(3, 3, 3)]
_DIRS26 = [tuple(np.array(d) - 1) for d in _DIRS26]
_DIRS26 = [d for d in _DIRS26 if d > (0, 0, 0)]


def lattice_nodes(grid: GridSpec, resolution=1):
    """Primal-node lattice refined ``resolution`` times; returns (axes, inside mask)."""
    axes = []
    for k in range(3):
        m = (grid.n[k] - 2) * resolution + 1
        axes.append(grid.box_min[k] + grid.h[k] * (1 + np.arange(m) / resolution))
    P = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    inside = grid.omega.sdf(P) < 0
    return axes, P, inside


def build_graph(B: VectorField, eta: ScalarField, resolution=1, neighbors=6) -> RatioGraph:
    grid = B.grid
    axes, P, inside = lattice_nodes(grid, resolution)
    shape = inside.shape
    ids = -np.ones(shape, dtype=np.int64)
    ids[inside] = np.arange(int(inside.sum()))
    dirs = _DIRS6 if neighbors == 6 else _DIRS26
    U, V = [], []
    for d in dirs:
        sl_a, sl_b = [], []
        for k in range(3):
            if d[k] >= 0:
                sl_a.append(slice(0, shape[k] - d[k]))
                sl_b.append(slice(d[k], shape[k]))
            else:
                sl_a.append(slice(-d[k], shape[k]))
                sl_b.append(slice(0, shape[k] + d[k]))
        a, b = ids[tuple(sl_a)], ids[tuple(sl_b)]
        ok = (a >= 0) & (b >= 0)
        U.append(a[ok])
        V.append(b[ok])
    U, V = np.concatenate(U), np.concatenate(V)
    pos = P[inside]
    if len(U) == 0:
        raise IsofluxError("omega graph is empty; refine the grid")
    ev = _eta_values(eta)
    gains = line_gains(pos[U], pos[V], B)
    costs = line_costs(pos[U], pos[V], eta, ev)
    # boundary nodes: some axis neighbour outside omega (or off the lattice)
    pad = np.pad(inside, 1, constant_values=False)
    bd = np.zeros(shape, dtype=bool)
    for k in range(3):
        for s in (-1, 1):
            sl = [slice(1, 1 + shape[a]) for a in range(3)]
            sl[k] = slice(1 + s, 1 + s + shape[k])
            bd |= ~pad[tuple(sl)]
    bd &= inside
    return RatioGraph(int(inside.sum()), np.stack([U, V], axis=1), gains, costs,
                      ids[bd], pos)


@dataclass(frozen=True, eq=False)
class IsofluxResult:
    best_current: PolyCurrent
    ratio: float
    circulation: float
    weighted_mass: float
    lower_bound_L2: float
    hc1: float
    star: float = float("nan")
    slack: float = 0.0
    iterations: int = 0
    method: str = "dinkelbach"
    bracket: tuple = field(default=(0.0, 0.0))


def current_from_arcs(graph: RatioGraph, arcs) -> PolyCurrent:
    src, dst, *_ = graph.arcs()
    s = graph.n_nodes
    real = [a for a in arcs if src[a] != s and dst[a] != s]
    if not real:
        return PolyCurrent.empty()
    P0 = graph.positions[src[real]]
    P1 = graph.positions[dst[real]]
    kind = "boundary-to-boundary" if len(real) < len(arcs) else "loop"
    # order the segments along the curve
    return PolyCurrent(np.hstack([P0, P1])[::-1] if len(real) > 1 else np.hstack([P0, P1]),
                       np.ones(len(real), dtype=np.int64), 1.0, kind)


def maximize_ratio(B: VectorField, eta: ScalarField, edge_graph_resolution=1, neighbors=6,
                   eps=None, tol=1e-9) -> IsofluxResult:
    m = eta.grid.cell_mask
    if eta.values[m].min() <= 0:
        raise ValueError("eta must be positive on omega")
    graph = build_graph(B, eta, edge_graph_resolution, neighbors)
    sol = max_ratio(graph, tol=tol)
    cur = current_from_arcs(graph, sol.arcs)
    circ = circulation(cur, B)
    wm = weighted_mass(cur, eta)
    st = star_ratio(B, eta)
    ratio = circ / wm if wm > 0 else 0.0
    hc1 = critical_field(ratio, eps) if (eps is not None and ratio > 0) else float("nan")
    return IsofluxResult(cur, float(ratio), circ, wm, st.lower_bound_L2, hc1, st.ratio,
                         max(0.0, st.lower_bound_L2 - ratio), sol.iterations, sol.method,
                         sol.bracket)


def critical_field(ratio: float, eps: float) -> float:
    """|log eps| / (2 R); requires R > 0 (a positive liminf of the isoflux ratio)."""
    if not ratio > 0:
        raise ValueError("critical field needs a positive isoflux ratio R "
                         "(the liminf condition on R_eps fails)")
    return abs(math.log(eps)) / (2.0 * ratio)


# ------------------------------------------------------------------ experiment


def liminf_experiment(families: dict, eps_list, a_factory, grid: GridSpec,
                      resolution=1, neighbors=6):
    """Run rho / Meissner / isoflux for every field family and eps.

    ``families`` maps a name to an ExternalField; ``a_factory(grid)`` returns the
    pinning field.  Returns (rows, summary) where summary[name] holds the R band
    max/min - 1 and the largest |B0|_2 / |H|_2.
    """
    from .density import solve_rho
    from .meissner import coulomb_A0ex, minimize_J
    a = a_factory(grid)
    rows = []
    for name, ext in families.items():
        A0ex = coulomb_A0ex(ext, grid)
        for eps in eps_list:
            sol = solve_rho(a, eps)
            st = minimize_J(sol.rho, A0ex)
            eta = ScalarField(grid, sol.rho.values ** 2)
            em = grid.edge_mask
            b2 = math.sqrt(grid.dv * np.sum(st.B0.flat[em] ** 2))
            h2 = math.sqrt(grid.dv * np.sum(st.H0ex.flat[em] ** 2))
            if b2 > 0:
                res = maximize_ratio(st.B0, eta, resolution, neighbors, eps=eps)
                R, lb = res.ratio, res.lower_bound_L2
            else:
                R, lb = 0.0, 0.0
            rows.append({"family": name, "eps": eps, "R": R, "lower_bound_L2": lb,
                         "B0_L2": b2, "H_L2": h2, "B0_over_H": b2 / h2 if h2 else 0.0,
                         "J": st.J_value})
    summary = {}
    for name in families:
        Rs = [r["R"] for r in rows if r["family"] == name]
        ratios = [r["B0_over_H"] for r in rows if r["family"] == name]
        band = (max(Rs) / min(Rs) - 1.0) if min(Rs) > 0 else float("inf")
        summary[name] = {"R_min": min(Rs), "R_max": max(Rs), "band": band,
                         "B0_over_H_max": max(ratios)}
    return rows, summary
