"""Independent reference computations used by the test-suite."""

from __future__ import annotations

import itertools

import networkx as nx
import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

_FACE_AXES = {0: (1, 2), 1: (2, 0), 2: (0, 1)}


# ------------------------------------------------------------------ isoflux


def brute_force_ratio(graph):
    """Max of gain/cost over simple cycles (>= 3 edges) and boundary-to-boundary paths."""
    E = {}
    for (u, v), g, c in zip(graph.edges, graph.gains, graph.costs):
        E[(int(u), int(v))] = (float(g), float(c))
    H = nx.Graph()
    H.add_nodes_from(range(graph.n_nodes))
    H.add_edges_from(E)

    def value(path, closed):
        gs = cs = 0.0
        pairs = list(zip(path, path[1:])) + ([(path[-1], path[0])] if closed else [])
        for a, b in pairs:
            if (a, b) in E:
                gs += E[(a, b)][0]
                cs += E[(a, b)][1]
            else:
                gs -= E[(b, a)][0]
                cs += E[(b, a)][1]
        return gs / cs

    best = 0.0
    for cyc in nx.simple_cycles(H.to_directed()):
        if len(cyc) >= 3:
            best = max(best, value(cyc, True))
    bd = [int(b) for b in graph.boundary]
    for a, b in itertools.permutations(bd, 2):
        for p in nx.all_simple_paths(H, a, b):
            best = max(best, value(p, False))
    return best


def random_ratio_graph(rng, max_edges=12):
    """Small random instance: 4-7 nodes, up to ``max_edges`` distinct edges, 0-3 boundary nodes."""
    from pgl3.isoflux import RatioGraph
    n = int(rng.integers(4, 8))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    m = int(rng.integers(3, min(max_edges, len(pairs)) + 1))
    pick = rng.choice(len(pairs), size=m, replace=False)
    edges = np.array([pairs[k] if rng.random() < 0.5 else pairs[k][::-1] for k in sorted(pick)])
    gains = rng.normal(size=m)
    costs = rng.uniform(0.1, 2.0, size=m)
    nb = int(rng.integers(0, 4))
    boundary = np.sort(rng.choice(n, size=nb, replace=False)).astype(np.int64)
    return RatioGraph(n, edges.astype(np.int64), gains, costs, boundary)


def refined_line_integral(fn, p0, p1, n=2000):
    """Composite 10-point Gauss-Legendre rule on n pieces."""
    x, w = np.polynomial.legendre.leggauss(10)
    x, w = 0.5 * (x + 1), 0.5 * w
    t = ((np.arange(n)[:, None] + x[None]) / n).ravel()
    ww = np.tile(w / n, n)
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    pts = p0 + t[:, None] * (p1 - p0)
    return float(np.sum(ww * fn(pts)) * np.linalg.norm(p1 - p0))


# ------------------------------------------------------------------ assignment


def brute_force_assignment(P, M):
    P, M = np.asarray(P), np.asarray(M)
    best = np.inf
    for perm in itertools.permutations(range(len(M))):
        best = min(best, sum(np.linalg.norm(P[i] - M[j]) for i, j in enumerate(perm)))
    return best


# ------------------------------------------------------------------ flat norm


def primal_complex(n, h):
    """Primal edges and faces of the node lattice of a box with n cells per axis."""
    N = tuple(x + 1 for x in n)
    eidx = {}
    for k in range(3):
        shp = tuple(N[a] - (a == k) for a in range(3))
        for p in itertools.product(*[range(s) for s in shp]):
            eidx[(k,) + p] = len(eidx)
    rows, cols, vals = [], [], []
    nf = 0
    farea = []
    for k in range(3):
        a, b = _FACE_AXES[k]
        shp = tuple(N[x] - (x != k) for x in range(3))
        ea, eb = np.eye(3, dtype=int)[a], np.eye(3, dtype=int)[b]
        for p in itertools.product(*[range(s) for s in shp]):
            p = np.array(p)
            for e, sign in (((a,) + tuple(p), 1), ((b,) + tuple(p + ea), 1),
                            ((a,) + tuple(p + eb), -1), ((b,) + tuple(p), -1)):
                rows.append(eidx[e])
                cols.append(nf)
                vals.append(sign)
            farea.append(h[a] * h[b])
            nf += 1
    D = sp.csr_matrix((vals, (rows, cols)), shape=(len(eidx), nf))
    elen = np.array([h[k[0]] for k in eidx])
    return eidx, D, elen, np.array(farea)


def flat_norm_lp(chain, D, elen, farea):
    """min sum |R| len + sum |S| area subject to chain = R + D S."""
    ne, nf = D.shape
    I = sp.identity(ne, format="csr")
    Aeq = sp.hstack([I, -I, D, -D]).tocsr()
    c = np.concatenate([elen, elen, farea, farea])
    res = linprog(c, A_eq=Aeq, b_eq=chain, bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(res.message)
    return float(res.fun)


def chain_from_edge_field(grid, mu, eidx):
    """Lattice 1-chain of an edge (plaquette) field: coefficient mu dv / h_k on the primal edge."""
    out = np.zeros(len(eidx))
    start = 0
    em = grid.edge_mask
    for k in range(3):
        shp = grid.shape("edge", k)
        sz = int(np.prod(shp))
        vals = np.where(em[start:start + sz], mu[start:start + sz], 0.0).reshape(shp)
        for idx in zip(*np.nonzero(vals)):
            node = tuple(int(i) + (a != k) for a, i in enumerate(idx))
            out[eidx[(k,) + node]] += vals[idx] * grid.dv / grid.h[k]
        start += sz
    return out


def chain_from_axis_line(grid, eidx, node_xy, k=2, weight=2 * np.pi, inside=None):
    """Chain along the lattice line through node indices node_xy, axis k."""
    out = np.zeros(len(eidx))
    for i in range(grid.n[k]):
        node = list(node_xy)
        node.insert(k, i)
        node = tuple(node)
        if inside is None or inside(node, i):
            out[eidx[(k,) + node]] += weight
    return out


def relative_edge_costs(grid, eidx, elen, band=1.0):
    """Edge lengths with edges within ``band`` cells of the boundary (or outside) made free."""
    lo = np.asarray(grid.box_min)
    mids = np.array([lo + grid.h * (np.array(key[1:]) + 0.5 * np.eye(3)[key[0]]) for key in eidx])
    free = grid.omega.sdf(mids) > -band * float(np.max(grid.h))
    return np.where(free, 0.0, elen)
