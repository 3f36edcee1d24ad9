import math

import numpy as np
import pytest
import oracles as O

from pgl3 import fixtures as fx
from pgl3.energy import vorticity
from pgl3.isoflux import PolyCurrent
from pgl3.mesh import Ball, GridSpec
from pgl3.vortex_detect import (DetectionError, Face, SignedMeasure, assemble_nu,
                                ball_construction, choose_grid, connection_cost,
                                dual_norm_estimate, energy_density, face_vortices,
                                hausdorff_to_line, minimal_connection, plaquette_winding,
                                relative_boundary, segments_inside_support,
                                vorticity_estimate_check)


def planar(n, centers, degrees, eps=0.05):
    a = np.linspace(0, 1, n)
    S, T = np.meshgrid(a, a, indexing="ij")
    u = np.ones_like(S, dtype=complex)
    for (c0, c1), d in zip(centers, degrees):
        z = (S - c0) + 1j * (T - c1)
        u = u * np.tanh(np.abs(z) / eps) * np.exp(1j * d * np.angle(z))
    return u


@pytest.mark.parametrize("d", [1, -1, 2])
def test_single_face_degree(d):
    u = planar(81, [(0.52, 0.47)], [d])
    vs = face_vortices(u)
    assert [v.degree for v in vs] == [d]
    assert plaquette_winding(u).sum() == d
    assert np.allclose(vs[0].centroid[:2], [0.52, 0.47], atol=0.05)


def test_dipole_on_face():
    u = planar(101, [(0.3, 0.5), (0.7, 0.5)], [1, -1])
    assert sorted(v.degree for v in face_vortices(u)) == [-1, 1]


def test_low_rim_rejected():
    u = planar(41, [(0.0, 0.5)], [1])
    with pytest.raises(DetectionError):
        face_vortices(u)


def test_assignment_matches_brute_force():
    rng = np.random.default_rng(3)
    for k in range(1, 6):
        P, M = rng.normal(size=(k, 3)), rng.normal(size=(k, 3))
        cur = minimal_connection(P, M)
        assert connection_cost(cur) == pytest.approx(O.brute_force_assignment(P, M), rel=1e-12)
        assert np.all(cur.mult == 1)


def test_through_boundary_connection():
    ball = Ball()
    cur = minimal_connection([[0.0, 0.0, 0.9]], np.zeros((0, 3)), "through-boundary", ball)
    assert len(cur) == 1 and cur.segments[0, 5] == pytest.approx(1.0)
    with pytest.raises(DetectionError):
        minimal_connection([[0, 0, 0]], np.zeros((0, 3)))


@pytest.fixture(scope="module")
def line_case():
    g = GridSpec.around(Ball(), 40, margin=1.2)
    p, d = (0.11, -0.07, 0.0), (0.03, 0.02, 1.0)
    eps, delta = 0.06, 0.25
    u = fx.line_vortex(g, p, d, eps)
    A = fx.zero_potential(g)
    return g, p, d, eps, delta, u, A, assemble_nu(u, A, None, eps, delta)


def true_chord(p, d):
    d = np.asarray(d, float) / np.linalg.norm(d)
    b, c = np.dot(p, d), np.dot(p, p) - 1.0
    return 2 * math.sqrt(b * b - c)


def test_line_fixture(line_case):
    g, p, d, eps, delta, u, A, r = line_case
    assert r.length == pytest.approx(true_chord(p, d), rel=0.1)
    assert hausdorff_to_line(r.nu, p, d, g.omega) <= delta
    assert r.closed and not relative_boundary(r.nu, g.omega)
    assert {abs(v.degree) for v in r.vortices} == {1}
    assert np.all(np.abs(r.nu.mult) == 1)
    assert segments_inside_support(r, g) > 0.9


def test_detection_grid_properties(line_case):
    g, p, d, eps, delta, u, A, r = line_case
    dg = r.grid
    assert dg.edge_min > 5 / 8
    assert dg.candidates_tried == 64
    dens = energy_density(u, A, None, eps)
    assert np.all(dens >= 0)
    with pytest.raises(ValueError):
        choose_grid(u, A, None, eps, 2 * float(g.h.max()))


def test_ring_fixture_has_no_boundary():
    g = GridSpec.around(Ball(), 40, margin=1.2)
    u = fx.ring_vortex(g, (0.03, -0.02, 0.05), 0.5, 0.05)
    A = fx.zero_potential(g)
    dg = choose_grid(u, A, None, 0.05, 0.3, per_axis=8)
    r = assemble_nu(u, A, None, 0.05, 0.3, dg)
    assert r.nu.boundary() == {}
    assert r.length == pytest.approx(fx.ring_length(0.5), rel=0.1)
    assert np.all(r.nu.mult == np.round(r.nu.mult))


def test_vorticity_estimate_on_face():
    n = 121
    face = Face((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), 1.0, n)
    u = planar(n, [(0.5, 0.5)], [1], eps=0.03)
    vs = face_vortices(u, face)
    defect, rhs = vorticity_estimate_check(u, None, face, vs, 0.03, kappa=1.0)
    assert defect <= rhs
    d2, _ = vorticity_estimate_check(u, None, face, vs, 0.03, scale=2.0)
    assert d2 == pytest.approx(2 * defect)


def test_ball_construction_trend_and_scaling():
    vals = []
    for eps in (0.1, 0.05):
        xs, ys, u, mask, _ = fx.disk_vortex_2d(401, eps)
        r1 = ball_construction(u, None, eps, 1.0, xs, ys, mask)
        r4 = ball_construction(u, 0.5 * np.ones(u.shape), eps, 1.0, xs, ys, mask)
        assert sum(b.degree for b in r1.balls) == 1
        assert r1.bound <= r1.measured_energy
        assert r4.bound == pytest.approx(0.25 * r1.bound, rel=1e-12)
        vals.append(r1.measured_energy / (math.pi * math.log(1 / eps)))
    assert 0.8 <= vals[1] < vals[0] <= 1.3


def test_dual_norm_against_flat_norm_oracle():
    g = GridSpec.around(Ball(), 8, margin=1.2)
    u = fx.line_vortex(g, (0.0, 0.0, 0.0), (0.0, 0.0, 1.0), 0.15)
    mu = vorticity(u, fx.zero_potential(g)).flat
    eidx, D, elen, farea = O.primal_complex(g.n, g.h)
    em = g.edge_mask
    sz = [int(np.prod(g.shape("edge", k))) for k in range(3)]
    ez = em[sz[0] + sz[1]:].reshape(g.shape("edge", 2))
    chain_mu = O.chain_from_edge_field(g, mu, eidx)
    chain_nu = O.chain_from_axis_line(g, eidx, (4, 4), inside=lambda node, i: ez[3, 3, i])
    zs = [g.box_min[2] + g.h[2] * i for i in range(g.n[2]) if ez[3, 3, i]]
    nu = PolyCurrent(np.array([[0, 0, zs[0], 0, 0, zs[-1] + g.h[2]]]), [1], 2 * np.pi)
    rel = O.relative_edge_costs(g, eidx, elen)
    oracle = O.flat_norm_lp(chain_mu - chain_nu, D, rel, farea)
    meas = SignedMeasure(g, mu, nu)
    est = dual_norm_estimate(meas, 1.0, seed=0, count=256)
    assert 0.5 * oracle <= est <= 1.05 * oracle
    assert dual_norm_estimate(meas.scaled(3.0), 1.0, seed=0, count=256) == pytest.approx(3 * est)
