import numpy as np
import pytest

from pgl3.density import PinningProfile, make_pinning
from pgl3.energy import (Configuration, InvalidStateError, coupling_by_parts, coupling_term,
                         from_split_variables, gl_energy, gl_energy_grad, lattice_term,
                         meissner_configuration, random_configuration, split_energy,
                         to_split_variables, vorticity)
from pgl3.fields import ExternalField
from pgl3.meissner import meissner_state
from pgl3.mesh import ComplexField, ScalarField, VectorField, grad

INCL = PinningProfile("inclusion-set", b=0.25, value=0.5, centers=((0.2, 0.0, 0.0),), radii=(0.4,))


@pytest.fixture(scope="module")
def setup():
    from pgl3.mesh import Ball, GridSpec
    g = GridSpec.around(Ball(), 12)
    a = make_pinning(INCL, g)
    st, _ = meissner_state(a, 0.15, ExternalField("azimuthal"))
    return g, a, st


@pytest.mark.parametrize("h", [0.0, 1.0, 5.0])
@pytest.mark.parametrize("smooth", [False, True])
def test_split_identity(setup, h, smooth):
    g, a, st = setup
    rng = np.random.default_rng(int(10 * h) + smooth)
    cfg = random_configuration(g, rng, h, smooth)
    br = split_energy(cfg, st, a, 0.15)
    assert br.residual() <= 1e-7
    assert br.total == pytest.approx(gl_energy(cfg, a, 0.15, st.H0ex))


def test_split_variables_round_trip(setup, rng):
    g, a, st = setup
    cfg = random_configuration(g, rng, 2.0)
    u, A = to_split_variables(cfg, st)
    back = from_split_variables(u, A, st, 2.0)
    assert np.allclose(back.u.values, cfg.u.values) and np.allclose(back.A.flat, cfg.A.flat)


def test_meissner_configuration_has_trivial_split(setup):
    g, a, st = setup
    cfg = meissner_configuration(st, 3.0)
    br = split_energy(cfg, st, a, 0.15)
    assert br.total == br.meissner_term
    assert abs(br.free_energy) < 1e-12 and abs(br.coupling_term) < 1e-9 * br.total


def test_coupling_integration_by_parts(setup, rng):
    g, a, st = setup
    cfg = random_configuration(g, rng, 1.0, smooth=True)
    u, A = to_split_variables(cfg, st)
    assert coupling_term(u, A, st, 1.0) == pytest.approx(coupling_by_parts(u, A, st, 1.0), rel=1e-9)


def test_lattice_term_vanishes_without_field(setup, rng):
    g, a, st = setup
    cfg = random_configuration(g, rng, 0.0)
    u, A = to_split_variables(cfg, st)
    assert lattice_term(u, A, st, 0.0) == 0.0


def test_gauge_invariance(setup, rng):
    g, a, st = setup
    cfg = random_configuration(g, rng, 1.0)
    chi = ScalarField(g, rng.normal(size=g.n))
    cfg2 = Configuration(ComplexField(g, cfg.u.values * np.exp(1j * chi.values)),
                         cfg.A + grad(chi), 1.0)
    e1, e2 = gl_energy(cfg, a, 0.15, st.H0ex), gl_energy(cfg2, a, 0.15, st.H0ex)
    assert e1 == pytest.approx(e2, rel=1e-12)
    mu1, mu2 = vorticity(cfg.u, cfg.A).flat, vorticity(cfg2.u, cfg2.A).flat
    assert np.allclose(mu1, mu2, atol=1e-9 * np.abs(mu1).max())


def test_vorticity_is_divergence_free(setup, rng):
    g, a, st = setup
    cfg = random_configuration(g, rng, 0.0)
    mu = vorticity(cfg.u, cfg.A).flat
    assert np.abs(g.ops.div @ mu).max() < 1e-10 * np.abs(mu).max() / g.h.min()


def test_gradient_matches_finite_differences(setup, rng):
    g, a, st = setup
    u = (rng.normal(size=g.n) + 1j * rng.normal(size=g.n)).ravel()
    A = rng.normal(size=g.size("face"))
    H = 1.5 * st.H0ex.flat
    E, gu, gA = gl_energy_grad(u, A, g, a.flat, 0.15, H)
    du = rng.normal(size=u.shape) + 1j * rng.normal(size=u.shape)
    dA = rng.normal(size=A.shape)
    t = 1e-6
    Ep = gl_energy_grad(u + t * du, A + t * dA, g, a.flat, 0.15, H)[0]
    Em = gl_energy_grad(u - t * du, A - t * dA, g, a.flat, 0.15, H)[0]
    fd = (Ep - Em) / (2 * t)
    assert fd == pytest.approx(np.real(np.vdot(gu, du)) + gA @ dA, rel=1e-6)
    cfg = Configuration(ComplexField(g, u), VectorField(g, A), 1.5)
    assert E == pytest.approx(gl_energy(cfg, a, 0.15, st.H0ex), rel=1e-12)


def test_invalid_state_rejected(setup):
    g, a, st = setup
    import dataclasses
    bad = dataclasses.replace(st, rho=ScalarField(g, 0.1 * np.ones(g.n)))
    with pytest.raises(InvalidStateError):
        split_energy(meissner_configuration(st, 1.0), bad, a, 0.15)


def test_negative_field_rejected(setup):
    g, a, st = setup
    with pytest.raises(ValueError):
        Configuration(ComplexField(g, np.ones(g.n)), VectorField(g, np.zeros(g.size("face"))), -1.0)
