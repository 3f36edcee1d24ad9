import numpy as np
import pytest

from pgl3.mesh import (Ball, Box, ComplexField, GridMismatchError, GridSpec, ScalarField,
                       StaggeringError, VectorField, covariant_grad, curl, div, edge_to_cells,
                       grad, integrate, lattice_ops, sample_scalar, trilinear)


@pytest.mark.parametrize("n", [(5, 6, 7), (8, 8, 8)])
def test_discrete_complex_identities(n, rng):
    ops = lattice_ops(n, (0.3, 0.2, 0.25))
    # exact as matrices: the mixed difference quotients commute entrywise
    assert abs(ops.curl @ ops.grad).max() == 0.0
    assert abs(ops.div @ ops.curl).max() == 0.0
    A = rng.normal(size=ops.curl.shape[1])
    assert np.abs(ops.div @ (ops.curl @ A)).max() < 1e-12 * np.abs(A).max() / 0.2 ** 2


def test_grad_of_linear_function_is_exact(ball12):
    g = ball12
    f = ScalarField(g, g.cell_centers() @ np.array([1.0, -2.0, 0.5]))
    parts = grad(f).components()
    for k, c in zip(range(3), (1.0, -2.0, 0.5)):
        assert np.allclose(parts[k], c)


def test_curl_of_rotation_potential(ball12):
    g = ball12
    A = VectorField.from_function(g, lambda p: 0.5 * np.cross([0.0, 0.0, 1.0], p))
    B = curl(A).components()
    assert np.allclose(B[2], 1.0) and np.allclose(B[0], 0) and np.allclose(B[1], 0)


def test_div_face_is_minus_adjoint_of_grad(ball12, rng):
    g = ball12
    f = ScalarField(g, rng.normal(size=g.n))
    V = VectorField(g, rng.normal(size=g.size("face")))
    lhs = grad(f).flat @ V.flat
    rhs = -(f.flat @ div(V).flat)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_masks_form_closed_complex(ball16):
    g = ball16
    ops = g.ops
    # every omega plaquette's links and every omega link's cells are in omega
    assert not ((np.abs(ops.curl[g.edge_mask]) @ (~g.face_mask)) > 0).any()
    assert not ((np.abs(ops.grad[g.face_mask]) @ (~g.cell_mask.ravel())) > 0).any()
    assert g.raw_cell_mask.sum() >= g.cell_mask.sum()


def test_gauge_covariance(ball12, rng):
    g = ball12
    u = ComplexField(g, rng.normal(size=g.n) + 1j * rng.normal(size=g.n))
    A = VectorField(g, rng.normal(size=g.size("face")))
    chi = ScalarField(g, rng.normal(size=g.n))
    u2 = ComplexField(g, u.values * np.exp(1j * chi.values))
    A2 = A + grad(chi)
    assert np.allclose(np.abs(covariant_grad(u, A)), np.abs(covariant_grad(u2, A2)), atol=1e-12)


def test_integrate_volume_of_ball():
    g = GridSpec.around(Ball(), 40, margin=1.2)
    vol = integrate(ScalarField(g, np.ones(g.n)))
    assert vol == pytest.approx(4 / 3 * np.pi, rel=0.1)


def test_trilinear_reproduces_affine(ball12):
    g = ball12
    axes = [g.axis_centers(k) for k in range(3)]
    X = g.cell_centers()
    vals = X @ np.array([0.3, -1.0, 2.0]) + 0.7
    pts = np.random.default_rng(0).uniform(-0.8, 0.8, size=(50, 3))
    got = trilinear(axes, vals, pts)
    assert np.allclose(got, pts @ np.array([0.3, -1.0, 2.0]) + 0.7)


def test_edge_to_cells_constant_field(ball12):
    g = ball12
    B = VectorField.from_function(g, lambda p: np.broadcast_to([0.0, 0.0, 2.0], p.shape), "edge")
    bc = edge_to_cells(g, B.flat)
    inner = g.cell_mask & ~g.boundary_cells
    assert np.allclose(bc[2][inner], 2.0)


def test_errors(ball12):
    g = ball12
    with pytest.raises(StaggeringError):
        ScalarField(g, np.zeros(7))
    with pytest.raises(StaggeringError):
        VectorField(g, np.zeros(g.size("face")), "cell")
    with pytest.raises(ValueError):
        GridSpec((-1, -1, -1), (1, 1, 1), (16, 16, 16), Ball(radius=1.0))
    other = GridSpec.around(Ball(), 10)
    with pytest.raises(GridMismatchError):
        covariant_grad(ComplexField(other, np.ones(other.n)), VectorField(g, np.zeros(g.size("face"))))
    with pytest.raises(ValueError):
        ScalarField(g, np.full(g.n, np.nan))


def test_box_domain_and_sample_scalar():
    g = GridSpec.around(Box((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5)), 10)
    f = ScalarField(g, np.ones(g.n))
    assert np.allclose(sample_scalar(f, np.zeros((3, 3))), 1.0)
