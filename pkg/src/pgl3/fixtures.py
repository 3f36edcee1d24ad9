"""Synthetic vortex configurations used by tests, acceptance runs and the CLI."""

from __future__ import annotations

import numpy as np

from .mesh import ComplexField, GridSpec, VectorField


def core_profile(r, eps):
    return np.tanh(r / eps)


def _frame(direction):
    d = np.asarray(direction, float)
    d = d / np.linalg.norm(d)
    a = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(d, a)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(d, e1), d


def line_vortex(grid: GridSpec, point, direction=(0, 0, 1), eps=0.1, degree=1):
    """Straight filament through ``point``; positive degree winds around ``direction``."""
    e1, e2, _ = _frame(direction)
    x = grid.cell_centers() - np.asarray(point, float)
    s, t = x @ e1, x @ e2
    r = np.hypot(s, t)
    u = core_profile(r, eps) * np.exp(1j * degree * np.arctan2(t, s))
    return ComplexField(grid, u)


def line_phase(pts, point, direction=(0, 0, 1)):
    e1, e2, _ = _frame(direction)
    x = np.asarray(pts, float) - np.asarray(point, float)
    return np.arctan2(x @ e2, x @ e1), np.hypot(x @ e1, x @ e2)


def ring_vortex(grid: GridSpec, center=(0, 0, 0), radius=0.5, eps=0.1):
    """Vortex ring in the plane z = center_z; the filament circulates counterclockwise."""
    x = grid.cell_centers() - np.asarray(center, float)
    rc = np.hypot(x[..., 0], x[..., 1])
    s, z = rc - radius, x[..., 2]
    r = np.hypot(s, z)
    # winding around the ring core, oriented with the azimuthal tangent
    u = core_profile(r, eps) * np.exp(1j * np.arctan2(s, z))
    return ComplexField(grid, u)


def ring_length(radius):
    return 2 * np.pi * radius


def zero_potential(grid):
    return VectorField(grid, np.zeros(grid.size("face")), "face")


def disk_vortex_2d(n=400, eps=0.05, degree=1, radius=1.0, center=(0.0, 0.0)):
    """Degree-d tanh vortex on a disk; returns (xs, ys, u, mask, spacing)."""
    xs = np.linspace(-radius, radius, n)
    hs = xs[1] - xs[0]
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    dx, dy = X - center[0], Y - center[1]
    r = np.hypot(dx, dy)
    u = core_profile(r, eps) * np.exp(1j * degree * np.arctan2(dy, dx))
    mask = np.hypot(X, Y) <= radius
    return xs, xs, u, mask, hs
