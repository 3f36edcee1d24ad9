"""Applied-field descriptors and their vector potentials."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import GridSpec, VectorField

FIELD_KINDS = ("constant", "azimuthal", "gradient", "zero", "sampled")


@dataclass(frozen=True)
class ExternalField:
    """Unit-intensity applied field H_0,ex.

    constant   H = d (a fixed direction)
    azimuthal  H = (-(y-c1), x-c0, 0); curl H = (0, 0, 2)
    gradient   H = grad((x-c0)(y-c1)); curl-free and divergence-free
    """

    kind: str = "constant"
    direction: tuple = (0.0, 0.0, 1.0)
    center: tuple = (0.0, 0.0, 0.0)
    amplitude: float = 1.0
    samples: object = None  # edge samples for kind="sampled"

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")

    def potential(self, pts):
        """A raw vector potential with curl A = H (not gauge fixed)."""
        x = np.asarray(pts, float) - np.asarray(self.center)
        out = np.zeros_like(x)
        if self.kind == "constant":
            d = np.asarray(self.direction, float)
            out = 0.5 * np.cross(np.broadcast_to(d, x.shape), x)
        elif self.kind == "azimuthal":
            out[..., 2] = -0.5 * (x[..., 0] ** 2 + x[..., 1] ** 2)
        elif self.kind == "gradient":
            out[..., 2] = 0.5 * (x[..., 1] ** 2 - x[..., 0] ** 2)
        elif self.kind == "zero":
            pass
        else:
            raise ValueError("sampled fields have no closed-form potential")
        return self.amplitude * out

    def field(self, pts):
        x = np.asarray(pts, float) - np.asarray(self.center)
        out = np.zeros_like(x)
        if self.kind == "constant":
            out[...] = np.asarray(self.direction, float)
        elif self.kind == "azimuthal":
            out[..., 0], out[..., 1] = -x[..., 1], x[..., 0]
        elif self.kind == "gradient":
            out[..., 0], out[..., 1] = x[..., 1], x[..., 0]
        return self.amplitude * out


def raw_potential(ext: ExternalField, grid: GridSpec) -> VectorField:
    if ext.kind == "sampled":
        from .meissner import potential_from_field
        return potential_from_field(VectorField(grid, ext.samples, "edge"))
    return VectorField.from_function(grid, ext.potential, "face")
