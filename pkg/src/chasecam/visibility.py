"""Visibility metric over the ESDF.

The score psi(x_c; x_p) is the minimum signed distance phi along the line
of sight between chaser and target: large values mean the sight line keeps
a wide margin from occluders, values <= 0 mean the target is (about to be)
lost behind an obstacle.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .world import EsdfGrid, OutOfBoundsError, VoxelGrid


def is_visible(grid: VoxelGrid, x_c, x_p) -> bool:
    """True when no voxel on the segment between the two points is occupied."""
    x_c = np.asarray(x_c, float)
    x_p = np.asarray(x_p, float)
    for name, p in (("x_c", x_c), ("x_p", x_p)):
        if not grid.in_bounds(p):
            raise OutOfBoundsError(f"{name}={p.tolist()} outside grid bounds")
    return not bool(_kernels.segment_blocked(grid.occupancy, grid.origin, grid.resolution,
                                             np.asarray(grid.dims, np.int64), x_c, x_p))


def visibility_score(esdf: EsdfGrid, x_c, x_p) -> float:
    """min phi along the LOS: endpoints plus one sample per traversed voxel
    (at the segment midpoint inside that voxel).  Occluded pairs come out
    <= 0 since phi is negative inside obstacles."""
    x_c = np.asarray(x_c, float)
    x_p = np.asarray(x_p, float)
    for name, p in (("x_c", x_c), ("x_p", x_p)):
        if not esdf.grid.in_bounds(p):
            raise OutOfBoundsError(f"{name}={p.tolist()} outside grid bounds")
    return esdf.min_phi_along(x_c, x_p)


@dataclass(frozen=True)
class VisibilityField:
    """psi(.; x_p) sampled on a regular lattice, trilinearly interpolable.

    values[i,j,k] = visibility_score at origin + (i,j,k)*stride.  sample()
    clamps outside the lattice, mirroring EsdfGrid.phi_at.
    """

    target: np.ndarray
    origin: np.ndarray
    stride: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "target", np.asarray(self.target, float))
        object.__setattr__(self, "origin", np.asarray(self.origin, float))
        self.values.setflags(write=False)

    @property
    def shape(self):
        return self.values.shape

    def positions(self) -> np.ndarray:
        """Lattice point positions, shape (*shape, 3)."""
        axes = [self.origin[k] + self.stride * np.arange(self.shape[k]) for k in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def sample(self, p) -> float:
        """Trilinear interpolation of the lattice (lattice points are cell
        centers of a virtual grid, hence the half-stride shift)."""
        p = np.asarray(p, float)
        return float(_kernels.interp3(self.values, self.origin - 0.5 * self.stride,
                                      self.stride, p))

    def to_rows(self):
        """(x, y, z, psi) rows for CSV export, lexicographic order."""
        pos = self.positions().reshape(-1, 3)
        return np.column_stack([pos, self.values.reshape(-1)])


def visibility_field(esdf: EsdfGrid, x_p, region_lo, region_hi, stride: float) -> VisibilityField:
    """Sample psi(.; x_p) on a lattice covering the axis-aligned region."""
    if stride <= 0:
        raise ValueError(f"stride must be > 0, got {stride}")
    x_p = np.asarray(x_p, float)
    lo = np.asarray(region_lo, float)
    hi = np.asarray(region_hi, float)
    if np.any(hi < lo):
        raise ValueError(f"empty region: lo={lo.tolist()} hi={hi.tolist()}")
    counts = np.floor((hi - lo) / stride + 1e-9).astype(int) + 1
    axes = [lo[k] + stride * np.arange(counts[k]) for k in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    vals = _kernels.psi_lattice(esdf.phi, esdf.grid.origin, esdf.grid.resolution,
                                np.asarray(esdf.grid.dims, np.int64), pts, x_p)
    return VisibilityField(target=x_p, origin=lo, stride=float(stride),
                           values=vals.reshape(tuple(counts)))
