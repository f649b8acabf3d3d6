"""Voxel occupancy grid and Euclidean signed distance field (ESDF).

The grid is the shared substrate for target prediction, visibility scoring
and chaser safety: every planner stage queries the signed distance phi(x)
produced here.  Distances are measured voxel-center to voxel-center; phi is
negative inside obstacles.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import _kernels


class MapFormatError(ValueError):
    """Raised when a map file cannot be parsed."""


class OutOfBoundsError(ValueError):
    """Raised by strict queries outside the grid bounds."""


@dataclass(frozen=True)
class VoxelGrid:
    """Dense boolean occupancy grid.

    origin is the world position of the lower corner of voxel (0,0,0);
    voxel (i,j,k) spans [origin + idx*res, origin + (idx+1)*res) and its
    center sits at origin + (idx + 0.5)*res.
    """

    origin: np.ndarray
    resolution: float
    dims: tuple[int, int, int]
    occupancy: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        if self.resolution <= 0:
            raise ValueError(f"resolution must be > 0, got {self.resolution}")
        if any(d < 1 for d in self.dims):
            raise ValueError(f"dims must all be >= 1, got {self.dims}")
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.shape != tuple(self.dims):
            raise ValueError(f"occupancy shape {occ.shape} != dims {self.dims}")
        object.__setattr__(self, "occupancy", occ)
        self.origin.setflags(write=False)
        self.occupancy.setflags(write=False)

    @classmethod
    def empty(cls, dims, resolution, origin=(0.0, 0.0, 0.0)) -> "VoxelGrid":
        return cls(np.asarray(origin, float), float(resolution), tuple(dims),
                   np.zeros(tuple(dims), dtype=bool))

    @property
    def upper(self) -> np.ndarray:
        """World position of the upper corner of the grid."""
        return self.origin + self.resolution * np.asarray(self.dims, float)

    def world_to_index(self, p) -> tuple[int, int, int]:
        """Index of the voxel containing world point p (boundary points clip inward)."""
        u = (np.asarray(p, float) - self.origin) / self.resolution
        idx = np.minimum(np.maximum(np.floor(u).astype(int), 0),
                         np.asarray(self.dims) - 1)
        return tuple(int(v) for v in idx)

    def index_to_world(self, idx) -> np.ndarray:
        """World position of the voxel center."""
        return self.origin + (np.asarray(idx, float) + 0.5) * self.resolution

    def in_bounds(self, p) -> bool:
        p = np.asarray(p, float)
        return bool(np.all(p >= self.origin - 1e-12) and np.all(p <= self.upper + 1e-12))

    def is_occupied_index(self, idx) -> bool:
        return bool(self.occupancy[idx])

    def occupied_indices(self) -> np.ndarray:
        """All occupied voxel indices, lexicographically ordered, shape (n, 3)."""
        return np.argwhere(self.occupancy)

    def traverse_segment(self, a, b) -> np.ndarray:
        """Ordered indices of the voxels the segment a->b passes through.

        Zero-measure corner grazes are skipped, matching a dense point-sampling
        oracle.  a == b yields the single containing voxel.
        """
        a = np.asarray(a, float)
        b = np.asarray(b, float)
        for name, p in (("a", a), ("b", b)):
            if not self.in_bounds(p):
                raise OutOfBoundsError(f"segment endpoint {name}={p.tolist()} outside grid bounds")
        idx, _, _, n = _kernels.traverse(self.origin, self.resolution,
                                         np.asarray(self.dims, np.int64), a, b)
        return idx[:n].copy()

    def segment_intervals(self, a, b):
        """Per-voxel (index, t_mid, t_len) for the segment, t in [0, 1]."""
        a = np.asarray(a, float)
        b = np.asarray(b, float)
        idx, tmid, tlen, n = _kernels.traverse(self.origin, self.resolution,
                                               np.asarray(self.dims, np.int64), a, b)
        return idx[:n].copy(), tmid[:n].copy(), tlen[:n].copy()


@dataclass(frozen=True)
class EsdfGrid:
    """Signed distance to the nearest occupied voxel, per voxel center.

    phi > 0 in free space (capped at ``cap``), phi < 0 inside obstacles
    (minus the distance to the nearest free voxel center).
    """

    grid: VoxelGrid
    phi: np.ndarray = field(repr=False)
    cap: float = 10.0

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        if phi.shape != tuple(self.grid.dims):
            raise ValueError(f"phi shape {phi.shape} != grid dims {self.grid.dims}")
        object.__setattr__(self, "phi", phi)
        self.phi.setflags(write=False)

    @property
    def resolution(self) -> float:
        return self.grid.resolution

    def _check(self, p, strict):
        if strict and not self.grid.in_bounds(p):
            raise OutOfBoundsError(f"point {np.asarray(p).tolist()} outside grid bounds")

    def phi_at(self, p, strict: bool = False) -> float:
        """Trilinear interpolation of phi at world point p.

        Outside the voxel-center lattice the query clamps to the boundary
        cell; with strict=True points outside the grid raise instead.
        """
        self._check(p, strict)
        p = np.asarray(p, float)
        return float(_kernels.interp3(self.phi, self.grid.origin, self.resolution, p))

    def phi_at_many(self, pts) -> np.ndarray:
        """Vectorized phi_at over an (n, 3) array (clamping policy)."""
        pts = np.asarray(pts, float).reshape(-1, 3)
        return _kernels.interp3_many(self.phi, self.grid.origin, self.resolution, pts)

    def gradient_at(self, p, strict: bool = False) -> np.ndarray:
        """Exact spatial gradient of the trilinear interpolant at p."""
        self._check(p, strict)
        p = np.asarray(p, float)
        return _kernels.interp3_grad(self.phi, self.grid.origin, self.resolution, p)

    def min_phi_along(self, a, b) -> float:
        """min phi over the segment: both endpoints plus one sample at the
        segment midpoint inside every traversed voxel."""
        a = np.asarray(a, float)
        b = np.asarray(b, float)
        return float(_kernels.min_phi_segment(self.phi, self.grid.origin, self.resolution,
                                              np.asarray(self.grid.dims, np.int64), a, b))


def compute_esdf(grid: VoxelGrid, cap: float = 10.0) -> EsdfGrid:
    """Exact Euclidean signed distance field on voxel centers.

    Free voxels hold min(cap, distance to nearest occupied center); occupied
    voxels hold -(distance to nearest free center).  Degenerate all-free /
    all-occupied grids collapse to +-cap.
    """
    if cap <= 0:
        raise ValueError(f"cap must be > 0, got {cap}")
    occ = grid.occupancy
    if not occ.any():
        phi = np.full(grid.dims, cap, dtype=float)
    elif occ.all():
        phi = np.full(grid.dims, -cap, dtype=float)
    else:
        s = (grid.resolution,) * 3
        dist_free = ndimage.distance_transform_edt(~occ, sampling=s)
        dist_occ = ndimage.distance_transform_edt(occ, sampling=s)
        phi = np.where(occ, -dist_occ, np.minimum(dist_free, cap))
    return EsdfGrid(grid=grid, phi=phi, cap=float(cap))


def load_map(text: str) -> VoxelGrid:
    """Parse the plain-text voxel map format.

    Line 1: ``vxmap <dimx> <dimy> <dimz> <resolution> <ox> <oy> <oz>``;
    then one ``occ <ix> <iy> <iz>`` line per occupied voxel.  ``#`` starts
    a comment.
    """
    header = None
    occ_list = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if header is None:
            if parts[0] != "vxmap":
                raise MapFormatError(f"line {lineno}: expected 'vxmap' header, got {parts[0]!r}")
            if len(parts) != 8:
                raise MapFormatError(f"line {lineno}: header needs 7 fields (dims, resolution, origin)")
            try:
                dims = tuple(int(v) for v in parts[1:4])
                res = float(parts[4])
                origin = tuple(float(v) for v in parts[5:8])
            except ValueError as e:
                raise MapFormatError(f"line {lineno}: bad header field ({e})") from None
            if any(d < 1 for d in dims):
                raise MapFormatError(f"line {lineno}: dims must be positive, got {dims}")
            if res <= 0:
                raise MapFormatError(f"line {lineno}: resolution must be positive, got {res}")
            header = (dims, res, origin)
        elif parts[0] == "occ":
            if len(parts) != 4:
                raise MapFormatError(f"line {lineno}: 'occ' needs 3 indices")
            try:
                idx = tuple(int(v) for v in parts[1:4])
            except ValueError as e:
                raise MapFormatError(f"line {lineno}: bad voxel index ({e})") from None
            dims = header[0]
            if any(i < 0 or i >= d for i, d in zip(idx, dims)):
                raise MapFormatError(f"line {lineno}: index out of range: {idx} for dims {dims}")
            occ_list.append((lineno, idx))
        else:
            raise MapFormatError(f"line {lineno}: unknown directive {parts[0]!r}")
    if header is None:
        raise MapFormatError("line 1: missing 'vxmap' header")
    dims, res, origin = header
    occupancy = np.zeros(dims, dtype=bool)
    for _, idx in occ_list:
        occupancy[idx] = True
    return VoxelGrid(np.asarray(origin, float), res, dims, occupancy)


def format_map(grid: VoxelGrid) -> str:
    """Canonical text form; load_map(format_map(g)) reproduces g bit-exactly."""
    d = grid.dims
    o = [float(v) for v in grid.origin]
    lines = [f"vxmap {d[0]} {d[1]} {d[2]} {float(grid.resolution)!r} {o[0]!r} {o[1]!r} {o[2]!r}"]
    for ix, iy, iz in grid.occupied_indices():
        lines.append(f"occ {ix} {iy} {iz}")
    return "\n".join(lines) + "\n"


def load_map_file(path) -> VoxelGrid:
    with open(path, "r", encoding="utf-8") as f:
        return load_map(f.read())


def save_map_file(grid: VoxelGrid, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_map(grid))
