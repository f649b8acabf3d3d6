#!/usr/bin/env python3
"""Generate the shipped .vxmap files (deterministic)."""
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from chasecam.world import VoxelGrid, save_map_file  # noqa: E402

RES = 0.4


def add_box(occ, x0, x1, y0, y1, z0, z1):
    """Occupy voxels whose centers fall inside the box (meters)."""
    def rng(lo, hi, n):
        i0 = max(0, int(np.floor(lo / RES + 0.5)))
        i1 = min(n, int(np.ceil(hi / RES - 0.5)) + 1)
        return i0, i1
    ix0, ix1 = rng(x0, x1, occ.shape[0])
    iy0, iy1 = rng(y0, y1, occ.shape[1])
    iz0, iz1 = rng(z0, z1, occ.shape[2])
    occ[ix0:ix1, iy0:iy1, iz0:iz1] = True


def empty_map():
    return VoxelGrid.empty((40, 40, 12), RES)


def hide_yard():
    # 20 x 20 x 4.8 m yard with one tall slab + two side pillars
    dims = (50, 50, 12)
    occ = np.zeros(dims, bool)
    add_box(occ, 6.8, 13.2, 8.8, 11.2, 0.0, 4.8)   # central slab, full height
    add_box(occ, 3.0, 4.6, 3.0, 4.6, 0.0, 3.2)     # SW pillar
    add_box(occ, 15.4, 17.0, 14.6, 16.2, 0.0, 3.2)  # NE pillar
    return VoxelGrid(np.zeros(3), RES, dims, occ)


def complex_city():
    # 40 x 40 x 8 m downtown block: >= 10 non-convex buildings
    dims = (100, 100, 20)
    occ = np.zeros(dims, bool)

    def L(x, y, w, l, t, h, flip=False):
        """L-shaped building anchored at (x, y): two slabs of thickness t."""
        add_box(occ, x, x + w, y, y + t, 0, h)
        if flip:
            add_box(occ, x + w - t, x + w, y, y + l, 0, h)
        else:
            add_box(occ, x, x + t, y, y + l, 0, h)

    def U(x, y, w, l, t, h):
        add_box(occ, x, x + w, y, y + t, 0, h)
        add_box(occ, x, x + t, y, y + l, 0, h)
        add_box(occ, x + w - t, x + w, y, y + l, 0, h)

    def T(x, y, w, l, t, h):
        add_box(occ, x, x + w, y + l - t, y + l, 0, h)
        add_box(occ, x + w / 2 - t / 2, x + w / 2 + t / 2, y, y + l, 0, h)

    # west column
    L(3.0, 3.0, 5.6, 5.6, 1.6, 5.2)
    U(2.6, 13.0, 6.0, 5.2, 1.6, 4.4)
    L(3.0, 23.0, 5.2, 6.0, 1.6, 6.0, flip=True)
    U(2.6, 32.0, 6.0, 5.2, 1.6, 3.6)
    # center column
    T(13.0, 3.4, 6.0, 5.2, 1.6, 4.8)
    L(14.0, 13.4, 5.6, 5.6, 1.6, 5.6)
    U(13.4, 23.0, 6.4, 5.6, 1.6, 4.4)
    T(13.4, 32.2, 6.0, 5.0, 1.6, 5.2)
    # east column
    U(24.0, 3.0, 6.0, 5.6, 1.6, 4.4)
    L(24.4, 13.0, 5.6, 6.0, 1.6, 6.4)
    T(24.0, 23.4, 6.4, 5.2, 1.6, 4.8)
    L(24.4, 32.0, 5.6, 5.6, 1.6, 4.0, flip=True)
    # far-east strip
    add_box(occ, 33.6, 37.0, 8.0, 10.0, 0, 3.6)
    add_box(occ, 33.6, 37.0, 20.0, 22.0, 0, 5.2)
    add_box(occ, 33.6, 37.0, 30.0, 32.0, 0, 4.4)
    return VoxelGrid(np.zeros(3), RES, dims, occ)


def main():
    out = Path(__file__).resolve().parents[1] / "maps"
    out.mkdir(exist_ok=True)
    for name, grid in (("empty", empty_map()), ("hide_yard", hide_yard()),
                       ("complex_city", complex_city())):
        path = out / f"{name}.vxmap"
        save_map_file(grid, path)
        print(f"{path}: dims {grid.dims}, occupied {int(grid.occupancy.sum())}")


if __name__ == "__main__":
    main()
