import numpy as np
import pytest

from chasecam.visibility import is_visible, visibility_field, visibility_score
from chasecam.world import VoxelGrid, compute_esdf


def dense_min_phi(esdf, a, b, n=1000):
    """Independent min-phi oracle: dense equispaced phi samples."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    ts = np.linspace(0.0, 1.0, n)
    pts = a[None, :] + ts[:, None] * (b - a)[None, :]
    return min(esdf.phi_at(p) for p in pts)


class TestIsVisible:
    def test_empty_map_any_pair(self, rng):
        g = VoxelGrid.empty((10, 10, 10), 0.5)
        for _ in range(20):
            a = rng.random(3) * 4.9 + 0.05
            b = rng.random(3) * 4.9 + 0.05
            assert is_visible(g, a, b)

    def test_degenerate_pair(self, wall_grid):
        p = np.array([1.0, 1.0, 1.0])
        assert is_visible(wall_grid, p, p)

    def test_wall_blocks(self, wall_grid):
        # opposite sides of the ix=6 wall, away from the doorway
        a = np.array([1.0, 1.0, 1.0])
        b = np.array([5.0, 1.0, 1.0])
        assert not is_visible(wall_grid, a, b)

    def test_through_doorway(self, wall_grid):
        a = np.array([1.0, 2.75, 1.0])
        b = np.array([5.0, 2.75, 1.0])
        assert is_visible(wall_grid, a, b)

    def test_matches_supersampling(self, wall_grid, rng):
        lo = wall_grid.origin + 0.05
        hi = wall_grid.upper - 0.05
        for _ in range(50):
            a = lo + rng.random(3) * (hi - lo)
            b = lo + rng.random(3) * (hi - lo)
            n = max(2, int(np.linalg.norm(b - a) / (wall_grid.resolution / 100)) + 1)
            ts = np.linspace(0, 1, n)
            pts = a[None, :] + ts[:, None] * (b - a)[None, :]
            idx = np.clip(np.floor((pts - wall_grid.origin) / wall_grid.resolution).astype(int),
                          0, np.asarray(wall_grid.dims) - 1)
            blocked = any(wall_grid.occupancy[tuple(i)] for i in idx)
            if blocked:
                # sampling can only under-detect; a blocked sample means occluded
                assert not is_visible(wall_grid, a, b)


class TestVisibilityScore:
    def test_empty_map_equals_cap(self):
        g = VoxelGrid.empty((10, 10, 10), 0.5)
        e = compute_esdf(g, cap=10.0)
        assert visibility_score(e, [1, 1, 1], [4, 4, 2]) == pytest.approx(10.0)

    def test_single_point(self, wall_esdf):
        p = np.array([1.3, 2.2, 1.7])
        assert visibility_score(wall_esdf, p, p) == pytest.approx(wall_esdf.phi_at(p), abs=1e-12)

    def test_against_dense_oracle(self, wall_esdf, rng):
        lo = wall_esdf.grid.origin + 0.05
        hi = wall_esdf.grid.upper - 0.05
        diag = wall_esdf.grid.resolution * np.sqrt(3)
        for _ in range(30):
            a = lo + rng.random(3) * (hi - lo)
            b = lo + rng.random(3) * (hi - lo)
            got = visibility_score(wall_esdf, a, b)
            oracle = dense_min_phi(wall_esdf, a, b)
            assert abs(got - oracle) <= diag

    def test_symmetry(self, wall_esdf, rng):
        lo = wall_esdf.grid.origin + 0.05
        hi = wall_esdf.grid.upper - 0.05
        for _ in range(30):
            a = lo + rng.random(3) * (hi - lo)
            b = lo + rng.random(3) * (hi - lo)
            assert visibility_score(wall_esdf, a, b) == pytest.approx(
                visibility_score(wall_esdf, b, a), abs=1e-9)

    def test_dominated_by_endpoints(self, wall_esdf, rng):
        lo = wall_esdf.grid.origin + 0.05
        hi = wall_esdf.grid.upper - 0.05
        for _ in range(30):
            a = lo + rng.random(3) * (hi - lo)
            b = lo + rng.random(3) * (hi - lo)
            s = visibility_score(wall_esdf, a, b)
            assert s <= min(wall_esdf.phi_at(a), wall_esdf.phi_at(b)) + 1e-9

    def test_occluded_implies_nonpositive(self, wall_esdf, rng):
        g = wall_esdf.grid
        lo = g.origin + 0.05
        hi = g.upper - 0.05
        found = 0
        for _ in range(200):
            a = lo + rng.random(3) * (hi - lo)
            b = lo + rng.random(3) * (hi - lo)
            if not is_visible(g, a, b):
                found += 1
                assert visibility_score(wall_esdf, a, b) <= 0.0
        assert found > 10

    def test_obstacle_offset_score(self):
        # single obstacle voxel a known lateral distance from a long LOS
        dims = (20, 9, 9)
        occ = np.zeros(dims, bool)
        occ[10, 6, 4] = True  # offset in +y from the LOS line y=2.25,z=2.25
        g = VoxelGrid(np.zeros(3), 0.5, dims, occ)
        e = compute_esdf(g, cap=10.0)
        a = np.array([0.75, 2.25, 2.25])
        b = np.array([9.25, 2.25, 2.25])
        d = np.linalg.norm(g.index_to_world((10, 6, 4)) - np.array([5.25, 2.25, 2.25]))
        score = visibility_score(e, a, b)
        assert abs(score - d) <= g.resolution * np.sqrt(3)


class TestVisibilityField:
    def test_empty_map_constant(self):
        g = VoxelGrid.empty((10, 10, 4), 0.5)
        e = compute_esdf(g, cap=10.0)
        f = visibility_field(e, [2.5, 2.5, 1.0], [0.5, 0.5, 1.0], [4.5, 4.5, 1.0], 0.5)
        assert np.all(f.values == 10.0)
        assert f.values.shape == (9, 9, 1)

    def test_lattice_matches_score(self, wall_esdf, rng):
        target = np.array([1.2, 2.6, 1.1])
        f = visibility_field(wall_esdf, target, [0.3, 0.3, 0.3], [5.4, 5.4, 3.3], 0.6)
        pos = f.positions().reshape(-1, 3)
        vals = f.values.reshape(-1)
        for i in rng.choice(len(pos), 40, replace=False):
            assert vals[i] == pytest.approx(visibility_score(wall_esdf, pos[i], target), abs=1e-12)

    def test_sample_interpolates_lattice(self, wall_esdf):
        target = np.array([1.2, 2.6, 1.1])
        f = visibility_field(wall_esdf, target, [0.3, 0.3, 0.3], [5.1, 5.1, 3.3], 0.6)
        pos = f.positions()
        assert f.sample(pos[2, 3, 1]) == pytest.approx(f.values[2, 3, 1], abs=1e-12)
        mid = 0.5 * (pos[2, 3, 1] + pos[3, 3, 1])
        assert f.sample(mid) == pytest.approx(0.5 * (f.values[2, 3, 1] + f.values[3, 3, 1]), abs=1e-12)

    def test_wall_shadow_nonpositive(self, wall_esdf):
        # target west of the wall; lattice points east of it are occluded
        target = np.array([1.0, 1.0, 1.0])
        f = visibility_field(wall_esdf, target, [4.1, 0.3, 0.3], [5.5, 5.1, 3.3], 0.35)
        pos = f.positions().reshape(-1, 3)
        vals = f.values.reshape(-1)
        for p, v in zip(pos, vals):
            vis = is_visible(wall_esdf.grid, p, target)
            if not vis:
                assert v <= 0.0

    def test_empty_region_error(self, wall_esdf):
        with pytest.raises(ValueError, match="empty region"):
            visibility_field(wall_esdf, [1, 1, 1], [2, 2, 2], [1, 1, 1], 0.5)

    def test_halved_stride_convergence(self, wall_esdf, rng):
        # denser internal sampling moves the score by at most ~1 voxel of phi
        lo = wall_esdf.grid.origin + 0.05
        hi = wall_esdf.grid.upper - 0.05
        diag = wall_esdf.grid.resolution * np.sqrt(3)
        for _ in range(20):
            a = lo + rng.random(3) * (hi - lo)
            b = lo + rng.random(3) * (hi - lo)
            coarse = visibility_score(wall_esdf, a, b)
            fine = dense_min_phi(wall_esdf, a, b, n=2000)
            finer = dense_min_phi(wall_esdf, a, b, n=4000)
            assert abs(fine - finer) <= diag
            assert abs(coarse - fine) <= diag
