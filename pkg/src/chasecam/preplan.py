"""Chasing-corridor preplanning.

For each horizon timestep a layer of candidate viewpoints around the
predicted target position is generated, consecutive layers are wired into a
directed acyclic graph whose edge weights trade travel distance, visibility
and tracking-distance error, and dynamic programming extracts the optimal
viewpoint skeleton.  Oriented boxes of half-width r_c around the skeleton
segments become the linear corridor constraints for the smooth planner.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .visibility import VisibilityField, visibility_field
from .world import EsdfGrid


class InfeasiblePlanError(RuntimeError):
    """No viewpoint sequence satisfies the constraints."""

    def __init__(self, msg, layer=None):
        super().__init__(msg)
        self.layer = layer


@dataclass(frozen=True)
class PreplanParams:
    n_layers: int = 4          # viewpoints per horizon
    d_lower: float = 1.0       # min tracking distance [m]
    d_upper: float = 4.0       # max tracking distance [m]
    d_des: float = 2.5         # desired tracking distance [m]
    d_max: float = 2.0         # max inter-layer connection [m]
    w_visibility: float = 1.0
    w_distance: float = 5.5
    r_safe: float = 0.3        # clearance along skeleton edges [m]
    r_corridor: float = 0.2    # corridor half-width [m], < r_safe
    grid_stride: float = 0.4   # candidate lattice stride [m]
    elev_min_deg: float = 20.0
    elev_max_deg: float = 70.0
    edge_samples: int = 5      # quadrature points for the visibility integral

    def __post_init__(self):
        if not (0 < self.d_lower <= self.d_des <= self.d_upper):
            raise ValueError(
                f"need 0 < d_lower <= d_des <= d_upper, got {self.d_lower}, {self.d_des}, {self.d_upper}")
        if not (0 < self.r_corridor < self.r_safe):
            raise ValueError(f"need 0 < r_corridor < r_safe, got {self.r_corridor}, {self.r_safe}")
        if self.elev_min_deg >= self.elev_max_deg:
            raise ValueError("elev_min_deg must be < elev_max_deg")
        if self.edge_samples < 2:
            raise ValueError("edge_samples must be >= 2")
        if self.n_layers < 1 or self.grid_stride <= 0 or self.d_max <= 0:
            raise ValueError("n_layers, grid_stride, d_max must be positive")


@dataclass(frozen=True)
class ViewpointLayer:
    k: int
    target: np.ndarray
    candidates: np.ndarray  # (m, 3), lexicographic in lattice index

    def __len__(self):
        return self.candidates.shape[0]


@dataclass(frozen=True)
class ViewpointSkeleton:
    points: np.ndarray  # (N+1, 3), row 0 is the chaser position at plan time
    times: np.ndarray   # (N+1,)
    total_cost: float


@dataclass(frozen=True)
class Corridor:
    """Oriented box A x <= b around one skeleton segment.

    face_mask marks the two longitudinal end-cap rows (the planes through
    the segment endpoints); lateral rows are the remainder."""

    normals: np.ndarray   # (6, 3) unit rows
    offsets: np.ndarray   # (6,)
    segment: np.ndarray   # (2, 3)
    face_mask: np.ndarray = field(default_factory=lambda: np.array(
        [True, True, False, False, False, False]))

    def contains(self, p, tol: float = 0.0) -> bool:
        return bool(np.all(self.normals @ np.asarray(p, float) <= self.offsets + tol))

    def corners(self) -> np.ndarray:
        """The 8 box corners (for rendering)."""
        a, b = self.segment
        axis = b - a
        length = np.linalg.norm(axis)
        if length < 1e-12:
            u = np.array([1.0, 0.0, 0.0])
            n1 = np.array([0.0, 1.0, 0.0])
            n2 = np.array([0.0, 0.0, 1.0])
            length = 0.0
        else:
            u = axis / length
            n1, n2 = _frame_completion(u)
        r = -(self.normals[2] @ a - self.offsets[2])  # lateral half-width
        pts = []
        for sa in (a, b):
            for s1 in (-1, 1):
                for s2 in (-1, 1):
                    pts.append(sa + s1 * r * n1 + s2 * r * n2)
        return np.asarray(pts)


def _frame_completion(u):
    """Deterministic orthonormal completion: seed with the world axis least
    aligned with u."""
    seed = np.zeros(3)
    seed[int(np.argmin(np.abs(u)))] = 1.0
    n1 = seed - (seed @ u) * u
    n1 /= np.linalg.norm(n1)
    n2 = np.cross(u, n1)
    return n1, n2


def los_elevation_deg(candidate, target) -> float:
    """Elevation of the target->candidate sight line above horizontal."""
    d = np.asarray(candidate, float) - np.asarray(target, float)
    return float(np.degrees(np.arctan2(d[2], np.hypot(d[0], d[1]))))


def candidate_viewpoints(esdf: EsdfGrid, target, params: PreplanParams,
                         k: int = 0, d_upper: float | None = None) -> ViewpointLayer:
    """Lattice points in the tracking annulus that are visible from the
    target, sufficiently clear of obstacles, and within the LOS elevation
    band.  Ordering is lexicographic in the lattice offsets."""
    target = np.asarray(target, float)
    d_u = params.d_upper if d_upper is None else d_upper
    stride = params.grid_stride
    n_s = int(np.ceil(d_u / stride + 1e-9))
    offs = np.arange(-n_s, n_s + 1) * stride
    pts = target[None, None, None, :] + np.stack(
        np.meshgrid(offs, offs, offs, indexing="ij"), axis=-1)
    pts = pts.reshape(-1, 3)

    grid = esdf.grid
    inb = np.all((pts >= grid.origin) & (pts <= grid.upper), axis=1)
    pts = pts[inb]

    d = np.linalg.norm(pts - target, axis=1)
    keep = (d >= params.d_lower - 1e-12) & (d <= d_u + 1e-12)
    pts = pts[keep]
    if pts.shape[0]:
        rel = pts - target
        elev = np.degrees(np.arctan2(rel[:, 2], np.hypot(rel[:, 0], rel[:, 1])))
        keep = (elev >= params.elev_min_deg - 1e-9) & (elev <= params.elev_max_deg + 1e-9)
        pts = pts[keep]
    if pts.shape[0]:
        keep = esdf.phi_at_many(pts) >= params.r_safe
        pts = pts[keep]
    if pts.shape[0]:
        blocked = _kernels.segment_blocked_many(grid.occupancy, grid.origin, grid.resolution,
                                                np.asarray(grid.dims, np.int64),
                                                np.ascontiguousarray(pts), target)
        pts = pts[~blocked]
    return ViewpointLayer(k=k, target=target, candidates=pts)


def edge_visibility_cost(field_a: VisibilityField, field_b: VisibilityField,
                         v_a, v_b, edge_samples: int) -> float:
    """Inverse geometric mean of the line integrals of the two visibility
    fields along the edge (trapezoid rule, edge_samples equispaced points).
    Zero-length edges and non-positive integrals return inf (edge rejected).
    """
    v_a = np.asarray(v_a, float)
    v_b = np.asarray(v_b, float)
    length = float(np.linalg.norm(v_b - v_a))
    if length <= 0.0:
        return np.inf
    ia = 0.0
    ib = 0.0
    for s in range(edge_samples):
        t = s / (edge_samples - 1.0)
        p = v_a + t * (v_b - v_a)
        w = 0.5 if s in (0, edge_samples - 1) else 1.0
        ia += w * field_a.sample(p)
        ib += w * field_b.sample(p)
    h = length / (edge_samples - 1.0)
    ia *= h
    ib *= h
    if ia <= 0.0 or ib <= 0.0:
        return np.inf
    return 1.0 / np.sqrt(ia * ib)


@dataclass
class LayeredGraph:
    """Start node + candidate layers connected by directed edge groups.

    The start is node layer 0 (a single candidate).  edges[k] is the
    (iu, iw, cost) triple for node layer k -> k+1, row-major ordered; edges
    violating a constraint are absent or carry inf cost.  pair_fields[k]
    holds the two visibility lattices (previous-step target, current-step
    target) used for that edge group, both on one shared lattice region.
    """

    start: np.ndarray
    layers: list[ViewpointLayer]
    times: np.ndarray
    edges: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=list)
    pair_fields: list[tuple[VisibilityField, VisibilityField]] = field(default_factory=list)

    @property
    def layer_sizes(self):
        return [1] + [len(l) for l in self.layers]

    def cost_matrix(self, k: int) -> np.ndarray:
        """Dense (|layer k|, |layer k+1|) edge-cost view (inf = no edge)."""
        sizes = self.layer_sizes
        out = np.full((sizes[k], sizes[k + 1]), np.inf)
        iu, iw, cost = self.edges[k]
        out[iu, iw] = cost
        return out


def _field_region(clouds, pad):
    all_pts = np.vstack(clouds)
    return all_pts.min(axis=0) - pad, all_pts.max(axis=0) + pad


def build_graph(layers: list[ViewpointLayer], start, start_target,
                esdf: EsdfGrid, params: PreplanParams,
                times=None) -> LayeredGraph:
    """Connect consecutive layers with edges satisfying the clearance and
    connection-distance constraints; weights follow the preplan cost
    (distance^2 + w_v * visibility + w_d * tracking error)."""
    if not layers:
        raise ValueError("no layers")
    start = np.asarray(start, float)
    start_target = np.asarray(start_target, float)
    grid = esdf.grid
    res = grid.resolution
    stride = params.grid_stride

    node_layers = [np.asarray(start, float).reshape(1, 3)] + [l.candidates for l in layers]
    targets = [start_target] + [l.target for l in layers]

    # one visibility lattice per timestep target, all on one shared region
    # (shared lattice geometry lets the edge kernel reuse interpolation
    # weights across the two fields of an edge group)
    clouds = [c for c in node_layers if c.shape[0]] + [np.asarray(targets)]
    lo, hi = _field_region(clouds, pad=stride)
    lo = np.maximum(lo, grid.origin)
    hi = np.minimum(hi, grid.upper)
    fields = [visibility_field(esdf, tgt, lo, hi, stride) for tgt in targets]

    # the edge out of the chaser's current position must not be pruned by
    # clearance the chaser already violates slightly; relax to phi(start)
    phi_start = esdf.phi_at(start)
    node_phis = [np.array([phi_start])] + [esdf.phi_at_many(l.candidates) if len(l)
                                           else np.zeros(0) for l in layers]
    edges = []
    pair_fields = []
    # candidates unreachable from the start within k connection hops can
    # never sit on an optimal path; skip their outgoing edge costs
    reach = np.ones(1, bool)
    for k in range(1, len(node_layers)):
        U = np.ascontiguousarray(node_layers[k - 1])
        W = np.ascontiguousarray(node_layers[k])
        n = W.shape[0]
        field_a = fields[k - 1]
        field_b = fields[k]
        pair_fields.append((field_a, field_b))

        iu = np.zeros(0, np.int64)
        iw = np.zeros(0, np.int64)
        cost = np.zeros(0)
        if U.shape[0] and n and reach.any():
            iu, iw = _kernels.connect_pairs(U, W, reach, params.d_max)
            if iu.size:
                track = params.w_distance * (
                    np.linalg.norm(W - targets[k][None, :], axis=1) - params.d_des) ** 2
                r_edge = np.full(iu.size, params.r_safe)
                if k == 1:
                    r_edge[:] = min(params.r_safe, phi_start)
                cost = np.empty(iu.size)
                _kernels.edge_costs(
                    U, W, iu, iw,
                    node_phis[k - 1], node_phis[k],
                    esdf.phi, grid.origin, res,
                    field_a.values, field_b.values, field_a.origin - 0.5 * stride, stride,
                    r_edge, 0.5 * res, params.edge_samples,
                    params.w_visibility, track, cost)
        edges.append((iu, iw, cost))
        reach = np.zeros(n, bool)
        if iu.size:
            reach[iw[np.isfinite(cost)]] = True

    if times is None:
        times = np.arange(len(node_layers), dtype=float)
    return LayeredGraph(start=start, layers=list(layers), times=np.asarray(times, float),
                        edges=edges, pair_fields=pair_fields)


def solve_viewpoint_sequence(graph: LayeredGraph) -> ViewpointSkeleton:
    """Minimum-total-weight path through one candidate per layer (DP over
    the edge lists).

    Ties break toward the lowest candidate index (edge lists are row-major,
    dp_relax keeps the first minimizer), making results deterministic for
    regression tests."""
    sizes = graph.layer_sizes
    dist = np.zeros(1)
    parents = []
    for k, (iu, iw, cost) in enumerate(graph.edges, start=1):
        dist, parent = _kernels.dp_relax(iu, iw, cost, dist, sizes[k])
        parents.append(parent)
        if not np.isfinite(dist).any():
            raise InfeasiblePlanError(f"no feasible path into layer {k}", layer=k)

    end = int(np.argmin(dist))
    total_cost = float(dist[end])
    idx_path = [end]
    for parent in reversed(parents[1:]):
        idx_path.append(int(parent[idx_path[-1]]))
    idx_path.reverse()

    pts = [graph.start]
    for layer, i in zip(graph.layers, idx_path):
        pts.append(layer.candidates[i])
    return ViewpointSkeleton(points=np.asarray(pts), times=graph.times.copy(),
                             total_cost=total_cost)


def corridors_from_skeleton(skeleton: ViewpointSkeleton, r_c: float) -> list[Corridor]:
    """One oriented box per consecutive viewpoint pair: two face half-spaces
    at the endpoints, four side half-spaces at perpendicular offset r_c."""
    out = []
    pts = skeleton.points
    for k in range(1, pts.shape[0]):
        a = pts[k - 1]
        b = pts[k]
        axis = b - a
        length = np.linalg.norm(axis)
        if length < 1e-12:
            normals = np.vstack([np.eye(3), -np.eye(3)])
            offsets = np.concatenate([a + r_c, -(a - r_c)])
            faces = np.zeros(6, bool)
        else:
            u = axis / length
            n1, n2 = _frame_completion(u)
            normals = np.vstack([u, -u, n1, -n1, n2, -n2])
            offsets = np.array([u @ b, -(u @ a),
                                n1 @ a + r_c, -(n1 @ a) + r_c,
                                n2 @ a + r_c, -(n2 @ a) + r_c])
            faces = np.array([True, True, False, False, False, False])
        out.append(Corridor(normals=normals, offsets=offsets,
                            segment=np.vstack([a, b]), face_mask=faces))
    return out


def plan_corridor_sequence(esdf: EsdfGrid, start, start_target, targets, times,
                           params: PreplanParams):
    """Candidate layers (with one +50% d_upper relaxation on empty layers),
    graph build, DP solve, corridor extraction."""
    layers = []
    for k, tgt in enumerate(targets, start=1):
        layer = candidate_viewpoints(esdf, tgt, params, k=k)
        if len(layer) == 0:
            layer = candidate_viewpoints(esdf, tgt, params, k=k,
                                         d_upper=1.5 * params.d_upper)
        if len(layer) == 0:
            raise InfeasiblePlanError(f"no candidate viewpoints for layer {k}", layer=k)
        layers.append(layer)
    graph = build_graph(layers, start, start_target, esdf, params, times=times)
    skeleton = solve_viewpoint_sequence(graph)
    corridors = corridors_from_skeleton(skeleton, params.r_corridor)
    return skeleton, corridors, graph
