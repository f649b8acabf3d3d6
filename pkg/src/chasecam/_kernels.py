"""Numba kernels for the grid-heavy inner loops.

Plain-python wrappers in world/visibility/preplan call into these; keeping
them together makes the compiled surface small and cacheable.  All kernels
use the same clamped trilinear convention as EsdfGrid.phi_at.
"""
import numpy as np
from numba import njit, prange


@njit(cache=True, fastmath=True)
def _trilinear(phi, origin, res, px, py, pz):
    nx, ny, nz = phi.shape
    # voxel-center lattice coordinates, clamped to the boundary cells
    ux = (px - origin[0]) / res - 0.5
    uy = (py - origin[1]) / res - 0.5
    uz = (pz - origin[2]) / res - 0.5
    if ux < 0.0:
        ux = 0.0
    elif ux > nx - 1.0:
        ux = nx - 1.0
    if uy < 0.0:
        uy = 0.0
    elif uy > ny - 1.0:
        uy = ny - 1.0
    if uz < 0.0:
        uz = 0.0
    elif uz > nz - 1.0:
        uz = nz - 1.0
    ix = int(ux)
    iy = int(uy)
    iz = int(uz)
    if ix > nx - 2:
        ix = nx - 2 if nx > 1 else 0
    if iy > ny - 2:
        iy = ny - 2 if ny > 1 else 0
    if iz > nz - 2:
        iz = nz - 2 if nz > 1 else 0
    fx = ux - ix
    fy = uy - iy
    fz = uz - iz
    jx = ix + 1 if nx > 1 else ix
    jy = iy + 1 if ny > 1 else iy
    jz = iz + 1 if nz > 1 else iz
    c000 = phi[ix, iy, iz]
    c100 = phi[jx, iy, iz]
    c010 = phi[ix, jy, iz]
    c110 = phi[jx, jy, iz]
    c001 = phi[ix, iy, jz]
    c101 = phi[jx, iy, jz]
    c011 = phi[ix, jy, jz]
    c111 = phi[jx, jy, jz]
    c00 = c000 * (1 - fx) + c100 * fx
    c10 = c010 * (1 - fx) + c110 * fx
    c01 = c001 * (1 - fx) + c101 * fx
    c11 = c011 * (1 - fx) + c111 * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    return c0 * (1 - fz) + c1 * fz


@njit(cache=True)
def interp3(phi, origin, res, p):
    return _trilinear(phi, origin, res, p[0], p[1], p[2])


@njit(cache=True)
def interp3_many(phi, origin, res, pts):
    n = pts.shape[0]
    out = np.empty(n)
    for i in range(n):
        out[i] = _trilinear(phi, origin, res, pts[i, 0], pts[i, 1], pts[i, 2])
    return out


@njit(cache=True)
def interp3_grad(phi, origin, res, p):
    """Exact gradient of the clamped trilinear interpolant (cellwise)."""
    nx, ny, nz = phi.shape
    out = np.zeros(3)
    ux = (p[0] - origin[0]) / res - 0.5
    uy = (p[1] - origin[1]) / res - 0.5
    uz = (p[2] - origin[2]) / res - 0.5
    inx = 0.0 <= ux <= nx - 1.0
    iny = 0.0 <= uy <= ny - 1.0
    inz = 0.0 <= uz <= nz - 1.0
    if ux < 0.0:
        ux = 0.0
    elif ux > nx - 1.0:
        ux = nx - 1.0
    if uy < 0.0:
        uy = 0.0
    elif uy > ny - 1.0:
        uy = ny - 1.0
    if uz < 0.0:
        uz = 0.0
    elif uz > nz - 1.0:
        uz = nz - 1.0
    ix = int(ux)
    iy = int(uy)
    iz = int(uz)
    if ix > nx - 2:
        ix = nx - 2 if nx > 1 else 0
    if iy > ny - 2:
        iy = ny - 2 if ny > 1 else 0
    if iz > nz - 2:
        iz = nz - 2 if nz > 1 else 0
    fx = ux - ix
    fy = uy - iy
    fz = uz - iz
    jx = ix + 1 if nx > 1 else ix
    jy = iy + 1 if ny > 1 else iy
    jz = iz + 1 if nz > 1 else iz
    c000 = phi[ix, iy, iz]
    c100 = phi[jx, iy, iz]
    c010 = phi[ix, jy, iz]
    c110 = phi[jx, jy, iz]
    c001 = phi[ix, iy, jz]
    c101 = phi[jx, iy, jz]
    c011 = phi[ix, jy, jz]
    c111 = phi[jx, jy, jz]
    # d/dx with y,z weights
    dx = ((c100 - c000) * (1 - fy) * (1 - fz) + (c110 - c010) * fy * (1 - fz)
          + (c101 - c001) * (1 - fy) * fz + (c111 - c011) * fy * fz)
    dy = ((c010 - c000) * (1 - fx) * (1 - fz) + (c110 - c100) * fx * (1 - fz)
          + (c011 - c001) * (1 - fx) * fz + (c111 - c101) * fx * fz)
    dz = ((c001 - c000) * (1 - fx) * (1 - fy) + (c101 - c100) * fx * (1 - fy)
          + (c011 - c010) * (1 - fx) * fy + (c111 - c110) * fx * fy)
    if inx and nx > 1:
        out[0] = dx / res
    if iny and ny > 1:
        out[1] = dy / res
    if inz and nz > 1:
        out[2] = dz / res
    return out


@njit(cache=True)
def traverse(origin, res, dims, a, b):
    """Amanatides-Woo walk over the cell lattice, keeping per-voxel intervals.

    Returns (indices (m,3), t_mid (m,), t_len (m,), m) with t in [0, 1] along
    a->b.  Corner grazes (zero-length intervals) are skipped so the result
    matches dense point sampling.
    """
    nx, ny, nz = dims[0], dims[1], dims[2]
    max_len = nx + ny + nz + 3
    out_idx = np.empty((max_len, 3), np.int64)
    out_mid = np.empty(max_len, np.float64)
    out_len = np.empty(max_len, np.float64)

    ua = np.empty(3)
    d = np.empty(3)
    for k in range(3):
        ua[k] = (a[k] - origin[k]) / res
        d[k] = (b[k] - a[k]) / res

    cur = np.empty(3, np.int64)
    lim = np.empty(3, np.int64)
    lim[0], lim[1], lim[2] = nx, ny, nz
    for k in range(3):
        i = int(np.floor(ua[k]))
        if i < 0:
            i = 0
        if i > lim[k] - 1:
            i = lim[k] - 1
        cur[k] = i

    step = np.empty(3, np.int64)
    t_max = np.empty(3)
    t_delta = np.empty(3)
    INF = 1e300
    for k in range(3):
        if d[k] > 0.0:
            step[k] = 1
            t_max[k] = (cur[k] + 1.0 - ua[k]) / d[k]
            t_delta[k] = 1.0 / d[k]
        elif d[k] < 0.0:
            step[k] = -1
            t_max[k] = (cur[k] - ua[k]) / d[k]
            t_delta[k] = -1.0 / d[k]
        else:
            step[k] = 0
            t_max[k] = INF
            t_delta[k] = INF

    m = 0
    t_cur = 0.0
    while True:
        t_next = t_max[0]
        if t_max[1] < t_next:
            t_next = t_max[1]
        if t_max[2] < t_next:
            t_next = t_max[2]
        t_end = t_next if t_next < 1.0 else 1.0
        seg = t_end - t_cur
        if seg > 0.0 or m == 0:
            out_idx[m, 0] = cur[0]
            out_idx[m, 1] = cur[1]
            out_idx[m, 2] = cur[2]
            out_mid[m] = 0.5 * (t_cur + t_end)
            out_len[m] = seg
            m += 1
        if t_next >= 1.0:
            break
        # advance every axis tied at the boundary (skips corner-graze voxels)
        for k in range(3):
            if t_max[k] == t_next:
                cur[k] += step[k]
                t_max[k] += t_delta[k]
                if cur[k] < 0 or cur[k] >= lim[k]:
                    return out_idx, out_mid, out_len, m
        t_cur = t_next
    return out_idx, out_mid, out_len, m


@njit(cache=True, fastmath=True)
def min_phi_segment(phi, origin, res, dims, a, b):
    """min of trilinear phi over segment endpoints + per-voxel midpoints.

    Samples inside occupied voxels (stored phi < 0) are clamped down to the
    voxel's own value: the interpolant can stay positive on a corner graze,
    which would otherwise break `occluded => score <= 0`.  Allocation-free
    walk (same cell sequence as `traverse`).
    """
    ax, ay, az = a[0], a[1], a[2]
    bx, by, bz = b[0], b[1], b[2]
    best = _trilinear(phi, origin, res, ax, ay, az)
    v = _trilinear(phi, origin, res, bx, by, bz)
    if v < best:
        best = v

    INF = 1e300
    cx = cy = cz = 0
    sx = sy = sz = 0
    tmx = tmy = tmz = INF
    tdx = tdy = tdz = INF
    for k in range(3):
        ua = (a[k] - origin[k]) / res
        d = (b[k] - a[k]) / res
        i = int(np.floor(ua))
        if i < 0:
            i = 0
        if i > dims[k] - 1:
            i = dims[k] - 1
        if d > 0.0:
            step = 1
            tmax = (i + 1.0 - ua) / d
            tdelta = 1.0 / d
        elif d < 0.0:
            step = -1
            tmax = (i - ua) / d
            tdelta = -1.0 / d
        else:
            step = 0
            tmax = INF
            tdelta = INF
        if k == 0:
            cx, sx, tmx, tdx = i, step, tmax, tdelta
        elif k == 1:
            cy, sy, tmy, tdy = i, step, tmax, tdelta
        else:
            cz, sz, tmz, tdz = i, step, tmax, tdelta

    dx = bx - ax
    dy = by - ay
    dz = bz - az
    t_cur = 0.0
    first = True
    while True:
        t_next = tmx
        if tmy < t_next:
            t_next = tmy
        if tmz < t_next:
            t_next = tmz
        t_end = t_next if t_next < 1.0 else 1.0
        if t_end > t_cur or first:
            first = False
            t = 0.5 * (t_cur + t_end)
            v = _trilinear(phi, origin, res, ax + t * dx, ay + t * dy, az + t * dz)
            cell = phi[cx, cy, cz]
            if cell < 0.0 and cell < v:
                v = cell
            if v < best:
                best = v
        if t_next >= 1.0:
            return best
        if tmx == t_next:
            cx += sx
            tmx += tdx
            if cx < 0 or cx >= dims[0]:
                return best
        if tmy == t_next:
            cy += sy
            tmy += tdy
            if cy < 0 or cy >= dims[1]:
                return best
        if tmz == t_next:
            cz += sz
            tmz += tdz
            if cz < 0 or cz >= dims[2]:
                return best
        t_cur = t_next


@njit(cache=True, fastmath=True)
def segment_blocked(occ, origin, res, dims, a, b):
    """True if any traversed voxel is occupied (allocation-free walk)."""
    INF = 1e300
    cx = cy = cz = 0
    sx = sy = sz = 0
    tmx = tmy = tmz = INF
    tdx = tdy = tdz = INF
    for k in range(3):
        ua = (a[k] - origin[k]) / res
        d = (b[k] - a[k]) / res
        i = int(np.floor(ua))
        if i < 0:
            i = 0
        if i > dims[k] - 1:
            i = dims[k] - 1
        if d > 0.0:
            step = 1
            tmax = (i + 1.0 - ua) / d
            tdelta = 1.0 / d
        elif d < 0.0:
            step = -1
            tmax = (i - ua) / d
            tdelta = -1.0 / d
        else:
            step = 0
            tmax = INF
            tdelta = INF
        if k == 0:
            cx, sx, tmx, tdx = i, step, tmax, tdelta
        elif k == 1:
            cy, sy, tmy, tdy = i, step, tmax, tdelta
        else:
            cz, sz, tmz, tdz = i, step, tmax, tdelta

    t_cur = 0.0
    first = True
    while True:
        t_next = tmx
        if tmy < t_next:
            t_next = tmy
        if tmz < t_next:
            t_next = tmz
        t_end = t_next if t_next < 1.0 else 1.0
        if (t_end > t_cur or first) and occ[cx, cy, cz]:
            return True
        first = False
        if t_next >= 1.0:
            return False
        if tmx == t_next:
            cx += sx
            tmx += tdx
            if cx < 0 or cx >= dims[0]:
                return False
        if tmy == t_next:
            cy += sy
            tmy += tdy
            if cy < 0 or cy >= dims[1]:
                return False
        if tmz == t_next:
            cz += sz
            tmz += tdz
            if cz < 0 or cz >= dims[2]:
                return False
        t_cur = t_next


@njit(cache=True)
def segment_blocked_many(occ, origin, res, dims, starts, end):
    """LOS check from many starts to one end point."""
    n = starts.shape[0]
    out = np.zeros(n, np.bool_)
    for i in range(n):
        out[i] = segment_blocked(occ, origin, res, dims, starts[i], end)
    return out


@njit(cache=True)
def min_phi_segment_many(phi, origin, res, dims, starts, end):
    """min_phi_segment from many starts to one end point."""
    n = starts.shape[0]
    out = np.empty(n)
    for i in range(n):
        out[i] = min_phi_segment(phi, origin, res, dims, starts[i], end)
    return out


@njit(cache=True)
def _trilinear2(fa, fb, origin, res, px, py, pz):
    """Two lattices with identical geometry sampled at one point."""
    nx, ny, nz = fa.shape
    ux = (px - origin[0]) / res - 0.5
    uy = (py - origin[1]) / res - 0.5
    uz = (pz - origin[2]) / res - 0.5
    if ux < 0.0:
        ux = 0.0
    elif ux > nx - 1.0:
        ux = nx - 1.0
    if uy < 0.0:
        uy = 0.0
    elif uy > ny - 1.0:
        uy = ny - 1.0
    if uz < 0.0:
        uz = 0.0
    elif uz > nz - 1.0:
        uz = nz - 1.0
    ix = int(ux)
    iy = int(uy)
    iz = int(uz)
    if ix > nx - 2:
        ix = nx - 2 if nx > 1 else 0
    if iy > ny - 2:
        iy = ny - 2 if ny > 1 else 0
    if iz > nz - 2:
        iz = nz - 2 if nz > 1 else 0
    fx = ux - ix
    fy = uy - iy
    fz = uz - iz
    jx = ix + 1 if nx > 1 else ix
    jy = iy + 1 if ny > 1 else iy
    jz = iz + 1 if nz > 1 else iz
    w000 = (1 - fx) * (1 - fy) * (1 - fz)
    w100 = fx * (1 - fy) * (1 - fz)
    w010 = (1 - fx) * fy * (1 - fz)
    w110 = fx * fy * (1 - fz)
    w001 = (1 - fx) * (1 - fy) * fz
    w101 = fx * (1 - fy) * fz
    w011 = (1 - fx) * fy * fz
    w111 = fx * fy * fz
    va = (w000 * fa[ix, iy, iz] + w100 * fa[jx, iy, iz]
          + w010 * fa[ix, jy, iz] + w110 * fa[jx, jy, iz]
          + w001 * fa[ix, iy, jz] + w101 * fa[jx, iy, jz]
          + w011 * fa[ix, jy, jz] + w111 * fa[jx, jy, jz])
    vb = (w000 * fb[ix, iy, iz] + w100 * fb[jx, iy, iz]
          + w010 * fb[ix, jy, iz] + w110 * fb[jx, jy, iz]
          + w001 * fb[ix, iy, jz] + w101 * fb[jx, iy, jz]
          + w011 * fb[ix, jy, jz] + w111 * fb[jx, jy, jz])
    return va, vb


@njit(cache=True, parallel=True, fastmath=True)
def edge_costs(u_pts, w_pts, pair_u, pair_w,
               phi_u, phi_w,
               phi, origin, res,
               psi_a, psi_b, ab_origin, ab_res,
               r_safe_u, clear_step, n_quad,
               w_v, track_cost_w, out):
    """Cost of every candidate graph edge, or inf when a constraint fails.

    Edge (u, w): weight = |u-w|^2 + w_v / sqrt(I_a * I_b) + track_cost_w[w],
    where I_* are trapezoid integrals of the visibility lattices psi_a /
    psi_b along the edge.  Clearance uses equispaced phi samples at spacing
    <= clear_step, skipped when the endpoint clearances phi_u/phi_w already
    bound the interior above the threshold (interpolant slope <= 1.8 plus a
    one-voxel margin).  The per-edge threshold r_safe_u allows relaxing the
    edge leaving the chaser's current position.
    """
    n = pair_u.shape[0]
    for e in prange(n):
        iu = pair_u[e]
        iw = pair_w[e]
        ux, uy, uz = u_pts[iu, 0], u_pts[iu, 1], u_pts[iu, 2]
        wx, wy, wz = w_pts[iw, 0], w_pts[iw, 1], w_pts[iw, 2]
        dx = wx - ux
        dy = wy - uy
        dz = wz - uz
        length = np.sqrt(dx * dx + dy * dy + dz * dz)

        # clearance: min phi along the edge must stay >= the safety radius
        pu = phi_u[iu]
        pw = phi_w[iw]
        if pu < r_safe_u[e] or pw < r_safe_u[e]:
            out[e] = np.inf
            continue
        if 0.5 * (pu + pw - 1.8 * length) < r_safe_u[e] + res:
            n_clear = int(length / clear_step) + 2
            ok = True
            for s in range(n_clear):
                t = s / (n_clear - 1.0)
                v = _trilinear(phi, origin, res, ux + t * dx, uy + t * dy, uz + t * dz)
                if v < r_safe_u[e]:
                    ok = False
                    break
            if not ok:
                out[e] = np.inf
                continue

        if length <= 0.0:
            out[e] = np.inf
            continue

        # Eq-style visibility cost: inverse geometric mean of the two
        # line integrals of psi along the edge (trapezoid rule).
        ia = 0.0
        ib = 0.0
        for s in range(n_quad):
            t = s / (n_quad - 1.0)
            px = ux + t * dx
            py = uy + t * dy
            pz = uz + t * dz
            va, vb = _trilinear2(psi_a, psi_b, ab_origin, ab_res, px, py, pz)
            wgt = 0.5 if (s == 0 or s == n_quad - 1) else 1.0
            ia += wgt * va
            ib += wgt * vb
        h = length / (n_quad - 1.0)
        ia *= h
        ib *= h
        if ia <= 0.0 or ib <= 0.0:
            out[e] = np.inf
            continue
        out[e] = length * length + w_v / np.sqrt(ia * ib) + track_cost_w[iw]


@njit(cache=True, parallel=True, fastmath=True)
def psi_lattice(phi, origin, res, dims, pts, target):
    """Visibility score (min phi along LOS to target) at each lattice point."""
    n = pts.shape[0]
    out = np.empty(n)
    for i in prange(n):
        out[i] = min_phi_segment(phi, origin, res, dims, pts[i], target)
    return out


@njit(cache=True, parallel=True, fastmath=True)
def connect_pairs(U, W, reach_u, d_max):
    """Compact (iu, iw) lists of pairs within connection distance, row-major
    ordered, restricted to reachable U rows."""
    m = U.shape[0]
    n = W.shape[0]
    d2 = d_max * d_max + 1e-9
    counts = np.zeros(m + 1, np.int64)
    for i in prange(m):
        if not reach_u[i]:
            continue
        c = 0
        ux, uy, uz = U[i, 0], U[i, 1], U[i, 2]
        for j in range(n):
            dx = ux - W[j, 0]
            dy = uy - W[j, 1]
            dz = uz - W[j, 2]
            if dx * dx + dy * dy + dz * dz <= d2:
                c += 1
        counts[i + 1] = c
    offsets = np.cumsum(counts)
    total = offsets[m]
    iu = np.empty(total, np.int64)
    iw = np.empty(total, np.int64)
    for i in prange(m):
        if not reach_u[i]:
            continue
        e = offsets[i]
        ux, uy, uz = U[i, 0], U[i, 1], U[i, 2]
        for j in range(n):
            dx = ux - W[j, 0]
            dy = uy - W[j, 1]
            dz = uz - W[j, 2]
            if dx * dx + dy * dy + dz * dz <= d2:
                iu[e] = i
                iw[e] = j
                e += 1
    return iu, iw


@njit(cache=True)
def dp_relax(iu, iw, cost, dist_u, n_w):
    """One DP layer over the edge list: per target node the minimum of
    dist_u[iu] + cost, with the first (lowest-u) minimizer as parent."""
    dist_w = np.full(n_w, np.inf)
    parent = np.full(n_w, -1, np.int64)
    for e in range(iu.shape[0]):
        c = cost[e]
        if c == np.inf:
            continue
        cand = dist_u[iu[e]] + c
        if cand < dist_w[iw[e]]:
            dist_w[iw[e]] = cand
            parent[iw[e]] = iu[e]
    return dist_w, parent
