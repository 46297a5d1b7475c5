"""Exact tetrahedron geometry: rasterization, barycentric mapping, collision tests.

All predicates here are deterministic and shared between the Python API and the
optimizer's compiled kernels, so that full and incremental evaluations agree
bit for bit.

Voxel ownership convention
--------------------------
A tetrahedron is cut by every integer axial plane ``z = k`` that it spans; the
cross-section (a convex triangle or quadrilateral) is filled in scanline order.
Voxel centers that fall exactly on a shared cross-section edge are resolved by
the top-left rule: the tie goes to the triangle whose interior lies in the
``(+x, then -y)`` direction from the edge.  Ownership of a slice that coincides
with a horizontal tetrahedron face is half-open in z: the face belongs to the
tet above it, except at the top image border where the tet below keeps it.
Under this convention the tets of a conforming, fold-free grid emit every voxel
center of the covered volume exactly once.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# Voxel-boundary tie tolerance used by ray predicates before retrying with a
# different direction.
_RAY_TIE = 1e-10

# Fixed ray directions with irrational-ish slopes; tried in order until one
# crosses every triangle decisively.
_RAY_DIRS = np.array(
    [
        [0.8017837257372732, 0.33389181067325646, 0.4960225048292690],
        [-0.2672612419124244, 0.8721718470379703, -0.4100813857300276],
        [0.5345224838248488, -0.6681130586632784, 0.5176942789066917],
        [0.1533930094333832, 0.4415515057, 0.8840332305],
        [-0.7071067811865475, 0.4082482904638630, 0.5773502691896258],
        [0.3086066999241838, -0.9258200997725514, 0.2182178902359924],
        [-0.4472135954999579, -0.3651483716701107, 0.8164965809277260],
        [0.9486832980505138, 0.1825741858350554, -0.2581988897471611],
    ]
)

_RAY_DIRS_2D = np.array(
    [
        [0.9486832980505138, 0.3162277660168379],
        [-0.4472135954999579, 0.8944271909999159],
        [0.6401843996644799, -0.7682212795973759],
        [-0.8320502943378437, -0.5547001962252291],
        [0.2873478855663454, 0.9578262852211514],
        [-0.9863939238321437, 0.1643989873053573],
    ]
)


# ---------------------------------------------------------------------------
# Scalar helpers (compiled, allocation-free)
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _tet_signed_volume(v0x, v0y, v0z, v1x, v1y, v1z, v2x, v2y, v2z, v3x, v3y, v3z):
    ax = v1x - v0x
    ay = v1y - v0y
    az = v1z - v0z
    bx = v2x - v0x
    by = v2y - v0y
    bz = v2z - v0z
    cx = v3x - v0x
    cy = v3y - v0y
    cz = v3z - v0z
    det = ax * (by * cz - bz * cy) - ay * (bx * cz - bz * cx) + az * (bx * cy - by * cx)
    return det / 6.0


@njit(cache=True)
def tet_volume(verts):
    """Signed volume of a tet given as a (4, 3) array."""
    return _tet_signed_volume(
        verts[0, 0], verts[0, 1], verts[0, 2],
        verts[1, 0], verts[1, 1], verts[1, 2],
        verts[2, 0], verts[2, 1], verts[2, 2],
        verts[3, 0], verts[3, 1], verts[3, 2],
    )


@njit(cache=True, inline="always")
def _edge_tie_accept(gx, gy, flip_x, flip_y):
    # Tie rule for a point exactly on a triangle edge: accept when the interior
    # lies in the lexicographic (+x, then +y) direction from the point, with y
    # as the row index.  This is the top-left rule; at the high image borders
    # the probe direction is mirrored inward so border voxels stay owned.
    sx = -gx if flip_x else gx
    if sx > 0.0:
        return True
    if sx < 0.0:
        return False
    sy = -gy if flip_y else gy
    return sy > 0.0


@njit(cache=True, inline="always")
def _edge_eval(ax, ay, bx, by, px, py):
    # Edge function of the directed edge a->b at p, evaluated with the
    # lexicographically smaller endpoint as the anchor so that the two
    # triangles sharing an edge see exactly negated values.
    if (ax < bx) or (ax == bx and ay < by):
        return (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    return -((ax - bx) * (py - by) - (ay - by) * (px - bx))


@njit(cache=True, inline="always")
def _edge_pass(ax, ay, bx, by, px, py, flip_x, flip_y):
    e = _edge_eval(ax, ay, bx, by, px, py)
    if e > 0.0:
        return True
    if e < 0.0:
        return False
    return _edge_tie_accept(-(by - ay), bx - ax, flip_x, flip_y)


@njit(cache=True, inline="always")
def _inside_tri_2d(ax, ay, bx, by, cx, cy, px, py, flip_x, flip_y):
    # Point-in-triangle with top-left tie handling; the triangle must be CCW.
    if not _edge_pass(ax, ay, bx, by, px, py, flip_x, flip_y):
        return False
    if not _edge_pass(bx, by, cx, cy, px, py, flip_x, flip_y):
        return False
    return _edge_pass(cx, cy, ax, ay, px, py, flip_x, flip_y)


@njit(cache=True)
def _slice_triangles(verts, z, nz, out, quad):
    """Cross-section of a tet with the plane ``z = const`` as 0..2 CCW triangles.

    ``out`` is a (2, 3, 2) scratch array receiving triangle vertices in the
    slice plane; ``quad`` a (4, 2) scratch; returns the triangle count.
    Encodes the half-open z ownership: a horizontal face at the tet's bottom
    is kept, one at its top is ceded to the tet above except on the top image
    border ``z == nz - 1``.
    """
    zmin = verts[0, 2]
    zmax = verts[0, 2]
    for i in range(1, 4):
        if verts[i, 2] < zmin:
            zmin = verts[i, 2]
        if verts[i, 2] > zmax:
            zmax = verts[i, 2]
    if z < zmin or z > zmax or zmin == zmax:
        return 0

    n_on = 0
    n_below = 0
    for i in range(4):
        if verts[i, 2] == z:
            n_on += 1
        elif verts[i, 2] < z:
            n_below += 1
    n_above = 4 - n_on - n_below

    if z == zmin or z == zmax:
        # Only a full horizontal face has area; edges/vertices emit nothing.
        if n_on != 3:
            return 0
        if z == zmax and z != nz - 1:
            return 0
        k = 0
        for i in range(4):
            if verts[i, 2] == z:
                out[0, k, 0] = verts[i, 0]
                out[0, k, 1] = verts[i, 1]
                k += 1
        _orient_ccw(out, 0)
        return 1

    # Strict interior cut: gather polygon vertices in cyclic order.
    if n_on == 0:
        if n_below == 1 or n_below == 3:
            # Single vertex on one side: triangular section.
            apex = -1
            for i in range(4):
                below = verts[i, 2] < z
                if (below and n_below == 1) or (not below and n_below == 3):
                    apex = i
                    break
            k = 0
            for i in range(4):
                if i != apex:
                    _edge_cut(verts, apex, i, z, out[0], k)
                    k += 1
            _orient_ccw(out, 0)
            return 1
        # 2-2 split: quadrilateral section.
        b0 = -1
        b1 = -1
        a0 = -1
        a1 = -1
        for i in range(4):
            if verts[i, 2] < z:
                if b0 < 0:
                    b0 = i
                else:
                    b1 = i
            else:
                if a0 < 0:
                    a0 = i
                else:
                    a1 = i
        _edge_cut(verts, b0, a0, z, quad, 0)
        _edge_cut(verts, b0, a1, z, quad, 1)
        _edge_cut(verts, b1, a1, z, quad, 2)
        _edge_cut(verts, b1, a0, z, quad, 3)
        return _split_quad(quad, out)

    if n_on == 1 and n_below >= 1 and n_above >= 1:
        on = -1
        for i in range(4):
            if verts[i, 2] == z:
                on = i
        out[0, 0, 0] = verts[on, 0]
        out[0, 0, 1] = verts[on, 1]
        k = 1
        # The two crossing edges connect the below vertices to the above ones.
        for i in range(4):
            if i == on or verts[i, 2] >= z:
                continue
            for j in range(4):
                if j == on or verts[j, 2] < z:
                    continue
                _edge_cut(verts, i, j, z, out[0], k)
                k += 1
                if k == 3:
                    break
            if k == 3:
                break
        if k < 3:
            return 0
        _orient_ccw(out, 0)
        return 1

    if n_on == 2 and n_below == 1 and n_above == 1:
        k = 0
        for i in range(4):
            if verts[i, 2] == z:
                out[0, k, 0] = verts[i, 0]
                out[0, k, 1] = verts[i, 1]
                k += 1
        lo = -1
        hi = -1
        for i in range(4):
            if verts[i, 2] < z:
                lo = i
            elif verts[i, 2] > z:
                hi = i
        _edge_cut(verts, lo, hi, z, out[0], 2)
        _orient_ccw(out, 0)
        return 1

    # Remaining on-plane configurations (vertex/edge touch) have no area.
    return 0


@njit(cache=True, inline="always")
def _edge_cut(verts, i, j, z, quad, k):
    # Anchor the interpolation at the lexicographically smaller endpoint so the
    # crossing point is bit-identical from every tet sharing this edge.
    ax, ay, az = verts[i, 0], verts[i, 1], verts[i, 2]
    bx, by, bz = verts[j, 0], verts[j, 1], verts[j, 2]
    if (bx < ax) or (bx == ax and (by < ay or (by == ay and bz < az))):
        ax, ay, az, bx, by, bz = bx, by, bz, ax, ay, az
    t = (z - az) / (bz - az)
    quad[k, 0] = ax + t * (bx - ax)
    quad[k, 1] = ay + t * (by - ay)


@njit(cache=True)
def _orient_ccw(tris, idx):
    ax = tris[idx, 0, 0]
    ay = tris[idx, 0, 1]
    bx = tris[idx, 1, 0]
    by = tris[idx, 1, 1]
    cx = tris[idx, 2, 0]
    cy = tris[idx, 2, 1]
    area2 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    if area2 < 0.0:
        tris[idx, 1, 0] = cx
        tris[idx, 1, 1] = cy
        tris[idx, 2, 0] = bx
        tris[idx, 2, 1] = by


@njit(cache=True)
def _split_quad(quad, out):
    # Diagonal anchored at the lexicographically smallest vertex keeps the
    # split deterministic; the top-left rule settles voxels on the diagonal.
    s = 0
    for i in range(1, 4):
        if quad[i, 0] < quad[s, 0] or (quad[i, 0] == quad[s, 0] and quad[i, 1] < quad[s, 1]):
            s = i
    n = 0
    for k in range(2):
        i0 = s
        i1 = (s + 1 + k) % 4
        i2 = (s + 2 + k) % 4
        out[n, 0, 0] = quad[i0, 0]
        out[n, 0, 1] = quad[i0, 1]
        out[n, 1, 0] = quad[i1, 0]
        out[n, 1, 1] = quad[i1, 1]
        out[n, 2, 0] = quad[i2, 0]
        out[n, 2, 1] = quad[i2, 1]
        _orient_ccw(out, n)
        n += 1
    return n


@njit(cache=True)
def _rasterize_tet_into(verts, nx, ny, nz, out_xyz):
    """Emit owned voxel centers of one tet in (z, y, x) scanline order.

    ``out_xyz`` must be large enough for the clipped bounding box; returns the
    emitted count.
    """
    tris = np.empty((2, 3, 2))
    quad = np.empty((4, 2))
    count = 0
    zmin = verts[:, 2].min()
    zmax = verts[:, 2].max()
    z0 = max(0, int(np.ceil(zmin)))
    z1 = min(nz - 1, int(np.floor(zmax)))
    for z in range(z0, z1 + 1):
        ntri = _slice_triangles(verts, float(z), nz, tris, quad)
        for t in range(ntri):
            xa = min(tris[t, 0, 0], min(tris[t, 1, 0], tris[t, 2, 0]))
            xb = max(tris[t, 0, 0], max(tris[t, 1, 0], tris[t, 2, 0]))
            ya = min(tris[t, 0, 1], min(tris[t, 1, 1], tris[t, 2, 1]))
            yb = max(tris[t, 0, 1], max(tris[t, 1, 1], tris[t, 2, 1]))
            y0 = max(0, int(np.ceil(ya)))
            y1 = min(ny - 1, int(np.floor(yb)))
            x0 = max(0, int(np.ceil(xa)))
            x1 = min(nx - 1, int(np.floor(xb)))
            for y in range(y0, y1 + 1):
                for x in range(x0, x1 + 1):
                    if _inside_tri_2d(
                        tris[t, 0, 0], tris[t, 0, 1],
                        tris[t, 1, 0], tris[t, 1, 1],
                        tris[t, 2, 0], tris[t, 2, 1],
                        float(x), float(y), x == nx - 1, y == ny - 1,
                    ):
                        out_xyz[count, 0] = x
                        out_xyz[count, 1] = y
                        out_xyz[count, 2] = z
                        count += 1
    return count


@njit(cache=True)
def _voxel_in_tet(verts, x, y, z, nx, ny, nz):
    """Reference containment test: same convention, no scanline machinery."""
    tris = np.empty((2, 3, 2))
    quad = np.empty((4, 2))
    ntri = _slice_triangles(verts, float(z), nz, tris, quad)
    for t in range(ntri):
        if _inside_tri_2d(
            tris[t, 0, 0], tris[t, 0, 1],
            tris[t, 1, 0], tris[t, 1, 1],
            tris[t, 2, 0], tris[t, 2, 1],
            float(x), float(y), x == nx - 1, y == ny - 1,
        ):
            return True
    return False


# ---------------------------------------------------------------------------
# Barycentric mapping
# ---------------------------------------------------------------------------


@njit(cache=True)
def _tet_affine(src, dst, mat):
    """Affine map taking points of tet ``src`` onto tet ``dst``.

    Writes a (3, 4) matrix (linear part and offset column); returns the source
    tet's determinant (6 x signed volume) so callers can reject degenerates.
    """
    a00 = src[1, 0] - src[0, 0]
    a10 = src[1, 1] - src[0, 1]
    a20 = src[1, 2] - src[0, 2]
    a01 = src[2, 0] - src[0, 0]
    a11 = src[2, 1] - src[0, 1]
    a21 = src[2, 2] - src[0, 2]
    a02 = src[3, 0] - src[0, 0]
    a12 = src[3, 1] - src[0, 1]
    a22 = src[3, 2] - src[0, 2]
    det = (
        a00 * (a11 * a22 - a12 * a21)
        - a01 * (a10 * a22 - a12 * a20)
        + a02 * (a10 * a21 - a11 * a20)
    )
    if det == 0.0:
        return 0.0
    i00 = (a11 * a22 - a12 * a21) / det
    i01 = (a02 * a21 - a01 * a22) / det
    i02 = (a01 * a12 - a02 * a11) / det
    i10 = (a12 * a20 - a10 * a22) / det
    i11 = (a00 * a22 - a02 * a20) / det
    i12 = (a02 * a10 - a00 * a12) / det
    i20 = (a10 * a21 - a11 * a20) / det
    i21 = (a01 * a20 - a00 * a21) / det
    i22 = (a00 * a11 - a01 * a10) / det
    for r in range(3):
        d0 = dst[1, r] - dst[0, r]
        d1 = dst[2, r] - dst[0, r]
        d2 = dst[3, r] - dst[0, r]
        mat[r, 0] = d0 * i00 + d1 * i10 + d2 * i20
        mat[r, 1] = d0 * i01 + d1 * i11 + d2 * i21
        mat[r, 2] = d0 * i02 + d1 * i12 + d2 * i22
        mat[r, 3] = dst[0, r] - (
            mat[r, 0] * src[0, 0] + mat[r, 1] * src[0, 1] + mat[r, 2] * src[0, 2]
        )
    return det


@njit(cache=True)
def _bary_weights(verts, px, py, pz, w):
    """Barycentric weights of a point w.r.t. a tet; returns the determinant."""
    a00 = verts[1, 0] - verts[0, 0]
    a10 = verts[1, 1] - verts[0, 1]
    a20 = verts[1, 2] - verts[0, 2]
    a01 = verts[2, 0] - verts[0, 0]
    a11 = verts[2, 1] - verts[0, 1]
    a21 = verts[2, 2] - verts[0, 2]
    a02 = verts[3, 0] - verts[0, 0]
    a12 = verts[3, 1] - verts[0, 1]
    a22 = verts[3, 2] - verts[0, 2]
    det = (
        a00 * (a11 * a22 - a12 * a21)
        - a01 * (a10 * a22 - a12 * a20)
        + a02 * (a10 * a21 - a11 * a20)
    )
    if det == 0.0:
        return 0.0
    bx = px - verts[0, 0]
    by = py - verts[0, 1]
    bz = pz - verts[0, 2]
    # Cramer's rule on the edge matrix
    w1 = (
        bx * (a11 * a22 - a12 * a21)
        - a01 * (by * a22 - a12 * bz)
        + a02 * (by * a21 - a11 * bz)
    ) / det
    w2 = (
        a00 * (by * a22 - a12 * bz)
        - bx * (a10 * a22 - a12 * a20)
        + a02 * (a10 * bz - by * a20)
    ) / det
    w3 = (
        a00 * (a11 * bz - by * a21)
        - a01 * (a10 * bz - by * a20)
        + bx * (a10 * a21 - a11 * a20)
    ) / det
    w[0] = 1.0 - w1 - w2 - w3
    w[1] = w1
    w[2] = w2
    w[3] = w3
    return det


# ---------------------------------------------------------------------------
# Ray-parity collision predicates
# ---------------------------------------------------------------------------


@njit(cache=True)
def _ray_parity_3d(px, py, pz, faces, dirs):
    """Crossing parity of a ray against a triangle soup.

    Returns 1 (odd = inside), 0 (even = outside) or -1 when every candidate
    direction grazes an edge within tolerance.
    """
    for d in range(dirs.shape[0]):
        dx = dirs[d, 0]
        dy = dirs[d, 1]
        dz = dirs[d, 2]
        crossings = 0
        clean = True
        for f in range(faces.shape[0]):
            ax = faces[f, 0, 0]
            ay = faces[f, 0, 1]
            az = faces[f, 0, 2]
            e1x = faces[f, 1, 0] - ax
            e1y = faces[f, 1, 1] - ay
            e1z = faces[f, 1, 2] - az
            e2x = faces[f, 2, 0] - ax
            e2y = faces[f, 2, 1] - ay
            e2z = faces[f, 2, 2] - az
            # Moller-Trumbore
            hx = dy * e2z - dz * e2y
            hy = dz * e2x - dx * e2z
            hz = dx * e2y - dy * e2x
            det = e1x * hx + e1y * hy + e1z * hz
            scale = (
                abs(e1x) + abs(e1y) + abs(e1z) + abs(e2x) + abs(e2y) + abs(e2z)
            )
            if abs(det) <= _RAY_TIE * scale * scale:
                clean = False
                break
            sx = px - ax
            sy = py - ay
            sz = pz - az
            u = (sx * hx + sy * hy + sz * hz) / det
            # deep misses are unambiguous; the tie logic below handles the rest
            if u < -0.125 or u > 1.125:
                continue
            qx = sy * e1z - sz * e1y
            qy = sz * e1x - sx * e1z
            qz = sx * e1y - sy * e1x
            v = (dx * qx + dy * qy + dz * qz) / det
            if v < -0.125 or u + v > 1.125:
                continue
            t = (e2x * qx + e2y * qy + e2z * qz) / det
            w = 1.0 - u - v
            m = min(u, min(v, w))
            if t > _RAY_TIE and m > _RAY_TIE:
                crossings += 1
            elif t < -_RAY_TIE and m > _RAY_TIE:
                pass
            elif m < -_RAY_TIE:
                pass
            else:
                clean = False
                break
        if clean:
            return crossings & 1
    return -1


@njit(cache=True)
def _ray_parity_2d(pu, pv, segs, dirs):
    """2D crossing parity of a ray against segments; -1 when all rays graze."""
    for d in range(dirs.shape[0]):
        du = dirs[d, 0]
        dv = dirs[d, 1]
        crossings = 0
        clean = True
        for i in range(segs.shape[0]):
            au = segs[i, 0, 0]
            av = segs[i, 0, 1]
            bu = segs[i, 1, 0]
            bv = segs[i, 1, 1]
            eu = bu - au
            ev = bv - av
            det = du * ev - dv * eu
            scale = abs(eu) + abs(ev)
            if abs(det) <= _RAY_TIE * scale:
                clean = False
                break
            t = ((au - pu) * ev - (av - pv) * eu) / det
            s = ((au - pu) * dv - (av - pv) * du) / det
            if t > _RAY_TIE and _RAY_TIE < s < 1.0 - _RAY_TIE:
                crossings += 1
            elif t < -_RAY_TIE or s < -_RAY_TIE or s > 1.0 + _RAY_TIE:
                pass
            else:
                clean = False
                break
        if clean:
            return crossings & 1
    return -1


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------


def rasterize_tet(tet: np.ndarray, dims) -> np.ndarray:
    """Voxel centers owned by a tet, as an (n, 3) int array in scanline order.

    ``tet`` is a (4, 3) array of continuous voxel coordinates; ``dims`` the
    image extents used for clipping.  Degenerate tets yield an empty list.
    """
    verts = np.ascontiguousarray(np.asarray(tet, dtype=np.float64).reshape(4, 3))
    nx, ny, nz = int(dims[0]), int(dims[1]), int(dims[2])
    zmin = verts[:, 2].min()
    zmax = verts[:, 2].max()
    z0 = max(0, int(np.ceil(zmin)))
    z1 = min(nz - 1, int(np.floor(zmax)))
    if z1 < z0:
        return np.empty((0, 3), dtype=np.int64)
    xspan = min(nx - 1, int(np.floor(verts[:, 0].max()))) - max(0, int(np.ceil(verts[:, 0].min()))) + 1
    yspan = min(ny - 1, int(np.floor(verts[:, 1].max()))) - max(0, int(np.ceil(verts[:, 1].min()))) + 1
    cap = max(xspan, 0) * max(yspan, 0) * (z1 - z0 + 1)
    if cap == 0:
        return np.empty((0, 3), dtype=np.int64)
    out = np.empty((cap, 3), dtype=np.int64)
    n = _rasterize_tet_into(verts, nx, ny, nz, out)
    return out[:n].copy()


def voxel_in_tet(tet: np.ndarray, voxel, dims) -> bool:
    """Containment of a single voxel center under the ownership convention."""
    verts = np.ascontiguousarray(np.asarray(tet, dtype=np.float64).reshape(4, 3))
    x, y, z = int(voxel[0]), int(voxel[1]), int(voxel[2])
    return bool(_voxel_in_tet(verts, x, y, z, int(dims[0]), int(dims[1]), int(dims[2])))


def barycentric(tet: np.ndarray, point) -> np.ndarray:
    """Barycentric weights of ``point`` w.r.t. ``tet`` (weights sum to 1).

    Raises ``ValueError`` for a degenerate tet.
    """
    verts = np.ascontiguousarray(np.asarray(tet, dtype=np.float64).reshape(4, 3))
    p = np.asarray(point, dtype=np.float64)
    w = np.empty(4)
    det = _bary_weights(verts, p[0], p[1], p[2], w)
    if det == 0.0:
        raise ValueError("degenerate tetrahedron")
    return w


def map_point(src_tet: np.ndarray, dst_tet: np.ndarray, point) -> np.ndarray:
    """Map a point through the affine transform sending src_tet onto dst_tet."""
    w = barycentric(src_tet, point)
    dst = np.asarray(dst_tet, dtype=np.float64).reshape(4, 3)
    return w @ dst


def point_outside_star(point, faces: np.ndarray) -> bool:
    """True when ``point`` falls outside the closed triangle fan around it.

    ``faces`` is an (f, 3, 3) array of link triangles (the opposite faces of
    the tets incident to the point).  Outside means the move folds the mesh.
    """
    faces = np.ascontiguousarray(np.asarray(faces, dtype=np.float64))
    if faces.shape[0] < 4:
        raise ValueError("star needs at least 4 faces")
    p = np.asarray(point, dtype=np.float64)
    parity = _ray_parity_3d(p[0], p[1], p[2], faces, _RAY_DIRS)
    # Grazing every direction means the point sits on the link surface itself;
    # count that as a violation.
    return parity != 1


def point_outside_border_polygon(point, segments: np.ndarray) -> bool:
    """2D analog of :func:`point_outside_star` for border-plane points."""
    segs = np.ascontiguousarray(np.asarray(segments, dtype=np.float64))
    if segs.shape[0] < 3:
        raise ValueError("polygon needs at least 3 segments")
    p = np.asarray(point, dtype=np.float64)
    parity = _ray_parity_2d(p[0], p[1], segs, _RAY_DIRS_2D)
    return parity != 1
