"""Dual-grid tetrahedral topology and the registration genotype.

A grid of ``nx x ny x nz`` points forms ``(nx-1)(ny-1)(nz-1)`` cube cells, each
split into the 6 tetrahedra around its main diagonal.  Adjacent cubes are
mirrored per parity along each axis so that no direction is structurally
preferred.  A solution carries two point arrays over one shared topology: the
grid deformed over the source image and the grid deformed over the target
image.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .geometry import _bary_weights

# 6-tet split of a cube around the 0-7 diagonal; corners are labelled by
# coordinate bits bx + 2*by + 4*bz.
CANONICAL_TETS = np.array(
    [
        [0, 1, 3, 7],
        [0, 3, 2, 7],
        [0, 2, 6, 7],
        [0, 6, 4, 7],
        [0, 4, 5, 7],
        [0, 5, 1, 7],
    ],
    dtype=np.int64,
)

TET_EDGES = np.array(
    [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]], dtype=np.int64
)

# Border point classes.
INTERIOR, FACE, EDGE, CORNER = 0, 1, 2, 3


@dataclass
class GridTopology:
    """Immutable connectivity of one grid resolution, shared by both grids."""

    resolution: tuple[int, int, int]
    tets: np.ndarray               # (t, 4) int32 point ids
    cube_of_tet: np.ndarray        # (t,) int32
    point_tets_indptr: np.ndarray  # (n+1,) int32, CSR over points
    point_tets: np.ndarray         # incident tet ids
    nbr_indptr: np.ndarray         # (n+1,) int32, points sharing a tet (no self)
    nbrs: np.ndarray
    tet_aff_indptr: np.ndarray     # (t+1,) tets to re-evaluate when tet's points move
    tet_aff: np.ndarray
    tet_chk_indptr: np.ndarray     # (t+1,) points to re-check when tet's points move
    tet_chk: np.ndarray
    border_kind: np.ndarray        # (n,) uint8: interior/face/edge/corner
    fixed_side: np.ndarray         # (n, 3) int8: -1 free, 0 low border, 1 high border
    edge_nbrs: np.ndarray          # (n, 2) int32 lattice neighbours along the free axis
    face_axis: np.ndarray          # (n,) int8 fixed axis of face points, else -1
    face_seg_indptr: np.ndarray    # (n+1,) int32
    face_segs: np.ndarray          # (s, 2) int32 link segments of face points
    tet_orient: np.ndarray         # (t,) int8 canonical orientation sign
    seg_orient: np.ndarray         # (s,) int8 canonical 2D sign of link segments

    @property
    def n_points(self) -> int:
        nx, ny, nz = self.resolution
        return nx * ny * nz

    @property
    def n_tets(self) -> int:
        return self.tets.shape[0]

    @property
    def n_cubes(self) -> int:
        nx, ny, nz = self.resolution
        return (nx - 1) * (ny - 1) * (nz - 1)

    @property
    def n_variables(self) -> int:
        return 2 * 3 * self.n_points

    def point_index(self, i: int, j: int, k: int) -> int:
        nx, ny, _ = self.resolution
        return i + nx * (j + ny * k)


def _csr_from_pairs(keys: np.ndarray, values: np.ndarray, n: int):
    order = np.lexsort((values, keys))
    keys = keys[order]
    values = values[order]
    counts = np.bincount(keys, minlength=n)
    indptr = np.zeros(n + 1, dtype=np.int32)
    np.cumsum(counts, out=indptr[1:])
    return indptr, values.astype(np.int32)


def build_topology(resolution) -> GridTopology:
    """Construct the mirrored 6-tet grid topology for a point resolution."""
    nx, ny, nz = (int(r) for r in resolution)
    if nx < 2 or ny < 2 or nz < 2:
        raise ValueError("resolution components must be >= 2")
    ncx, ncy, ncz = nx - 1, ny - 1, nz - 1
    n_cubes = ncx * ncy * ncz
    n_points = nx * ny * nz

    corner_bits = np.array(
        [[b & 1, (b >> 1) & 1, (b >> 2) & 1] for b in range(8)], dtype=np.int64
    )

    tets = np.empty((n_cubes * 6, 4), dtype=np.int32)
    cube_of_tet = np.empty(n_cubes * 6, dtype=np.int32)
    c = 0
    for ck in range(ncz):
        for cj in range(ncy):
            for ci in range(ncx):
                mask = (ci & 1) | ((cj & 1) << 1) | ((ck & 1) << 2)
                for t in range(6):
                    for v in range(4):
                        corner = CANONICAL_TETS[t, v] ^ mask
                        bx, by, bz = corner_bits[corner]
                        tets[c * 6 + t, v] = (ci + bx) + nx * ((cj + by) + ny * (ck + bz))
                    cube_of_tet[c * 6 + t] = c
                c += 1

    # point -> incident tets
    tet_ids = np.repeat(np.arange(n_cubes * 6, dtype=np.int64), 4)
    pt_ids = tets.reshape(-1).astype(np.int64)
    point_tets_indptr, point_tets = _csr_from_pairs(pt_ids, tet_ids, n_points)

    # point -> neighbours (points sharing a tet, self excluded, deduped)
    nbr_keys = np.repeat(tets.reshape(-1).astype(np.int64), 4)
    nbr_vals = np.repeat(tets, 4, axis=0).reshape(-1).astype(np.int64)
    keep = nbr_keys != nbr_vals
    pairs = np.unique(np.stack([nbr_keys[keep], nbr_vals[keep]], axis=1), axis=0)
    nbr_indptr, nbrs = _csr_from_pairs(pairs[:, 0], pairs[:, 1], n_points)

    # tet -> affected tets (union of incident tets over its vertices)
    aff_lists = []
    chk_lists = []
    for t in range(n_cubes * 6):
        pts = tets[t]
        aff = np.unique(
            np.concatenate(
                [point_tets[point_tets_indptr[p]:point_tets_indptr[p + 1]] for p in pts]
            )
        )
        aff_lists.append(aff)
        chk = np.unique(
            np.concatenate(
                [pts.astype(np.int32)]
                + [nbrs[nbr_indptr[p]:nbr_indptr[p + 1]] for p in pts]
            )
        )
        chk_lists.append(chk)
    tet_aff_indptr = np.zeros(n_cubes * 6 + 1, dtype=np.int32)
    np.cumsum([len(a) for a in aff_lists], out=tet_aff_indptr[1:])
    tet_aff = np.concatenate(aff_lists).astype(np.int32)
    tet_chk_indptr = np.zeros(n_cubes * 6 + 1, dtype=np.int32)
    np.cumsum([len(a) for a in chk_lists], out=tet_chk_indptr[1:])
    tet_chk = np.concatenate(chk_lists).astype(np.int32)

    # border classification from lattice indices
    ii, jj, kk = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    idx = (ii + nx * (jj + ny * kk)).reshape(-1)
    lat = np.empty((n_points, 3), dtype=np.int64)
    lat[idx, 0] = ii.reshape(-1)
    lat[idx, 1] = jj.reshape(-1)
    lat[idx, 2] = kk.reshape(-1)
    ext = np.array([nx, ny, nz])
    fixed_side = np.full((n_points, 3), -1, dtype=np.int8)
    fixed_side[lat == 0] = 0
    fixed_side[lat == ext - 1] = 1
    n_fixed = (fixed_side >= 0).sum(axis=1)
    border_kind = n_fixed.astype(np.uint8)

    edge_nbrs = np.full((n_points, 2), -1, dtype=np.int32)
    strides = np.array([1, nx, nx * ny])
    for p in np.nonzero(border_kind == EDGE)[0]:
        a = int(np.nonzero(fixed_side[p] < 0)[0][0])
        edge_nbrs[p, 0] = p - strides[a]
        edge_nbrs[p, 1] = p + strides[a]

    face_axis = np.full(n_points, -1, dtype=np.int8)
    fpts = np.nonzero(border_kind == FACE)[0]
    for p in fpts:
        face_axis[p] = int(np.nonzero(fixed_side[p] >= 0)[0][0])

    # 2D link segments: boundary triangles are tet faces whose 3 vertices lie
    # on one border plane; the segment opposite each face point bounds its move.
    seg_lists: list[list[tuple[int, int]]] = [[] for _ in range(n_points)]
    for t in range(n_cubes * 6):
        quad = tets[t]
        for skip in range(4):
            tri = [int(quad[v]) for v in range(4) if v != skip]
            for axis in range(3):
                s0 = fixed_side[tri[0], axis]
                if s0 < 0:
                    continue
                if fixed_side[tri[1], axis] == s0 and fixed_side[tri[2], axis] == s0:
                    for m in range(3):
                        p = tri[m]
                        if border_kind[p] == FACE and face_axis[p] == axis:
                            q, r = tri[(m + 1) % 3], tri[(m + 2) % 3]
                            seg_lists[p].append((q, r))
    face_seg_indptr = np.zeros(n_points + 1, dtype=np.int32)
    np.cumsum([len(s) for s in seg_lists], out=face_seg_indptr[1:])
    flat = [pair for segs in seg_lists for pair in segs]
    face_segs = (
        np.array(flat, dtype=np.int32) if flat else np.empty((0, 2), dtype=np.int32)
    )

    # canonical orientation signs at the reference lattice; folds flip them
    unit = lat.astype(np.float64)
    v = unit[tets]
    dets = np.linalg.det(v[:, 1:] - v[:, :1])
    tet_orient = np.sign(dets).astype(np.int8)
    seg_orient = np.empty(face_segs.shape[0], dtype=np.int8)
    for p in range(n_points):
        if face_seg_indptr[p] == face_seg_indptr[p + 1]:
            continue
        af = int(face_axis[p])
        u_ax = 0 if af != 0 else 1
        v_ax = 2 if af != 2 else 1
        for k in range(face_seg_indptr[p], face_seg_indptr[p + 1]):
            q, r = face_segs[k]
            area2 = (unit[q, u_ax] - unit[p, u_ax]) * (unit[r, v_ax] - unit[p, v_ax]) - (
                unit[q, v_ax] - unit[p, v_ax]
            ) * (unit[r, u_ax] - unit[p, u_ax])
            seg_orient[k] = 1 if area2 > 0 else -1

    return GridTopology(
        resolution=(nx, ny, nz),
        tets=tets,
        cube_of_tet=cube_of_tet,
        point_tets_indptr=point_tets_indptr,
        point_tets=point_tets,
        nbr_indptr=nbr_indptr,
        nbrs=nbrs,
        tet_aff_indptr=tet_aff_indptr,
        tet_aff=tet_aff,
        tet_chk_indptr=tet_chk_indptr,
        tet_chk=tet_chk,
        border_kind=border_kind,
        fixed_side=fixed_side,
        edge_nbrs=edge_nbrs,
        face_axis=face_axis,
        face_seg_indptr=face_seg_indptr,
        face_segs=face_segs,
        tet_orient=tet_orient,
        seg_orient=seg_orient,
    )


def incident_tets(topology: GridTopology, point_index: int) -> np.ndarray:
    """Tet ids containing the point as a vertex."""
    if not 0 <= point_index < topology.n_points:
        raise IndexError(f"point index {point_index} out of range")
    lo = topology.point_tets_indptr[point_index]
    hi = topology.point_tets_indptr[point_index + 1]
    return topology.point_tets[lo:hi].copy()


SRC, TGT = 0, 1


@dataclass
class Solution:
    """Dual-grid genotype: one coordinate array per image, shared topology."""

    topology: GridTopology
    points: np.ndarray             # (2, n, 3) float64, voxel coordinates
    dims: np.ndarray               # (3,) image extents in voxels
    spacing: np.ndarray            # (3,) mm per voxel
    fixed_coords: np.ndarray       # (n, 3) border plane values, NaN where free
    eps_vol: float
    eps_area: float
    cache: Optional[object] = None
    objectives: Optional[object] = None

    @property
    def source_points(self) -> np.ndarray:
        return self.points[SRC]

    @property
    def target_points(self) -> np.ndarray:
        return self.points[TGT]

    def copy(self, with_cache: bool = False) -> "Solution":
        cache = self.cache.copy() if (with_cache and self.cache is not None) else None
        return Solution(
            topology=self.topology,
            points=self.points.copy(),
            dims=self.dims,
            spacing=self.spacing,
            fixed_coords=self.fixed_coords,
            eps_vol=self.eps_vol,
            eps_area=self.eps_area,
            cache=cache,
            objectives=self.objectives,
        )


def lattice_points(topology: GridTopology, dims) -> np.ndarray:
    """Regular lattice spanning [0, dims-1] per axis, as an (n, 3) array."""
    nx, ny, nz = topology.resolution
    axes = [np.linspace(0.0, float(dims[a] - 1), n) for a, n in enumerate((nx, ny, nz))]
    ii, jj, kk = np.meshgrid(*axes, indexing="ij")
    out = np.empty((nx, ny, nz, 3))
    out[..., 0] = ii
    out[..., 1] = jj
    out[..., 2] = kk
    # point-index layout is x fastest
    return out.transpose(2, 1, 0, 3).reshape(-1, 3)


def _cell_steps(topology: GridTopology, dims) -> np.ndarray:
    nx, ny, nz = topology.resolution
    return np.array([(dims[a] - 1) / (n - 1) for a, n in enumerate((nx, ny, nz))])


def _degeneracy_thresholds(topology: GridTopology, dims) -> tuple[float, float]:
    steps = _cell_steps(topology, dims)
    eps_vol = 1e-12 * float(np.prod(steps))
    eps_area = 1e-12 * float(min(
        steps[0] * steps[1], steps[0] * steps[2], steps[1] * steps[2]
    ))
    return eps_vol, eps_area


def init_identity_solution(topology: GridTopology, dims, spacing=(1.0, 1.0, 1.0)) -> Solution:
    """Both grids on the same regular lattice: zero deformation, trivially feasible."""
    dims = np.asarray(dims, dtype=np.int64)
    spacing = np.asarray(spacing, dtype=np.float64)
    lat = lattice_points(topology, dims)
    pts = np.stack([lat, lat.copy()])
    fixed = np.where(
        topology.fixed_side < 0,
        np.nan,
        np.where(topology.fixed_side == 0, 0.0, (dims - 1).astype(np.float64)),
    )
    eps_vol, eps_area = _degeneracy_thresholds(topology, dims)
    return Solution(
        topology=topology,
        points=pts,
        dims=dims,
        spacing=spacing,
        fixed_coords=fixed,
        eps_vol=eps_vol,
        eps_area=eps_area,
    )


def refine_solution(coarse: Solution) -> Solution:
    """Subdivide every cube into 8 by inserting edge, face and center points.

    Original points keep their coordinates in both grids; the new points sit at
    the exact midpoints/centroids of their parent cube features, which keeps
    the refined solution feasible.
    """
    nx, ny, nz = coarse.topology.resolution
    fine_res = (2 * nx - 1, 2 * ny - 1, 2 * nz - 1)
    fine_topo = build_topology(fine_res)
    fnx, fny, fnz = fine_res
    n_fine = fnx * fny * fnz

    fine_pts = np.empty((2, n_fine, 3))
    cidx = coarse.topology.point_index
    for k in range(fnz):
        for j in range(fny):
            for i in range(fnx):
                p = i + fnx * (j + fny * k)
                lo = (i // 2, j // 2, k // 2)
                odd = (i & 1, j & 1, k & 1)
                corners = []
                for bz in range(1 + odd[2]):
                    for by in range(1 + odd[1]):
                        for bx in range(1 + odd[0]):
                            corners.append(cidx(lo[0] + bx, lo[1] + by, lo[2] + bz))
                for g in range(2):
                    fine_pts[g, p] = coarse.points[g, corners].mean(axis=0)

    fixed = np.where(
        fine_topo.fixed_side < 0,
        np.nan,
        np.where(fine_topo.fixed_side == 0, 0.0, (coarse.dims - 1).astype(np.float64)),
    )
    eps_vol, eps_area = _degeneracy_thresholds(fine_topo, coarse.dims)
    return Solution(
        topology=fine_topo,
        points=fine_pts,
        dims=coarse.dims,
        spacing=coarse.spacing,
        fixed_coords=fixed,
        eps_vol=eps_vol,
        eps_area=eps_area,
    )


def link_faces(topology: GridTopology, grid_points: np.ndarray, p: int) -> np.ndarray:
    """Link triangles around a point: opposite faces of its incident tets."""
    lo = topology.point_tets_indptr[p]
    hi = topology.point_tets_indptr[p + 1]
    faces = np.empty((hi - lo, 3, 3))
    for n, t in enumerate(topology.point_tets[lo:hi]):
        others = [v for v in topology.tets[t] if v != p]
        faces[n] = grid_points[others]
    return faces


# ---------------------------------------------------------------------------
# Point location and piecewise-linear transforms
# ---------------------------------------------------------------------------


@njit(cache=True)
def _locate_point(pts, tets, px, py, pz, eps_vol):
    """First tet (ascending id) containing the point, or -1.

    Uses a small negative barycentric slack so points on shared faces resolve
    deterministically; either candidate maps such a point identically.
    """
    w = np.empty(4)
    verts = np.empty((4, 3))
    for t in range(tets.shape[0]):
        # cheap bbox reject
        reject = False
        for a in range(3):
            lo = pts[tets[t, 0], a]
            hi = lo
            for v in range(1, 4):
                c = pts[tets[t, v], a]
                if c < lo:
                    lo = c
                elif c > hi:
                    hi = c
            q = px if a == 0 else (py if a == 1 else pz)
            if q < lo - 1e-9 or q > hi + 1e-9:
                reject = True
                break
        if reject:
            continue
        for v in range(4):
            verts[v, 0] = pts[tets[t, v], 0]
            verts[v, 1] = pts[tets[t, v], 1]
            verts[v, 2] = pts[tets[t, v], 2]
        det = _bary_weights(verts, px, py, pz, w)
        if abs(det) / 6.0 <= eps_vol:
            continue
        if w[0] >= -1e-12 and w[1] >= -1e-12 and w[2] >= -1e-12 and w[3] >= -1e-12:
            return t
    return -1


@njit(cache=True)
def _map_points_kernel(pts_from, pts_to, tets, queries, out, eps_vol):
    w = np.empty(4)
    verts = np.empty((4, 3))
    ok = True
    for i in range(queries.shape[0]):
        t = _locate_point(pts_from, tets, queries[i, 0], queries[i, 1], queries[i, 2], eps_vol)
        if t < 0:
            out[i, 0] = np.nan
            out[i, 1] = np.nan
            out[i, 2] = np.nan
            ok = False
            continue
        for v in range(4):
            verts[v, 0] = pts_from[tets[t, v], 0]
            verts[v, 1] = pts_from[tets[t, v], 1]
            verts[v, 2] = pts_from[tets[t, v], 2]
        _bary_weights(verts, queries[i, 0], queries[i, 1], queries[i, 2], w)
        for a in range(3):
            acc = 0.0
            for v in range(4):
                acc += w[v] * pts_to[tets[t, v], a]
            out[i, a] = acc
    return ok


def transform_points(solution: Solution, points: np.ndarray, direction: str = "forward") -> np.ndarray:
    """Map points through the dual-grid transform.

    ``forward`` maps target-image coordinates to source-image coordinates (the
    pull direction used to render the transformed source); ``backward`` is the
    inverse.  Coordinates are continuous voxel units.
    """
    if direction == "forward":
        g_from, g_to = TGT, SRC
    elif direction == "backward":
        g_from, g_to = SRC, TGT
    else:
        raise ValueError("direction must be 'forward' or 'backward'")
    q = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    out = np.empty_like(q)
    ok = _map_points_kernel(
        solution.points[g_from], solution.points[g_to],
        solution.topology.tets, q, out, solution.eps_vol,
    )
    if not ok:
        raise ValueError("point outside all tets of the grid")
    return out
