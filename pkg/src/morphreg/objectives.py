"""Registration objectives and the fold-prevention constraint.

All three objectives decompose into per-tet (or per-guidance-point) terms so
that a move of a few grid points only re-evaluates the affected terms.  The
cached terms, their running totals and the guidance containment assignments
live in a :class:`PartialEvalContext` attached to the solution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .geometry import (
    _RAY_DIRS,
    _RAY_DIRS_2D,
    _bary_weights,
    _inside_tri_2d,
    _ray_parity_2d,
    _ray_parity_3d,
    _slice_triangles,
    _tet_affine,
    _tet_signed_volume,
)
from .mesh import SRC, TGT, TET_EDGES, GridTopology, Solution, _locate_point
from .volume import EMPTY_THRESHOLD, RegistrationProblem, _nearest_flat, _trilinear_flat


@dataclass
class ObjectiveVector:
    """Minimization objectives; guidance is None when no guidance is supplied."""

    dissimilarity: float
    deformation: float
    guidance: Optional[float] = None

    def as_array(self) -> np.ndarray:
        if self.guidance is None:
            return np.array([self.dissimilarity, self.deformation])
        return np.array([self.dissimilarity, self.deformation, self.guidance])

    @staticmethod
    def from_array(arr) -> "ObjectiveVector":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape[0] == 2:
            return ObjectiveVector(float(arr[0]), float(arr[1]))
        return ObjectiveVector(float(arr[0]), float(arr[1]), float(arr[2]))


@dataclass
class PartialEvalContext:
    """Per-tet and per-guidance-point terms backing incremental evaluation."""

    fwd: np.ndarray                # (t,) forward dissimilarity sums per target tet
    bwd: np.ndarray                # (t,) backward sums per source tet
    deft: np.ndarray               # (t,) deformation terms
    gs_tet: np.ndarray             # (ps,) containing source tet per source point
    gs_term: np.ndarray            # (ps,) squared mm distances
    gt_tet: np.ndarray             # (pt,)
    gt_term: np.ndarray            # (pt,)
    sums: np.ndarray               # (5,) fwd, bwd, def, gs, gt
    n_vox: int
    n_tets: int
    n_gpts: int

    def copy(self) -> "PartialEvalContext":
        return PartialEvalContext(
            self.fwd.copy(), self.bwd.copy(), self.deft.copy(),
            self.gs_tet.copy(), self.gs_term.copy(),
            self.gt_tet.copy(), self.gt_term.copy(),
            self.sums.copy(), self.n_vox, self.n_tets, self.n_gpts,
        )

    def refresh_sums(self) -> None:
        """Re-derive the totals from the stored terms (kills float drift)."""
        self.sums[0] = self.fwd.sum()
        self.sums[1] = self.bwd.sum()
        self.sums[2] = self.deft.sum()
        self.sums[3] = self.gs_term.sum()
        self.sums[4] = self.gt_term.sum()

    def dissimilarity(self) -> float:
        return (self.sums[0] + self.sums[1]) / (2.0 * self.n_vox)

    def deformation(self) -> float:
        return self.sums[2] / (10.0 * self.n_tets)

    def guidance(self) -> Optional[float]:
        if self.n_gpts == 0:
            return None
        return (self.sums[3] + self.sums[4]) / self.n_gpts

    def totals(self) -> ObjectiveVector:
        return ObjectiveVector(self.dissimilarity(), self.deformation(), self.guidance())


@dataclass
class GuidanceArrays:
    """Guidance flattened for the kernels: voxel coords, mm coords, CSR by id."""

    s_vox: np.ndarray
    s_mm: np.ndarray
    s_corr: np.ndarray
    s_indptr: np.ndarray
    t_vox: np.ndarray
    t_mm: np.ndarray
    t_corr: np.ndarray
    t_indptr: np.ndarray

    @property
    def total_points(self) -> int:
        return self.s_vox.shape[0] + self.t_vox.shape[0]


_EMPTY_GUIDANCE = None


def guidance_arrays(problem: RegistrationProblem) -> GuidanceArrays:
    global _EMPTY_GUIDANCE
    if problem.guidance is None:
        if _EMPTY_GUIDANCE is None:
            e3 = np.empty((0, 3))
            ei = np.empty(0, dtype=np.int32)
            one = np.zeros(1, dtype=np.int32)
            _EMPTY_GUIDANCE = GuidanceArrays(e3, e3, ei, one, e3, e3, ei, one)
        return _EMPTY_GUIDANCE
    spacing = problem.spacing
    s_mm, t_mm, s_corr, t_corr = [], [], [], []
    for cid, (src, tgt) in enumerate(problem.guidance.correspondences):
        s_mm.append(src)
        t_mm.append(tgt)
        s_corr.append(np.full(len(src), cid, dtype=np.int32))
        t_corr.append(np.full(len(tgt), cid, dtype=np.int32))
    s_mm = np.concatenate(s_mm)
    t_mm = np.concatenate(t_mm)
    s_corr = np.concatenate(s_corr)
    t_corr = np.concatenate(t_corr)
    n_corr = len(problem.guidance.correspondences)
    s_indptr = np.zeros(n_corr + 1, dtype=np.int32)
    np.cumsum(np.bincount(s_corr, minlength=n_corr), out=s_indptr[1:])
    t_indptr = np.zeros(n_corr + 1, dtype=np.int32)
    np.cumsum(np.bincount(t_corr, minlength=n_corr), out=t_indptr[1:])
    return GuidanceArrays(
        s_vox=np.ascontiguousarray(s_mm / spacing),
        s_mm=np.ascontiguousarray(s_mm),
        s_corr=s_corr,
        s_indptr=s_indptr,
        t_vox=np.ascontiguousarray(t_mm / spacing),
        t_mm=np.ascontiguousarray(t_mm),
        t_corr=t_corr,
        t_indptr=t_indptr,
    )


# ---------------------------------------------------------------------------
# Compiled term kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _dis_term_dir(
    pts_r, pts_p, tets, t, flat_r, flat_p, nx, ny, nz,
    empty_thr, interp, eps_vol, verts_r, verts_p, mat, tris, quad,
):
    """One tet's dissimilarity sum in one direction.

    Rasterizes the tet of the r-side grid over its image and pulls intensities
    from the p-side through the affine tet map; black-vs-grey pairs score the
    maximal difference of 1.
    """
    for v in range(4):
        p = tets[t, v]
        verts_r[v, 0] = pts_r[p, 0]
        verts_r[v, 1] = pts_r[p, 1]
        verts_r[v, 2] = pts_r[p, 2]
        verts_p[v, 0] = pts_p[p, 0]
        verts_p[v, 1] = pts_p[p, 1]
        verts_p[v, 2] = pts_p[p, 2]
    det = _tet_affine(verts_r, verts_p, mat)
    if abs(det) / 6.0 <= eps_vol:
        return 0.0
    acc = 0.0
    zmin = verts_r[0, 2]
    zmax = verts_r[0, 2]
    for v in range(1, 4):
        if verts_r[v, 2] < zmin:
            zmin = verts_r[v, 2]
        if verts_r[v, 2] > zmax:
            zmax = verts_r[v, 2]
    z0 = max(0, int(np.ceil(zmin)))
    z1 = min(nz - 1, int(np.floor(zmax)))
    for z in range(z0, z1 + 1):
        ntri = _slice_triangles(verts_r, float(z), nz, tris, quad)
        for k in range(ntri):
            xa = min(tris[k, 0, 0], min(tris[k, 1, 0], tris[k, 2, 0]))
            xb = max(tris[k, 0, 0], max(tris[k, 1, 0], tris[k, 2, 0]))
            ya = min(tris[k, 0, 1], min(tris[k, 1, 1], tris[k, 2, 1]))
            yb = max(tris[k, 0, 1], max(tris[k, 1, 1], tris[k, 2, 1]))
            y0 = max(0, int(np.ceil(ya)))
            y1 = min(ny - 1, int(np.floor(yb)))
            x0 = max(0, int(np.ceil(xa)))
            x1 = min(nx - 1, int(np.floor(xb)))
            for y in range(y0, y1 + 1):
                for x in range(x0, x1 + 1):
                    if not _inside_tri_2d(
                        tris[k, 0, 0], tris[k, 0, 1],
                        tris[k, 1, 0], tris[k, 1, 1],
                        tris[k, 2, 0], tris[k, 2, 1],
                        float(x), float(y), x == nx - 1, y == ny - 1,
                    ):
                        continue
                    iv = flat_r[x + nx * (y + ny * z)]
                    mx = mat[0, 0] * x + mat[0, 1] * y + mat[0, 2] * z + mat[0, 3]
                    my = mat[1, 0] * x + mat[1, 1] * y + mat[1, 2] * z + mat[1, 3]
                    mz = mat[2, 0] * x + mat[2, 1] * y + mat[2, 2] * z + mat[2, 3]
                    if interp == 0:
                        pv = _trilinear_flat(flat_p, nx, ny, nz, mx, my, mz)
                    else:
                        pv = _nearest_flat(flat_p, nx, ny, nz, mx, my, mz)
                    if (iv < empty_thr) != (pv < empty_thr):
                        acc += 1.0
                    else:
                        d = iv - pv
                        acc += d * d
    return acc


@njit(cache=True)
def _def_term(pts_src, pts_tgt, tets, t, spacing, s, g):
    """Squared edge-length changes of one tet: 6 real edges plus 4 spokes.

    ``s`` and ``g`` are (4, 3) scratch buffers for the mm coordinates.
    """
    for v in range(4):
        p = tets[t, v]
        for a in range(3):
            s[v, a] = pts_src[p, a] * spacing[a]
            g[v, a] = pts_tgt[p, a] * spacing[a]
    acc = 0.0
    for e in range(6):
        i = TET_EDGES[e, 0]
        j = TET_EDGES[e, 1]
        ls = np.sqrt(
            (s[i, 0] - s[j, 0]) ** 2 + (s[i, 1] - s[j, 1]) ** 2 + (s[i, 2] - s[j, 2]) ** 2
        )
        lt = np.sqrt(
            (g[i, 0] - g[j, 0]) ** 2 + (g[i, 1] - g[j, 1]) ** 2 + (g[i, 2] - g[j, 2]) ** 2
        )
        acc += (ls - lt) * (ls - lt)
    for v in range(4):
        csx = 0.0
        csy = 0.0
        csz = 0.0
        ctx = 0.0
        cty = 0.0
        ctz = 0.0
        for u in range(4):
            if u == v:
                continue
            csx += s[u, 0]
            csy += s[u, 1]
            csz += s[u, 2]
            ctx += g[u, 0]
            cty += g[u, 1]
            ctz += g[u, 2]
        csx /= 3.0
        csy /= 3.0
        csz /= 3.0
        ctx /= 3.0
        cty /= 3.0
        ctz /= 3.0
        ls = np.sqrt((s[v, 0] - csx) ** 2 + (s[v, 1] - csy) ** 2 + (s[v, 2] - csz) ** 2)
        lt = np.sqrt((g[v, 0] - ctx) ** 2 + (g[v, 1] - cty) ** 2 + (g[v, 2] - ctz) ** 2)
        acc += (ls - lt) * (ls - lt)
    return acc


@njit(cache=True)
def _locate_point_hinted(pts, tets, px, py, pz, eps_vol, hint_tets):
    """Containment scan over a candidate list first, then all tets ascending."""
    w = np.empty(4)
    verts = np.empty((4, 3))
    for h in range(hint_tets.shape[0]):
        t = hint_tets[h]
        for v in range(4):
            verts[v, 0] = pts[tets[t, v], 0]
            verts[v, 1] = pts[tets[t, v], 1]
            verts[v, 2] = pts[tets[t, v], 2]
        det = _bary_weights(verts, px, py, pz, w)
        if abs(det) / 6.0 <= eps_vol:
            continue
        if w[0] >= -1e-12 and w[1] >= -1e-12 and w[2] >= -1e-12 and w[3] >= -1e-12:
            return t
    return _locate_point(pts, tets, px, py, pz, eps_vol)


@njit(cache=True)
def _guidance_point_term(
    pts_from, pts_to, tets, tet_id, vx, vy, vz, other_mm, o_lo, o_hi, spacing
):
    """Squared mm distance from the transformed point to its nearest partner."""
    w = np.empty(4)
    verts = np.empty((4, 3))
    for v in range(4):
        verts[v, 0] = pts_from[tets[tet_id, v], 0]
        verts[v, 1] = pts_from[tets[tet_id, v], 1]
        verts[v, 2] = pts_from[tets[tet_id, v], 2]
    _bary_weights(verts, vx, vy, vz, w)
    mx = 0.0
    my = 0.0
    mz = 0.0
    for v in range(4):
        p = tets[tet_id, v]
        mx += w[v] * pts_to[p, 0]
        my += w[v] * pts_to[p, 1]
        mz += w[v] * pts_to[p, 2]
    mx *= spacing[0]
    my *= spacing[1]
    mz *= spacing[2]
    best = np.inf
    for j in range(o_lo, o_hi):
        dx = mx - other_mm[j, 0]
        dy = my - other_mm[j, 1]
        dz = mz - other_mm[j, 2]
        dd = dx * dx + dy * dy + dz * dz
        if dd < best:
            best = dd
    return best


@njit(cache=True)
def _guidance_side(
    pts_from, pts_to, tets, eps_vol, vox, corr, indptr_other, other_mm, spacing,
    out_tet, out_term, hint_tets, use_hints,
):
    """(Re)locate and score one guidance side; returns False if a point is lost."""
    ok = True
    for i in range(vox.shape[0]):
        if use_hints:
            t = _locate_point_hinted(
                pts_from, tets, vox[i, 0], vox[i, 1], vox[i, 2], eps_vol, hint_tets
            )
        else:
            t = _locate_point(pts_from, tets, vox[i, 0], vox[i, 1], vox[i, 2], eps_vol)
        if t < 0:
            out_tet[i] = -1
            out_term[i] = np.nan
            ok = False
            continue
        c = corr[i]
        out_tet[i] = t
        out_term[i] = _guidance_point_term(
            pts_from, pts_to, tets, t,
            vox[i, 0], vox[i, 1], vox[i, 2],
            other_mm, indptr_other[c], indptr_other[c + 1], spacing,
        )
    return ok


# ---------------------------------------------------------------------------
# Feasibility
# ---------------------------------------------------------------------------


@njit(cache=True)
def _check_one_point(
    grid_pts, p, tets, pt_indptr, pt_tets, border_kind, fixed_coords,
    edge_nbrs, face_axis, seg_indptr, segs, tet_orient, seg_orient,
    eps_vol, eps_area, faces_scratch, segs_scratch, check_vols=True,
):
    kind = border_kind[p]
    if kind == 3:  # corner: immobile
        for a in range(3):
            if grid_pts[p, a] != fixed_coords[p, a]:
                return False
        return True
    if kind == 2:  # edge: slide between lattice neighbours
        free = -1
        for a in range(3):
            if np.isnan(fixed_coords[p, a]):
                free = a
            elif grid_pts[p, a] != fixed_coords[p, a]:
                return False
        lo = edge_nbrs[p, 0]
        hi = edge_nbrs[p, 1]
        x = grid_pts[p, free]
        return grid_pts[lo, free] < x and x < grid_pts[hi, free]
    if kind == 1:  # face: stay on the plane, inside the 2D link
        af = face_axis[p]
        if grid_pts[p, af] != fixed_coords[p, af]:
            return False
        u = 0 if af != 0 else 1
        v = 2 if af != 2 else 1
        lo = seg_indptr[p]
        hi = seg_indptr[p + 1]
        n = hi - lo
        if n < 3:
            return False
        pu = grid_pts[p, u]
        pv = grid_pts[p, v]
        for i in range(n):
            q = segs[lo + i, 0]
            r = segs[lo + i, 1]
            qu = grid_pts[q, u]
            qv = grid_pts[q, v]
            ru = grid_pts[r, u]
            rv = grid_pts[r, v]
            # boundary triangles must keep their reference winding; a flip is
            # a fold of the border plane that the parity test alone can miss
            area2 = ((qu - pu) * (rv - pv) - (qv - pv) * (ru - pu)) * seg_orient[lo + i]
            if area2 * 0.5 <= eps_area:
                return False
            segs_scratch[i, 0, 0] = qu
            segs_scratch[i, 0, 1] = qv
            segs_scratch[i, 1, 0] = ru
            segs_scratch[i, 1, 1] = rv
        return _ray_parity_2d(pu, pv, segs_scratch[:n], _RAY_DIRS_2D) == 1
    # interior: non-degenerate incident tets, point inside its link star
    lo = pt_indptr[p]
    hi = pt_indptr[p + 1]
    n = hi - lo
    for i in range(n):
        t = pt_tets[lo + i]
        if check_vols:
            # orientation preservation: a discrete move can jump a vertex
            # across a face and land back inside a self-intersecting link, so
            # the parity test alone does not exclude inverted tets
            vol = _tet_signed_volume(
                grid_pts[tets[t, 0], 0], grid_pts[tets[t, 0], 1], grid_pts[tets[t, 0], 2],
                grid_pts[tets[t, 1], 0], grid_pts[tets[t, 1], 1], grid_pts[tets[t, 1], 2],
                grid_pts[tets[t, 2], 0], grid_pts[tets[t, 2], 1], grid_pts[tets[t, 2], 2],
                grid_pts[tets[t, 3], 0], grid_pts[tets[t, 3], 1], grid_pts[tets[t, 3], 2],
            )
            if vol * tet_orient[t] <= eps_vol:
                return False
        k = 0
        for v in range(4):
            q = tets[t, v]
            if q != p:
                faces_scratch[i, k, 0] = grid_pts[q, 0]
                faces_scratch[i, k, 1] = grid_pts[q, 1]
                faces_scratch[i, k, 2] = grid_pts[q, 2]
                k += 1
    return (
        _ray_parity_3d(
            grid_pts[p, 0], grid_pts[p, 1], grid_pts[p, 2], faces_scratch[:n], _RAY_DIRS
        )
        == 1
    )


@njit(cache=True)
def _check_points_both_grids(
    pts, check_ids, tets, pt_indptr, pt_tets, border_kind, fixed_coords,
    edge_nbrs, face_axis, seg_indptr, segs, tet_orient, seg_orient,
    eps_vol, eps_area,
):
    faces_scratch = np.empty((64, 3, 3))
    segs_scratch = np.empty((64, 2, 2))
    for g in range(2):
        for i in range(check_ids.shape[0]):
            if not _check_one_point(
                pts[g], check_ids[i], tets, pt_indptr, pt_tets, border_kind,
                fixed_coords, edge_nbrs, face_axis, seg_indptr, segs,
                tet_orient, seg_orient, eps_vol, eps_area,
                faces_scratch, segs_scratch,
            ):
                return False
    return True


def check_feasibility(solution: Solution, moved_points=None) -> bool:
    """Fold check: every checked point stays inside its (2D/3D) link.

    With ``moved_points`` given, only the moved points and the points sharing a
    tet with them are checked; otherwise every point of both grids is.
    """
    topo = solution.topology
    if moved_points is None:
        ids = np.arange(topo.n_points, dtype=np.int64)
    else:
        moved = np.asarray(list(moved_points), dtype=np.int64)
        parts = [moved]
        for p in moved:
            parts.append(topo.nbrs[topo.nbr_indptr[p]:topo.nbr_indptr[p + 1]].astype(np.int64))
        ids = np.unique(np.concatenate(parts))
    return bool(
        _check_points_both_grids(
            solution.points, ids, topo.tets, topo.point_tets_indptr, topo.point_tets,
            topo.border_kind, solution.fixed_coords, topo.edge_nbrs, topo.face_axis,
            topo.face_seg_indptr, topo.face_segs, topo.tet_orient, topo.seg_orient,
            solution.eps_vol, solution.eps_area,
        )
    )


# ---------------------------------------------------------------------------
# Full and partial evaluation
# ---------------------------------------------------------------------------


@njit(cache=True)
def _eval_dis_tets(
    pts, tet_ids, tets, flat_src, flat_tgt, nx, ny, nz, empty_thr, interp, eps_vol,
    fwd, bwd,
):
    verts_r = np.empty((4, 3))
    verts_p = np.empty((4, 3))
    mat = np.empty((3, 4))
    tris = np.empty((2, 3, 2))
    quad = np.empty((4, 2))
    for i in range(tet_ids.shape[0]):
        t = tet_ids[i]
        fwd[t] = _dis_term_dir(
            pts[1], pts[0], tets, t, flat_tgt, flat_src, nx, ny, nz,
            empty_thr, interp, eps_vol, verts_r, verts_p, mat, tris, quad,
        )
        bwd[t] = _dis_term_dir(
            pts[0], pts[1], tets, t, flat_src, flat_tgt, nx, ny, nz,
            empty_thr, interp, eps_vol, verts_r, verts_p, mat, tris, quad,
        )


@njit(cache=True)
def _eval_def_tets(pts, tet_ids, tets, spacing, deft):
    s = np.empty((4, 3))
    g = np.empty((4, 3))
    for i in range(tet_ids.shape[0]):
        t = tet_ids[i]
        deft[t] = _def_term(pts[0], pts[1], tets, t, spacing, s, g)


def _new_context(solution: Solution, problem: RegistrationProblem) -> PartialEvalContext:
    topo = solution.topology
    ga = guidance_arrays(problem)
    t = topo.n_tets
    return PartialEvalContext(
        fwd=np.zeros(t),
        bwd=np.zeros(t),
        deft=np.zeros(t),
        gs_tet=np.full(ga.s_vox.shape[0], -1, dtype=np.int32),
        gs_term=np.zeros(ga.s_vox.shape[0]),
        gt_tet=np.full(ga.t_vox.shape[0], -1, dtype=np.int32),
        gt_term=np.zeros(ga.t_vox.shape[0]),
        sums=np.zeros(5),
        n_vox=int(np.prod(solution.dims)),
        n_tets=t,
        n_gpts=ga.total_points,
    )


def _interp_flag(problem: RegistrationProblem) -> int:
    mode = getattr(problem, "interpolation", "trilinear")
    if mode == "trilinear":
        return 0
    if mode == "nearest":
        return 1
    raise ValueError(f"unknown interpolation mode {mode!r}")


def _ensure_context(solution: Solution, problem: RegistrationProblem) -> PartialEvalContext:
    ctx = solution.cache
    ga = guidance_arrays(problem)
    if (
        not isinstance(ctx, PartialEvalContext)
        or ctx.n_tets != solution.topology.n_tets
        or ctx.gs_tet.shape[0] != ga.s_vox.shape[0]
        or ctx.gt_tet.shape[0] != ga.t_vox.shape[0]
    ):
        ctx = _new_context(solution, problem)
        solution.cache = ctx
    return ctx


def eval_dissimilarity(
    solution: Solution, problem: RegistrationProblem, subset=None
) -> float:
    """Symmetric mean squared intensity difference (black/grey pairs score 1).

    ``subset`` restricts the recomputation to the given tet ids; the remaining
    terms are taken from the solution's cache, which a prior full evaluation
    must have filled.
    """
    ctx = _ensure_context(solution, problem)
    topo = solution.topology
    nx, ny, nz = problem.dims
    if subset is None:
        tet_ids = np.arange(topo.n_tets, dtype=np.int64)
    else:
        tet_ids = np.asarray(sorted(set(int(t) for t in subset)), dtype=np.int64)
    _eval_dis_tets(
        solution.points, tet_ids, topo.tets,
        problem.source.flat, problem.target.flat, nx, ny, nz,
        EMPTY_THRESHOLD, _interp_flag(problem), solution.eps_vol,
        ctx.fwd, ctx.bwd,
    )
    ctx.sums[0] = ctx.fwd.sum()
    ctx.sums[1] = ctx.bwd.sum()
    return ctx.dissimilarity()


def eval_deformation(solution: Solution, subset=None) -> float:
    """Mean squared edge-length change over the 10 edge terms of every tet."""
    ctx = solution.cache
    if not isinstance(ctx, PartialEvalContext) or ctx.n_tets != solution.topology.n_tets:
        # deformation alone needs no images or guidance
        t = solution.topology.n_tets
        ctx = PartialEvalContext(
            fwd=np.zeros(t), bwd=np.zeros(t), deft=np.zeros(t),
            gs_tet=np.empty(0, dtype=np.int32), gs_term=np.empty(0),
            gt_tet=np.empty(0, dtype=np.int32), gt_term=np.empty(0),
            sums=np.zeros(5),
            n_vox=int(np.prod(solution.dims)),
            n_tets=t,
            n_gpts=0,
        )
        solution.cache = ctx
    topo = solution.topology
    if subset is None:
        tet_ids = np.arange(topo.n_tets, dtype=np.int64)
    else:
        tet_ids = np.asarray(sorted(set(int(t) for t in subset)), dtype=np.int64)
    _eval_def_tets(solution.points, tet_ids, topo.tets, solution.spacing, ctx.deft)
    ctx.sums[2] = ctx.deft.sum()
    return ctx.deformation()


def eval_guidance(
    solution: Solution, problem: RegistrationProblem, subset=None
) -> float:
    """Symmetric squared nearest-point error of the guidance sets, in mm^2."""
    if problem.guidance is None:
        raise ValueError("problem has no guidance")
    ctx = _ensure_context(solution, problem)
    ga = guidance_arrays(problem)
    topo = solution.topology
    if subset is None:
        hints = np.empty(0, dtype=np.int64)
        use_hints = False
        s_sel = np.arange(ga.s_vox.shape[0], dtype=np.int64)
        t_sel = np.arange(ga.t_vox.shape[0], dtype=np.int64)
    else:
        moved = np.asarray(sorted(set(int(t) for t in subset)), dtype=np.int64)
        hints = moved
        use_hints = True
        s_sel = np.nonzero(np.isin(ctx.gs_tet, moved))[0]
        t_sel = np.nonzero(np.isin(ctx.gt_tet, moved))[0]
    ok = True
    if len(s_sel):
        ok &= _guidance_side_update(solution, ga, ctx, s_sel, hints, use_hints, side="S")
    if len(t_sel):
        ok &= _guidance_side_update(solution, ga, ctx, t_sel, hints, use_hints, side="T")
    if not ok:
        raise ValueError("guidance point outside all tets")
    ctx.sums[3] = ctx.gs_term.sum()
    ctx.sums[4] = ctx.gt_term.sum()
    g = ctx.guidance()
    assert g is not None
    return g


def _guidance_side_update(solution, ga, ctx, sel, hints, use_hints, side) -> bool:
    topo = solution.topology
    if side == "S":
        vox, corr = ga.s_vox, ga.s_corr
        indptr_other, other_mm = ga.t_indptr, ga.t_mm
        pts_from, pts_to = solution.points[SRC], solution.points[TGT]
        tet_arr, term_arr = ctx.gs_tet, ctx.gs_term
    else:
        vox, corr = ga.t_vox, ga.t_corr
        indptr_other, other_mm = ga.s_indptr, ga.s_mm
        pts_from, pts_to = solution.points[TGT], solution.points[SRC]
        tet_arr, term_arr = ctx.gt_tet, ctx.gt_term
    out_tet = np.empty(len(sel), dtype=np.int32)
    out_term = np.empty(len(sel))
    ok = _guidance_side(
        pts_from, pts_to, topo.tets, solution.eps_vol,
        np.ascontiguousarray(vox[sel]), np.ascontiguousarray(corr[sel]),
        indptr_other, other_mm, solution.spacing,
        out_tet, out_term, hints, use_hints,
    )
    tet_arr[sel] = out_tet
    term_arr[sel] = out_term
    return bool(ok)


def eval_all(
    solution: Solution, problem: RegistrationProblem, subset=None
) -> ObjectiveVector:
    """Evaluate (dissimilarity, deformation[, guidance]); caches the context."""
    eval_dissimilarity(solution, problem, subset)
    eval_deformation(solution, subset)
    if problem.guidance is not None:
        eval_guidance(solution, problem, subset)
    obj = solution.cache.totals()
    solution.objectives = obj
    return obj
