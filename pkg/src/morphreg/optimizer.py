"""Multi-objective optimizer: Gaussian partial variation over tetrahedron
variable groups, domination-based acceptance and an epsilon-grid elitist
archive.

Per generation, each cube cell contributes one of its six tets as the jointly
modified variable group (24 variables: 4 points x 3 coords x 2 grids).  A
proposed group is sampled from a Gaussian estimated over the best fraction of
the individual's objective-space cluster, projected onto the border
constraints, checked for folds, and partially evaluated; it is kept when it
dominates the previous objectives or is non-dominated and enters the archive.

Individuals evolve against a frozen archive snapshot and accumulate accepted
candidates locally; candidates merge into the archive in individual order at
the generation boundary, so serial and threaded runs produce identical
results.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numba import njit

from .geometry import _tet_signed_volume
from .mesh import (
    GridTopology,
    Solution,
    build_topology,
    init_identity_solution,
    lattice_points,
)
from .objectives import (
    ObjectiveVector,
    PartialEvalContext,
    _check_one_point,
    _def_term,
    _dis_term_dir,
    _guidance_point_term,
    _locate_point_hinted,
    eval_all,
    guidance_arrays,
)
from .volume import EMPTY_THRESHOLD, RegistrationProblem


@dataclass
class StageConfig:
    """One optimization stage; field names match the config file keys."""

    grid_resolution: tuple[int, int, int] = (6, 6, 6)
    population_size: int = 250
    generations: int = 300
    seed: int = 0
    clusters: int = 5
    truncation_fraction: float = 0.35
    archive_cells: int = 200


@dataclass
class FosElement:
    """Variable group of one tet: its 4 points' coordinates in both grids."""

    tet: int
    cube: int
    variables: np.ndarray      # (24,) global variable indices
    affected_tets: np.ndarray  # tets whose terms change when the group moves


def build_fos(topology: GridTopology) -> list[FosElement]:
    """All 6 tet groups per cube; a pass visits one drawn per cube."""
    n = topology.n_points
    elements = []
    for t in range(topology.n_tets):
        pts = topology.tets[t]
        variables = np.empty(24, dtype=np.int64)
        i = 0
        for g in range(2):
            for v in range(4):
                for a in range(3):
                    variables[i] = g * 3 * n + int(pts[v]) * 3 + a
                    i += 1
        lo = topology.tet_aff_indptr[t]
        hi = topology.tet_aff_indptr[t + 1]
        elements.append(
            FosElement(
                tet=t,
                cube=int(topology.cube_of_tet[t]),
                variables=variables,
                affected_tets=topology.tet_aff[lo:hi].copy(),
            )
        )
    return elements


# ---------------------------------------------------------------------------
# Elitist archive
# ---------------------------------------------------------------------------


def dominates(a, b) -> bool:
    """True when a is no worse in every objective and better in at least one."""
    a = np.asarray(a)
    b = np.asarray(b)
    return bool(np.all(a <= b) and np.any(a < b))


@njit(cache=True)
def _insert_scan(objs, alive, n, obj, evict):
    """One pass over archive rows: is obj dominated, and which rows it evicts.

    Returns (dominated, n_evict); ``evict`` receives the dominated row ids.
    """
    n_obj = obj.shape[0]
    n_ev = 0
    for r in range(n):
        if not alive[r]:
            continue
        r_le = True   # row <= obj everywhere
        r_lt = False  # row < obj somewhere
        r_ge = True
        r_gt = False
        for k in range(n_obj):
            a = objs[r, k]
            b = obj[k]
            if a > b:
                r_le = False
                r_gt = True
            elif a < b:
                r_lt = True
                r_ge = False
        if r_le and r_lt:
            return True, 0
        if r_ge and r_gt:
            evict[n_ev] = r
            n_ev += 1
    return False, n_ev


@dataclass
class _ArchiveMember:
    obj: np.ndarray
    order: int
    payload: object


class ElitistArchive:
    """Bounded non-dominated store on an adaptive epsilon grid.

    A candidate is rejected when any member dominates it or when its grid cell
    is held by a member at least as close to the cell's utopian corner; an
    accepted candidate evicts the members it dominates and its cell's previous
    occupant.  The grid spans the observed objective range and is rebuilt when
    the range outgrows it.
    """

    def __init__(self, n_obj: int, n_cells: int = 200, bounds=None):
        self.n_obj = int(n_obj)
        self.n_cells = int(n_cells)
        cap = 256
        self._objs = np.empty((cap, self.n_obj))
        self._dist = np.empty(cap)
        self._order = np.empty(cap, dtype=np.int64)
        self._alive = np.zeros(cap, dtype=bool)
        self._payloads: list = [None] * cap
        self._n = 0
        self._n_dead = 0
        self._bykey: dict[int, int] = {}
        self._counter = 0
        self._evict_buf = np.empty(256, dtype=np.int64)
        if bounds is not None:
            lo, hi = bounds
            self.grid_lo = np.asarray(lo, dtype=np.float64).copy()
            self.grid_hi = np.asarray(hi, dtype=np.float64).copy()
            self._fixed_bounds = True
        else:
            self.grid_lo = None
            self.grid_hi = None
            self._fixed_bounds = False
        self.data_lo = None
        self.data_hi = None

    def __len__(self) -> int:
        return int(self._alive[: self._n].sum())

    @property
    def cell_sizes(self) -> np.ndarray:
        span = np.maximum(self.grid_hi - self.grid_lo, 0.0)
        return span / self.n_cells

    def _key_dist(self, obj: np.ndarray) -> tuple[int, float]:
        cell = self.cell_sizes
        key = 0
        dist = 0.0
        for a in range(self.n_obj):
            if cell[a] > 0.0:
                idx = int(math.floor((obj[a] - self.grid_lo[a]) / cell[a]))
                idx = max(-(1 << 19), min((1 << 19) - 1, idx))
                frac = (obj[a] - (self.grid_lo[a] + idx * cell[a])) / cell[a]
                dist += frac * frac
            else:
                idx = 0
            key = (key << 21) | (idx + (1 << 20))
        return key, dist

    def _grow(self) -> None:
        cap = self._objs.shape[0] * 2
        self._objs = np.concatenate([self._objs, np.empty_like(self._objs)])
        self._dist = np.concatenate([self._dist, np.empty_like(self._dist)])
        self._order = np.concatenate([self._order, np.empty_like(self._order)])
        self._alive = np.concatenate([self._alive, np.zeros_like(self._alive)])
        self._payloads.extend([None] * (cap - len(self._payloads)))

    def _compact(self) -> None:
        keep = np.nonzero(self._alive[: self._n])[0]
        m = len(keep)
        self._objs[:m] = self._objs[keep]
        self._dist[:m] = self._dist[keep]
        self._order[:m] = self._order[keep]
        self._alive[:m] = True
        self._alive[m: self._n] = False
        pay = [self._payloads[i] for i in keep]
        self._payloads[:m] = pay
        for i in range(m, self._n):
            self._payloads[i] = None
        self._n = m
        self._n_dead = 0
        self._bykey = {self._key_dist(self._objs[i])[0]: i for i in range(m)}

    def _kill(self, row: int, key: Optional[int] = None) -> None:
        self._alive[row] = False
        self._payloads[row] = None
        self._n_dead += 1
        if key is not None:
            self._bykey.pop(key, None)

    def _maybe_rescale(self, obj: np.ndarray) -> None:
        if self.data_lo is None:
            self.data_lo = obj.copy()
            self.data_hi = obj.copy()
        else:
            for a in range(self.n_obj):
                v = obj[a]
                if v < self.data_lo[a]:
                    self.data_lo[a] = v
                if v > self.data_hi[a]:
                    self.data_hi[a] = v
        if self._fixed_bounds:
            return
        if self.grid_lo is None:
            self.grid_lo = self.data_lo.copy()
            self.grid_hi = self.data_hi.copy()
            return
        outside = False
        grow = False
        for a in range(self.n_obj):
            if obj[a] < self.grid_lo[a] or obj[a] > self.grid_hi[a]:
                outside = True
            gspan = self.grid_hi[a] - self.grid_lo[a]
            if self.data_hi[a] - self.data_lo[a] > 2.0 * gspan:
                grow = True
            if outside and gspan == 0.0:
                grow = True
        if outside or grow:
            self.grid_lo = self.data_lo.copy()
            self.grid_hi = self.data_hi.copy()
            self._rebucket()

    def _rebucket(self) -> None:
        """Re-grid all members; merged cells keep the closest-to-corner one."""
        self._compact()
        n = self._n
        self._bykey = {}
        order = np.argsort(self._order[:n], kind="stable")
        for i in order:
            key, dist = self._key_dist(self._objs[i])
            self._dist[i] = dist
            cur = self._bykey.get(key)
            if cur is None:
                self._bykey[key] = i
            elif dist < self._dist[cur]:
                self._kill(cur)
                self._bykey[key] = i
            else:
                self._kill(i)

    def insert(self, obj, payload=None, payload_factory: Optional[Callable] = None) -> bool:
        """Offer a vector; True when it enters the archive.

        ``payload_factory`` is called only when the candidate is actually
        stored, so callers can defer solution snapshots.
        """
        obj = np.asarray(obj, dtype=np.float64).reshape(self.n_obj).copy()
        self._maybe_rescale(obj)
        key, dist = self._key_dist(obj)
        row = self._bykey.get(key)
        if row is not None and self._dist[row] <= dist:
            return False
        n = self._n
        if self._evict_buf.shape[0] < n:
            self._evict_buf = np.empty(max(256, 2 * n), dtype=np.int64)
        dominated, n_ev = _insert_scan(self._objs, self._alive, n, obj, self._evict_buf)
        if dominated:
            return False
        if payload is None and payload_factory is not None:
            payload = payload_factory()
        # evict members the candidate dominates, then the cell occupant
        for e in range(n_ev):
            r = int(self._evict_buf[e])
            self._kill(r, self._key_dist(self._objs[r])[0])
        if row is not None and self._alive[row]:
            self._kill(row, key)
        if self._n == self._objs.shape[0]:
            self._grow()
        i = self._n
        self._n += 1
        self._objs[i] = obj
        self._dist[i] = dist
        self._order[i] = self._counter
        self._counter += 1
        self._alive[i] = True
        self._payloads[i] = payload
        self._bykey[key] = i
        if self._n_dead > max(64, self._n - self._n_dead):
            self._compact()
        return True

    def _live_rows(self) -> np.ndarray:
        rows = np.nonzero(self._alive[: self._n])[0]
        objs = self._objs[rows]
        # lexsort's last key is primary: objectives first, insertion order last
        order = np.lexsort(
            (self._order[rows],) + tuple(objs[:, a] for a in reversed(range(self.n_obj)))
        )
        return rows[order]

    def front(self) -> list[_ArchiveMember]:
        """Members sorted by objectives for stable output."""
        return [
            _ArchiveMember(
                obj=self._objs[i].copy(),
                order=int(self._order[i]),
                payload=self._payloads[i],
            )
            for i in self._live_rows()
        ]

    def front_objectives(self) -> np.ndarray:
        rows = self._live_rows()
        if len(rows) == 0:
            return np.empty((0, self.n_obj))
        return self._objs[rows].copy()

    def snapshot_arrays(self):
        """Frozen lookup tables for the in-generation acceptance test."""
        front = self.front_objectives()
        keys = np.array(sorted(self._bykey.keys()), dtype=np.int64)
        dists = np.array([self._dist[self._bykey[k]] for k in keys], dtype=np.float64)
        lo = self.grid_lo if self.grid_lo is not None else np.zeros(self.n_obj)
        cell = self.cell_sizes if self.grid_lo is not None else np.zeros(self.n_obj)
        return front, keys, dists, lo.copy(), cell.copy()


def archive_insert(archive: ElitistArchive, objectives, solution=None) -> bool:
    """Spec-level convenience wrapper around :meth:`ElitistArchive.insert`."""
    if isinstance(objectives, ObjectiveVector):
        objectives = objectives.as_array()
    return archive.insert(objectives, payload=solution)


def hypervolume(points: np.ndarray, reference: np.ndarray) -> float:
    """Dominated hypervolume for 2 or 3 minimized objectives."""
    pts = np.asarray(points, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if pts.size == 0:
        return 0.0
    pts = pts[np.all(pts <= ref, axis=1)]
    if pts.size == 0:
        return 0.0
    if pts.shape[1] == 2:
        return _hv2(pts, ref)
    # slice along the third objective
    order = np.argsort(pts[:, 2], kind="stable")
    pts = pts[order]
    zs = pts[:, 2]
    total = 0.0
    active: list[np.ndarray] = []
    for i in range(len(pts)):
        z0 = zs[i]
        z1 = zs[i + 1] if i + 1 < len(pts) else ref[2]
        active.append(pts[i, :2])
        if z1 > z0:
            total += _hv2(np.array(active), ref[:2]) * (z1 - z0)
    return total


def _hv2(pts: np.ndarray, ref: np.ndarray) -> float:
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]
    best_y = np.inf
    total = 0.0
    for i in range(len(pts)):
        if pts[i, 1] >= best_y:
            continue
        total += (ref[0] - pts[i, 0]) * (min(best_y, ref[1]) - pts[i, 1])
        best_y = pts[i, 1]
    return total


# ---------------------------------------------------------------------------
# Kernel-side PRNG (explicit state: deterministic under any threading)
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _rng_u64(state):
    s1 = state[0]
    s0 = state[1]
    state[0] = s0
    s1 ^= s1 << np.uint64(23)
    s1 ^= s1 >> np.uint64(17)
    s1 ^= s0
    s1 ^= s0 >> np.uint64(26)
    state[1] = s1
    return state[0] + state[1]


@njit(cache=True, inline="always")
def _rng_uniform(state):
    return float(_rng_u64(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _rng_normals(state, out):
    # Box-Muller in pairs; out length must be even.
    for i in range(0, out.shape[0], 2):
        u1 = _rng_uniform(state)
        while u1 <= 1e-300:
            u1 = _rng_uniform(state)
        u2 = _rng_uniform(state)
        r = np.sqrt(-2.0 * np.log(u1))
        out[i] = r * np.cos(2.0 * np.pi * u2)
        out[i + 1] = r * np.sin(2.0 * np.pi * u2)


@njit(cache=True)
def _rng_permutation(state, out):
    n = out.shape[0]
    for i in range(n):
        out[i] = i
    for i in range(n - 1, 0, -1):
        j = int(_rng_u64(state) % np.uint64(i + 1))
        tmp = out[i]
        out[i] = out[j]
        out[j] = tmp


# ---------------------------------------------------------------------------
# In-kernel archive acceptance against the frozen snapshot
# ---------------------------------------------------------------------------


@njit(cache=True)
def _apply_move(pts, tets, t, vals):
    for v in range(4):
        p = tets[t, v]
        for g in range(2):
            for a in range(3):
                pts[g, p, a] = vals[g * 12 + v * 3 + a]


@njit(cache=True, inline="always")
def _in_sorted(arr, lo, hi, v):
    # binary search for v in arr[lo:hi] (ascending)
    while lo < hi:
        mid = (lo + hi) >> 1
        m = arr[mid]
        if m == v:
            return True
        if m < v:
            lo = mid + 1
        else:
            hi = mid
    return False


@njit(cache=True, inline="always")
def _dominates_vec(a, b, n_obj):
    better = False
    for k in range(n_obj):
        if a[k] > b[k]:
            return False
        if a[k] < b[k]:
            better = True
    return better


@njit(cache=True)
def _cell_key_dist(obj, lo, cell, n_obj, out_dist):
    key = np.int64(0)
    dist = 0.0
    for a in range(n_obj):
        if cell[a] > 0.0:
            idx = int(np.floor((obj[a] - lo[a]) / cell[a]))
            if idx < -(1 << 19):
                idx = -(1 << 19)
            elif idx > (1 << 19) - 1:
                idx = (1 << 19) - 1
            frac = (obj[a] - (lo[a] + idx * cell[a])) / cell[a]
            dist += frac * frac
        else:
            idx = 0
        key = (key << np.int64(21)) | np.int64(idx + (1 << 20))
    out_dist[0] = dist
    return key


@njit(cache=True)
def _archive_accept_local(
    obj, n_obj, front, champ_keys, champ_dists, grid_lo, grid_cell,
    acc_objs, acc_keys, acc_dists, acc_count,
):
    for r in range(front.shape[0]):
        if _dominates_vec(front[r], obj, n_obj):
            return False, np.int64(0), 0.0
        eq = True
        for k in range(n_obj):
            if front[r, k] != obj[k]:
                eq = False
                break
        if eq:
            return False, np.int64(0), 0.0
    for m in range(acc_count):
        if _dominates_vec(acc_objs[m], obj, n_obj):
            return False, np.int64(0), 0.0
    dist_out = np.empty(1)
    key = _cell_key_dist(obj, grid_lo, grid_cell, n_obj, dist_out)
    dist = dist_out[0]
    pos = np.searchsorted(champ_keys, key)
    if pos < champ_keys.shape[0] and champ_keys[pos] == key and champ_dists[pos] <= dist:
        return False, key, dist
    for m in range(acc_count):
        if acc_keys[m] == key and acc_dists[m] <= dist:
            return False, key, dist
    return True, key, dist


# ---------------------------------------------------------------------------
# The GOM pass kernel: one individual, one generation
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _gom_pass(
    rng_state,
    # topology
    tets, pt_indptr, pt_tets,
    tet_aff_indptr, tet_aff, tet_chk_indptr, tet_chk,
    border_kind, fixed_coords, edge_nbrs, face_axis, seg_indptr, segs,
    tet_orient, seg_orient,
    # images
    flat_src, flat_tgt, nx, ny, nz, spacing, empty_thr, interp,
    # guidance (forward: source points vs target mm; backward symmetric)
    gs_vox, gs_corr, gt_mm_indptr, gt_mm,
    gt_vox, gt_corr, gs_mm_indptr, gs_mm,
    # solution state, mutated in place
    pts, fwd, bwd, deft, gs_tet, gs_term, gt_tet, gt_term, sums,
    # generation inputs
    visit_tets, means, chols,
    # archive snapshot
    front, champ_keys, champ_dists, grid_lo, grid_cell, n_obj,
    # constants
    eps_vol, eps_area, n_vox, n_tets_total, n_gpts,
    # outputs
    acc_cubes, acc_vals, acc_objs,
):
    n_cubes = visit_tets.shape[0]
    order = np.empty(n_cubes, dtype=np.int64)
    _rng_permutation(rng_state, order)

    z = np.empty(24)
    prop = np.empty(24)
    old_coords = np.empty((2, 4, 3))
    verts_r = np.empty((4, 3))
    verts_p = np.empty((4, 3))
    mat = np.empty((3, 4))
    tris = np.empty((2, 3, 2))
    quad = np.empty((4, 2))
    sbuf = np.empty((4, 3))
    gbuf = np.empty((4, 3))
    faces_scratch = np.empty((64, 3, 3))
    segs_scratch = np.empty((64, 2, 2))
    max_aff = 0
    for t in range(tet_aff_indptr.shape[0] - 1):
        w = tet_aff_indptr[t + 1] - tet_aff_indptr[t]
        if w > max_aff:
            max_aff = w
    old_fwd = np.empty(max_aff)
    old_bwd = np.empty(max_aff)
    old_def = np.empty(max_aff)
    n_gs = gs_vox.shape[0]
    n_gt = gt_vox.shape[0]
    gs_saved_idx = np.empty(n_gs, dtype=np.int64)
    gs_saved_tet = np.empty(n_gs, dtype=np.int32)
    gs_saved_term = np.empty(n_gs)
    gt_saved_idx = np.empty(n_gt, dtype=np.int64)
    gt_saved_tet = np.empty(n_gt, dtype=np.int32)
    gt_saved_term = np.empty(n_gt)
    acc_keys = np.empty(n_cubes, dtype=np.int64)
    acc_dists = np.empty(n_cubes)

    cur = np.empty(3)
    cur[0] = (sums[0] + sums[1]) / (2.0 * n_vox)
    cur[1] = sums[2] / (10.0 * n_tets_total)
    cur[2] = (sums[3] + sums[4]) / n_gpts if n_gpts > 0 else 0.0
    cand = np.empty(3)

    acc_count = 0
    for oi in range(n_cubes):
        cube = order[oi]
        t = visit_tets[cube]

        # ---- sample the 24-variable proposal and apply with projection
        _rng_normals(rng_state, z)
        for i in range(24):
            acc = means[cube, i]
            for j in range(24):
                acc += chols[cube, i, j] * z[j]
            prop[i] = acc
        for v in range(4):
            p = tets[t, v]
            for g in range(2):
                for a in range(3):
                    old_coords[g, v, a] = pts[g, p, a]
                    val = prop[g * 12 + v * 3 + a]
                    if not np.isnan(fixed_coords[p, a]):
                        val = fixed_coords[p, a]
                    pts[g, p, a] = val

        # ---- fold constraints: affected tets keep their orientation and
        # clear the degeneracy floor, then the moved points and their link
        # neighbours must stay inside their stars
        a_lo = tet_aff_indptr[t]
        a_hi = tet_aff_indptr[t + 1]
        feasible = True
        for g in range(2):
            if not feasible:
                break
            for ai in range(a_lo, a_hi):
                at = tet_aff[ai]
                vol = _tet_signed_volume(
                    pts[g, tets[at, 0], 0], pts[g, tets[at, 0], 1], pts[g, tets[at, 0], 2],
                    pts[g, tets[at, 1], 0], pts[g, tets[at, 1], 1], pts[g, tets[at, 1], 2],
                    pts[g, tets[at, 2], 0], pts[g, tets[at, 2], 1], pts[g, tets[at, 2], 2],
                    pts[g, tets[at, 3], 0], pts[g, tets[at, 3], 1], pts[g, tets[at, 3], 2],
                )
                if vol * tet_orient[at] <= eps_vol:
                    feasible = False
                    break
        for g in range(2):
            if not feasible:
                break
            for ci in range(tet_chk_indptr[t], tet_chk_indptr[t + 1]):
                q = tet_chk[ci]
                if not _check_one_point(
                    pts[g], q, tets, pt_indptr, pt_tets, border_kind, fixed_coords,
                    edge_nbrs, face_axis, seg_indptr, segs, tet_orient, seg_orient,
                    eps_vol, eps_area, faces_scratch, segs_scratch, False,
                ):
                    feasible = False
                    break
        if not feasible:
            for v in range(4):
                p = tets[t, v]
                for g in range(2):
                    for a in range(3):
                        pts[g, p, a] = old_coords[g, v, a]
            continue

        # ---- partial re-evaluation of the affected tets
        n_aff = a_hi - a_lo
        d_fwd = 0.0
        d_bwd = 0.0
        d_def = 0.0
        for i in range(n_aff):
            at = tet_aff[a_lo + i]
            old_fwd[i] = fwd[at]
            old_bwd[i] = bwd[at]
            old_def[i] = deft[at]
            nf = _dis_term_dir(
                pts[1], pts[0], tets, at, flat_tgt, flat_src, nx, ny, nz,
                empty_thr, interp, eps_vol, verts_r, verts_p, mat, tris, quad,
            )
            nb = _dis_term_dir(
                pts[0], pts[1], tets, at, flat_src, flat_tgt, nx, ny, nz,
                empty_thr, interp, eps_vol, verts_r, verts_p, mat, tris, quad,
            )
            nd = _def_term(pts[0], pts[1], tets, at, spacing, sbuf, gbuf)
            fwd[at] = nf
            bwd[at] = nb
            deft[at] = nd
            d_fwd += nf - old_fwd[i]
            d_bwd += nb - old_bwd[i]
            d_def += nd - old_def[i]

        # ---- guidance points whose containing tet moved
        aff = tet_aff[a_lo:a_hi]
        n_gs_saved = 0
        n_gt_saved = 0
        d_gs = 0.0
        d_gt = 0.0
        lost = False
        for i in range(n_gs):
            if not _in_sorted(tet_aff, a_lo, a_hi, gs_tet[i]):
                continue
            gs_saved_idx[n_gs_saved] = i
            gs_saved_tet[n_gs_saved] = gs_tet[i]
            gs_saved_term[n_gs_saved] = gs_term[i]
            n_gs_saved += 1
            nt = _locate_point_hinted(
                pts[0], tets, gs_vox[i, 0], gs_vox[i, 1], gs_vox[i, 2], eps_vol, aff
            )
            if nt < 0:
                lost = True
                break
            c = gs_corr[i]
            term = _guidance_point_term(
                pts[0], pts[1], tets, nt,
                gs_vox[i, 0], gs_vox[i, 1], gs_vox[i, 2],
                gt_mm, gt_mm_indptr[c], gt_mm_indptr[c + 1], spacing,
            )
            d_gs += term - gs_term[i]
            gs_tet[i] = nt
            gs_term[i] = term
        if not lost:
            for i in range(n_gt):
                if not _in_sorted(tet_aff, a_lo, a_hi, gt_tet[i]):
                    continue
                gt_saved_idx[n_gt_saved] = i
                gt_saved_tet[n_gt_saved] = gt_tet[i]
                gt_saved_term[n_gt_saved] = gt_term[i]
                n_gt_saved += 1
                nt = _locate_point_hinted(
                    pts[1], tets, gt_vox[i, 0], gt_vox[i, 1], gt_vox[i, 2], eps_vol, aff
                )
                if nt < 0:
                    lost = True
                    break
                c = gt_corr[i]
                term = _guidance_point_term(
                    pts[1], pts[0], tets, nt,
                    gt_vox[i, 0], gt_vox[i, 1], gt_vox[i, 2],
                    gs_mm, gs_mm_indptr[c], gs_mm_indptr[c + 1], spacing,
                )
                d_gt += term - gt_term[i]
                gt_tet[i] = nt
                gt_term[i] = term

        ns0 = sums[0] + d_fwd
        ns1 = sums[1] + d_bwd
        ns2 = sums[2] + d_def
        ns3 = sums[3] + d_gs
        ns4 = sums[4] + d_gt
        cand[0] = (ns0 + ns1) / (2.0 * n_vox)
        cand[1] = ns2 / (10.0 * n_tets_total)
        cand[2] = (ns3 + ns4) / n_gpts if n_gpts > 0 else 0.0

        ok = not lost
        if ok:
            for k in range(3):
                if not np.isfinite(cand[k]):
                    ok = False

        accept = False
        key = np.int64(0)
        dist = 0.0
        if ok:
            if _dominates_vec(cand, cur, n_obj):
                accept = True
                dist_out = np.empty(1)
                key = _cell_key_dist(cand, grid_lo, grid_cell, n_obj, dist_out)
                dist = dist_out[0]
            elif not _dominates_vec(cur, cand, n_obj):
                accept, key, dist = _archive_accept_local(
                    cand, n_obj, front, champ_keys, champ_dists, grid_lo, grid_cell,
                    acc_objs, acc_keys, acc_dists, acc_count,
                )

        if accept:
            sums[0] = ns0
            sums[1] = ns1
            sums[2] = ns2
            sums[3] = ns3
            sums[4] = ns4
            for k in range(3):
                cur[k] = cand[k]
            acc_cubes[acc_count] = cube
            for v in range(4):
                p = tets[t, v]
                for g in range(2):
                    for a in range(3):
                        acc_vals[acc_count, g * 12 + v * 3 + a] = pts[g, p, a]
            for k in range(3):
                acc_objs[acc_count, k] = cand[k]
            acc_keys[acc_count] = key
            acc_dists[acc_count] = dist
            acc_count += 1
        else:
            for v in range(4):
                p = tets[t, v]
                for g in range(2):
                    for a in range(3):
                        pts[g, p, a] = old_coords[g, v, a]
            for i in range(n_aff):
                at = tet_aff[a_lo + i]
                fwd[at] = old_fwd[i]
                bwd[at] = old_bwd[i]
                deft[at] = old_def[i]
            for i in range(n_gs_saved):
                gs_tet[gs_saved_idx[i]] = gs_saved_tet[i]
                gs_term[gs_saved_idx[i]] = gs_saved_term[i]
            for i in range(n_gt_saved):
                gt_tet[gt_saved_idx[i]] = gt_saved_tet[i]
                gt_term[gt_saved_idx[i]] = gt_saved_term[i]

    return acc_count


# ---------------------------------------------------------------------------
# Population initialization kernel
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _init_individual(
    rng_state, pts, lattice, sigma,
    tets, pt_indptr, pt_tets, nbr_indptr, nbrs,
    border_kind, fixed_coords, edge_nbrs, face_axis, seg_indptr, segs,
    tet_orient, seg_orient, eps_vol, eps_area,
):
    """Identity lattice plus per-point Gaussian jitter, resampled until feasible."""
    n = lattice.shape[0]
    faces_scratch = np.empty((64, 3, 3))
    segs_scratch = np.empty((64, 2, 2))
    z = np.empty(2)
    for g in range(2):
        for p in range(n):
            for a in range(3):
                pts[g, p, a] = lattice[p, a]
    for g in range(2):
        for p in range(n):
            if border_kind[p] == 3:
                continue
            for attempt in range(50):
                for a in range(3):
                    if np.isnan(fixed_coords[p, a]):
                        _rng_normals(rng_state, z)
                        pts[g, p, a] = lattice[p, a] + sigma[a] * z[0]
                # check the point and every neighbour whose link it belongs to
                ok = _check_one_point(
                    pts[g], p, tets, pt_indptr, pt_tets, border_kind, fixed_coords,
                    edge_nbrs, face_axis, seg_indptr, segs, tet_orient, seg_orient,
                    eps_vol, eps_area, faces_scratch, segs_scratch,
                )
                if ok:
                    for qi in range(nbr_indptr[p], nbr_indptr[p + 1]):
                        q = nbrs[qi]
                        if not _check_one_point(
                            pts[g], q, tets, pt_indptr, pt_tets, border_kind,
                            fixed_coords, edge_nbrs, face_axis, seg_indptr, segs,
                            tet_orient, seg_orient, eps_vol, eps_area,
                            faces_scratch, segs_scratch,
                        ):
                            ok = False
                            break
                if ok:
                    break
                for a in range(3):
                    pts[g, p, a] = lattice[p, a]


# ---------------------------------------------------------------------------
# Clustering, selection, distribution estimation
# ---------------------------------------------------------------------------


def _normalize_objectives(objs: np.ndarray) -> np.ndarray:
    lo = objs.min(axis=0)
    hi = objs.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (objs - lo) / span


def _cluster_population(objs: np.ndarray, k: int) -> np.ndarray:
    """Balanced k-means on normalized objectives; deterministic."""
    n = objs.shape[0]
    k = max(1, min(k, n))
    x = _normalize_objectives(objs)
    # farthest-point leader init
    leaders = [int(np.argmax(x[:, 0]))]
    d = np.linalg.norm(x - x[leaders[0]], axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(d))
        leaders.append(nxt)
        d = np.minimum(d, np.linalg.norm(x - x[nxt], axis=1))
    centroids = x[leaders].copy()
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(5):
        dists = np.linalg.norm(x[:, None, :] - centroids[None, :, :], axis=2)
        labels = np.argmin(dists, axis=1)
        for c in range(k):
            sel = labels == c
            if np.any(sel):
                centroids[c] = x[sel].mean(axis=0)
    # balanced assignment: fill clusters by ascending distance
    dists = np.linalg.norm(x[:, None, :] - centroids[None, :, :], axis=2)
    cap = int(np.ceil(n / k))
    flat = [(dists[i, c], i, c) for i in range(n) for c in range(k)]
    flat.sort()
    assigned = np.full(n, -1, dtype=np.int64)
    counts = np.zeros(k, dtype=np.int64)
    for _, i, c in flat:
        if assigned[i] < 0 and counts[c] < cap:
            assigned[i] = c
            counts[c] += 1
    return assigned


def _select_in_cluster(objs: np.ndarray, members: np.ndarray, tau: float) -> np.ndarray:
    """Best ceil(tau*n) members by domination count, deterministically."""
    m = len(members)
    sub = objs[members]
    dom_count = np.zeros(m, dtype=np.int64)
    for i in range(m):
        for j in range(m):
            if i != j and dominates(sub[j], sub[i]):
                dom_count[i] += 1
    tie = _normalize_objectives(sub).sum(axis=1)
    order = np.lexsort((members, tie, dom_count))
    take = max(2, int(np.ceil(tau * m)))
    take = min(take, m)
    return members[order[:take]]


def _estimate_distributions(
    solutions: list[Solution], selected: np.ndarray, tet_rows: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian (mean, Cholesky factor) per visited cube from selected members."""
    s = len(selected)
    pts = np.stack([solutions[i].points for i in selected])  # (s, 2, n, 3)
    x = pts[:, :, tet_rows, :]                # (s, 2, q, 4, 3)
    x = np.transpose(x, (2, 0, 1, 3, 4)).reshape(tet_rows.shape[0], s, 24)
    mean = x.mean(axis=1)
    xmax = x.max(axis=1)
    xmin = x.min(axis=1)
    converged = xmax == xmin
    mean = np.where(converged, xmax, mean)
    xc = x - mean[:, None, :]
    cov = np.matmul(np.transpose(xc, (0, 2, 1)), xc) / s
    all_zero = converged.all(axis=1)
    cov += 1e-10 * np.eye(24)[None, :, :]
    chol = np.linalg.cholesky(cov)
    chol[all_zero] = 0.0
    return mean, chol


# ---------------------------------------------------------------------------
# Population and generation driver
# ---------------------------------------------------------------------------


@dataclass
class Population:
    solutions: list[Solution]
    generation: int = 0

    def __len__(self) -> int:
        return len(self.solutions)

    def objective_matrix(self, n_obj: int) -> np.ndarray:
        out = np.empty((len(self.solutions), n_obj))
        for i, s in enumerate(self.solutions):
            out[i] = s.objectives.as_array()[:n_obj]
        return out


def _worker_count() -> int:
    cap = os.environ.get("MORPHREG_THREADS")
    if cap:
        return max(1, int(cap))
    return os.cpu_count() or 1


def _kernel_args_static(solution: Solution, problem: RegistrationProblem):
    topo = solution.topology
    ga = guidance_arrays(problem)
    nx, ny, nz = problem.dims
    return topo, ga, nx, ny, nz


def gom_generation(
    population: Population,
    problem: RegistrationProblem,
    archive: ElitistArchive,
    config: StageConfig,
    rng: np.random.Generator,
) -> tuple[Population, ElitistArchive]:
    """One gene-pool optimal mixing pass over the whole population."""
    solutions = population.solutions
    n_ind = len(solutions)
    topo = solutions[0].topology
    ga = guidance_arrays(problem)
    n_obj = problem.n_objectives
    nx, ny, nz = problem.dims
    n_cubes = topo.n_cubes
    interp = 0 if getattr(problem, "interpolation", "trilinear") == "trilinear" else 1

    # one tet drawn per cube, shared across individuals this generation
    visit_tets = (
        np.arange(n_cubes, dtype=np.int64) * 6 + rng.integers(0, 6, n_cubes)
    ).astype(np.int32)
    tet_rows = topo.tets[visit_tets].astype(np.int64)     # (q, 4)

    objs = population.objective_matrix(n_obj)
    labels = _cluster_population(objs, config.clusters)
    k = int(labels.max()) + 1
    means = {}
    chols = {}
    for c in range(k):
        members = np.nonzero(labels == c)[0]
        if len(members) == 0:
            continue
        sel = _select_in_cluster(objs, members, config.truncation_fraction)
        means[c], chols[c] = _estimate_distributions(solutions, sel, tet_rows)

    front, champ_keys, champ_dists, grid_lo, grid_cell = archive.snapshot_arrays()

    seeds = rng.integers(1, 2**63 - 1, size=(n_ind, 2), dtype=np.uint64)
    start_pts = [s.points.copy() for s in solutions]
    acc_cubes = np.empty((n_ind, n_cubes), dtype=np.int64)
    acc_vals = np.empty((n_ind, n_cubes, 24))
    acc_objs = np.empty((n_ind, n_cubes, 3))
    acc_counts = np.zeros(n_ind, dtype=np.int64)

    def run_one(i: int) -> None:
        s = solutions[i]
        ctx: PartialEvalContext = s.cache
        acc_counts[i] = _gom_pass(
            seeds[i].copy(),
            topo.tets, topo.point_tets_indptr, topo.point_tets,
            topo.tet_aff_indptr, topo.tet_aff, topo.tet_chk_indptr, topo.tet_chk,
            topo.border_kind, s.fixed_coords, topo.edge_nbrs, topo.face_axis,
            topo.face_seg_indptr, topo.face_segs, topo.tet_orient, topo.seg_orient,
            problem.source.flat, problem.target.flat, nx, ny, nz,
            problem.spacing, EMPTY_THRESHOLD, interp,
            ga.s_vox, ga.s_corr, ga.t_indptr, ga.t_mm,
            ga.t_vox, ga.t_corr, ga.s_indptr, ga.s_mm,
            s.points, ctx.fwd, ctx.bwd, ctx.deft,
            ctx.gs_tet, ctx.gs_term, ctx.gt_tet, ctx.gt_term, ctx.sums,
            visit_tets, means[labels[i]], chols[labels[i]],
            front, champ_keys, champ_dists, grid_lo, grid_cell, n_obj,
            s.eps_vol, s.eps_area, ctx.n_vox, ctx.n_tets, ctx.n_gpts,
            acc_cubes[i], acc_vals[i], acc_objs[i],
        )

    workers = _worker_count()
    if workers > 1 and n_ind > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_one, range(n_ind)))
    else:
        for i in range(n_ind):
            run_one(i)

    # deterministic merge of locally accepted candidates
    for i in range(n_ind):
        s = solutions[i]
        pts = start_pts[i]
        for m in range(acc_counts[i]):
            t = visit_tets[acc_cubes[i, m]]
            _apply_move(pts, topo.tets, t, acc_vals[i, m])
            obj = acc_objs[i, m, :n_obj]
            archive.insert(obj, payload_factory=lambda snap=pts: snap.copy())
        ctx = s.cache
        ctx.refresh_sums()
        s.objectives = ctx.totals()

    population.generation += 1
    return population, archive


def initialize_population(
    problem: RegistrationProblem,
    config: StageConfig,
    rng: np.random.Generator,
    topology: Optional[GridTopology] = None,
) -> Population:
    """Identity-plus-jitter individuals, each feasible by construction."""
    topo = topology if topology is not None else build_topology(config.grid_resolution)
    dims = np.asarray(problem.dims, dtype=np.int64)
    proto = init_identity_solution(topo, dims, problem.spacing)
    lattice = lattice_points(topo, dims)
    steps = np.array(
        [(dims[a] - 1) / (topo.resolution[a] - 1) for a in range(3)]
    )
    sigma = 0.1 * steps
    solutions = []
    seeds = rng.integers(1, 2**63 - 1, size=(config.population_size, 2), dtype=np.uint64)
    for i in range(config.population_size):
        s = proto.copy()
        _init_individual(
            seeds[i].copy(), s.points, lattice, sigma,
            topo.tets, topo.point_tets_indptr, topo.point_tets,
            topo.nbr_indptr, topo.nbrs,
            topo.border_kind, s.fixed_coords, topo.edge_nbrs, topo.face_axis,
            topo.face_seg_indptr, topo.face_segs, topo.tet_orient, topo.seg_orient,
            s.eps_vol, s.eps_area,
        )
        solutions.append(s)
    return Population(solutions=solutions, generation=0)


def run_optimization(
    problem: RegistrationProblem,
    config: StageConfig,
    initial_population: Optional[Population] = None,
    rng: Optional[np.random.Generator] = None,
) -> tuple[Population, ElitistArchive]:
    """Run one resolution stage; deterministic for a given seed."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if initial_population is None:
        population = initialize_population(problem, config, rng)
    else:
        population = initial_population
    archive = ElitistArchive(problem.n_objectives, config.archive_cells)
    for s in population.solutions:
        eval_all(s, problem)
        archive.insert(
            s.objectives.as_array(), payload_factory=lambda s=s: s.points.copy()
        )
    for _ in range(config.generations):
        gom_generation(population, problem, archive, config, rng)
    return population, archive
