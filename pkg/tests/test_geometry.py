"""Rasterization, barycentric mapping and collision predicate tests.

The rasterizer's reference oracle is per-voxel containment under the same
ownership convention but without any scanline machinery; the partition
invariant over whole grids is the convention-independent check.
"""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from morphreg import (
    barycentric,
    build_topology,
    init_identity_solution,
    map_point,
    point_outside_border_polygon,
    point_outside_star,
    rasterize_tet,
    voxel_in_tet,
)
from morphreg.mesh import CANONICAL_TETS

CUBE_CORNERS = np.array(
    [[b & 1, (b >> 1) & 1, (b >> 2) & 1] for b in range(8)], dtype=float
)


def brute_force_voxels(tet, dims):
    out = []
    for z in range(dims[2]):
        for y in range(dims[1]):
            for x in range(dims[0]):
                if voxel_in_tet(tet, (x, y, z), dims):
                    out.append((x, y, z))
    return set(out)


def random_tet(rng, lo, hi, min_vol=0.5):
    while True:
        tet = rng.uniform(lo, hi, (4, 3))
        vol = np.linalg.det(tet[1:] - tet[0]) / 6.0
        if abs(vol) > min_vol:
            return tet


class TestRasterizeTet:
    def test_degenerate_tet_empty(self):
        tet = np.array([[0, 0, 0], [5, 0, 0], [0, 5, 0], [5, 5, 0]], float)
        assert len(rasterize_tet(tet, (10, 10, 10))) == 0

    def test_cube_partition_exact(self):
        # the 6 canonical tets of [0,9]^3 own each of the 1000 centers once
        counts = np.zeros((10, 10, 10), int)
        for tet in CANONICAL_TETS:
            for x, y, z in rasterize_tet(CUBE_CORNERS[tet] * 9.0, (10, 10, 10)):
                counts[x, y, z] += 1
        assert counts.min() == 1 and counts.max() == 1

    def test_corner_tet_matches_brute_force(self):
        tet = np.array([[0, 0, 0], [9, 0, 0], [0, 9, 0], [0, 0, 9]], float)
        got = {tuple(v) for v in rasterize_tet(tet, (10, 10, 10))}
        assert got == brute_force_voxels(tet, (10, 10, 10))

    def test_random_tets_match_brute_force(self):
        rng = np.random.default_rng(42)
        for _ in range(25):
            tet = random_tet(rng, -2.0, 21.0)
            got = {tuple(v) for v in rasterize_tet(tet, (20, 20, 20))}
            assert got == brute_force_voxels(tet, (20, 20, 20))

    def test_scanline_order(self):
        tet = np.array([[0, 0, 0], [9, 0, 0], [0, 9, 0], [0, 0, 9]], float)
        vox = rasterize_tet(tet, (10, 10, 10))
        keys = [(z, y, x) for x, y, z in vox]
        assert keys == sorted(keys)

    def test_clipping(self):
        tet = np.array([[-5, -5, -5], [15, -5, -5], [-5, 15, -5], [-5, -5, 15]], float)
        vox = rasterize_tet(tet, (4, 4, 4))
        assert len(vox) > 0
        assert vox.min() >= 0 and vox.max() <= 3

    @pytest.mark.parametrize("resolution,dims", [
        ((3, 3, 3), (11, 11, 11)),   # integer lattice step: exact face hits
        ((4, 4, 4), (30, 30, 30)),
        ((3, 5, 4), (20, 25, 23)),
    ])
    def test_grid_partition(self, resolution, dims):
        topo = build_topology(resolution)
        sol = init_identity_solution(topo, np.asarray(dims))
        counts = np.zeros(dims, np.int32)
        for t in range(topo.n_tets):
            for x, y, z in rasterize_tet(sol.points[0][topo.tets[t]], dims):
                counts[x, y, z] += 1
        assert counts.min() == 1 and counts.max() == 1


class TestBarycentric:
    TET = np.array([[0, 0, 0], [4, 0, 0], [0, 5, 0], [0, 0, 6]], float)

    def test_vertex(self):
        np.testing.assert_allclose(barycentric(self.TET, self.TET[0]), [1, 0, 0, 0], atol=1e-15)

    def test_centroid(self):
        w = barycentric(self.TET, self.TET.mean(axis=0))
        np.testing.assert_allclose(w, [0.25] * 4, atol=1e-14)

    def test_degenerate_raises(self):
        flat = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], float)
        with pytest.raises(ValueError):
            barycentric(flat, (0.5, 0.5, 0.0))

    @given(st.lists(st.floats(0.01, 0.97), min_size=3, max_size=3))
    @settings(max_examples=50, deadline=None)
    def test_reconstruction(self, fracs):
        w0 = np.array(fracs + [max(0.01, 1.0 - sum(fracs))])
        w0 /= w0.sum()
        p = w0 @ self.TET
        w = barycentric(self.TET, p)
        assert abs(w.sum() - 1.0) < 1e-12
        assert np.abs(w @ self.TET - p).max() < 1e-9


class TestMapPoint:
    SRC = np.array([[0, 0, 0], [3, 0, 0], [0, 3, 0], [0, 0, 3]], float)

    def test_identity(self):
        np.testing.assert_allclose(map_point(self.SRC, self.SRC, (1, 1, 0.5)), [1, 1, 0.5])

    def test_uniform_scaling(self):
        np.testing.assert_allclose(
            map_point(self.SRC, self.SRC * 2.0, (1.0, 0.5, 0.25)), [2.0, 1.0, 0.5]
        )

    def test_round_trip(self):
        rng = np.random.default_rng(3)
        dst = self.SRC + rng.normal(0, 0.4, (4, 3))
        for _ in range(50):
            p = rng.uniform(0, 1, 3)
            q = map_point(self.SRC, dst, p)
            back = map_point(dst, self.SRC, q)
            assert np.abs(back - p).max() < 1e-9

    def test_affine_combination(self):
        rng = np.random.default_rng(4)
        dst = self.SRC + rng.normal(0, 0.4, (4, 3))
        a, b = rng.uniform(0, 1, (2, 3))
        mid = (a + b) / 2
        img_mid = map_point(self.SRC, dst, mid)
        expected = (map_point(self.SRC, dst, a) + map_point(self.SRC, dst, b)) / 2
        np.testing.assert_allclose(img_mid, expected, atol=1e-12)


def octahedron_faces(scale=2.0):
    verts = np.array(
        [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float
    ) * scale
    faces = []
    for sx, sy, sz in itertools.product((0, 1), (2, 3), (4, 5)):
        faces.append(verts[[sx, sy, sz]])
    return np.array(faces)


class TestPointOutsideStar:
    def test_interior_point(self):
        assert not point_outside_star((0.0, 0.0, 0.0), octahedron_faces())

    def test_far_outside(self):
        assert point_outside_star((50.0, 2.0, -7.0), octahedron_faces())

    def test_needs_four_faces(self):
        with pytest.raises(ValueError):
            point_outside_star((0, 0, 0), octahedron_faces()[:2])

    def test_matches_convex_oracle(self):
        # octahedron |x|+|y|+|z| < 2: exact half-space-intersection oracle
        faces = octahedron_faces()
        rng = np.random.default_rng(11)
        pts = rng.uniform(-2.5, 2.5, (10000, 3))
        for p in pts:
            inside = abs(p).sum() < 2.0
            assert point_outside_star(p, faces) == (not inside)


class TestPointOutsideBorderPolygon:
    DIAMOND = np.array(
        [[[2, 0], [0, 2]], [[0, 2], [-2, 0]], [[-2, 0], [0, -2]], [[0, -2], [2, 0]]],
        float,
    )

    def test_centroid_inside(self):
        assert not point_outside_border_polygon((0.0, 0.0), self.DIAMOND)

    def test_outside_bbox(self):
        assert point_outside_border_polygon((9.0, 9.0), self.DIAMOND)

    def test_needs_three_segments(self):
        with pytest.raises(ValueError):
            point_outside_border_polygon((0, 0), self.DIAMOND[:2])

    def test_matches_half_plane_oracle(self):
        rng = np.random.default_rng(12)
        for p in rng.uniform(-2.5, 2.5, (10000, 2)):
            inside = abs(p).sum() < 2.0
            assert point_outside_border_polygon(p, self.DIAMOND) == (not inside)
