"""Volume I/O, sampling, synthetic phantom and metric tests."""

import numpy as np
import pytest

from morphreg import (
    EMPTY_THRESHOLD,
    GuidanceSet,
    ImageVolume,
    SyntheticConfig,
    dice,
    generate_synthetic_pair,
    load_guidance,
    load_volume,
    save_guidance,
    save_volume,
    trilinear_sample,
)


class TestMetaImageIO:
    def test_uchar_full_scale(self, tmp_path):
        p = tmp_path / "white.mha"
        vol = ImageVolume(np.ones((5, 5, 5)), (1, 1, 1))
        save_volume(vol, p, element_type="MET_UCHAR")
        got = load_volume(p)
        assert got.intensities.min() == 1.0 and got.intensities.max() == 1.0

    def test_all_zero(self, tmp_path):
        p = tmp_path / "black.mha"
        save_volume(ImageVolume(np.zeros((4, 5, 6)), (1, 2, 3)), p, "MET_UCHAR")
        got = load_volume(p)
        assert got.intensities.max() == 0.0
        assert got.dims == (4, 5, 6)
        np.testing.assert_allclose(got.spacing, [1, 2, 3])

    def test_non_3d_rejected(self, tmp_path):
        p = tmp_path / "flat.mha"
        p.write_bytes(
            b"ObjectType = Image\nNDims = 2\nDimSize = 4 4\n"
            b"ElementType = MET_UCHAR\nElementDataFile = LOCAL\n" + bytes(16)
        )
        with pytest.raises(ValueError, match="non-3D"):
            load_volume(p)

    def test_unsupported_element_type(self, tmp_path):
        p = tmp_path / "short.mha"
        p.write_bytes(
            b"ObjectType = Image\nNDims = 3\nDimSize = 2 2 2\n"
            b"ElementType = MET_SHORT\nElementDataFile = LOCAL\n" + bytes(16)
        )
        with pytest.raises(ValueError, match="unsupported element type"):
            load_volume(p)

    def test_payload_size_mismatch(self, tmp_path):
        p = tmp_path / "trunc.mha"
        p.write_bytes(
            b"ObjectType = Image\nNDims = 3\nDimSize = 4 4 4\n"
            b"ElementType = MET_UCHAR\nElementDataFile = LOCAL\n" + bytes(10)
        )
        with pytest.raises(ValueError, match="payload"):
            load_volume(p)

    def test_float_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        data = rng.uniform(0, 1, (7, 6, 5)).astype(np.float32).astype(np.float64)
        vol = ImageVolume(data, (2.0, 3.0, 1.5))
        p = tmp_path / "f.mha"
        save_volume(vol, p, "MET_FLOAT")
        got = load_volume(p)
        np.testing.assert_array_equal(got.intensities, vol.intensities)

    def test_uchar_round_trip_quantized(self, tmp_path):
        rng = np.random.default_rng(1)
        vol = ImageVolume(rng.uniform(0, 1, (6, 6, 6)), (1, 1, 1))
        p = tmp_path / "u.mha"
        save_volume(vol, p, "MET_UCHAR")
        got = load_volume(p)
        assert np.abs(got.intensities - vol.intensities).max() <= 0.5 / 255.0 + 1e-12

    def test_external_raw_file(self, tmp_path):
        data = np.arange(8, dtype="<f4") / 8.0
        (tmp_path / "v.raw").write_bytes(data.tobytes())
        (tmp_path / "v.mhd").write_text(
            "ObjectType = Image\nNDims = 3\nDimSize = 2 2 2\n"
            "ElementSpacing = 1 1 1\nElementType = MET_FLOAT\n"
            "ElementDataFile = v.raw\n"
        )
        got = load_volume(tmp_path / "v.mhd")
        np.testing.assert_allclose(got.flat, data.astype(np.float64))

    def test_write_failure(self, tmp_path):
        vol = ImageVolume(np.zeros((3, 3, 3)), (1, 1, 1))
        with pytest.raises(OSError):
            save_volume(vol, tmp_path / "missing-dir" / "x.mha")

    def test_loaded_intensities_normalized(self, tmp_path):
        rng = np.random.default_rng(2)
        raw = rng.integers(0, 256, (4, 4, 4), dtype=np.uint8)
        p = tmp_path / "n.mha"
        p.write_bytes(
            b"ObjectType = Image\nNDims = 3\nDimSize = 4 4 4\n"
            b"ElementType = MET_UCHAR\nElementDataFile = LOCAL\n"
            + raw.tobytes(order="F")
        )
        got = load_volume(p)
        assert got.intensities.min() >= 0.0 and got.intensities.max() <= 1.0


class TestTrilinear:
    def test_voxel_center(self):
        rng = np.random.default_rng(3)
        vol = ImageVolume(rng.uniform(0, 1, (5, 5, 5)), (1, 1, 1))
        assert trilinear_sample(vol, (2, 3, 4)) == vol.intensities[2, 3, 4]

    def test_midpoint(self):
        data = np.zeros((3, 3, 3))
        data[1, 1, 1] = 0.0
        data[2, 1, 1] = 1.0
        vol = ImageVolume(data, (1, 1, 1))
        assert trilinear_sample(vol, (1.5, 1, 1)) == pytest.approx(0.5)

    def test_constant_volume(self):
        vol = ImageVolume(np.full((4, 4, 4), 0.3), (1, 1, 1))
        rng = np.random.default_rng(4)
        for p in rng.uniform(-1, 4.5, (20, 3)):
            assert trilinear_sample(vol, p) == pytest.approx(0.3)

    def test_out_of_domain_clamps(self):
        data = np.zeros((3, 3, 3))
        data[0, 0, 0] = 0.9
        vol = ImageVolume(data, (1, 1, 1))
        assert trilinear_sample(vol, (-5, -5, -5)) == pytest.approx(0.9)


class TestSynthetic:
    def test_zero_deformation_identical(self):
        cfg = SyntheticConfig(
            dims=(36, 36, 36), cube_side=26, sphere_radius_source=6,
            sphere_radius_target=6, parabola_depth=0, n_guidance=16,
        )
        prob = generate_synthetic_pair(cfg)
        np.testing.assert_array_equal(prob.source.intensities, prob.target.intensities)

    def test_default_sphere_shrink_ratio(self):
        prob = generate_synthetic_pair(SyntheticConfig())
        n_src = int(prob.source_mask.sum())
        n_tgt = int(prob.target_mask.sum())
        expected = (5.0 / 10.0) ** 3 * n_src
        assert abs(n_tgt - expected) <= 0.10 * expected

    def test_guidance_target_points_on_sphere(self):
        cfg = SyntheticConfig()
        prob = generate_synthetic_pair(cfg)
        center = (np.array(cfg.dims) - 1) / 2.0
        src, tgt = prob.guidance.correspondences[0]
        r_t = np.linalg.norm(tgt / prob.spacing - center, axis=1)
        assert np.abs(r_t - cfg.sphere_radius_target).max() <= 0.5
        r_s = np.linalg.norm(src / prob.spacing - center, axis=1)
        assert np.abs(r_s - cfg.sphere_radius_source).max() <= 0.5

    def test_infeasible_configs_rejected(self):
        with pytest.raises(ValueError):
            generate_synthetic_pair(SyntheticConfig(dims=(20, 20, 20)))
        with pytest.raises(ValueError):
            generate_synthetic_pair(SyntheticConfig(sphere_radius_source=25))
        with pytest.raises(ValueError):
            generate_synthetic_pair(SyntheticConfig(sphere_radius_target=12))

    def test_intensities(self):
        prob = generate_synthetic_pair(SyntheticConfig())
        vals = set(np.unique(prob.source.intensities))
        assert vals == {0.0, 0.4, 0.8}
        assert 0.0 < EMPTY_THRESHOLD < 0.4


class TestImageVolumeInvariants:
    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            ImageVolume(np.full((3, 3, 3), 1.5), (1, 1, 1))
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            ImageVolume(np.full((3, 3, 3), -0.1), (1, 1, 1))

    def test_small_dims_rejected(self):
        with pytest.raises(ValueError, match="dims"):
            ImageVolume(np.zeros((1, 4, 4)), (1, 1, 1))

    def test_bad_spacing_rejected(self):
        with pytest.raises(ValueError, match="spacing"):
            ImageVolume(np.zeros((4, 4, 4)), (1, 0, 1))


class TestDice:
    def test_identical(self):
        m = np.zeros((5, 5, 5), bool)
        m[1:3] = True
        assert dice(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((5, 5, 5), bool)
        b = np.zeros((5, 5, 5), bool)
        a[0], b[4] = True, True
        assert dice(a, b) == 0.0

    def test_half_overlap_cube(self):
        a = np.zeros((6, 6, 6), bool)
        b = np.zeros((6, 6, 6), bool)
        a[0:2, 0:2, 0:2] = True          # 8 voxels
        b[1:3, 0:2, 0:2] = True          # shifted: 4 shared
        assert dice(a, b) == pytest.approx(2 * 4 / (8 + 8))

    def test_both_empty(self):
        m = np.zeros((3, 3, 3), bool)
        assert dice(m, m) == 1.0

    def test_symmetry(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            a = rng.random((6, 6, 6)) > 0.5
            b = rng.random((6, 6, 6)) > 0.7
            assert dice(a, b) == dice(b, a)

    def test_dims_mismatch(self):
        with pytest.raises(ValueError):
            dice(np.zeros((3, 3, 3), bool), np.zeros((4, 3, 3), bool))


class TestGuidanceIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        g = GuidanceSet(
            [
                (rng.uniform(0, 30, (5, 3)), rng.uniform(0, 30, (7, 3))),
                (rng.uniform(0, 30, (2, 3)), rng.uniform(0, 30, (2, 3))),
            ],
            label="test",
        )
        p = tmp_path / "g.txt"
        save_guidance(g, p)
        got = load_guidance(p)
        assert len(got.correspondences) == 2
        for (s0, t0), (s1, t1) in zip(g.correspondences, got.correspondences):
            np.testing.assert_array_equal(s0, s1)
            np.testing.assert_array_equal(t0, t1)

    def test_malformed_line(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("0 S 1 2 3\n0 X 1 2\n")
        with pytest.raises(ValueError, match="malformed"):
            load_guidance(p)

    def test_empty_side_rejected(self):
        with pytest.raises(ValueError):
            GuidanceSet([(np.zeros((0, 3)), np.ones((2, 3)))])
