import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vptdn.volume import (TransferFunction, VolumeError, VolumeGrid, VolumeMeta,
                          evaluate_medium, load_raw_volume, make_procedural_volume,
                          max_extinction, sample_scalar)


def write_raw(tmp_path, payload: bytes, name="vol.raw"):
    p = tmp_path / name
    p.write_bytes(payload)
    return p


class TestLoadRaw:
    def test_8bit_max_normalizes_to_one(self, tmp_path):
        p = write_raw(tmp_path, bytes([255] * 8))
        g = load_raw_volume(p, VolumeMeta(dims=(2, 2, 2)))
        assert np.all(g.data == 1.0)

    def test_8bit_zeros(self, tmp_path):
        p = write_raw(tmp_path, bytes(8))
        g = load_raw_volume(p, VolumeMeta(dims=(2, 2, 2)))
        assert np.all(g.data == 0.0)

    def test_16bit_values_and_endianness(self, tmp_path):
        vals = np.arange(8, dtype="<u2") * 8192
        g = load_raw_volume(write_raw(tmp_path, vals.tobytes()),
                            VolumeMeta(dims=(2, 2, 2), bps=16, endianness="little"))
        assert np.allclose(g.data, vals.astype(np.float64) / 65535.0, atol=1e-7)
        gb = load_raw_volume(write_raw(tmp_path, vals.byteswap().tobytes(), "b.raw"),
                             VolumeMeta(dims=(2, 2, 2), bps=16, endianness="big"))
        assert np.array_equal(g.data, gb.data)

    def test_size_mismatch_names_byte_counts(self, tmp_path):
        p = write_raw(tmp_path, bytes(15))
        with pytest.raises(VolumeError, match="expected 16 bytes.*got 15"):
            load_raw_volume(p, VolumeMeta(dims=(2, 2, 2), bps=16))

    def test_unsupported_bps(self, tmp_path):
        p = write_raw(tmp_path, bytes(32))
        with pytest.raises(VolumeError, match="bits per sample"):
            load_raw_volume(p, VolumeMeta(dims=(2, 2, 2), bps=32))

    def test_x_fastest_order(self, tmp_path):
        payload = bytes(range(8))
        g = load_raw_volume(write_raw(tmp_path, payload), VolumeMeta(dims=(2, 2, 2)))
        assert g.voxel(1, 0, 0) == pytest.approx(1 / 255)
        assert g.voxel(0, 1, 0) == pytest.approx(2 / 255)
        assert g.voxel(0, 0, 1) == pytest.approx(4 / 255)

    def test_meta_sidecar_roundtrip(self, tmp_path):
        doc = tmp_path / "vol.json"
        doc.write_text('{"dims":[2,3,4],"bps":16,"endianness":"big","spacing":[0.5,1,2]}')
        meta = VolumeMeta.from_json(doc)
        assert meta.dims == (2, 3, 4) and meta.bps == 16
        assert meta.endianness == "big" and meta.spacing == (0.5, 1.0, 2.0)


class TestProcedural:
    def test_constant(self):
        g = make_procedural_volume("constant", (8, 8, 8), {"value": 1.0})
        assert np.all(g.data == 1.0)

    def test_sphere_inside_outside(self):
        g = make_procedural_volume("sphere", (16, 16, 16), {"radius": 0.4})
        assert g.voxel(8, 8, 8) == 1.0  # center
        assert g.voxel(0, 0, 0) == 0.0  # corner
        assert 0 < g.data.mean() < 1

    def test_shell_is_hollow(self):
        g = make_procedural_volume("shell", (32, 32, 32),
                                   {"radius": 0.4, "thickness": 0.08})
        assert g.voxel(16, 16, 16) == 0.0
        assert g.data.max() == 1.0

    def test_fbm_deterministic(self):
        a = make_procedural_volume("fbm-noise", (16, 16, 16), {"seed": 7})
        b = make_procedural_volume("fbm-noise", (16, 16, 16), {"seed": 7})
        assert np.array_equal(a.data, b.data)
        c = make_procedural_volume("fbm-noise", (16, 16, 16), {"seed": 8})
        assert not np.array_equal(a.data, c.data)

    def test_bad_kind_and_params(self):
        with pytest.raises(VolumeError):
            make_procedural_volume("cube", (8, 8, 8))
        with pytest.raises(VolumeError):
            make_procedural_volume("constant", (8, 8, 8), {"value": 2.0})
        with pytest.raises(VolumeError):
            make_procedural_volume("constant", (0, 8, 8))
        with pytest.raises(VolumeError):
            make_procedural_volume("sphere", (8, 8, 8), {"bogus": 1})


class TestGridInvariants:
    def test_data_length_checked(self):
        with pytest.raises(VolumeError, match="length"):
            VolumeGrid(dims=(2, 2, 2), spacing=(1, 1, 1), data=np.zeros(7))

    def test_range_checked(self):
        with pytest.raises(VolumeError, match="\\[0, 1\\]"):
            VolumeGrid(dims=(2, 2, 2), spacing=(1, 1, 1), data=np.full(8, 1.5))

    def test_positive_extent(self):
        with pytest.raises(VolumeError):
            VolumeGrid(dims=(2, 2, 2), spacing=(1, 0, 1), data=np.zeros(8))
        g = VolumeGrid(dims=(2, 2, 2), spacing=(0.5, 1, 2), data=np.zeros(8))
        assert g.world_max == (1.0, 2.0, 4.0)


class TestSampleScalar:
    def test_voxel_center_identity(self):
        rng = np.random.default_rng(0)
        g = VolumeGrid(dims=(4, 4, 4), spacing=(1, 1, 1), data=rng.random(64))
        for x, y, z in [(0, 0, 0), (1, 2, 3), (3, 3, 3), (2, 0, 1)]:
            p = ((x + 0.5), (y + 0.5), (z + 0.5))
            assert sample_scalar(g, p) == pytest.approx(g.voxel(x, y, z), abs=1e-7)

    def test_outside_bounds_is_zero(self, big_grid):
        assert sample_scalar(big_grid, (-0.1, 4, 4)) == 0.0
        assert sample_scalar(big_grid, (4, 8.1, 4)) == 0.0

    def test_midpoint_linearity(self):
        data = np.zeros(8)
        data[1] = 1.0  # voxel (1,0,0)
        g = VolumeGrid(dims=(2, 2, 2), spacing=(1, 1, 1), data=data)
        assert sample_scalar(g, (1.0, 0.5, 0.5)) == pytest.approx(0.5)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1.0, 6.9), st.floats(1.0, 6.9), st.floats(1.0, 6.9))
    def test_continuity_in_the_interior(self, x, y, z):
        g = make_procedural_volume("fbm-noise", (8, 8, 8),
                                   {"seed": 3, "spacing": (1, 1, 1)})
        base = sample_scalar(g, (x, y, z))
        for eps in (1e-3, 1e-5, 1e-7):
            stepped = sample_scalar(g, (x + eps, y + eps, z + eps))
            assert abs(stepped - base) < 10 * eps + 1e-12


class TestTransferFunction:
    def test_exact_at_control_points(self):
        tf = TransferFunction.from_points(
            [(0.0, (0.1, 0.2, 0.3), 0.0, (0, 0, 0)),
             (0.4, (0.5, 0.5, 0.5), 0.8, (1, 2, 3)),
             (1.0, (0.9, 0.8, 0.7), 0.2, (0, 0, 0))], 2.0)
        m = evaluate_medium(tf, 0.4)
        assert m.mu_t == pytest.approx(1.6)
        assert np.allclose(m.albedo, (0.5, 0.5, 0.5))
        assert np.allclose(m.emission, (1, 2, 3))

    def test_linear_between_points(self, linear_tf):
        tf = TransferFunction.from_points(
            [(0.0, (1, 1, 1), 0.0, (0, 0, 0)), (1.0, (1, 1, 1), 1.0, (0, 0, 0))], 10.0)
        assert evaluate_medium(tf, 0.5).mu_t == pytest.approx(5.0)

    def test_affine_between_each_pair(self):
        tf = TransferFunction.from_points(
            [(0.0, (0, 0, 0), 0.1, (0, 0, 0)),
             (0.5, (1, 0.4, 0), 0.9, (0, 0, 0)),
             (1.0, (0.2, 0.2, 0.2), 0.3, (0, 0, 0))], 1.0)
        for a, b in [(0.0, 0.5), (0.5, 1.0)]:
            va = evaluate_medium(tf, a).mu_t
            vb = evaluate_medium(tf, b).mu_t
            mid = evaluate_medium(tf, (a + b) / 2).mu_t
            assert mid == pytest.approx((va + vb) / 2, abs=1e-12)

    def test_white_albedo_means_pure_scattering(self, linear_tf):
        m = evaluate_medium(linear_tf, 0.7)
        mu_s = m.albedo * m.mu_t
        assert np.allclose(m.mu_t - mu_s, 0.0)  # mu_a == 0

    def test_validation(self):
        with pytest.raises(VolumeError):
            TransferFunction.from_points([(0.1, (1, 1, 1), 0, (0, 0, 0)),
                                          (1.0, (1, 1, 1), 1, (0, 0, 0))])
        with pytest.raises(VolumeError):
            TransferFunction.from_points([(0.0, (1, 1, 1), 0, (0, 0, 0)),
                                          (0.5, (1, 1, 1), 1, (0, 0, 0))])
        with pytest.raises(VolumeError):
            TransferFunction.from_points([(0.0, (1, 1, 1), 0, (0, 0, 0)),
                                          (0.0, (1, 1, 1), 1, (0, 0, 0)),
                                          (1.0, (1, 1, 1), 1, (0, 0, 0))])
        with pytest.raises(VolumeError):
            TransferFunction.from_points([(0.0, (1, 1, 1), -0.1, (0, 0, 0)),
                                          (1.0, (1, 1, 1), 1, (0, 0, 0))])

    def test_json_roundtrip(self, tmp_path):
        tf = TransferFunction.from_points(
            [(0.0, (0.1, 0.2, 0.3), 0.0, (0, 0, 0)),
             (1.0, (0.9, 0.8, 0.7), 0.75, (0.5, 0, 0))], 4.0)
        p = tmp_path / "tf.json"
        import json

        p.write_text(json.dumps(tf.to_json()))
        tf2 = TransferFunction.from_json(p)
        assert np.array_equal(tf.positions, tf2.positions)
        assert np.array_equal(tf.opacity, tf2.opacity)
        assert tf2.density_scale == 4.0


class TestMajorant:
    def test_constant_volume_full_opacity(self, big_grid):
        tf = TransferFunction.from_points(
            [(0.0, (1, 1, 1), 0.0, (0, 0, 0)), (1.0, (1, 1, 1), 1.0, (0, 0, 0))], 10.0)
        assert max_extinction(big_grid, tf) == pytest.approx(10.0)

    def test_all_zero_volume(self):
        g = make_procedural_volume("constant", (4, 4, 4), {"value": 0.0})
        tf = TransferFunction.from_points(
            [(0.0, (1, 1, 1), 0.0, (0, 0, 0)), (1.0, (1, 1, 1), 1.0, (0, 0, 0))], 10.0)
        assert max_extinction(g, tf) == 0.0

    def test_peak_inside_hull_counts(self):
        # peaked opacity at 0.5 with data max 0.6: the interior control point
        # dominates the endpoint value
        g = make_procedural_volume("constant", (4, 4, 4), {"value": 0.6})
        tf = TransferFunction.from_points(
            [(0.0, (1, 1, 1), 0.0, (0, 0, 0)),
             (0.5, (1, 1, 1), 1.0, (0, 0, 0)),
             (1.0, (1, 1, 1), 0.0, (0, 0, 0))], 3.0)
        assert max_extinction(g, tf) == pytest.approx(3.0)

    def test_bound_holds_at_random_points(self):
        # brute-force oracle: sample many random points, compare to the bound
        g = make_procedural_volume("fbm-noise", (16, 16, 16),
                                   {"seed": 5, "spacing": (1, 1, 1)})
        tf = TransferFunction.from_points(
            [(0.0, (1, 1, 1), 0.05, (0, 0, 0)),
             (0.3, (1, 1, 1), 0.5, (0, 0, 0)),
             (1.0, (1, 1, 1), 0.95, (0, 0, 0))], 7.0)
        bound = max_extinction(g, tf)
        rng = np.random.default_rng(1)
        pts = rng.random((20000, 3)) * 16.0
        worst = max(evaluate_medium(tf, sample_scalar(g, p)).mu_t for p in pts)
        assert worst <= bound + 1e-9

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_majorant_property_random_grids(self, seed):
        rng = np.random.default_rng(seed)
        g = VolumeGrid(dims=(5, 5, 5), spacing=(1, 1, 1), data=rng.random(125))
        opa = np.sort(rng.random(3))
        tf = TransferFunction.from_points(
            [(0.0, (1, 1, 1), opa[0], (0, 0, 0)),
             (0.6, (1, 1, 1), opa[1], (0, 0, 0)),
             (1.0, (1, 1, 1), opa[2], (0, 0, 0))], 1.0 + 5 * rng.random())
        bound = max_extinction(g, tf)
        pts = rng.random((300, 3)) * 5.0
        for p in pts:
            assert evaluate_medium(tf, sample_scalar(g, p)).mu_t <= bound + 1e-9
