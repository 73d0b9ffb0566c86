import numpy as np
import pytest

from vptdn.color import RGB_TO_XYZ, luma709, rgb_to_xyz, srgb_encode, xyz_to_rgb
from vptdn.pfm import heatmap, read_pfm, read_pgm, write_pfm, write_pgm, write_png


def test_pfm_roundtrip_color(tmp_path):
    img = np.random.default_rng(0).random((7, 5, 3)).astype(np.float32)
    p = tmp_path / "a.pfm"
    write_pfm(p, img)
    back = read_pfm(p)
    assert back.shape == (7, 5, 3)
    assert np.array_equal(back, img)


def test_pfm_roundtrip_gray(tmp_path):
    img = (np.arange(12, dtype=np.float32) / 11).reshape(3, 4)
    p = tmp_path / "g.pfm"
    write_pfm(p, img)
    assert np.array_equal(read_pfm(p), img)


def test_pfm_header_is_little_endian_marker(tmp_path):
    p = tmp_path / "h.pfm"
    write_pfm(p, np.zeros((2, 2, 3), dtype=np.float32))
    head = p.read_bytes()[:20].split(b"\n")
    assert head[0] == b"PF"
    assert head[1] == b"2 2"
    assert float(head[2]) < 0


def test_pfm_rejects_bad_shapes(tmp_path):
    with pytest.raises(ValueError):
        write_pfm(tmp_path / "x.pfm", np.zeros((2, 2, 4)))


def test_pgm_roundtrip(tmp_path):
    mask = np.random.default_rng(1).random((9, 4)) > 0.5
    p = tmp_path / "m.pgm"
    write_pgm(p, mask)
    assert np.array_equal(read_pgm(p) > 0, mask)


def test_png_writes(tmp_path):
    p = tmp_path / "i.png"
    write_png(p, np.random.default_rng(2).random((6, 6, 3)))
    assert p.stat().st_size > 0


def test_heatmap_rises_monotonically():
    v = np.linspace(0, 1, 16).reshape(4, 4)
    hm = heatmap(v, peak=1.0)
    assert hm.shape == (4, 4, 3)
    assert np.all(hm >= 0) and np.all(hm <= 1)
    luma = hm.sum(axis=-1).ravel()
    assert np.all(np.diff(luma[np.argsort(v.ravel())]) >= -1e-9)


def test_rgb_xyz_roundtrip():
    rgb = np.random.default_rng(3).random((10, 3))
    assert np.allclose(xyz_to_rgb(rgb_to_xyz(rgb)), rgb, atol=1e-12)


def test_white_maps_to_d65():
    xyz = rgb_to_xyz((1.0, 1.0, 1.0))
    assert xyz[1] == pytest.approx(1.0, abs=1e-9)  # luminance of white
    assert np.allclose(xyz, (0.9505, 1.0, 1.089), atol=2e-3)


def test_matrix_nonnegative():
    assert np.all(RGB_TO_XYZ >= 0)


def test_srgb_encode_monotone_and_bounded():
    x = np.linspace(0, 1, 64)
    y = srgb_encode(x)
    assert np.all(np.diff(y) > 0)
    assert y[0] == 0 and y[-1] == pytest.approx(1.0)


def test_luma_weights():
    assert luma709(np.array([1.0, 0, 0])) == pytest.approx(0.2126)
    assert luma709(np.array([0, 1.0, 0])) == pytest.approx(0.7152)
    assert luma709(np.array([0, 0, 1.0])) == pytest.approx(0.0722)
