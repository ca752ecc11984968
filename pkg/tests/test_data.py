import numpy as np
import pytest
from PIL import Image as PILImage

from transfuse.data import load_image, preprocess, quantize, save_image, scan_dataset
from transfuse.errors import ConfigError, DecodeError, EmptyDataset, NotFound


def _write_pgm(path, arr):
    h, w = arr.shape
    path.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + arr.astype(np.uint8).tobytes())


def test_pgm_all_white_and_black(tmp_path):
    _write_pgm(tmp_path / "w.pgm", np.full((4, 5), 255))
    _write_pgm(tmp_path / "k.pgm", np.zeros((4, 5)))
    np.testing.assert_array_equal(load_image(tmp_path / "w.pgm"), 1.0)
    np.testing.assert_array_equal(load_image(tmp_path / "k.pgm"), 0.0)


def test_rgb_png_uses_bt601_luma(tmp_path):
    rgb = np.zeros((2, 2, 3), np.uint8)
    rgb[..., 0] = 255
    PILImage.fromarray(rgb, "RGB").save(tmp_path / "red.png")
    np.testing.assert_allclose(load_image(tmp_path / "red.png"), 0.299, atol=1e-15)


def test_missing_and_corrupt(tmp_path):
    with pytest.raises(NotFound):
        load_image(tmp_path / "nope.png")
    (tmp_path / "bad.png").write_bytes(b"not an image at all")
    with pytest.raises(DecodeError):
        load_image(tmp_path / "bad.png")
    PILImage.fromarray(np.zeros((3, 3), np.uint8)).save(tmp_path / "x.bmp")
    with pytest.raises(DecodeError):
        load_image(tmp_path / "x.bmp")


@pytest.mark.parametrize("suffix", [".pgm", ".png"])
def test_save_load_round_trip_is_exact_after_quantization(tmp_path, rng, suffix):
    img = rng.random((9, 7))
    save_image(img, tmp_path / f"r{suffix}")
    back = load_image(tmp_path / f"r{suffix}")
    np.testing.assert_array_equal(back, quantize(img))
    save_image(back, tmp_path / f"r2{suffix}")
    np.testing.assert_array_equal(load_image(tmp_path / f"r2{suffix}"), back)


def test_preprocess_constant_and_identity(rng):
    np.testing.assert_array_equal(preprocess(np.full((13, 30), 0.5), 16), 0.5)
    img = rng.random((32, 32))
    np.testing.assert_array_equal(preprocess(img, 32), img)
    once = preprocess(rng.random((20, 11)), 16)
    np.testing.assert_array_equal(preprocess(once, 16), once)


def test_preprocess_checkerboard_bilinear():
    board = np.array([[0.0, 1.0], [1.0, 0.0]])
    out = preprocess(board, 8)
    assert out.shape == (8, 8)
    assert out.min() >= 0 and out.max() <= 1
    assert (out[0, 0], out[0, -1], out[-1, 0], out[-1, -1]) == (0.0, 1.0, 1.0, 0.0)
    # hand-evaluated: row 0 at x = 1/7 is 1/7; pixel (1,1) at (1/7, 1/7)
    # mixes 0*(6/7)^2 + 1*2*(1/7)(6/7) + 0*(1/7)^2
    np.testing.assert_allclose(out[0, 1], 1 / 7)
    np.testing.assert_allclose(out[1, 1], 2 * (1 / 7) * (6 / 7))


def test_preprocess_rejects_tiny_target():
    with pytest.raises(ConfigError):
        preprocess(np.zeros((10, 10)), 7)


def test_scan_dataset_sorted_and_skips_corrupt(tmp_path):
    for name in ("b.png", "a.png"):
        save_image(np.zeros((8, 8)), tmp_path / name)
    (tmp_path / "c.png").write_bytes(b"garbage")
    m = scan_dataset(tmp_path, 8)
    assert [p.split("/")[-1] for p in m.paths] == ["a.png", "b.png"]
    assert len(m.warnings) == 1 and m.warnings[0]["path"].endswith("c.png")
    assert scan_dataset(tmp_path, 8).entries == m.entries


def test_scan_dataset_single_and_empty(tmp_path):
    save_image(np.zeros((8, 8)), tmp_path / "only.pgm")
    assert len(scan_dataset(tmp_path, 8)) == 1
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(EmptyDataset):
        scan_dataset(empty, 8)
