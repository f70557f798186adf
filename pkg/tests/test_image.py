import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from pefrf.image import (ImageError, Raster, fuse_gradients, load_image, normalize,
                         read_gray, sobel_gradient, to_grayscale)

gray_images = arrays(np.float64, st.tuples(st.integers(3, 9), st.integers(3, 9)),
                     elements=st.floats(0, 1))


def test_load_single_white_png(tmp_path):
    path = tmp_path / "white.png"
    Image.new("RGB", (1, 1), (255, 255, 255)).save(path)
    r = load_image(path)
    assert r.max_sample == 255
    assert r.samples.reshape(3, -1).T.tolist() == [[255, 255, 255]]


def test_load_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "nope.png")


def test_load_undecodable(tmp_path):
    path = tmp_path / "junk.png"
    path.write_bytes(b"not an image at all")
    with pytest.raises(ImageError):
        load_image(path)


def test_bmp_gray_roundtrip(tmp_path):
    pattern = np.arange(16, dtype=np.uint8).reshape(4, 4) * 16
    path = tmp_path / "g.bmp"
    Image.fromarray(pattern, mode="L").save(path)
    r = load_image(path)
    assert r.channels == 1
    assert r.samples.size == 16
    np.testing.assert_array_equal(r.samples[0], pattern)


def test_png_16bit_roundtrip(tmp_path):
    data = np.array([[0, 1000, 65535], [300, 40000, 7], [1, 2, 3]], dtype=np.uint16)
    path = tmp_path / "g16.png"
    Image.fromarray(data).save(path)
    r = load_image(path)
    assert r.max_sample == 65535
    np.testing.assert_array_equal(r.samples[0], data)
    assert to_grayscale(r)[0, 2] == 1.0


def test_grayscale_red_pixel():
    r = Raster(np.array([255, 0, 0], dtype=np.uint8).reshape(3, 1, 1).repeat(3, 1).repeat(3, 2), 255)
    assert to_grayscale(r)[0, 0] == pytest.approx(0.299, abs=1e-12)


def test_grayscale_passthrough_and_black():
    r = Raster(np.full((1, 3, 3), 128, dtype=np.uint8), 255)
    assert to_grayscale(r)[1, 1] == pytest.approx(128 / 255)
    black = Raster(np.zeros((3, 3, 3), dtype=np.uint8), 255)
    assert np.all(to_grayscale(black) == 0.0)


@pytest.mark.parametrize("channels", [2, 4, 5])
def test_grayscale_rejects_channel_count(channels):
    with pytest.raises(ImageError):
        to_grayscale(Raster(np.zeros((channels, 3, 3), dtype=np.uint8), 255))


def test_normalize_endpoints_and_depths():
    np.testing.assert_array_equal(normalize([0, 255], 255), [0.0, 1.0])
    assert np.all(normalize(np.full(4, 100), 255) == 100 / 255)
    assert normalize([65535], 65535)[0] == 1.0
    with pytest.raises(ValueError):
        normalize([256], 255)


def test_read_gray_deterministic(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (6, 5, 3), dtype=np.uint8)
    path = tmp_path / "c.png"
    Image.fromarray(img, mode="RGB").save(path)
    a, b = read_gray(path), read_gray(path)
    assert a.tobytes() == b.tobytes()


def test_sobel_constant_is_zero():
    assert np.all(sobel_gradient(np.full((5, 7), 0.3)) == 0.0)


def test_sobel_vertical_step():
    img = np.zeros((6, 6))
    img[:, 3:] = 1.0
    g = sobel_gradient(img)
    # column 2 sits just left of the step; rows 1..4 are interior
    np.testing.assert_array_equal(g[1:5, 2], 4.0)
    assert g.shape == img.shape


def test_sobel_horizontal_step_is_transpose():
    img = np.zeros((6, 6))
    img[:, 3:] = 1.0
    np.testing.assert_array_equal(sobel_gradient(img.T), sobel_gradient(img).T)


def test_sobel_rejects_small_image():
    with pytest.raises(ImageError):
        sobel_gradient(np.zeros((2, 5)))


@given(gray_images, st.floats(0, 1))
def test_sobel_shift_invariance(img, c):
    shifted = np.clip(img * 0.5 + c * 0.5, 0, 1)
    base = img * 0.5
    np.testing.assert_allclose(sobel_gradient(shifted), sobel_gradient(base), atol=1e-12)


@given(gray_images, gray_images)
def test_fusion_properties(a, b):
    if a.shape != b.shape:
        with pytest.raises(ValueError):
            fuse_gradients(a, b)
        return
    ga, gb = sobel_gradient(a), sobel_gradient(b)
    f = fuse_gradients(ga, gb)
    assert np.array_equal(f, fuse_gradients(gb, ga))
    assert np.array_equal(fuse_gradients(ga, ga), ga)
    assert np.all(np.minimum(ga, gb) <= f) and np.all(f <= np.maximum(ga, gb))


def test_fusion_constant_average():
    assert np.all(fuse_gradients(np.ones((3, 3)), np.zeros((3, 3))) == 0.5)
