"""Image loading, grayscale conversion and Sobel gradient maps.

Gray images are plain 2-D ``float64`` arrays with values in [0, 1]; gradient
maps are 2-D arrays of the same shape holding nonnegative magnitudes.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

# ITU-R BT.601 luma weights
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()

MIN_SIDE = 3


class ImageError(ValueError):
    """Raised for unreadable, undecodable or malformed images."""


@dataclass(frozen=True)
class Raster:
    """Decoded integer raster of shape (channels, height, width)."""

    samples: np.ndarray
    max_sample: int

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def height(self) -> int:
        return self.samples.shape[1]

    @property
    def width(self) -> int:
        return self.samples.shape[2]


def load_image(path: str | os.PathLike) -> Raster:
    """Decode a PNG or BMP file into an integer raster.

    8-bit images report ``max_sample=255``; 16-bit grayscale reports 65535.
    Palette and bilevel images are expanded to RGB / 8-bit gray.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such image file: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "P":
                im = im.convert("RGBA" if "transparency" in im.info else "RGB")
                mode = im.mode
            elif mode == "1":
                im = im.convert("L")
                mode = "L"
            arr = np.array(im)
    except UnidentifiedImageError as exc:
        raise ImageError(f"cannot decode image {path}: {exc}") from exc
    except OSError as exc:
        raise ImageError(f"cannot decode image {path}: {exc}") from exc

    if arr.size == 0:
        raise ImageError(f"zero-dimension image: {path}")

    if mode.startswith("I;16") or mode == "I":
        max_sample = 65535
        if arr.min() < 0 or arr.max() > 65535:
            raise ImageError(f"unsupported 32-bit integer samples in {path}")
        arr = arr.astype(np.uint16)
    elif arr.dtype == np.uint8:
        max_sample = 255
    else:
        raise ImageError(f"unsupported image mode {mode!r} in {path}")

    if arr.ndim == 2:
        samples = arr[np.newaxis, :, :]
    else:
        samples = np.moveaxis(arr, -1, 0)
    return Raster(np.ascontiguousarray(samples), max_sample)


def normalize(values, max_sample: int) -> np.ndarray:
    """Scale integer samples to [0, 1] by dividing by ``max_sample``."""
    if max_sample <= 0:
        raise ValueError("max_sample must be positive")
    values = np.asarray(values)
    if values.size and (values.min() < 0 or values.max() > max_sample):
        raise ValueError(f"samples must lie in [0, {max_sample}]")
    return values.astype(np.float64) / float(max_sample)


def to_grayscale(raster: Raster) -> np.ndarray:
    """Convert a 1- or 3-channel raster to a normalized gray image.

    Three-channel input is reduced with BT.601 luma before scaling.
    """
    samples = raster.samples
    if raster.channels == 1:
        return check_gray(normalize(samples[0], raster.max_sample))
    if raster.channels == 3:
        rgb = samples.astype(np.float64)
        wr, wg, wb = LUMA_WEIGHTS
        luma = wr * rgb[0] + wg * rgb[1] + wb * rgb[2]
        # weights sum to 1 up to rounding; keep the result inside [0, 1]
        gray = np.clip(luma / float(raster.max_sample), 0.0, 1.0)
        return check_gray(gray)
    raise ImageError(f"unsupported channel count: {raster.channels}")


def read_gray(path: str | os.PathLike) -> np.ndarray:
    return to_grayscale(load_image(path))


def check_gray(img) -> np.ndarray:
    """Validate and return ``img`` as a float64 gray image."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ImageError(f"gray image must be 2-D, got shape {img.shape}")
    if img.shape[0] < MIN_SIDE or img.shape[1] < MIN_SIDE:
        raise ImageError(f"image must be at least {MIN_SIDE}x{MIN_SIDE}, got {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise ImageError("gray intensities must lie in [0, 1]")
    return img


def sobel_gradient(img) -> np.ndarray:
    """Sobel gradient magnitude with edge-replicated borders."""
    img = check_gray(img)
    p = np.pad(img, 1, mode="edge")
    h, w = img.shape
    # correlation with SOBEL_X / SOBEL_Y written out on shifted views
    gx = (
        (p[0:h, 2:w + 2] - p[0:h, 0:w])
        + 2.0 * (p[1:h + 1, 2:w + 2] - p[1:h + 1, 0:w])
        + (p[2:h + 2, 2:w + 2] - p[2:h + 2, 0:w])
    )
    gy = (
        (p[2:h + 2, 0:w] - p[0:h, 0:w])
        + 2.0 * (p[2:h + 2, 1:w + 1] - p[0:h, 1:w + 1])
        + (p[2:h + 2, 2:w + 2] - p[0:h, 2:w + 2])
    )
    return np.sqrt(gx * gx + gy * gy)


def fuse_gradients(g_ref, g_dis) -> np.ndarray:
    """Pixel-wise average of two gradient maps."""
    g_ref = np.asarray(g_ref, dtype=np.float64)
    g_dis = np.asarray(g_dis, dtype=np.float64)
    if g_ref.shape != g_dis.shape:
        raise ValueError(f"gradient map shapes differ: {g_ref.shape} vs {g_dis.shape}")
    return (g_ref + g_dis) / 2.0
