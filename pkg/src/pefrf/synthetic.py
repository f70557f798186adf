"""Seeded synthetic reference images and graded distortions.

Used for the desk benchmark: a handful of structured references, each
degraded by Gaussian blur and additive Gaussian noise at four strengths,
with targets that fall monotonically as the distortion strengthens.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

BLUR_SIGMAS = (0.5, 1.0, 2.0, 4.0)
NOISE_SIGMAS = (0.02, 0.05, 0.1, 0.2)


def _stretch(field: np.ndarray) -> np.ndarray:
    return 0.02 + 0.96 * (field - field.min()) / (field.max() - field.min())


def _texture(size: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    field = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma, mode="reflect")
    return field / field.std()


def checkerboard(size: int, block: int, rng: np.random.Generator) -> np.ndarray:
    """Checkerboard overlaid with fine texture so no block is flat."""
    yy, xx = np.indices((size, size))
    board = ((yy // block + xx // block) % 2).astype(np.float64)
    return _stretch(board + 0.6 * _texture(size, 1.0, rng))


def ramp(size: int, angle: float, period: float, rng: np.random.Generator) -> np.ndarray:
    """Linear intensity ramp with a sinusoidal grating and fine texture."""
    yy, xx = np.indices((size, size))
    t = np.cos(angle) * xx + np.sin(angle) * yy
    return _stretch(t / t.max() + 0.5 * np.sin(2 * np.pi * t / period)
                    + 0.4 * _texture(size, 0.8, rng))


def filtered_noise(size: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    return _stretch(_texture(size, sigma, rng))


def reference_images(size: int = 64, seed: int = 0) -> list[np.ndarray]:
    """Eight references: two checkerboards, three ramps, three noise fields.

    Every reference carries texture at every pixel. On flat regions the
    gradient ordering is fully randomized by any amount of noise, which would
    leave noise strength unrankable.
    """
    rng = np.random.default_rng(seed)
    return [
        checkerboard(size, 4, rng),
        checkerboard(size, 8, rng),
        ramp(size, 0.0, 8.0, rng),
        ramp(size, 0.8, 12.0, rng),
        ramp(size, 1.1, 6.0, rng),
        filtered_noise(size, 0.6, rng),
        filtered_noise(size, 0.9, rng),
        filtered_noise(size, 1.2, rng),
    ]


def blur(img: np.ndarray, sigma: float) -> np.ndarray:
    return np.clip(ndimage.gaussian_filter(img, sigma, mode="reflect"), 0.0, 1.0)


def add_noise(img: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    return np.clip(img + sigma * rng.standard_normal(img.shape), 0.0, 1.0)


def target_for(kind: str, level: int) -> float:
    """Quality target in [0, 1] for distortion strength index 0..3.

    Noise levels sit slightly above the blur levels of the same index so the
    eight distortions of one reference have distinct targets.
    """
    base = 0.85 - 0.2 * level
    return base + (0.05 if kind == "noise" else 0.0)


@dataclass(frozen=True)
class SyntheticPair:
    ref_index: int
    kind: str
    level: int
    strength: float
    reference: np.ndarray
    distorted: np.ndarray
    target: float


def distorted_pairs(size: int = 64, seed: int = 0) -> list[SyntheticPair]:
    """All 8 references x (4 blur + 4 noise) distortions, 64 pairs."""
    refs = reference_images(size, seed)
    rng = np.random.default_rng([seed, 1])
    pairs = []
    for i, ref in enumerate(refs):
        for level, sigma in enumerate(BLUR_SIGMAS):
            pairs.append(SyntheticPair(i, "blur", level, sigma, ref, blur(ref, sigma),
                                       target_for("blur", level)))
        for level, sigma in enumerate(NOISE_SIGMAS):
            pairs.append(SyntheticPair(i, "noise", level, sigma, ref,
                                       add_noise(ref, sigma, rng), target_for("noise", level)))
    return pairs


def write_png(path: str | os.PathLike, img: np.ndarray) -> None:
    Image.fromarray(np.round(np.clip(img, 0, 1) * 255).astype(np.uint8), mode="L").save(path)


def write_dataset(directory: str | os.PathLike, size: int = 64, seed: int = 0,
                  name: str = "synthetic") -> str:
    """Write the synthetic pairs as PNGs plus a manifest and sidecar.

    Raw scores are the targets scaled to a MOS range of [0, 100]. Returns
    the manifest path.
    """
    directory = os.fspath(directory)
    img_dir = os.path.join(directory, "imgs")
    os.makedirs(img_dir, exist_ok=True)
    pairs = distorted_pairs(size, seed)
    rows = []
    for i, ref in enumerate(reference_images(size, seed)):
        write_png(os.path.join(img_dir, f"ref{i}.png"), ref)
    for j, p in enumerate(pairs):
        name_j = f"dist{j:03d}_{p.kind}{p.level}.png"
        write_png(os.path.join(img_dir, name_j), p.distorted)
        rows.append((f"imgs/ref{p.ref_index}.png", f"imgs/{name_j}",
                     repr(round(100.0 * p.target, 10)), f"ref{p.ref_index}"))
    manifest = os.path.join(directory, f"{name}.csv")
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ref_path", "dist_path", "raw_score", "reference_id"])
        w.writerows(rows)
    with open(os.path.join(directory, f"{name}.meta.json"), "w") as fh:
        json.dump({"name": name, "score_min": 0.0, "score_max": 100.0,
                   "higher_is_better": True}, fh, indent=2)
    return manifest
