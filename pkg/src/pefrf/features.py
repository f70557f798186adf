"""Local quality map and the three pooled statistics fed to the regressor."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .entropy import PeConfig, entropy_map
from .image import check_gray, fuse_gradients, sobel_gradient

DEFAULT_ETA = 0.001


class FeatureVector(NamedTuple):
    f1_mad: float
    f2_sd: float
    f3_mean: float


def _similarity(a: np.ndarray, b: np.ndarray, eta: float) -> np.ndarray:
    # (2a)*b == (2b)*a exactly, so the term is symmetric in its arguments
    s = (2.0 * a * b + eta) / (a * a + b * b + eta)
    # 2ab <= a^2 + b^2; rounding must not push a term above 1
    return np.minimum(s, 1.0)


def local_quality_map(m_r, m_d, m_rd, eta: float = DEFAULT_ETA) -> np.ndarray:
    """Sum of three SSIM-style similarity ratios between entropy maps."""
    m_r = np.asarray(m_r, dtype=np.float64)
    m_d = np.asarray(m_d, dtype=np.float64)
    m_rd = np.asarray(m_rd, dtype=np.float64)
    if not (m_r.shape == m_d.shape == m_rd.shape):
        raise ValueError(
            f"entropy map shapes differ: {m_r.shape}, {m_d.shape}, {m_rd.shape}")
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    t_rd = _similarity(m_r, m_d, eta)
    t_d = _similarity(m_d, m_rd, eta)
    t_r = _similarity(m_r, m_rd, eta)
    # grouping the two fused terms keeps the sum exact under ref/dis swap
    return t_rd + (t_d + t_r)


def extract_statistics(q) -> FeatureVector:
    """Mean absolute deviation, population SD and mean of a quality map."""
    q = np.asarray(q, dtype=np.float64).ravel()
    if q.size == 0:
        raise ValueError("quality map is empty")
    mean = q.mean()
    dev = q - mean
    f1 = np.abs(dev).mean()
    f2 = np.sqrt((dev * dev).mean())
    return FeatureVector(float(f1), float(f2), float(mean))


def quality_map(ref_img, dis_img, cfg: PeConfig = PeConfig(),
                eta: float = DEFAULT_ETA) -> np.ndarray:
    """Local quality map of a reference/distorted pair."""
    ref_img = check_gray(ref_img)
    dis_img = check_gray(dis_img)
    if ref_img.shape != dis_img.shape:
        raise ValueError(
            f"reference and distorted images differ in size: {ref_img.shape} vs {dis_img.shape}")
    g_ref = sobel_gradient(ref_img)
    g_dis = sobel_gradient(dis_img)
    g_fus = fuse_gradients(g_ref, g_dis)
    return local_quality_map(
        entropy_map(g_ref, cfg), entropy_map(g_dis, cfg), entropy_map(g_fus, cfg), eta)


def extract_features(ref_img, dis_img, cfg: PeConfig = PeConfig(),
                     eta: float = DEFAULT_ETA) -> FeatureVector:
    """Gradient, entropy and quality-map stages composed for one image pair."""
    return extract_statistics(quality_map(ref_img, dis_img, cfg, eta))
