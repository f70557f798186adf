"""Ordinal patterns and permutation-entropy maps over 3x3 patches."""

from __future__ import annotations

import itertools
import math
import os
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

PATCH_SIDE = 3
MAX_ORDER = 6

FLOAT_MAP_MAGIC = b"PEMAP1"
_FLOAT_MAP_HEADER = struct.Struct("<6s2xII")


@dataclass(frozen=True)
class PeConfig:
    """Permutation-entropy parameters.

    ``order`` is the embedding dimension, ``delay`` the lag between the
    elements of one ordinal vector. Patches are always 3x3 and are read
    row-major into a 9-value sequence.
    """

    order: int = 3
    delay: int = 1
    patch_side: int = PATCH_SIDE

    def __post_init__(self):
        if self.patch_side != PATCH_SIDE:
            raise ValueError("patch_side is fixed at 3")
        if not 2 <= self.order <= MAX_ORDER:
            raise ValueError(f"order must be in [2, {MAX_ORDER}], got {self.order}")
        if self.delay < 1:
            raise ValueError(f"delay must be >= 1, got {self.delay}")
        if self.n_windows < 1:
            raise ValueError("order/delay span exceeds the 9-value patch sequence")

    @property
    def sequence_length(self) -> int:
        return self.patch_side * self.patch_side

    @property
    def n_windows(self) -> int:
        return self.sequence_length - (self.order - 1) * self.delay

    @property
    def max_entropy(self) -> float:
        """Upper bound of the (d - 1)-normalized entropy: log2(d!) / (d - 1)."""
        return math.log2(math.factorial(self.order)) / (self.order - 1)


@lru_cache(maxsize=None)
def pattern_table(d: int) -> tuple[tuple[int, ...], ...]:
    """All ``d!`` rank permutations in lexicographic order.

    A pattern's position in the table is its integer id.
    """
    if not 2 <= d <= MAX_ORDER:
        raise ValueError(f"order must be in [2, {MAX_ORDER}], got {d}")
    return tuple(itertools.permutations(range(d)))


def pattern_id(ranks) -> int:
    """Lexicographic index (Lehmer code) of a rank permutation."""
    ranks = list(ranks)
    d = len(ranks)
    idx = 0
    for i, r in enumerate(ranks):
        smaller = sum(1 for later in ranks[i + 1:] if later < r)
        idx += smaller * math.factorial(d - 1 - i)
    return idx


def ordinal_pattern(values, d: int | None = None) -> tuple[int, ...]:
    """Rank of each value in a stable ascending sort.

    Equal values are ranked by position, so the earlier one gets the
    smaller rank.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if d is not None and values.size != d:
        raise ValueError(f"expected {d} values, got {values.size}")
    if values.size < 2:
        raise ValueError("an ordinal pattern needs at least two values")
    order = np.argsort(values, kind="stable")
    ranks = np.empty_like(order)
    ranks[order] = np.arange(values.size)
    return tuple(int(r) for r in ranks)


def _window_index(cfg: PeConfig) -> np.ndarray:
    starts = np.arange(cfg.n_windows)[:, None]
    return starts + cfg.delay * np.arange(cfg.order)[None, :]


def _pattern_ids(seqs: np.ndarray, cfg: PeConfig) -> np.ndarray:
    """Pattern ids for every ordinal vector; ``seqs`` has shape (..., 9)."""
    windows = seqs[..., _window_index(cfg)]
    order = np.argsort(windows, axis=-1, kind="stable")
    ranks = np.argsort(order, axis=-1, kind="stable")
    d = cfg.order
    ids = np.zeros(ranks.shape[:-1], dtype=np.int64)
    for i in range(d - 1):
        smaller = (ranks[..., i + 1:] < ranks[..., i:i + 1]).sum(axis=-1)
        ids += smaller * math.factorial(d - 1 - i)
    return ids


def _counts_from_ids(ids: np.ndarray, cfg: PeConfig) -> np.ndarray:
    n_patterns = math.factorial(cfg.order)
    return (ids[..., None] == np.arange(n_patterns)).sum(axis=-2)


def _entropy_from_counts(counts: np.ndarray, cfg: PeConfig) -> np.ndarray:
    p = counts / float(cfg.n_windows)
    plogp = np.zeros_like(p)
    nz = counts > 0
    plogp[nz] = p[nz] * np.log2(p[nz])
    # + 0.0 turns -0.0 into 0.0 for single-pattern patches
    return -plogp.sum(axis=-1) / (cfg.order - 1) + 0.0


def patch_entropy(patch, cfg: PeConfig = PeConfig()) -> float:
    """Normalized permutation entropy of one 3x3 patch."""
    patch = np.asarray(patch, dtype=np.float64)
    if patch.shape != (PATCH_SIDE, PATCH_SIDE):
        raise ValueError(f"patch must be 3x3, got shape {patch.shape}")
    counts = _counts_from_ids(_pattern_ids(patch.reshape(1, -1), cfg), cfg)
    return float(_entropy_from_counts(counts, cfg)[0])


def _patches(g) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError(f"gradient map must be 2-D, got shape {g.shape}")
    if g.shape[0] < PATCH_SIDE or g.shape[1] < PATCH_SIDE:
        raise ValueError(f"map smaller than one 3x3 patch: {g.shape}")
    return np.lib.stride_tricks.sliding_window_view(g, (PATCH_SIDE, PATCH_SIDE))


def pattern_counts(g, cfg: PeConfig = PeConfig()) -> np.ndarray:
    """Ordinal-pattern histogram of every 3x3 window, shape (H-2, W-2, d!)."""
    patches = _patches(g)
    seqs = patches.reshape(patches.shape[0], patches.shape[1], -1)
    return _counts_from_ids(_pattern_ids(seqs, cfg), cfg)


def entropy_map(g, cfg: PeConfig = PeConfig(), block_rows: int = 128) -> np.ndarray:
    """Permutation entropy of every 3x3 window, one-pixel stride.

    An H x W input gives an (H - 2) x (W - 2) map. Rows are processed in
    blocks to bound memory; every output pixel is computed independently.
    """
    patches = _patches(g)
    out_h, out_w = patches.shape[:2]
    out = np.empty((out_h, out_w), dtype=np.float64)
    for r0 in range(0, out_h, block_rows):
        block = patches[r0:r0 + block_rows].reshape(-1, out_w, PATCH_SIDE * PATCH_SIDE)
        counts = _counts_from_ids(_pattern_ids(block, cfg), cfg)
        out[r0:r0 + block_rows] = _entropy_from_counts(counts, cfg)
    return out


def write_float_map(path: str | os.PathLike, data) -> None:
    """Dump a 2-D map as little-endian float32 behind a 16-byte header."""
    data = np.asarray(data)
    if data.ndim != 2:
        raise ValueError("float map must be 2-D")
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(_FLOAT_MAP_HEADER.pack(FLOAT_MAP_MAGIC, w, h))
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_float_map(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _FLOAT_MAP_HEADER.size:
        raise ValueError("float map file too short")
    magic, w, h = _FLOAT_MAP_HEADER.unpack_from(raw)
    if magic != FLOAT_MAP_MAGIC:
        raise ValueError(f"bad float map magic {magic!r}")
    body = raw[_FLOAT_MAP_HEADER.size:]
    if len(body) != 4 * w * h:
        raise ValueError("float map body size does not match header")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float32)
