"""Bootstrap-aggregated CART regression trees.

Trees are grown greedily on variance reduction with midpoint thresholds.
Each tree draws from its own random stream derived from ``(seed, tree
index)``, and the training samples are put in a canonical order first, so a
seeded fit does not depend on worker count, tree count or input order.
"""

from __future__ import annotations

import hashlib
import io
import math
import os
import struct
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

N_FEATURES = 3

MODEL_MAGIC = b"PEFRF-RF"
MODEL_VERSION = 1

_HEADER = struct.Struct("<8sH")
_CONFIG = struct.Struct("<IIIIBBQI")
_U32 = struct.Struct("<I")
_CHECKSUM_SIZE = 8
_NODE_DTYPE = np.dtype([("feature", "<i4"), ("threshold", "<f8"), ("value", "<f8")])


class ModelFormatError(ValueError):
    """Corrupt or unreadable model file."""


class ModelVersionError(ModelFormatError):
    """Model file written by an incompatible format version."""


@dataclass
class TrainingSet:
    """Feature rows with targets in [0, 1].

    ``groups`` optionally labels each sample with its reference content and
    ``keys`` with an identifier such as ``(ref_path, dist_path)``.
    """

    features: np.ndarray
    targets: np.ndarray
    groups: list | None = None
    keys: list | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise ValueError("training set must be a nonempty 2-D feature array")
        if self.targets.shape != (self.features.shape[0],):
            raise ValueError("one target per feature row is required")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")
        if np.any(~np.isfinite(self.targets)) or self.targets.min() < 0 or self.targets.max() > 1:
            raise ValueError("targets must lie in [0, 1]")
        for name in ("groups", "keys"):
            extra = getattr(self, name)
            if extra is not None and len(extra) != len(self):
                raise ValueError(f"{name} must have one entry per sample")

    def __len__(self) -> int:
        return self.features.shape[0]

    @classmethod
    def from_pairs(cls, pairs) -> "TrainingSet":
        pairs = list(pairs)
        if not pairs:
            raise ValueError("training set is empty")
        return cls(np.array([list(fv) for fv, _ in pairs], dtype=np.float64),
                   np.array([t for _, t in pairs], dtype=np.float64))

    def subset(self, idx) -> "TrainingSet":
        idx = np.asarray(idx, dtype=np.int64)
        pick = (lambda seq: None if seq is None else [seq[i] for i in idx])
        return TrainingSet(self.features[idx], self.targets[idx],
                           pick(self.groups), pick(self.keys))


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 200
    max_depth: int = 20
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    features_per_split: int = 3
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if not 1 <= self.features_per_split <= N_FEATURES:
            raise ValueError(f"features_per_split must be in [1, {N_FEATURES}]")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def replace(self, **changes) -> "ForestConfig":
        return ForestConfig(**{**asdict(self), **changes})


@dataclass
class Tree:
    """Flat binary tree; node 0 is the root and nodes are in preorder.

    Leaves have ``feature == -1``. Samples with ``x[feature] <= threshold``
    go left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    value: np.ndarray
    left: np.ndarray
    right: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def depth(self) -> int:
        best = 0
        stack = [(0, 0)]
        while stack:
            node, d = stack.pop()
            if self.feature[node] < 0:
                best = max(best, d)
            else:
                stack.append((self.left[node], d + 1))
                stack.append((self.right[node], d + 1))
        return best

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.feature[node] >= 0
        while active.any():
            n = node[active]
            go_left = X[rows[active], self.feature[n]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return self.value[node]


@dataclass
class ForestModel:
    trees: list[Tree]
    config: ForestConfig
    oob_indices: list[np.ndarray] = field(default_factory=list)
    n_samples: int = 0

    def leaf_range(self) -> tuple[float, float]:
        leaves = np.concatenate([t.value[t.feature < 0] for t in self.trees])
        return float(leaves.min()), float(leaves.max())


def canonical_order(features: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Sample order sorted by feature columns left to right, then target."""
    keys = [targets] + [features[:, j] for j in range(features.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


def tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(tree_index,)))


def _best_split(X, y, idx, features, min_leaf):
    """Return (feature, threshold) minimizing child SSE, or None."""
    n = idx.size
    best_sse = math.inf
    best = None
    for f in features:
        xs_all = X[idx, f]
        order = np.argsort(xs_all, kind="stable")
        xs = xs_all[order]
        ys = y[idx][order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys * ys)
        total, total_sq = csum[-1], csq[-1]
        # split after position i - 1, left = first i samples
        i = np.arange(min_leaf, n - min_leaf + 1)
        if i.size == 0:
            continue
        valid = xs[i - 1] < xs[np.minimum(i, n - 1)]
        valid &= i < n
        if not valid.any():
            continue
        i = i[valid]
        nl = i.astype(np.float64)
        nr = n - nl
        sl = csum[i - 1]
        sse = (csq[i - 1] - sl * sl / nl) + ((total_sq - csq[i - 1]) - (total - sl) ** 2 / nr)
        k = int(np.argmin(sse))
        if sse[k] < best_sse:
            best_sse = sse[k]
            lo, hi = xs[i[k] - 1], xs[i[k]]
            thr = lo + (hi - lo) / 2.0
            if not lo <= thr < hi:
                thr = lo
            best = (int(f), float(thr))
    return best


def grow_tree(X: np.ndarray, y: np.ndarray, sample_idx: np.ndarray,
              cfg: ForestConfig, rng: np.random.Generator) -> Tree:
    feature, threshold, value, left, right = [], [], [], [], []
    n_feat = X.shape[1]

    def build(idx, depth):
        node = len(feature)
        ys = y[idx]
        feature.append(-1)
        threshold.append(0.0)
        value.append(min(max(float(ys.mean()), 0.0), 1.0))
        left.append(-1)
        right.append(-1)
        if depth >= cfg.max_depth or idx.size < cfg.min_samples_split or np.all(ys == ys[0]):
            return node
        if cfg.features_per_split < n_feat:
            cand = np.sort(rng.choice(n_feat, cfg.features_per_split, replace=False))
        else:
            cand = range(n_feat)
        split = _best_split(X, y, idx, cand, cfg.min_samples_leaf)
        if split is None:
            return node
        f, thr = split
        go_left = X[idx, f] <= thr
        feature[node] = f
        threshold[node] = thr
        left[node] = build(idx[go_left], depth + 1)
        right[node] = build(idx[~go_left], depth + 1)
        return node

    build(np.asarray(sample_idx, dtype=np.int64), 0)
    return Tree(np.array(feature, dtype=np.int32), np.array(threshold, dtype=np.float64),
                np.array(value, dtype=np.float64), np.array(left, dtype=np.int64),
                np.array(right, dtype=np.int64))


def _fit_tree(X, y, cfg: ForestConfig, tree_index: int):
    rng = tree_rng(cfg.seed, tree_index)
    n = X.shape[0]
    if cfg.bootstrap:
        drawn = rng.integers(0, n, size=n)
        in_bag = np.zeros(n, dtype=bool)
        in_bag[drawn] = True
        oob = np.flatnonzero(~in_bag)
        sample_idx = np.sort(drawn)
    else:
        oob = np.empty(0, dtype=np.int64)
        sample_idx = np.arange(n)
    return grow_tree(X, y, sample_idx, cfg, rng), oob


def _fit_trees(X, y, cfg, indices):
    return [_fit_tree(X, y, cfg, t) for t in indices]


def train_forest(data: TrainingSet, cfg: ForestConfig = ForestConfig(),
                 workers: int = 1) -> ForestModel:
    """Fit ``cfg.n_trees`` regression trees on bootstrap resamples.

    OOB index sets are recorded against the canonical sample order, see
    :func:`canonical_order`.
    """
    if len(data) == 0:
        raise ValueError("training set is empty")
    order = canonical_order(data.features, data.targets)
    X = np.ascontiguousarray(data.features[order])
    y = np.ascontiguousarray(data.targets[order])
    tree_ids = list(range(cfg.n_trees))
    if workers > 1 and cfg.n_trees > 1:
        chunks = [tree_ids[i::workers] for i in range(workers)]
        fitted = {}
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk, result in zip(chunks, pool.map(_fit_trees, [X] * workers,
                                                      [y] * workers, [cfg] * workers, chunks)):
                fitted.update(zip(chunk, result))
        results = [fitted[t] for t in tree_ids]
    else:
        results = _fit_trees(X, y, cfg, tree_ids)
    trees = [t for t, _ in results]
    oob = [o for _, o in results] if cfg.bootstrap else []
    return ForestModel(trees, cfg, oob, len(data))


def predict_many(model: ForestModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    total = np.zeros(X.shape[0])
    for tree in model.trees:
        total += tree.predict(X)
    return np.clip(total / len(model.trees), 0.0, 1.0)


def predict(model: ForestModel, fv) -> float:
    """Quality score in [0, 1] for one feature vector."""
    return float(predict_many(model, [list(fv)])[0])


@dataclass(frozen=True)
class OobResult:
    mse: float
    n_covered: int
    n_samples: int

    @property
    def n_uncovered(self) -> int:
        return self.n_samples - self.n_covered


def oob_error(model: ForestModel, data: TrainingSet) -> OobResult:
    """Out-of-bag mean squared error on the training set.

    Samples that every tree saw in its bootstrap are left out. If no sample
    is out of bag, ``mse`` is NaN and a warning is issued.
    """
    if not model.config.bootstrap:
        raise ValueError("model was trained without bootstrap; no OOB information")
    if len(data) != model.n_samples:
        raise ValueError("data does not match the training set size")
    order = canonical_order(data.features, data.targets)
    X = data.features[order]
    y = data.targets[order]
    sums = np.zeros(len(y))
    counts = np.zeros(len(y), dtype=np.int64)
    for tree, oob in zip(model.trees, model.oob_indices):
        if oob.size:
            sums[oob] += tree.predict(X[oob])
            counts[oob] += 1
    covered = counts > 0
    n_cov = int(covered.sum())
    if n_cov == 0:
        warnings.warn("no sample is out of bag for any tree; OOB error undefined")
        return OobResult(math.nan, 0, len(y))
    err = sums[covered] / counts[covered] - y[covered]
    return OobResult(float(np.mean(err * err)), n_cov, len(y))


def split_counts(model: ForestModel) -> np.ndarray:
    """Number of internal nodes splitting on each feature."""
    counts = np.zeros(N_FEATURES, dtype=np.int64)
    for tree in model.trees:
        f = tree.feature[tree.feature >= 0]
        counts += np.bincount(f, minlength=N_FEATURES)[:N_FEATURES]
    return counts


@dataclass(frozen=True)
class GridCell:
    n_trees: int
    max_depth: int
    fold_srcc: tuple
    mean_srcc: float


def grid_search(data: TrainingSet, n_trees=(50, 100, 200), max_depth=(5, 10, 20),
                k: int = 5, seed: int = 0, base: ForestConfig | None = None,
                folds=None, workers: int = 1):
    """Pick (n_trees, max_depth) by k-fold cross-validated SRCC.

    Returns ``(best_config, cells)``. Folds whose predictions or targets are
    constant have undefined SRCC and are skipped when averaging. Ties within
    1e-12 go to fewer trees, then to shallower trees.
    """
    from .evaluation import UndefinedCorrelationError, kfold_split, srcc

    n_trees, max_depth = list(n_trees), list(max_depth)
    if not n_trees or not max_depth:
        raise ValueError("grid must be nonempty")
    if folds is None:
        if k < 2 or len(data) < k:
            raise ValueError(f"need at least k={k} >= 2 samples for k-fold search")
        folds = kfold_split(len(data), k, seed)
    base = base or ForestConfig(seed=seed)
    all_idx = np.arange(len(data))
    cells = []
    for nt in n_trees:
        for md in max_depth:
            cfg = base.replace(n_trees=nt, max_depth=md)
            scores = []
            for fold in folds:
                train = data.subset(np.setdiff1d(all_idx, fold))
                model = train_forest(train, cfg, workers=workers)
                pred = predict_many(model, data.features[fold])
                try:
                    scores.append(srcc(pred, data.targets[fold]))
                except UndefinedCorrelationError:
                    scores.append(math.nan)
            finite = [s for s in scores if not math.isnan(s)]
            mean = float(np.mean(finite)) if finite else -math.inf
            cells.append(GridCell(nt, md, tuple(scores), mean))
    top = max(c.mean_srcc for c in cells)
    tied = [c for c in cells if c.mean_srcc >= top - 1e-12]
    best = min(tied, key=lambda c: (c.n_trees, c.max_depth))
    return base.replace(n_trees=best.n_trees, max_depth=best.max_depth), cells


def model_to_bytes(model: ForestModel) -> bytes:
    cfg = model.config
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MODEL_MAGIC, MODEL_VERSION))
    buf.write(_CONFIG.pack(cfg.n_trees, cfg.max_depth, cfg.min_samples_split,
                           cfg.min_samples_leaf, cfg.features_per_split,
                           int(cfg.bootstrap), cfg.seed, model.n_samples))
    buf.write(_U32.pack(len(model.trees)))
    for i, tree in enumerate(model.trees):
        nodes = np.empty(tree.n_nodes, dtype=_NODE_DTYPE)
        nodes["feature"] = tree.feature
        nodes["threshold"] = tree.threshold
        nodes["value"] = tree.value
        buf.write(_U32.pack(tree.n_nodes))
        buf.write(nodes.tobytes())
        oob = model.oob_indices[i] if model.oob_indices else np.empty(0, dtype=np.int64)
        buf.write(_U32.pack(oob.size))
        buf.write(np.asarray(oob, dtype="<u4").tobytes())
    body = buf.getvalue()
    return body + hashlib.blake2b(body, digest_size=_CHECKSUM_SIZE).digest()


def _children_from_preorder(feature: np.ndarray):
    n = feature.size
    left = np.full(n, -1, dtype=np.int64)
    right = np.full(n, -1, dtype=np.int64)

    def walk(node):
        if node >= n:
            raise ModelFormatError("truncated tree node array")
        if feature[node] < 0:
            return node + 1
        left[node] = node + 1
        right[node] = walk(node + 1)
        return walk(right[node])

    if walk(0) != n:
        raise ModelFormatError("tree node array has trailing nodes")
    return left, right


def model_from_bytes(raw: bytes) -> ForestModel:
    if len(raw) < _HEADER.size + _CHECKSUM_SIZE:
        raise ModelFormatError("model file too short")
    magic, version = _HEADER.unpack_from(raw)
    if magic != MODEL_MAGIC:
        raise ModelFormatError(f"not a model file (magic {magic!r})")
    if version != MODEL_VERSION:
        raise ModelVersionError(f"model format version {version}, expected {MODEL_VERSION}")
    body, checksum = raw[:-_CHECKSUM_SIZE], raw[-_CHECKSUM_SIZE:]
    if hashlib.blake2b(body, digest_size=_CHECKSUM_SIZE).digest() != checksum:
        raise ModelFormatError("model checksum mismatch (corrupt or truncated file)")
    try:
        pos = _HEADER.size
        (n_trees, max_depth, mss, msl, fps, boot, seed, n_samples) = _CONFIG.unpack_from(body, pos)
        pos += _CONFIG.size
        cfg = ForestConfig(n_trees, max_depth, mss, msl, fps, bool(boot), seed)
        (count,) = _U32.unpack_from(body, pos)
        pos += _U32.size
        trees, oobs = [], []
        for _ in range(count):
            (n_nodes,) = _U32.unpack_from(body, pos)
            pos += _U32.size
            size = n_nodes * _NODE_DTYPE.itemsize
            nodes = np.frombuffer(body[pos:pos + size], dtype=_NODE_DTYPE)
            if nodes.size != n_nodes:
                raise ModelFormatError("truncated tree")
            pos += size
            feature = nodes["feature"].astype(np.int32)
            left, right = _children_from_preorder(feature)
            trees.append(Tree(feature, nodes["threshold"].astype(np.float64),
                              nodes["value"].astype(np.float64), left, right))
            (n_oob,) = _U32.unpack_from(body, pos)
            pos += _U32.size
            oobs.append(np.frombuffer(body[pos:pos + 4 * n_oob], dtype="<u4").astype(np.int64))
            pos += 4 * n_oob
    except (struct.error, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model file: {exc}") from exc
    if pos != len(body):
        raise ModelFormatError("unexpected trailing bytes in model file")
    return ForestModel(trees, cfg, oobs if cfg.bootstrap else [], n_samples)


def save_model(model: ForestModel, path: str | os.PathLike) -> None:
    tmp = f"{os.fspath(path)}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(model_to_bytes(model))
    os.replace(tmp, path)


def load_model(path: str | os.PathLike) -> ForestModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
