"""Dataset manifests, target normalization, reference-disjoint folds and a
content-addressed feature cache."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .entropy import PeConfig
from .features import DEFAULT_ETA, FeatureVector, extract_features
from .forest import TrainingSet
from .image import read_gray

log = logging.getLogger(__name__)

MANIFEST_COLUMNS = ("ref_path", "dist_path", "raw_score", "reference_id")
META_KEYS = ("name", "score_min", "score_max", "higher_is_better")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    ref_path: str
    dist_path: str
    raw_score: float
    reference_id: str
    # paths exactly as written in the manifest, used for output rows
    ref_label: str = ""
    dist_label: str = ""


@dataclass
class DatasetManifest:
    name: str
    score_min: float
    score_max: float
    higher_is_better: bool
    samples: list[Sample] = field(default_factory=list)

    def __post_init__(self):
        if not self.score_min < self.score_max:
            raise ManifestError(f"score_min {self.score_min} must be below score_max {self.score_max}")
        seen_ref = {}
        seen_pair = set()
        for row, s in enumerate(self.samples, start=2):
            if not self.score_min <= s.raw_score <= self.score_max:
                raise ManifestError(
                    f"row {row}: score {s.raw_score} outside declared range "
                    f"[{self.score_min}, {self.score_max}]")
            pair = (s.ref_path, s.dist_path)
            if pair in seen_pair:
                raise ManifestError(f"row {row}: duplicate pair {s.ref_label},{s.dist_label}")
            seen_pair.add(pair)
            prev = seen_ref.setdefault(s.ref_path, s.reference_id)
            if prev != s.reference_id:
                raise ManifestError(
                    f"row {row}: reference {s.ref_label} has ids {prev!r} and {s.reference_id!r}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def groups(self) -> list[str]:
        return [s.reference_id for s in self.samples]


def sidecar_path(manifest_path: str | os.PathLike) -> str:
    root, _ = os.path.splitext(os.fspath(manifest_path))
    return root + ".meta.json"


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    """Read a manifest CSV and its ``.meta.json`` sidecar.

    Image paths are resolved relative to the manifest's directory.
    """
    path = os.fspath(path)
    base = os.path.dirname(os.path.abspath(path))
    meta_path = sidecar_path(path)
    try:
        with open(meta_path) as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise ManifestError(f"missing metadata sidecar {meta_path}") from None
    missing = [k for k in META_KEYS if k not in meta]
    if missing:
        raise ManifestError(f"sidecar {meta_path} lacks keys: {', '.join(missing)}")

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ManifestError(f"manifest {path} has no header row")
        missing = [c for c in MANIFEST_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise ManifestError(f"manifest {path} lacks columns: {', '.join(missing)}")
        samples = []
        for row, rec in enumerate(reader, start=2):
            try:
                score = float(rec["raw_score"])
            except (TypeError, ValueError):
                raise ManifestError(f"row {row}: bad raw_score {rec['raw_score']!r}") from None
            samples.append(Sample(
                os.path.normpath(os.path.join(base, rec["ref_path"])),
                os.path.normpath(os.path.join(base, rec["dist_path"])),
                score, rec["reference_id"], rec["ref_path"], rec["dist_path"]))
    return DatasetManifest(str(meta["name"]), float(meta["score_min"]),
                           float(meta["score_max"]), bool(meta["higher_is_better"]), samples)


def normalize_target(m: DatasetManifest, raw: float) -> float:
    """Map a raw MOS/DMOS to [0, 1] with 1 meaning best quality."""
    if not m.score_min <= raw <= m.score_max:
        raise ValueError(f"score {raw} outside [{m.score_min}, {m.score_max}]")
    t = (raw - m.score_min) / (m.score_max - m.score_min)
    return t if m.higher_is_better else 1.0 - t


def split_groups(groups, k: int, seed: int = 0) -> list[np.ndarray]:
    """Folds of sample indices such that no group spans two folds.

    Distinct group labels are sorted, shuffled with ``seed`` and dealt
    round-robin into ``k`` folds.
    """
    labels = sorted(set(groups))
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(labels) < k:
        raise ValueError(f"{len(labels)} distinct references cannot fill {k} folds")
    perm = np.random.default_rng(seed).permutation(len(labels))
    fold_of = {labels[j]: i % k for i, j in enumerate(perm)}
    assign = np.array([fold_of[g] for g in groups])
    return [np.flatnonzero(assign == i) for i in range(k)]


def split_by_reference(m: DatasetManifest, k: int, seed: int = 0) -> list[np.ndarray]:
    return split_groups(m.groups, k, seed)


def _file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def cache_key(ref_path: str, dist_path: str, cfg: PeConfig, eta: float) -> str:
    """64-hex key from both images' content hashes and the entropy settings."""
    text = "|".join([_file_digest(ref_path), _file_digest(dist_path),
                     f"order={cfg.order}", f"delay={cfg.delay}",
                     f"patch={cfg.patch_side}", f"eta={float(eta)!r}"])
    return hashlib.sha256(text.encode()).hexdigest()


def read_cached(cache_dir: str, key: str) -> FeatureVector | None:
    path = os.path.join(cache_dir, key)
    try:
        with open(path) as fh:
            parts = fh.read().split()
        if len(parts) != 3:
            return None
        return FeatureVector(*(float(p) for p in parts))
    except (FileNotFoundError, ValueError):
        return None


def write_cached(cache_dir: str, key: str, fv: FeatureVector) -> None:
    os.makedirs(cache_dir, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=cache_dir, prefix=".tmp-")
    with os.fdopen(fd, "w") as fh:
        fh.write("\n".join(repr(float(v)) for v in fv) + "\n")
    os.replace(tmp, os.path.join(cache_dir, key))


def _pair_features(ref_path, dist_path, cfg, eta, cache_dir):
    key = cache_key(ref_path, dist_path, cfg, eta) if cache_dir else None
    if key:
        hit = read_cached(cache_dir, key)
        if hit is not None:
            return hit
    fv = extract_features(read_gray(ref_path), read_gray(dist_path), cfg, eta)
    if key:
        write_cached(cache_dir, key, fv)
    return fv


def _safe_pair_features(args):
    try:
        return _pair_features(*args), None
    except Exception as exc:  # reported per pair, processing continues
        return None, f"{type(exc).__name__}: {exc}"


@dataclass(frozen=True)
class PairFailure:
    index: int
    ref_path: str
    dist_path: str
    message: str


def build_training_set(m: DatasetManifest, cfg: PeConfig = PeConfig(), cache_dir=None,
                       eta: float = DEFAULT_ETA, workers: int = 1):
    """Extract features for every manifest pair.

    Returns ``(training_set, failures)``. Pairs that cannot be read or whose
    images differ in size are listed in ``failures`` and left out. The
    training set's ``keys`` hold the manifest path labels and ``groups`` the
    reference ids.
    """
    jobs = [(s.ref_path, s.dist_path, cfg, eta, cache_dir) for s in m.samples]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_safe_pair_features, jobs, chunksize=4))
    else:
        results = [_safe_pair_features(j) for j in jobs]

    feats, targets, keys, groups, failures = [], [], [], [], []
    for i, (s, (fv, err)) in enumerate(zip(m.samples, results)):
        if err is not None:
            log.warning("pair %d (%s, %s) failed: %s", i, s.ref_label, s.dist_label, err)
            failures.append(PairFailure(i, s.ref_label, s.dist_label, err))
            continue
        feats.append(list(fv))
        targets.append(normalize_target(m, s.raw_score))
        keys.append((s.ref_label, s.dist_label))
        groups.append(s.reference_id)
    if not feats:
        return None, failures
    return TrainingSet(np.array(feats), np.array(targets), groups, keys), failures
