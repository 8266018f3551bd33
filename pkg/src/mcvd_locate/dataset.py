"""Scenario sampling, labelled dataset generation, splitting and persistence.

On disk a dataset is two files sharing a stem:

    <name>.meta.json   layout version, scene config, seed, sample count, columns
    <name>.data.csv    sample_id, 192 features, 25 labels, seed_used

Reals are written as shortest round-trip decimals so load(save(x)) == x.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import LAYOUT_VERSION
from .config import SceneConfig, validate_config
from .features import FLAT_DIM, build_features, flat_names
from .geometry import N_TUBES, Pose, tx_world_positions
from .rng import derive_seed
from .simulator import simulate_scene

log = logging.getLogger(__name__)

LABEL_NAMES = (
    ["pos_x", "pos_y", "pos_z", "quat_w", "quat_x", "quat_y", "quat_z"]
    + [f"tx{k}_{a}" for k in range(N_TUBES) for a in "xyz"]
)
COLUMNS = ["sample_id"] + flat_names() + LABEL_NAMES + ["seed_used"]
FULL_SCALE_SAMPLES = 10_000
DESK_SCALE_SAMPLES = 2_000
_POSE_STREAM = 1 << 32  # derive index for the pose stream, disjoint from pilot ids


class DatasetError(ValueError):
    pass


class VersionError(DatasetError):
    pass


class HeaderError(DatasetError):
    pass


class TruncationError(DatasetError):
    pass


@dataclass(frozen=True)
class SampleRecord:
    sample_id: int
    features: np.ndarray  # (192,)
    label_position: np.ndarray  # (3,)
    label_quat: np.ndarray  # (4,)
    label_tx: np.ndarray  # (6, 3)
    seed_used: int

    def labels(self) -> np.ndarray:
        return np.concatenate([self.label_position, self.label_quat, self.label_tx.reshape(-1)])

    def __eq__(self, other):
        if not isinstance(other, SampleRecord):
            return NotImplemented
        return (self.sample_id == other.sample_id and self.seed_used == other.seed_used
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels(), other.labels()))


def sample_pose(cfg: SceneConfig, rng: np.random.Generator) -> Pose:
    """Uniform direction, uniform |p| in [d_min, d_max], uniform rotation."""
    u = rng.standard_normal(3)
    u /= np.linalg.norm(u)
    d = rng.uniform(cfg.d_min, cfg.d_max)
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q  # canonical hemisphere; same rotation
    return Pose(d * u, q)


def make_record(cfg: SceneConfig, sample_id: int, seed: int) -> SampleRecord:
    sample_seed = derive_seed(seed, sample_id)
    pose = sample_pose(cfg, np.random.default_rng(derive_seed(sample_seed, _POSE_STREAM)))
    scene = simulate_scene(cfg, pose, sample_seed)
    feats = build_features(scene.pilots, cfg).flatten()
    return SampleRecord(sample_id, feats, pose.position.copy(), pose.orientation.copy(),
                        tx_world_positions(pose, cfg.layout), sample_seed)


def generate_dataset(cfg: SceneConfig, n_samples: int, seed: int, progress=None) -> list[SampleRecord]:
    """Deterministic in (cfg, n_samples, seed); thread count does not matter."""
    validate_config(cfg)
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    records = []
    for i in range(n_samples):
        try:
            records.append(make_record(cfg, i, seed))
        except Exception as e:
            raise DatasetError(f"sample {i} failed: {e}") from e
        if progress is not None:
            progress(i + 1, n_samples)
    return records


def as_arrays(records) -> dict:
    return {
        "ids": np.array([r.sample_id for r in records], dtype=np.int64),
        "X": np.array([r.features for r in records]).reshape(-1, FLAT_DIM),
        "pos": np.array([r.label_position for r in records]).reshape(-1, 3),
        "quat": np.array([r.label_quat for r in records]).reshape(-1, 4),
        "tx": np.array([r.label_tx.reshape(-1) for r in records]).reshape(-1, 3 * N_TUBES),
    }


# -- splitting -----------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.8
    val: float = 0.1
    test: float = 0.1
    split_seed: int = 0

    def __post_init__(self):
        f = (self.train, self.val, self.test)
        if min(f) <= 0 or abs(sum(f) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be positive and sum to 1, got {f}")


def _largest_remainder(n: int, fractions) -> list[int]:
    raw = [n * f for f in fractions]
    sizes = [int(np.floor(x)) for x in raw]
    rem = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in rem[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split(sample_ids, spec: SplitSpec = SplitSpec()) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Partition ids into (train, val, test) id arrays.

    Ids are ordered by a keyed hash of (sample_id, split_seed), so the
    assignment does not depend on input order.
    """
    ids = np.unique(np.asarray(sample_ids, dtype=np.int64))
    if len(ids) == 0:
        raise ValueError("cannot split an empty dataset")
    if len(ids) != len(np.asarray(sample_ids).reshape(-1)):
        raise ValueError("duplicate sample ids")
    keys = [derive_seed(spec.split_seed, int(i)) for i in ids]
    order = ids[np.argsort(np.array(keys, dtype=np.uint64), kind="stable")]
    n_tr, n_va, _ = _largest_remainder(len(ids), (spec.train, spec.val, spec.test))
    return (np.sort(order[:n_tr]), np.sort(order[n_tr:n_tr + n_va]), np.sort(order[n_tr + n_va:]))


# -- persistence -----------------------------------------------------------------

def dataset_paths(path) -> tuple[Path, Path]:
    p = str(path)
    for suffix in (".meta.json", ".data.csv"):
        if p.endswith(suffix):
            p = p[: -len(suffix)]
    return Path(p + ".meta.json"), Path(p + ".data.csv")


def _fmt(x: float) -> str:
    return repr(float(x))


def save_dataset(records, path, cfg: SceneConfig, seed: int) -> tuple[Path, Path]:
    meta_path, data_path = dataset_paths(path)
    meta_path.parent.mkdir(parents=True, exist_ok=True)
    with open(data_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in records:
            w.writerow([r.sample_id] + [_fmt(v) for v in r.features]
                       + [_fmt(v) for v in r.labels()] + [r.seed_used])
    meta = {
        "layout_version": LAYOUT_VERSION,
        "config": cfg.to_dict(),
        "seed": seed,
        "n_samples": len(records),
        "columns": COLUMNS,
        "data_sha256": hashlib.sha256(data_path.read_bytes()).hexdigest(),
    }
    meta_path.write_text(json.dumps(meta, indent=2) + "\n")
    return meta_path, data_path


def load_meta(path) -> dict:
    meta_path, _ = dataset_paths(path)
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as e:
        raise HeaderError(f"{meta_path}: malformed JSON header ({e})") from None
    if not isinstance(meta, dict):
        raise HeaderError(f"{meta_path}: header must be a JSON object")
    version = meta.get("layout_version")
    if version != LAYOUT_VERSION:
        raise VersionError(f"unsupported layout version {version!r}, expected {LAYOUT_VERSION!r}")
    for key in ("config", "seed", "n_samples", "columns"):
        if key not in meta:
            raise HeaderError(f"{meta_path}: missing header field {key!r}")
    if meta["columns"] != COLUMNS:
        raise HeaderError(f"{meta_path}: column list does not match {LAYOUT_VERSION}")
    return meta


def load_dataset(path) -> tuple[list[SampleRecord], SceneConfig, dict]:
    """Return (records, scene config, header). Nothing is returned on any error."""
    meta = load_meta(path)
    cfg = validate_config(SceneConfig.from_dict(meta["config"]))
    _, data_path = dataset_paths(path)
    text = data_path.read_text()
    if not text.endswith("\n"):
        raise TruncationError(f"{data_path}: file does not end with a complete row")
    rows = list(csv.reader(text.splitlines()))
    if not rows or rows[0] != COLUMNS:
        raise HeaderError(f"{data_path}: column header does not match {LAYOUT_VERSION}")
    body = rows[1:]
    if len(body) != meta["n_samples"]:
        raise TruncationError(f"{data_path}: expected {meta['n_samples']} rows, found {len(body)}")
    records = []
    nf = FLAT_DIM
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(COLUMNS):
            raise TruncationError(f"{data_path}: line {lineno} has {len(row)} of {len(COLUMNS)} fields")
        try:
            vals = np.array([float(v) for v in row[1:-1]])
            sid, seed_used = int(row[0]), int(row[-1])
        except ValueError as e:
            raise HeaderError(f"{data_path}: line {lineno}: {e}") from None
        lab = vals[nf:]
        records.append(SampleRecord(sid, vals[:nf], lab[:3], lab[3:7], lab[7:].reshape(N_TUBES, 3), seed_used))
    return records, cfg, meta
