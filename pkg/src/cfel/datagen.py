"""Synthetic fleets, IDX ingestion and device/cluster partitioning."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, FormatError
from .layout import ClusterLayout

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int = 1

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ValueError("features must be 2-D with one row per label")

    def __len__(self):
        return len(self.labels)

    def subset(self, indices, device_id: int = -1) -> "DeviceDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return DeviceDataset(self.features[idx], self.labels[idx], device_id,
                             n_classes=self.n_classes, source_indices=idx)


@dataclass
class DeviceDataset:
    features: np.ndarray
    labels: np.ndarray
    device_id: int
    n_classes: int = 1
    source_indices: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.features) != len(self.labels):
            raise ValueError("feature rows and label count disagree")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("label outside [0, n_classes)")

    def __len__(self):
        return len(self.labels)


# -- quadratic testbed -------------------------------------------------------

@dataclass
class QuadraticFleet:
    centers: np.ndarray          # n x d, per-device target mean b_k
    datasets: list[DeviceDataset]
    minimizer: np.ndarray

    @property
    def sigma_sq_batch1(self) -> float:
        """Largest per-device target variance: the exact sigma^2 for batch size 1."""
        return max(float(np.mean(np.sum((ds.features - ds.features.mean(0)) ** 2, axis=1)))
                   for ds in self.datasets)


def quadratic_fleet_from_targets(targets) -> QuadraticFleet:
    """``targets[k]`` holds device k's per-sample targets (samples x d) or a single d-vector."""
    datasets = []
    for k, t in enumerate(targets):
        t = np.atleast_2d(np.asarray(t, dtype=np.float64))
        datasets.append(DeviceDataset(t, np.zeros(len(t), dtype=np.int64), k))
    centers = np.stack([ds.features.mean(axis=0) for ds in datasets])
    return QuadraticFleet(centers, datasets, centers.mean(axis=0))


def make_quadratic_fleet(n: int, d: int, spread: float, seed: int,
                         samples_per_device: int = 1, sample_spread: float = 0.0) -> QuadraticFleet:
    """Device targets ``b_k ~ spread * N(0, I)``; optional per-sample jitter around them."""
    if n < 1 or d < 1:
        raise ConfigError("n and d must be positive")
    rng = np.random.default_rng(seed)
    centers = spread * rng.standard_normal((n, d))
    targets = []
    for k in range(n):
        jitter = sample_spread * rng.standard_normal((samples_per_device, d))
        if samples_per_device > 1:
            jitter -= jitter.mean(axis=0)
        targets.append(centers[k] + jitter)
    return quadratic_fleet_from_targets(targets)


# -- classification testbed --------------------------------------------------

def make_classification(n_train: int, n_test: int, n_features: int, n_classes: int,
                        seed: int, separation: float = 2.0, noise: float = 1.0):
    """Gaussian class clusters; the test set is a fresh draw from the same mixture."""
    rng = np.random.default_rng(seed)
    means = separation * rng.standard_normal((n_classes, n_features)) / np.sqrt(n_features)

    def draw(count):
        labels = np.arange(count) % n_classes
        rng.shuffle(labels)
        feats = means[labels] + noise * rng.standard_normal((count, n_features))
        return Dataset(feats, labels, n_classes)

    return draw(n_train), draw(n_test)


# -- IDX ---------------------------------------------------------------------

def _read_idx(path, magic: int, ndim: int):
    raw = Path(path).read_bytes()
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated header")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise FormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise FormatError(f"{path}: expected {size} payload bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx_subset(images_path, labels_path, max_samples: int) -> Dataset:
    """First ``max_samples`` images (flattened, scaled to [0, 1]) with their labels."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if len(images) != len(labels):
        raise FormatError("image and label counts differ")
    count = min(max_samples, len(labels))
    feats = images[:count].reshape(count, -1).astype(np.float64) / 255.0
    lab = labels[:count].astype(np.int64)
    return Dataset(feats, lab, int(labels.max()) + 1 if len(labels) else 1)


def write_idx(images_path, labels_path, images, labels) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


# -- partitioning ------------------------------------------------------------

SCHEMES = ("iid", "dirichlet", "cluster_iid_shards", "cluster_noniid_shards")


@dataclass(frozen=True)
class PartitionSpec:
    scheme: str = "iid"
    alpha: float = 0.5
    shards_per_device: int = 2
    shards_per_cluster: int = 5

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown partition scheme {self.scheme!r}")
        if self.scheme == "dirichlet" and self.alpha <= 0:
            raise ConfigError("Dirichlet concentration must be positive")
        if self.shards_per_device < 1 or self.shards_per_cluster < 1:
            raise ConfigError("shard counts must be positive")


# 16 shards per cluster of 8 devices, 40 shards over 8 clusters
CLUSTER_IID_PRESET = PartitionSpec("cluster_iid_shards", shards_per_device=2)
CLUSTER_NONIID_PRESET = PartitionSpec("cluster_noniid_shards", shards_per_device=2, shards_per_cluster=5)
DIRICHLET_PRESET = PartitionSpec("dirichlet", alpha=0.5)


def _largest_remainder(shares: np.ndarray, total: int) -> np.ndarray:
    exact = shares / shares.sum() * total
    counts = np.floor(exact).astype(np.int64)
    short = total - counts.sum()
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def _dirichlet(labels, n, alpha, rng, max_tries=100):
    classes = np.unique(labels)
    for _ in range(max_tries):
        props = rng.dirichlet(np.full(len(classes), alpha), size=n)
        buckets = [[] for _ in range(n)]
        for ci, c in enumerate(classes):
            idx = rng.permutation(np.flatnonzero(labels == c))
            counts = _largest_remainder(props[:, ci], len(idx))
            for k, chunk in enumerate(np.split(idx, np.cumsum(counts)[:-1])):
                buckets[k].extend(chunk.tolist())
        if all(buckets):
            return buckets
    raise ConfigError(f"Dirichlet partition left a device empty after {max_tries} draws")


def _deal_shards(indices, labels, n_shards, rng):
    """Sort by label, cut into ``n_shards`` contiguous shards, return them in random order."""
    indices = rng.permutation(np.asarray(indices))
    indices = indices[np.argsort(labels[indices], kind="stable")]
    if len(indices) < n_shards:
        raise ConfigError(f"{len(indices)} samples cannot fill {n_shards} shards")
    shards = np.array_split(indices, n_shards)
    return [shards[j] for j in rng.permutation(n_shards)]


def _shards_to_devices(indices, labels, devices, per_device, rng, buckets):
    shards = _deal_shards(indices, labels, len(devices) * per_device, rng)
    for j, k in enumerate(devices):
        buckets[k] = np.concatenate(shards[j * per_device:(j + 1) * per_device]).tolist()


def partition(dataset: Dataset, layout: ClusterLayout, spec: PartitionSpec, seed: int) -> list[DeviceDataset]:
    """Split ``dataset`` across the layout's devices; deterministic in ``seed``.

    Every sample lands on exactly one device.  The shard schemes first fix a
    cluster-level split and then deal label-sorted shards to the devices of
    each cluster.
    """
    rng = np.random.default_rng(seed)
    n, labels = layout.n, dataset.labels
    if len(dataset) < n:
        raise ConfigError(f"{len(dataset)} samples cannot cover {n} devices")
    buckets: list[list[int]] = [[] for _ in range(n)]

    if spec.scheme == "iid":
        for k, chunk in enumerate(np.array_split(rng.permutation(len(dataset)), n)):
            buckets[k] = chunk.tolist()
    elif spec.scheme == "dirichlet":
        buckets = _dirichlet(labels, n, spec.alpha, rng)
    elif spec.scheme == "cluster_iid_shards":
        per_cluster: list[list[int]] = [[] for _ in range(layout.m)]
        for c in np.unique(labels):
            idx = rng.permutation(np.flatnonzero(labels == c))
            for i, chunk in enumerate(np.array_split(idx, layout.m)):
                per_cluster[i].extend(chunk.tolist())
        for i, devices in enumerate(layout.members):
            _shards_to_devices(per_cluster[i], labels, devices, spec.shards_per_device, rng, buckets)
    else:
        shards = _deal_shards(np.arange(len(dataset)), labels, layout.m * spec.shards_per_cluster, rng)
        for i, devices in enumerate(layout.members):
            own = np.concatenate(shards[i * spec.shards_per_cluster:(i + 1) * spec.shards_per_cluster])
            _shards_to_devices(own, labels, devices, spec.shards_per_device, rng, buckets)

    if any(len(b) == 0 for b in buckets):
        raise ConfigError("partition left a device without samples")
    return [dataset.subset(np.sort(np.asarray(b, dtype=np.int64)), device_id=k)
            for k, b in enumerate(buckets)]


def split_train_test(devices: list[DeviceDataset], train_frac: float = 0.9, seed: int = 0):
    """Per-device train/test split; the test parts are pooled into one common test set."""
    rng = np.random.default_rng(seed)
    train, test_x, test_y = [], [], []
    n_classes = max(d.n_classes for d in devices)
    for d in devices:
        perm = rng.permutation(len(d))
        cut = max(1, int(round(train_frac * len(d))))
        tr, te = perm[:cut], perm[cut:]
        src = d.source_indices
        train.append(DeviceDataset(d.features[tr], d.labels[tr], d.device_id, d.n_classes,
                                   None if src is None else src[tr]))
        test_x.append(d.features[te])
        test_y.append(d.labels[te])
    return train, Dataset(np.concatenate(test_x), np.concatenate(test_y), n_classes)


def pooled(devices: list[DeviceDataset]) -> Dataset:
    return Dataset(np.concatenate([d.features for d in devices]),
                   np.concatenate([d.labels for d in devices]),
                   max(d.n_classes for d in devices))


def manifest(devices: list[DeviceDataset]) -> dict[str, list[int]]:
    return {str(d.device_id): [int(i) for i in d.source_indices] for d in devices}


def save_manifest(devices: list[DeviceDataset], path) -> None:
    Path(path).write_text(json.dumps(manifest(devices), indent=1))


def load_manifest(path, dataset: Dataset) -> list[DeviceDataset]:
    data = json.loads(Path(path).read_text())
    return [dataset.subset(data[key], device_id=int(key)) for key in sorted(data, key=int)]
