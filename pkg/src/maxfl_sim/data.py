"""Synthetic pools, non-IID partitioning, label flipping and IDX ingestion."""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ConfigError, RngStream
from .models import Batch


class IdxFormatError(ValueError):
    """Malformed IDX file; the message names the file and byte offset."""


@dataclass(frozen=True)
class LabeledPool:
    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64, or float64 for real targets
    n_labels: int
    ids: np.ndarray = None  # global sample ids, used for disjointness checks

    def __post_init__(self):
        if self.ids is None:
            object.__setattr__(self, "ids", np.arange(len(self.labels)))

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class ClientDataset:
    train: Batch
    test: Batch
    train_ids: np.ndarray
    test_ids: np.ndarray
    n_labels: int = 0
    flipped: bool = False
    topped_up: int = 0  # samples added by the minimum-size rule

    @property
    def n_train(self) -> int:
        return self.train.size

    @property
    def n_test(self) -> int:
        return self.test.size

    @property
    def label_support(self) -> set[int]:
        return set(np.unique(np.concatenate([self.train.targets, self.test.targets])).tolist())


class Scheme(str, enum.Enum):
    CLUSTER_LABELS = "cluster_labels"
    DIRICHLET = "dirichlet"
    MEAN_ESTIMATION = "mean_estimation"


@dataclass(frozen=True)
class PartitionSpec:
    scheme: Scheme
    n_clients: int
    clusters: int = 5
    labels_per_cluster: int = 2
    alpha: float = 0.5
    theta: tuple[float, ...] = ()
    nu2: float = 1.0
    n_per_client: int = 100
    flip_fraction: float = 0.0
    split_ratio: float = 0.6
    min_samples: int = 50

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))
        if self.n_clients < 1:
            raise ConfigError("n_clients must be >= 1")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if not 0.0 <= self.flip_fraction <= 1.0:
            raise ConfigError(f"flip_fraction must lie in [0, 1], got {self.flip_fraction}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError(f"split_ratio must lie in (0, 1), got {self.split_ratio}")
        if self.scheme is Scheme.CLUSTER_LABELS and (self.clusters < 1 or self.labels_per_cluster < 1):
            raise ConfigError("clusters and labels_per_cluster must be >= 1")


def make_synthetic_classification(n_samples: int, n_features: int, n_labels: int,
                                  cluster_sep: float, stream: RngStream,
                                  noise: float = 1.0, group_size: int = 1,
                                  group_sep: float = 0.0) -> LabeledPool:
    """Gaussian blobs, one mean per label, pairwise mean distance ``cluster_sep``.

    With ``n_features >= n_labels`` the means sit on scaled coordinate axes, so
    every pair is exactly ``cluster_sep`` apart; otherwise random unit
    directions are used and the separation is only approximate.

    ``group_size > 1`` groups consecutive labels (0..g-1, g..2g-1, ...) and
    adds a per-group center, centers pairwise ``group_sep`` apart on their own
    axes. Labels in different groups are then ``sqrt(cluster_sep^2 +
    group_sep^2)`` apart, labels in one group still ``cluster_sep``.
    """
    if min(n_samples, n_features, n_labels, group_size) < 1:
        raise ConfigError("n_samples, n_features, n_labels and group_size must be >= 1")
    if group_size > 1 and n_labels % group_size:
        raise ConfigError(f"n_labels={n_labels} is not a multiple of group_size={group_size}")
    rng = stream.generator()
    scale = cluster_sep / math.sqrt(2.0)
    n_groups = n_labels // group_size if group_size > 1 else 0
    if n_features >= n_labels + n_groups:
        means = np.zeros((n_labels, n_features))
        means[np.arange(n_labels), np.arange(n_labels)] = scale
    elif group_size > 1:
        raise ConfigError(f"grouped blobs need n_features >= {n_labels + n_groups}")
    else:
        dirs = rng.standard_normal((n_labels, n_features))
        means = scale * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    if n_groups:
        groups = np.arange(n_labels) // group_size
        means[np.arange(n_labels), n_labels + groups] = group_sep / math.sqrt(2.0)
    counts = np.full(n_labels, n_samples // n_labels)
    counts[: n_samples % n_labels] += 1
    labels = np.repeat(np.arange(n_labels), counts)
    labels = labels[rng.permutation(n_samples)]
    features = means[labels] + noise * rng.standard_normal((n_samples, n_features))
    return LabeledPool(features, labels.astype(np.int64), n_labels)


def _split(pool: LabeledPool, idx: np.ndarray, split_ratio: float, stream: RngStream) -> ClientDataset:
    idx = np.sort(idx)
    perm = stream.generator().permutation(len(idx))
    idx = idx[perm]
    n_train = min(max(1, int(round(split_ratio * len(idx)))), len(idx) - 1) if len(idx) > 1 else 1
    tr, te = idx[:n_train], idx[n_train:]
    if len(te) == 0:
        raise ConfigError("client has too few samples for a train/test split")
    return ClientDataset(
        train=Batch(pool.features[tr], pool.labels[tr]),
        test=Batch(pool.features[te], pool.labels[te]),
        train_ids=pool.ids[tr],
        test_ids=pool.ids[te],
        n_labels=pool.n_labels,
    )


def largest_remainder(total: int, proportions: np.ndarray) -> np.ndarray:
    raw = total * np.asarray(proportions, dtype=np.float64)
    base = np.floor(raw).astype(np.int64)
    short = total - int(base.sum())
    if short > 0:
        order = np.argsort(-(raw - base), kind="stable")
        base[order[:short]] += 1
    return base


def partition(pool: LabeledPool, spec: PartitionSpec, stream: RngStream) -> list[ClientDataset]:
    """Split a labeled pool into ``spec.n_clients`` disjoint client datasets.

    ``CLUSTER_LABELS``: client k joins cluster ``k mod clusters`` and the
    cluster's samples are dealt evenly to its members.
    ``DIRICHLET``: each client targets ``len(pool) // M`` samples with label
    quotas from Dir(alpha) (largest-remainder rounding); quotas that hit an
    exhausted label are topped up uniformly from whatever is left.
    """
    M = spec.n_clients
    if len(pool) < spec.min_samples * M:
        raise ConfigError(
            f"pool of {len(pool)} samples cannot give {M} clients {spec.min_samples} samples each")
    rng = stream.child(purpose="partition").generator()
    client_idx: list[np.ndarray] = []
    topped = [0] * M

    if spec.scheme is Scheme.CLUSTER_LABELS:
        needed = spec.clusters * spec.labels_per_cluster
        if needed > pool.n_labels:
            raise ConfigError(f"{spec.clusters} clusters x {spec.labels_per_cluster} labels exceed "
                              f"the {pool.n_labels}-label universe")
        members = [list(range(c, M, spec.clusters)) for c in range(spec.clusters)]
        client_idx = [None] * M
        for c, ks in enumerate(members):
            labels = np.arange(c * spec.labels_per_cluster, (c + 1) * spec.labels_per_cluster)
            idx = np.flatnonzero(np.isin(pool.labels, labels))
            idx = idx[rng.permutation(len(idx))]
            for k, part in zip(ks, np.array_split(idx, len(ks)) if ks else []):
                client_idx[k] = part
        for k, part in enumerate(client_idx):
            if len(part) < spec.min_samples:
                raise ConfigError(f"client {k} receives {len(part)} < min_samples={spec.min_samples}")
    elif spec.scheme is Scheme.DIRICHLET:
        target = len(pool) // M
        by_label = []
        for y in range(pool.n_labels):
            idx = np.flatnonzero(pool.labels == y)
            by_label.append(list(idx[rng.permutation(len(idx))]))
        cursor = [0] * pool.n_labels
        for k in range(M):
            props = rng.dirichlet(np.full(pool.n_labels, spec.alpha))
            quota = largest_remainder(target, props)
            taken = []
            for y in range(pool.n_labels):
                avail = len(by_label[y]) - cursor[y]
                q = int(min(quota[y], avail))
                taken.extend(by_label[y][cursor[y]:cursor[y] + q])
                cursor[y] += q
            client_idx.append(np.array(taken, dtype=np.int64))
        used = np.zeros(len(pool), dtype=bool)
        for part in client_idx:
            used[part] = True
        leftover = np.flatnonzero(~used)
        leftover = leftover[rng.permutation(len(leftover))]
        pos = 0
        for k in range(M):
            deficit = target - len(client_idx[k])
            if deficit > 0:
                client_idx[k] = np.concatenate([client_idx[k], leftover[pos:pos + deficit]])
                pos += deficit
                topped[k] = deficit
        # the remainder of len(pool) % M goes round-robin so nothing is dropped
        for j, extra in enumerate(leftover[pos:]):
            client_idx[j % M] = np.append(client_idx[j % M], extra)
    else:
        raise ConfigError("mean-estimation data is generated by make_mean_estimation, not partition")

    out = []
    for k, idx in enumerate(client_idx):
        ds = _split(pool, idx, spec.split_ratio, stream.child(client=k, purpose="split"))
        ds.topped_up = topped[k]
        out.append(ds)
    return out


def flip_labels(datasets: list[ClientDataset], flip_fraction: float, stream: RngStream) -> list[ClientDataset]:
    """Relabel ``ceil(fraction * M)`` random clients by ``y -> (y + 1) mod C``."""
    if not 0.0 <= flip_fraction <= 1.0:
        raise ConfigError(f"flip_fraction must lie in [0, 1], got {flip_fraction}")
    M = len(datasets)
    # round first so 0.3 * 100 = 30.000000000000004 does not become 31
    n_flip = math.ceil(round(flip_fraction * M, 9))
    chosen = set(stream.child(purpose="flip").generator().choice(M, size=n_flip, replace=False).tolist())
    out = []
    for k, ds in enumerate(datasets):
        if k not in chosen:
            out.append(ds)
            continue
        C = ds.n_labels
        out.append(ClientDataset(
            train=Batch(ds.train.inputs, (ds.train.targets + 1) % C),
            test=Batch(ds.test.inputs, (ds.test.targets + 1) % C),
            train_ids=ds.train_ids, test_ids=ds.test_ids, n_labels=C,
            flipped=not ds.flipped, topped_up=ds.topped_up,
        ))
    return out


@dataclass
class MeanEstProblem:
    """Two- or three-client scalar mean estimation instance."""

    theta: np.ndarray
    theta_hat: np.ndarray
    gamma2: float
    gamma_G2: float = field(init=False)
    gamma_hat_G: float = field(init=False)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.theta_hat = np.asarray(self.theta_hat, dtype=np.float64)
        if not self.gamma2 > 0:
            raise ConfigError("gamma2 must be > 0")
        self.gamma_G2 = ((self.theta.max() - self.theta.min()) / 2.0) ** 2
        self.gamma_hat_G = (self.theta_hat.max() - self.theta_hat.min()) / 2.0

    @property
    def K(self) -> int:
        return len(self.theta_hat)

    @classmethod
    def from_estimates(cls, theta_hat, gamma2: float = 1.0, theta=None) -> "MeanEstProblem":
        theta_hat = np.asarray(theta_hat, dtype=np.float64)
        return cls(theta_hat if theta is None else theta, theta_hat, gamma2)


def make_mean_estimation(theta, nu2: float, n_per_client: int, stream: RngStream,
                         n_test: int | None = None) -> tuple[list[ClientDataset], MeanEstProblem]:
    """Client k holds ``n_per_client`` draws of N(theta_k, nu2) as scalar targets.

    The test split is a fresh, equally sized draw from the same distribution.
    """
    if not nu2 > 0 or n_per_client < 1:
        raise ConfigError("need nu2 > 0 and n_per_client >= 1")
    theta = np.asarray(theta, dtype=np.float64)
    n_test = n_per_client if n_test is None else n_test
    sd = math.sqrt(nu2)
    datasets = []
    theta_hat = np.empty(len(theta))
    next_id = 0
    for k, th in enumerate(theta):
        rng = stream.child(client=k, purpose="mean_estimation").generator()
        tr = th + sd * rng.standard_normal(n_per_client)
        te = th + sd * rng.standard_normal(n_test)
        theta_hat[k] = tr.mean()
        ids_tr = np.arange(next_id, next_id + n_per_client)
        ids_te = np.arange(next_id + n_per_client, next_id + n_per_client + n_test)
        next_id += n_per_client + n_test
        datasets.append(ClientDataset(
            train=Batch(np.zeros((n_per_client, 0)), tr),
            test=Batch(np.zeros((n_test, 0)), te),
            train_ids=ids_tr, test_ids=ids_te,
        ))
    return datasets, MeanEstProblem(theta, theta_hat, nu2 / n_per_client)


IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _read_idx(path: Path, magic: int, ndim: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    header = 4 + 4 * ndim
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated at offset {len(raw)} while reading magic number")
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise IdxFormatError(f"{path}: bad magic 0x{got:08x} at offset 0, expected 0x{magic:08x}")
    if len(raw) < header:
        raise IdxFormatError(f"{path}: truncated at offset {len(raw)} while reading dimensions")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    expected = header + int(np.prod(dims))
    if len(raw) < expected:
        raise IdxFormatError(f"{path}: truncated at offset {len(raw)}, expected {expected} bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=int(np.prod(dims)), offset=header).reshape(dims)


def load_idx(images_path, labels_path) -> LabeledPool:
    """Read an MNIST-style IDX image/label pair; pixels are scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if len(images) != len(labels):
        raise IdxFormatError(f"{labels_path}: {len(labels)} labels at offset 4 but "
                             f"{images_path} holds {len(images)} images")
    features = images.reshape(len(images), -1).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    return LabeledPool(features, y, int(y.max()) + 1 if len(y) else 0)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX (3-d -> images magic, 1-d -> labels magic)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = {3: IDX_IMAGES_MAGIC, 1: IDX_LABELS_MAGIC}[array.ndim]
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(">" + "I" * array.ndim, *array.shape))
        fh.write(array.tobytes())
