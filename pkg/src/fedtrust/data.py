"""Synthetic classification data, client partitioning and hashed class counts."""

from __future__ import annotations

import csv
import hashlib
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Tuple, Union

import numpy as np

from .errors import InputError

ClassDistribution = Dict[str, int]


@dataclass
class DatasetSpec:
    num_classes: int = 8
    feature_dim: int = 64
    # a single count, or an inclusive (low, high) range drawn per client
    samples_per_client: Union[int, Tuple[int, int]] = 200
    partition: str = "iid"
    alpha: float = 1.0
    protected_attribute_rate: float = 0.0
    test_fraction: float = 0.2
    class_separation: float = 2.0
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 2:
            raise InputError("num_classes must be >= 2")
        if self.feature_dim < 1:
            raise InputError("feature_dim must be >= 1")
        lo, hi = self.sample_range
        if lo < 2 or hi < lo:
            raise InputError("samples_per_client must allow at least one train and one test sample")
        if self.partition not in ("iid", "dirichlet"):
            raise InputError(f"unknown partition {self.partition!r}")
        if self.partition == "dirichlet" and not self.alpha > 0:
            raise InputError("dirichlet alpha must be > 0")
        if not 0.0 <= self.protected_attribute_rate <= 1.0:
            raise InputError("protected_attribute_rate must lie in [0, 1]")
        if not 0.0 < self.test_fraction < 1.0:
            raise InputError("test_fraction must lie in (0, 1)")

    @property
    def sample_range(self) -> Tuple[int, int]:
        s = self.samples_per_client
        if isinstance(s, (list, tuple)):
            return int(s[0]), int(s[1])
        return int(s), int(s)

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.samples_per_client, (list, tuple)):
            d["samples_per_client"] = list(self.samples_per_client)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        d = dict(d)
        s = d.get("samples_per_client")
        if isinstance(s, list):
            d["samples_per_client"] = tuple(s)
        try:
            spec = cls(**d)
        except TypeError as exc:
            raise InputError(f"bad dataset section: {exc}") from exc
        spec.validate()
        return spec


@dataclass
class Split:
    X: np.ndarray
    y: np.ndarray
    protected: np.ndarray

    def __len__(self) -> int:
        return int(self.y.size)


@dataclass
class ClientDataset:
    client_index: int
    train: Split
    test: Split
    client_id: str = ""


def class_means(spec: DatasetSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 0x6D65616E])
    mu = rng.normal(size=(spec.num_classes, spec.feature_dim))
    mu /= np.linalg.norm(mu, axis=1, keepdims=True)
    return spec.class_separation * mu


def _split(X, y, prot, test_fraction, rng) -> Tuple[Split, Split]:
    n = y.size
    n_test = min(max(1, int(round(test_fraction * n))), n - 1)
    order = rng.permutation(n)
    te, tr = order[:n_test], order[n_test:]
    return Split(X[tr], y[tr], prot[tr]), Split(X[te], y[te], prot[te])


def generate(spec: DatasetSpec, num_clients: int) -> List[ClientDataset]:
    """Class-conditional Gaussian data split over ``num_clients`` clients."""
    spec.validate()
    if num_clients < 1:
        raise InputError("num_clients must be >= 1")
    means = class_means(spec)
    rng = np.random.default_rng([spec.seed, 0x64617461])
    lo, hi = spec.sample_range
    k = spec.num_classes
    clients = []
    for i in range(num_clients):
        n = int(rng.integers(lo, hi + 1))
        if spec.partition == "iid":
            props = np.full(k, 1.0 / k)
        else:
            props = rng.dirichlet(np.full(k, spec.alpha))
        y = rng.choice(k, size=n, p=props)
        X = means[y] + rng.normal(size=(n, spec.feature_dim))
        prot = rng.random(n) < spec.protected_attribute_rate
        train, test = _split(X, y, prot, spec.test_fraction, rng)
        clients.append(ClientDataset(i, train, test))
    return clients


def load_csv(path: Union[str, Path], spec: DatasetSpec, num_clients: int) -> List[ClientDataset]:
    """Read a labelled table and partition it like :func:`generate` would.

    Expected layout: a header row, a ``label`` column holding integer class ids,
    an optional ``protected`` column of 0/1 flags, every other column numeric.
    """
    if num_clients < 1:
        raise InputError("num_clients must be >= 1")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "label" not in reader.fieldnames:
            raise InputError("CSV needs a header with a 'label' column")
        feat_cols = [c for c in reader.fieldnames if c not in ("label", "protected")]
        if not feat_cols:
            raise InputError("CSV has no feature columns")
        rows = list(reader)
    try:
        X = np.array([[float(r[c]) for c in feat_cols] for r in rows], dtype=np.float64)
        y = np.array([int(r["label"]) for r in rows], dtype=np.int64)
        prot = np.array([r.get("protected", "0") in ("1", "1.0", "true", "True") for r in rows])
    except (TypeError, ValueError) as exc:
        raise InputError(f"non-numeric CSV value: {exc}") from exc
    if y.size < 2 * num_clients:
        raise InputError("not enough rows for the requested number of clients")
    if y.min() < 0:
        raise InputError("labels must be non-negative class ids")

    rng = np.random.default_rng([spec.seed, 0x637376])
    k = int(y.max()) + 1
    if spec.partition == "iid":
        parts = np.array_split(rng.permutation(y.size), num_clients)
    else:
        buckets: List[List[int]] = [[] for _ in range(num_clients)]
        for c in range(k):
            idx = rng.permutation(np.flatnonzero(y == c))
            props = rng.dirichlet(np.full(num_clients, spec.alpha))
            cuts = (np.cumsum(props)[:-1] * idx.size).astype(int)
            for b, chunk in zip(buckets, np.split(idx, cuts)):
                b.extend(chunk.tolist())
        parts = [np.array(sorted(b), dtype=np.int64) for b in buckets]
    clients = []
    for i, part in enumerate(parts):
        if part.size < 2:
            raise InputError(f"client {i} received fewer than 2 rows; lower num_clients or raise alpha")
        train, test = _split(X[part], y[part], prot[part], spec.test_fraction, rng)
        clients.append(ClientDataset(i, train, test))
    return clients


def hash_label(label: int, salt: bytes) -> str:
    return hashlib.sha256(salt + b"label:" + str(int(label)).encode()).hexdigest()[:16]


def class_distribution(client: ClientDataset, salt: bytes) -> ClassDistribution:
    """Per-class train sample counts keyed by salted label hashes."""
    counts = Counter(int(v) for v in client.train.y)
    return {hash_label(label, salt): n for label, n in sorted(counts.items())}


def merge_distributions(dists: Iterable[ClassDistribution]) -> ClassDistribution:
    # secure aggregation would replace this plain sum
    total: Counter = Counter()
    for d in dists:
        total.update(d)
    return dict(sorted(total.items()))
