"""Multi-label video instances, their text file formats, and a synthetic generator.

File formats (UTF-8, tab-separated):

* features: ``id<TAB>frame_count<TAB>v1 v2 ...`` with frames flattened row-major
* labels:   ``id<TAB>i,j,k`` (label indices, possibly empty)
* vocab:    one label name per line
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .consistency import ConsistencyMatrix
from .kgraph import normalize_name


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class VideoInstance:
    id: str
    frames: np.ndarray
    labels: frozenset[int] = frozenset()

    def __post_init__(self):
        frames = np.atleast_2d(np.asarray(self.frames, dtype=np.float64))
        if frames.ndim != 2:
            raise DatasetError(f"{self.id}: frames must be a 2-D array")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "labels", frozenset(int(i) for i in self.labels))

    @property
    def feature_dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True, eq=False)
class Dataset:
    vocabulary: tuple[str, ...]
    feature_dim: int
    instances: tuple[VideoInstance, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "vocabulary", tuple(self.vocabulary))
        object.__setattr__(self, "instances", tuple(self.instances))
        seen: set[str] = set()
        for name in self.vocabulary:
            norm = normalize_name(name)
            if norm in seen:
                raise DatasetError(f"duplicate vocabulary entry {name!r}")
            seen.add(norm)
        L = len(self.vocabulary)
        ids: set[str] = set()
        for inst in self.instances:
            if inst.id in ids:
                raise DatasetError(f"duplicate instance id {inst.id!r}")
            ids.add(inst.id)
            if inst.frames.shape[0] == 0:
                raise DatasetError(f"{inst.id}: no frames")
            if inst.feature_dim != self.feature_dim:
                raise DatasetError(
                    f"{inst.id}: feature dimension {inst.feature_dim} != {self.feature_dim}"
                )
            bad = [i for i in inst.labels if not 0 <= i < L]
            if bad:
                raise DatasetError(f"{inst.id}: label index {bad[0]} outside [0, {L})")

    @property
    def num_labels(self) -> int:
        return len(self.vocabulary)

    def __len__(self) -> int:
        return len(self.instances)

    def label_matrix(self) -> np.ndarray:
        """N x L 0/1 indicator matrix."""
        Y = np.zeros((len(self.instances), self.num_labels))
        for n, inst in enumerate(self.instances):
            Y[n, list(inst.labels)] = 1.0
        return Y

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(self.vocabulary, self.feature_dim, tuple(self.instances[i] for i in indices))


def load_dataset(features_path, labels_path, vocab_path) -> Dataset:
    vocab = [line.rstrip("\r\n") for line in Path(vocab_path).read_text(encoding="utf-8").splitlines() if line.strip()]
    L = len(vocab)

    labels: dict[str, frozenset[int]] = {}
    with open(labels_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            ident, _, rest = line.partition("\t")
            if ident in labels:
                raise DatasetError(f"{labels_path}:{lineno}: duplicate id {ident!r}")
            try:
                idx = frozenset(int(t) for t in rest.split(",") if t.strip())
            except ValueError:
                raise DatasetError(f"{labels_path}:{lineno}: non-integer label index") from None
            bad = [i for i in idx if not 0 <= i < L]
            if bad:
                raise DatasetError(f"instance {ident!r}: unknown label index {bad[0]} (vocabulary has {L})")
            labels[ident] = idx

    instances: list[VideoInstance] = []
    dim: int | None = None
    seen: set[str] = set()
    with open(features_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DatasetError(f"{features_path}:{lineno}: expected id, frame count, values")
            ident, count, values = parts
            if ident in seen:
                raise DatasetError(f"{features_path}:{lineno}: duplicate id {ident!r}")
            seen.add(ident)
            n_frames = int(count)
            flat = np.array(values.split(), dtype=np.float32).astype(np.float64)
            if n_frames < 1 or flat.size % n_frames:
                raise DatasetError(f"instance {ident!r}: {flat.size} values do not split into {n_frames} frames")
            d = flat.size // n_frames
            if dim is None:
                dim = d
            elif d != dim:
                raise DatasetError(f"instance {ident!r}: feature dimension {d} != {dim}")
            if ident not in labels:
                raise DatasetError(f"instance {ident!r} has no labels record")
            instances.append(VideoInstance(ident, flat.reshape(n_frames, d), labels[ident]))
    extra = set(labels) - seen
    if extra:
        raise DatasetError(f"labels file has ids without features, e.g. {sorted(extra)[0]!r}")
    return Dataset(tuple(vocab), dim or 0, tuple(instances))


def save_dataset(dataset: Dataset, features_path, labels_path, vocab_path) -> None:
    """Write the three text files; features are stored at float32 precision."""
    Path(vocab_path).write_text("".join(f"{v}\n" for v in dataset.vocabulary), encoding="utf-8")
    with open(features_path, "w", encoding="utf-8") as feat, open(labels_path, "w", encoding="utf-8") as lab:
        for inst in dataset.instances:
            # shortest text that round-trips a float32
            vals = " ".join(map(str, inst.frames.astype(np.float32).ravel()))
            feat.write(f"{inst.id}\t{inst.frames.shape[0]}\t{vals}\n")
            lab.write(f"{inst.id}\t{','.join(str(i) for i in sorted(inst.labels))}\n")


def split(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Random train/test split with ``round(fraction * N)`` training instances."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie strictly between 0 and 1")
    n = len(dataset)
    n_train = int(round(fraction * n))
    if n_train == 0 or n_train == n:
        raise DatasetError(f"fraction {fraction} of {n} instances leaves one side empty")
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.subset(sorted(perm[:n_train])), dataset.subset(sorted(perm[n_train:]))


@dataclass(frozen=True)
class SynthConfig:
    num_labels: int = 50
    feature_dim: int = 32
    num_instances: int = 4000
    avg_labels_per_instance: float = 3.4
    correlation_graph: ConsistencyMatrix | None = None
    feature_noise: float = 1.0
    weak_fraction: float = 0.3
    weak_signal: float = 0.05
    frames_per_instance: int = 4
    seed: int = 0

    def __post_init__(self):
        for name in ("num_labels", "feature_dim", "num_instances", "frames_per_instance"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.avg_labels_per_instance < 1:
            raise ValueError("avg_labels_per_instance must be >= 1")
        if self.feature_noise < 0:
            raise ValueError("feature_noise must be >= 0")
        if not 0.0 <= self.weak_fraction < 1.0:
            raise ValueError("weak_fraction must lie in [0, 1)")
        if self.correlation_graph is not None and self.correlation_graph.size != self.num_labels:
            raise ValueError("correlation_graph size must equal num_labels")


def planted_graph(num_labels: int, cluster_size: int = 5, seed: int = 0,
                  within: tuple[float, float] = (0.5, 1.0), cross_edges: int | None = None,
                  cross: tuple[float, float] = (0.05, 0.2)) -> ConsistencyMatrix:
    """Clustered co-occurrence graph: strong ties inside consecutive blocks of
    ``cluster_size`` labels plus a few weak random ties across blocks."""
    rng = np.random.default_rng(seed)
    W = np.zeros((num_labels, num_labels))
    for start in range(0, num_labels, cluster_size):
        block = range(start, min(start + cluster_size, num_labels))
        for i in block:
            for j in block:
                if i < j:
                    W[i, j] = rng.uniform(*within)
    if cross_edges is None:
        cross_edges = num_labels // 2
    for _ in range(cross_edges):
        i, j = sorted(rng.choice(num_labels, size=2, replace=False))
        if W[i, j] == 0:
            W[i, j] = rng.uniform(*cross)
    return ConsistencyMatrix.from_dense(W + W.T)


def _sample_labels(rng: np.random.Generator, W: np.ndarray, extra_mean: float) -> list[int]:
    L = W.shape[0]
    chosen = [int(rng.integers(L))]
    n_extra = min(int(rng.poisson(extra_mean)), L - 1)
    in_set = np.zeros(L, dtype=bool)
    in_set[chosen[0]] = True
    affinity = W[chosen[0]].copy()
    for _ in range(n_extra):
        w = np.where(in_set, 0.0, affinity)
        total = w.sum()
        if total > 0:
            j = int(rng.choice(L, p=w / total))
        else:
            j = int(rng.choice(np.flatnonzero(~in_set)))
        chosen.append(j)
        in_set[j] = True
        affinity += W[j]
    return sorted(chosen)


def generate_synthetic(config: SynthConfig) -> tuple[Dataset, ConsistencyMatrix]:
    """Draw a dataset whose label co-occurrence follows the planted graph.

    Each instance starts from a uniformly drawn label and grows by picking
    further labels with probability proportional to their total tie strength
    to the labels already chosen. Each label owns a Gaussian prototype; a
    ``weak_fraction`` of labels get their prototype shrunk by ``weak_signal``
    so that features barely reveal them. Frames are the sum of the instance's
    prototypes plus isotropic noise.

    Returns the dataset and the planted graph (the knowledge source).
    """
    L, F = config.num_labels, config.feature_dim
    rng = np.random.default_rng(config.seed)
    S = config.correlation_graph
    if S is None:
        S = planted_graph(L, seed=int(rng.integers(2**31)))
    W = S.to_dense()

    prototypes = rng.normal(size=(L, F))
    n_weak = int(round(config.weak_fraction * L))
    weak = rng.choice(L, size=n_weak, replace=False) if n_weak else np.zeros(0, dtype=np.int64)
    prototypes[weak] *= config.weak_signal

    extra_mean = config.avg_labels_per_instance - 1.0
    width = len(str(config.num_instances - 1))
    instances = []
    for n in range(config.num_instances):
        labels = _sample_labels(rng, W, extra_mean)
        signal = prototypes[labels].sum(axis=0)
        noise = rng.normal(scale=config.feature_noise, size=(config.frames_per_instance, F)) if config.feature_noise else 0.0
        frames = (signal + noise).astype(np.float32).astype(np.float64)
        instances.append(VideoInstance(f"v{n:0{width}d}", np.broadcast_to(frames, (config.frames_per_instance, F)), labels))
    vocab = tuple(f"label_{i:0{len(str(L - 1))}d}" for i in range(L))
    return Dataset(vocab, F, tuple(instances)), S


def weak_labels(config: SynthConfig) -> np.ndarray:
    """Indices of the weak labels ``generate_synthetic`` picks for ``config``."""
    rng = np.random.default_rng(config.seed)
    if config.correlation_graph is None:
        rng.integers(2**31)
    rng.normal(size=(config.num_labels, config.feature_dim))
    n_weak = int(round(config.weak_fraction * config.num_labels))
    return np.sort(rng.choice(config.num_labels, size=n_weak, replace=False)) if n_weak else np.zeros(0, dtype=np.int64)
