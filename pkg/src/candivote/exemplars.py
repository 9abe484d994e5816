"""Capacity-bounded exemplar memory with an online mean-proximity sampler.

The store sees each training record exactly once. Per class it keeps a
running mean of every feature ever observed (updated before any storage
decision) and at most `quota` stored exemplars, evicting whichever vector
sits farthest from the updated mean. Quotas shrink as classes accumulate;
`rebalance` trims over-quota stores at task boundaries.

The module also owns feature-space augmentation (class-conditional Gaussian
noise scaled by per-dimension sample std), per-task binary masks over the
class axis, storage accounting, and a binary snapshot format (magic
``CVES``): the embedding container layout with a u32 task index added to
each record.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Sequence

import numpy as np

from .data import EmbeddingRecord
from .errors import ConfigError, DataError, NumericError
from .numeric import RngStream, gaussian_sample

__all__ = [
    "Exemplar",
    "ClassStore",
    "ExemplarSet",
    "AugmentConfig",
    "StorageReport",
    "online_mean_update",
    "observe",
    "rebalance",
    "sample_exemplars",
    "augment",
    "masks",
    "storage_bytes",
    "save_exemplars",
    "load_exemplars",
]

SNAPSHOT_MAGIC = b"CVES"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class Exemplar:
    """One stored feature vector with its class and the task that introduced it."""

    feature: np.ndarray  # 1-D float32, treated as immutable once stored
    label: int
    task: int


@dataclass
class AugmentConfig:
    """Noise scale and on/off switch for feature-space augmentation."""

    alpha_r: float = 1.0
    enabled: bool = True

    def __post_init__(self) -> None:
        if self.alpha_r < 0:
            raise ConfigError(f"alpha_r must be non-negative, got {self.alpha_r}")


@dataclass
class ClassStore:
    """Per-class state: retained exemplars plus full-stream running statistics."""

    label: int
    task: int
    items: list[Exemplar] = field(default_factory=list)
    running_mean: np.ndarray | None = None  # float64; mean of ALL observed, not just stored
    seen_count: int = 0


@dataclass(frozen=True)
class StorageReport:
    feature_bytes: int
    metadata_bytes: int
    formula_check: bool


class ExemplarSet:
    """All class stores under one total budget of `capacity` exemplars.

    The per-class quota is capacity // (number of known classes), where the
    known count is the larger of the classes actually seen and the count most
    recently announced through `rebalance`. Between rebalances the quota can
    shrink as unseen classes arrive; already-full stores are only trimmed
    when `rebalance` runs, so the budget may be exceeded transiently inside
    a task and holds exactly at task boundaries.
    """

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ConfigError(f"capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.stores: dict[int, ClassStore] = {}
        self.announced_classes = 0
        self.dim: int | None = None
        # bumped on every mutation; lets read paths cache stacked matrices
        self.revision = 0
        self._matrix_cache: dict[tuple[int, ...], tuple[int, np.ndarray, np.ndarray]] = {}
        self._task_cache: dict[int, tuple[int, np.ndarray]] = {}

    @property
    def quota(self) -> int:
        known = max(len(self.stores), self.announced_classes)
        if known == 0:
            return self.capacity
        return self.capacity // known

    @property
    def num_classes(self) -> int:
        return len(self.stores)

    @property
    def total_items(self) -> int:
        return sum(len(s.items) for s in self.stores.values())

    def all_exemplars(self) -> list[Exemplar]:
        """Every stored exemplar, in class then insertion order."""
        out: list[Exemplar] = []
        for label in sorted(self.stores):
            out.extend(self.stores[label].items)
        return out

    def task_of_class(self) -> dict[int, int]:
        return {label: s.task for label, s in self.stores.items()}

    def class_matrix(self, labels: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """Stacked (M, D) float32 features and (M,) labels for the given classes.

        Cached per revision so repeated nearest-exemplar queries during an
        evaluation pass do not re-stack the same arrays.
        """
        key = tuple(int(x) for x in labels)
        hit = self._matrix_cache.get(key)
        if hit is not None and hit[0] == self.revision:
            return hit[1], hit[2]
        feats: list[np.ndarray] = []
        labs: list[int] = []
        for label in key:
            store = self.stores.get(label)
            if store is None:
                continue
            for ex in store.items:
                feats.append(ex.feature)
                labs.append(ex.label)
        if not feats:
            matrix = np.empty((0, self.dim or 0), dtype=np.float32)
            lab_arr = np.empty(0, dtype=np.int64)
        else:
            matrix = np.stack(feats).astype(np.float32)
            lab_arr = np.asarray(labs, dtype=np.int64)
        self._matrix_cache[key] = (self.revision, matrix, lab_arr)
        return matrix, lab_arr

    def learned_tasks(self) -> list[int]:
        """Task indices that have introduced at least one class, ascending."""
        return sorted({s.task for s in self.stores.values()})

    def task_matrix(self, task_id: int) -> np.ndarray:
        """(M, D) float64 stack of every exemplar stored for one task.

        Cached per revision; distance queries against a frozen set reuse the
        same stack across an entire evaluation pass.
        """
        hit = self._task_cache.get(task_id)
        if hit is not None and hit[0] == self.revision:
            return hit[1]
        feats = [
            ex.feature
            for label in sorted(self.stores)
            if self.stores[label].task == task_id
            for ex in self.stores[label].items
        ]
        if feats:
            matrix = np.stack(feats).astype(np.float64)
        else:
            matrix = np.empty((0, self.dim or 0), dtype=np.float64)
        self._task_cache[task_id] = (self.revision, matrix)
        return matrix

    def _mutated(self) -> None:
        self.revision += 1
        if len(self._matrix_cache) > 64:
            self._matrix_cache.clear()
        if len(self._task_cache) > 64:
            self._task_cache.clear()


def online_mean_update(
    mean: np.ndarray | None, n: int, v: np.ndarray
) -> tuple[np.ndarray, int]:
    """Fold one vector into a running mean without knowing the stream length.

    new_mean = (n / (n+1)) * mean + (1 / (n+1)) * v, accumulated in 64-bit.
    With n = 0 the prior mean is ignored and the result is v itself.
    """
    if n < 0:
        raise NumericError(f"negative count {n}")
    v64 = np.asarray(v, dtype=np.float64)
    if n == 0 or mean is None:
        return v64.copy(), 1
    mean = np.asarray(mean, dtype=np.float64)
    if mean.shape != v64.shape:
        raise NumericError(f"dimension mismatch: {mean.shape} vs {v64.shape}")
    ratio = n / (n + 1.0)
    return ratio * mean + v64 / (n + 1.0), n + 1


def _farthest_index(features: list[np.ndarray], mean: np.ndarray) -> int:
    """Index of the vector farthest from `mean`; ties resolve to the LAST index.

    Callers list stored exemplars first (insertion order) and the incoming
    candidate last, so a tie keeps the earliest-stored vector.
    """
    diffs = np.stack(features).astype(np.float64) - mean
    dists = np.sqrt(np.einsum("ij,ij->i", diffs, diffs))
    return int(np.flatnonzero(dists == dists.max())[-1])


def observe(exset: ExemplarSet, record: EmbeddingRecord, task: int) -> None:
    """Feed one training record through the online sampler.

    The class running mean absorbs the record first; the storage decision
    (append / evict-farthest / discard) then measures distances against the
    updated mean. Records beyond the quota still update the mean.
    """
    feature = np.asarray(record.feature, dtype=np.float32)
    if feature.ndim != 1:
        raise NumericError(f"feature must be 1-D, got shape {feature.shape}")
    if exset.dim is None:
        exset.dim = int(feature.shape[0])
    elif feature.shape[0] != exset.dim:
        raise NumericError(f"feature length {feature.shape[0]} != store dim {exset.dim}")

    store = exset.stores.get(record.label)
    if store is None:
        store = ClassStore(label=int(record.label), task=int(task))
        exset.stores[record.label] = store
        if exset.quota < 1:
            raise ConfigError(
                f"capacity {exset.capacity} leaves no room per class with "
                f"{max(len(exset.stores), exset.announced_classes)} classes"
            )
    store.running_mean, store.seen_count = online_mean_update(
        store.running_mean, store.seen_count, feature
    )

    q = exset.quota
    if len(store.items) < q:
        store.items.append(Exemplar(feature.copy(), int(record.label), int(task)))
    else:
        pool = [ex.feature for ex in store.items] + [feature]
        i_max = _farthest_index(pool, store.running_mean)
        if i_max < len(store.items):
            store.items[i_max] = Exemplar(feature.copy(), int(record.label), int(task))
        # else: the candidate itself is farthest; drop it
    exset._mutated()


def rebalance(exset: ExemplarSet, new_total_classes: int) -> None:
    """Re-announce the class count, shrink quotas, and trim over-quota stores.

    Trimming repeatedly drops the exemplar farthest from its class running
    mean (ties keep the earlier-stored one). Running means and seen counts
    are left untouched; they describe the full observed stream.
    """
    if new_total_classes < len(exset.stores):
        raise ConfigError(
            f"announced class count {new_total_classes} is below the "
            f"{len(exset.stores)} classes already seen"
        )
    exset.announced_classes = max(exset.announced_classes, int(new_total_classes))
    q = exset.quota
    if q < 1:
        raise ConfigError(
            f"capacity {exset.capacity} cannot hold {exset.announced_classes} classes"
        )
    for store in exset.stores.values():
        while len(store.items) > q:
            assert store.running_mean is not None
            drop = _farthest_index([ex.feature for ex in store.items], store.running_mean)
            del store.items[drop]
    exset._mutated()


def sample_exemplars(exset: ExemplarSet, count: int, rng: RngStream) -> list[Exemplar]:
    """Draw `count` exemplars uniformly with replacement over the whole set."""
    pool = exset.all_exemplars()
    if not pool:
        raise DataError("cannot sample from an empty exemplar set")
    if count < 0:
        raise ConfigError(f"sample count must be non-negative, got {count}")
    idx = rng.integers(len(pool), size=count)
    return [pool[int(i)] for i in np.atleast_1d(idx)]


def class_feature_std(exset: ExemplarSet, label: int) -> np.ndarray:
    """Per-dimension sample standard deviation over a class's stored exemplars.

    Sample (n-1 denominator) std; the zero vector when fewer than two
    exemplars are stored.
    """
    store = exset.stores.get(label)
    dim = exset.dim if exset.dim is not None else 0
    if store is None or len(store.items) < 2:
        return np.zeros(dim, dtype=np.float64)
    stacked = np.stack([ex.feature for ex in store.items]).astype(np.float64)
    return np.std(stacked, axis=0, ddof=1)


def augment(ex: Exemplar, exset: ExemplarSet, cfg: AugmentConfig, rng: RngStream) -> np.ndarray:
    """Return a noisy copy of a stored exemplar's feature vector.

    Noise is Gaussian with per-dimension scale alpha_r * std, where std is
    the sample deviation over the exemplar's own class store. Dimensions
    with zero deviation pass through exactly; the stored exemplar is never
    modified and the augmented copy is never stored.
    """
    sigma = class_feature_std(exset, ex.label)
    noise = gaussian_sample(rng, sigma * cfg.alpha_r)
    return (ex.feature.astype(np.float64) + noise).astype(np.float32)


def masks(exset: ExemplarSet, num_classes: int | None = None) -> list[np.ndarray]:
    """Binary class-membership mask per learned task, in task order.

    Mask k has a 1 at every class index introduced by task k; the masks
    partition the class axis exactly.
    """
    if not exset.stores:
        raise NumericError("no classes observed; masks undefined")
    if num_classes is None:
        num_classes = max(exset.stores) + 1
    task_ids = sorted({s.task for s in exset.stores.values()})
    out: list[np.ndarray] = []
    for t in task_ids:
        m = np.zeros(num_classes, dtype=np.int8)
        for label, store in exset.stores.items():
            if store.task == t:
                if label >= num_classes:
                    raise NumericError(f"class {label} outside mask width {num_classes}")
                m[label] = 1
        out.append(m)
    covered = np.sum(out, axis=0)
    if np.any(covered > 1):
        raise NumericError("task masks overlap")
    if int(covered.sum()) != len(exset.stores):
        raise NumericError("task masks do not cover every seen class")
    return out


def storage_bytes(exset: ExemplarSet) -> StorageReport:
    """Exact byte accounting of the retained memory.

    feature_bytes counts 4 bytes per float32 dimension per stored exemplar;
    metadata_bytes counts the 8-byte (label, task) pair each record carries
    in the snapshot format. formula_check asserts the feature payload stays
    within the 4 * D * capacity budget.
    """
    dim = exset.dim if exset.dim is not None else 0
    n = exset.total_items
    feature_bytes = 4 * dim * n
    metadata_bytes = 8 * n
    return StorageReport(
        feature_bytes=feature_bytes,
        metadata_bytes=metadata_bytes,
        formula_check=feature_bytes <= 4 * dim * exset.capacity,
    )


def _read_exact(fh: BinaryIO, n: int, offset: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise DataError(
            f"truncated snapshot: wanted {n} bytes for {what} at offset {offset}, got {len(buf)}"
        )
    return buf


def save_exemplars(path: str, exset: ExemplarSet) -> None:
    """Write the retained exemplars as a binary snapshot.

    Layout (little-endian): magic ``CVES``, version byte, u32 dim, u32 record
    count, then per record [u32 label][u32 task][dim x f32]. Only retained
    items are persisted; full-stream running statistics are not.
    """
    items = exset.all_exemplars()
    dim = exset.dim if exset.dim is not None else 0
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(bytes([SNAPSHOT_VERSION]))
        fh.write(struct.pack("<II", dim, len(items)))
        for ex in items:
            fh.write(struct.pack("<II", ex.label, ex.task))
            fh.write(ex.feature.astype("<f4").tobytes())


def load_exemplars(path: str, capacity: int | None = None) -> ExemplarSet:
    """Read a snapshot back into a fresh ExemplarSet.

    The snapshot holds only retained items, so running means and seen counts
    restart from those items. With no capacity given the set is sized to
    exactly fit what was loaded.
    """
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        magic = _read_exact(fh, 4, 0, "magic")
        if magic != SNAPSHOT_MAGIC:
            raise DataError(
                f"{path}: bad magic {magic!r} at offset 0, expected {SNAPSHOT_MAGIC!r}"
            )
        version = _read_exact(fh, 1, 4, "version")[0]
        if version != SNAPSHOT_VERSION:
            raise DataError(f"{path}: unsupported snapshot version {version} at offset 4")
        dim, count = struct.unpack("<II", _read_exact(fh, 8, 5, "header"))
        if dim == 0:
            raise DataError(f"{path}: zero dimension in header")
        row_bytes = 8 + 4 * dim
        body = fh.read()
        if len(body) != count * row_bytes:
            raise DataError(
                f"{path}: body is {len(body)} bytes at offset 13, expected {count * row_bytes}"
            )
        exset = ExemplarSet(capacity if capacity is not None else max(count, 1))
        exset.dim = dim
        for i in range(count):
            base = i * row_bytes
            label, task = struct.unpack_from("<II", body, base)
            feature = np.frombuffer(body, dtype="<f4", count=dim, offset=base + 8).copy()
            store = exset.stores.get(label)
            if store is None:
                store = ClassStore(label=int(label), task=int(task))
                exset.stores[label] = store
            elif store.task != task:
                raise DataError(
                    f"{path}: record {i} assigns class {label} to task {task}, "
                    f"earlier records said task {store.task}"
                )
            store.items.append(Exemplar(feature, int(label), int(task)))
            store.running_mean, store.seen_count = online_mean_update(
                store.running_mean, store.seen_count, feature
            )
        exset.announced_classes = len(exset.stores)
        if capacity is not None and exset.total_items > capacity:
            raise DataError(
                f"{path}: snapshot holds {exset.total_items} exemplars, over capacity {capacity}"
            )
        exset._mutated()
        return exset
