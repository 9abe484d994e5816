"""Single-head linear classifier trained online with per-task weight freezing.

One weight row per class, no biases. The head grows by whole tasks: expand
appends freshly initialized rows, training updates only rows of classes not
yet frozen, and freezing a task makes its rows bitwise constant forever.
Gradient math runs in 64-bit; stored weights stay float32.

Checkpoint format (magic ``CVWT``, little-endian): version byte, u32 class
count C, u32 feature dim D, a frozen-class bitmap of ceil(C/8) bytes (bit c
of the stream, LSB-first within each byte), then C*D float32 weights in row
order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Sequence

import numpy as np

from .data import EmbeddingRecord
from .errors import ConfigError, DataError, NumericError
from .exemplars import AugmentConfig, ExemplarSet, augment, sample_exemplars
from .numeric import RngStream

__all__ = [
    "SingleHeadClassifier",
    "TrainBatch",
    "build_pair_batch",
    "save_classifier",
    "load_classifier",
]

CHECKPOINT_MAGIC = b"CVWT"
CHECKPOINT_VERSION = 1


@dataclass
class TrainBatch:
    """A unit of SGD work: feature rows, their targets, and provenance flags."""

    features: np.ndarray  # (B, D) float32
    targets: np.ndarray  # (B,) int64
    from_exemplar: np.ndarray  # (B,) bool, True for replayed rows

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float32)
        self.targets = np.asarray(self.targets, dtype=np.int64)
        self.from_exemplar = np.asarray(self.from_exemplar, dtype=bool)
        if self.features.ndim != 2:
            raise NumericError(f"batch features must be 2-D, got {self.features.shape}")
        if not (len(self.features) == len(self.targets) == len(self.from_exemplar)):
            raise NumericError("batch arrays must have equal length")

    def __len__(self) -> int:
        return int(self.features.shape[0])


class SingleHeadClassifier:
    """Linear logits over every class seen so far, with frozen-row masking."""

    def __init__(self, dim: int, learning_rate: float = 0.1, seed: int = 0):
        if dim <= 0:
            raise ConfigError(f"dim must be positive, got {dim}")
        if learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {learning_rate}")
        self.dim = int(dim)
        self.learning_rate = float(learning_rate)
        self.weights = np.empty((0, self.dim), dtype=np.float32)
        self.frozen_classes: set[int] = set()
        self._init_rng = RngStream(seed).child(101)

    @property
    def num_classes(self) -> int:
        return int(self.weights.shape[0])

    def expand(self, new_class_count: int) -> None:
        """Append rows for a new task, initialized N(0, 1/sqrt(D)).

        Existing rows are untouched; draws come from the classifier's own
        seeded stream so identical seeds give identical heads.
        """
        if new_class_count <= 0:
            raise ConfigError(f"new_class_count must be positive, got {new_class_count}")
        scale = 1.0 / np.sqrt(self.dim)
        rows = (self._init_rng.standard_normal((new_class_count, self.dim)) * scale).astype(
            np.float32
        )
        self.weights = np.concatenate([self.weights, rows], axis=0)

    def logits(self, feature: np.ndarray) -> np.ndarray:
        """Per-class inner products <W_c, f>, computed and returned in 64-bit."""
        f = np.asarray(feature)
        if f.ndim != 1 or f.shape[0] != self.dim:
            raise NumericError(f"feature shape {f.shape} does not match dim {self.dim}")
        if self.num_classes == 0:
            raise NumericError("classifier has no classes yet")
        return self.weights.astype(np.float64) @ f.astype(np.float64)

    def logits_batch(self, features: np.ndarray) -> np.ndarray:
        f = np.asarray(features)
        if f.ndim != 2 or f.shape[1] != self.dim:
            raise NumericError(f"features shape {f.shape} does not match dim {self.dim}")
        return f.astype(np.float64) @ self.weights.astype(np.float64).T

    def train_step(self, batch: TrainBatch) -> float:
        """One SGD step on the mean cross-entropy of the batch.

        Rows of frozen classes receive a zero gradient and are not touched by
        the update (they stay bitwise identical). Returns the loss measured
        before the update.
        """
        if len(batch) == 0:
            raise NumericError("empty training batch")
        if batch.features.shape[1] != self.dim:
            raise NumericError(
                f"batch dim {batch.features.shape[1]} does not match classifier dim {self.dim}"
            )
        c = self.num_classes
        if c == 0:
            raise NumericError("classifier has no classes yet")
        if batch.targets.min() < 0 or batch.targets.max() >= c:
            raise NumericError(
                f"target outside [0, {c}): {int(batch.targets.min())}..{int(batch.targets.max())}"
            )
        feats = batch.features.astype(np.float64)
        logits = feats @ self.weights.astype(np.float64).T  # (B, C)
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_probs = shifted - log_norm
        n = len(batch)
        loss = float(-log_probs[np.arange(n), batch.targets].mean())
        probs = np.exp(log_probs)
        probs[np.arange(n), batch.targets] -= 1.0
        grad = (probs.T @ feats) / n  # (C, D)
        active = np.asarray(
            [cls not in self.frozen_classes for cls in range(c)], dtype=bool
        )
        if active.any():
            updated = self.weights[active].astype(np.float64) - self.learning_rate * grad[active]
            self.weights[active] = updated.astype(np.float32)
        return loss

    def freeze_task(self, classes_of_task: Sequence[int]) -> None:
        """Mark a task's classes as permanently non-trainable. Idempotent."""
        for cls in classes_of_task:
            if not 0 <= int(cls) < self.num_classes:
                raise ConfigError(f"cannot freeze unknown class {cls}")
        self.frozen_classes.update(int(cls) for cls in classes_of_task)

    def weight_norms(self) -> np.ndarray:
        """L2 norm of each class's weight row, in class order (64-bit)."""
        return np.linalg.norm(self.weights.astype(np.float64), axis=1)


def build_pair_batch(
    new_records: Sequence[EmbeddingRecord],
    exset: ExemplarSet,
    cfg: AugmentConfig,
    rng: RngStream,
    noise_rng: RngStream | None = None,
) -> TrainBatch:
    """Couple each fresh stream record with one replayed exemplar.

    The batch lists the new records first, then one exemplar drawn (with
    replacement) per new record; replayed features are noise-augmented when
    the config enables it. An empty exemplar set yields a new-records-only
    batch, which is how the very first task starts.

    `rng` drives exemplar selection; augmentation noise comes from
    `noise_rng` (defaulting to `rng`). Keeping them separate means toggling
    augmentation does not reshuffle which exemplars get replayed, so runs
    differing only in that switch see identical replay sequences.
    """
    if not new_records:
        raise NumericError("pair batch needs at least one new record")
    if noise_rng is None:
        noise_rng = rng
    feats = [np.asarray(r.feature, dtype=np.float32) for r in new_records]
    targets = [int(r.label) for r in new_records]
    flags = [False] * len(new_records)
    if exset.total_items > 0:
        for ex in sample_exemplars(exset, len(new_records), rng):
            if cfg.enabled:
                feats.append(augment(ex, exset, cfg, noise_rng))
            else:
                feats.append(ex.feature)
            targets.append(ex.label)
            flags.append(True)
    return TrainBatch(
        features=np.stack(feats),
        targets=np.asarray(targets, dtype=np.int64),
        from_exemplar=np.asarray(flags, dtype=bool),
    )


def _read_exact(fh: BinaryIO, n: int, offset: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise DataError(
            f"truncated checkpoint: wanted {n} bytes for {what} at offset {offset}, got {len(buf)}"
        )
    return buf


def save_classifier(path: str, clf: SingleHeadClassifier) -> None:
    """Write weights and the frozen-class set in the checkpoint format."""
    c, d = clf.num_classes, clf.dim
    bitmap = bytearray((c + 7) // 8)
    for cls in clf.frozen_classes:
        bitmap[cls // 8] |= 1 << (cls % 8)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(bytes([CHECKPOINT_VERSION]))
        fh.write(struct.pack("<II", c, d))
        fh.write(bytes(bitmap))
        fh.write(np.ascontiguousarray(clf.weights, dtype="<f4").tobytes())


def load_classifier(
    path: str, learning_rate: float = 0.1, seed: int = 0
) -> SingleHeadClassifier:
    """Read a checkpoint back. Learning rate and init seed are run settings,
    not checkpoint contents, so the caller supplies them."""
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        magic = _read_exact(fh, 4, 0, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise DataError(
                f"{path}: bad magic {magic!r} at offset 0, expected {CHECKPOINT_MAGIC!r}"
            )
        version = _read_exact(fh, 1, 4, "version")[0]
        if version != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version} at offset 4")
        c, d = struct.unpack("<II", _read_exact(fh, 8, 5, "header"))
        if d == 0:
            raise DataError(f"{path}: zero dimension in header")
        bitmap = _read_exact(fh, (c + 7) // 8, 13, "frozen bitmap")
        weight_offset = 13 + len(bitmap)
        body = fh.read()
        if len(body) != 4 * c * d:
            raise DataError(
                f"{path}: weight block is {len(body)} bytes at offset {weight_offset}, "
                f"expected {4 * c * d}"
            )
        clf = SingleHeadClassifier(dim=d, learning_rate=learning_rate, seed=seed)
        clf.weights = np.frombuffer(body, dtype="<f4").reshape(c, d).copy()
        frozen = {
            cls for cls in range(c) if bitmap[cls // 8] & (1 << (cls % 8))
        }
        clf.frozen_classes = frozen
        return clf
