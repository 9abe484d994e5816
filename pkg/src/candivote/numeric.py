"""Dense numeric primitives shared by every other module.

Feature vectors are stored as 32-bit floats; every accumulation here
(means, losses, least-squares sums) runs in 64-bit so long streams do not
lose precision. All functions are pure; `RngStream` is the only stateful
object and must never be shared between threads.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import NumericError

__all__ = [
    "RngStream",
    "derive_seed",
    "as_feature",
    "euclidean_distance",
    "softmax",
    "softmax_xent_grad",
    "gaussian_sample",
    "least_squares_line",
]


def derive_seed(master: int, *path: int) -> int:
    """Derive an independent child seed from a master seed and an integer path.

    Uses numpy's SeedSequence, so the derivation is deterministic and
    documented; the same (master, path) always yields the same child.
    """
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, *[int(p) for p in path]])
    return int(ss.generate_state(1, np.uint64)[0])


class RngStream:
    """Deterministic random stream backed by numpy's PCG64 generator.

    Identical seeds produce identical draw sequences; numpy's stream
    compatibility policy keeps PCG64 output stable across platforms.
    A stream is single-owner mutable state: parallel code must split
    independent children via :meth:`child` instead of sharing one stream.
    """

    algorithm = "pcg64"

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, *path: int) -> "RngStream":
        """Spawn an independent stream keyed by an integer path."""
        return RngStream(derive_seed(self.seed, *path))

    def standard_normal(self, size: int | tuple[int, ...]) -> np.ndarray:
        return self._gen.standard_normal(size, dtype=np.float64)

    def integers(self, high: int, size: int | None = None):
        """Uniform integers in [0, high)."""
        return self._gen.integers(0, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"RngStream(seed={self.seed}, algorithm={self.algorithm!r})"


def as_feature(values: Iterable[float] | np.ndarray, dim: int | None = None) -> np.ndarray:
    """Coerce to a finite 1-D float32 vector, optionally checking its length."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 1:
        raise NumericError(f"feature must be 1-D, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise NumericError(f"feature length {arr.shape[0]} != expected {dim}")
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise NumericError(f"non-finite feature entry at index {bad}")
    return arr


def euclidean_distance(a: np.ndarray, b: np.ndarray) -> float:
    """L2 distance between two equal-length vectors, accumulated in 64-bit."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise NumericError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    return float(np.sqrt(np.dot(diff, diff)))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stabilized softmax (max subtraction), computed in 64-bit."""
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise NumericError("softmax of empty logits")
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_xent_grad(logits: np.ndarray, target: int) -> tuple[float, np.ndarray]:
    """Cross-entropy loss of softmax(logits) against a class index, plus its
    gradient with respect to the logits.

    loss = -log softmax(logits)[target], grad = softmax(logits) - onehot(target).
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise NumericError("cross-entropy of empty logits")
    if not 0 <= int(target) < z.size:
        raise NumericError(f"target {target} out of range for {z.size} logits")
    shifted = z - z.max()
    log_norm = float(np.log(np.sum(np.exp(shifted))))
    loss = log_norm - float(shifted[int(target)])
    grad = np.exp(shifted - log_norm)
    grad[int(target)] -= 1.0
    return loss, grad


def gaussian_sample(rng: RngStream, sigma: np.ndarray) -> np.ndarray:
    """Draw one vector with independent N(0, sigma[j]) entries.

    sigma[j] = 0 yields an exactly-zero entry; negative entries are rejected.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim != 1:
        raise NumericError(f"sigma must be 1-D, got shape {sigma.shape}")
    if np.any(sigma < 0):
        raise NumericError("negative standard deviation")
    return rng.standard_normal(sigma.shape[0]) * sigma


def least_squares_line(points: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Ordinary least-squares line fit, returning (slope, intercept).

    Requires at least two points with non-constant x.
    """
    if len(points) < 2:
        raise NumericError("least-squares fit needs at least 2 points")
    xs = np.asarray([p[0] for p in points], dtype=np.float64)
    ys = np.asarray([p[1] for p in points], dtype=np.float64)
    xm = xs.mean()
    ym = ys.mean()
    sxx = float(np.dot(xs - xm, xs - xm))
    if sxx == 0.0:
        raise NumericError("singular fit: all x values are equal")
    sxy = float(np.dot(xs - xm, ys - ym))
    slope = sxy / sxx
    return slope, ym - slope * xm
