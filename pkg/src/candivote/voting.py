"""Inference over a grown single head: candidates, distance prior, vote.

A trained head plus exemplar memory predict in three steps. Each learned
task nominates its best class (the masked logit maximum), candidate scores
are min-shifted, sum-normalized, and divided by the candidate's weight-row
norm so tasks trained at different times become comparable. Independently,
the distance from the query to each task's nearest stored exemplar yields a
task-membership prior. The vote adds the prior, amplified by how peaked it
is, onto the normalized scores and picks the winning task's candidate.

Ablation modes short-circuit parts of the pipeline: plain logit argmax,
argmax with augmented replay (same inference as plain), and a prior-only
mode that returns the label of the globally nearest stored exemplar.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .classifier import SingleHeadClassifier
from .errors import ConfigError, NumericError
from .exemplars import AugmentConfig, ExemplarSet, augment, masks
from .numeric import RngStream

__all__ = [
    "CandidateSlate",
    "VoteParams",
    "PredictionMode",
    "PREDICTION_MODES",
    "select_candidates",
    "pnn_prior",
    "vote",
    "estimate_beta_pilot",
    "predict",
]

PredictionMode = Literal["baseline", "baseline_ea", "cs_pnn_only", "full"]
PREDICTION_MODES: tuple[str, ...] = ("baseline", "baseline_ea", "cs_pnn_only", "full")


@dataclass(frozen=True)
class CandidateSlate:
    """One nominee per learned task: its class, raw logit, normalized score."""

    labels: np.ndarray  # (N,) int64, candidate class per task
    raw_scores: np.ndarray  # (N,) float64
    norm_scores: np.ndarray  # (N,) float64, >= 0

    def __len__(self) -> int:
        return int(self.labels.shape[0])


@dataclass
class VoteParams:
    """Inference-time knobs.

    beta controls how sharply a peaked prior overrides the scores (smaller
    beta, stronger prior). eps_n regularizes the score normalization; eps_r
    caps the prior weight a zero-distance match can earn at 1/eps_r.
    """

    beta: float = 0.5
    eps_n: float = 1e-6
    eps_r: float = 1e-2
    beta_mode: Literal["fixed", "pilot"] = "fixed"

    def __post_init__(self) -> None:
        if not 0.0 < self.beta <= 1.0:
            raise ConfigError(f"beta must be in (0, 1], got {self.beta}")
        if self.eps_n <= 0:
            raise ConfigError(f"eps_n must be positive, got {self.eps_n}")
        if self.eps_r <= 0:
            raise ConfigError(f"eps_r must be positive, got {self.eps_r}")
        if self.beta_mode not in ("fixed", "pilot"):
            raise ConfigError(f"beta_mode must be 'fixed' or 'pilot', got {self.beta_mode!r}")


def select_candidates(
    logits: np.ndarray,
    task_masks: Sequence[np.ndarray],
    weight_norms: np.ndarray,
    eps_n: float = 1e-6,
) -> CandidateSlate:
    """Nominate one class per task and normalize the nominees' scores.

    Task k's candidate is its highest logit among the classes the task owns;
    entries outside the mask are excluded outright, so negative logits are
    never displaced by zeros. Scores are shifted by the slate minimum,
    normalized by the regularized slate sum, then divided by the candidate
    class's weight-row norm.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if not task_masks:
        raise NumericError("no task masks")
    n = len(task_masks)
    labels = np.empty(n, dtype=np.int64)
    raw = np.empty(n, dtype=np.float64)
    for k, mask in enumerate(task_masks):
        idx = np.flatnonzero(np.asarray(mask) != 0)
        if idx.size == 0:
            raise NumericError(f"task {k} mask selects no classes")
        if idx.max() >= logits.shape[0]:
            raise NumericError(
                f"task {k} mask touches class {int(idx.max())}, logits have {logits.shape[0]}"
            )
        vals = logits[idx]
        best = int(np.argmax(vals))  # first max: lowest class index on ties
        labels[k] = idx[best]
        raw[k] = vals[best]
    norms = np.asarray(weight_norms, dtype=np.float64)
    cand_norms = norms[labels]
    if np.any(cand_norms == 0):
        bad = int(labels[np.flatnonzero(cand_norms == 0)[0]])
        raise NumericError(f"candidate class {bad} has zero weight norm")
    shifted = raw - raw.min()
    denom = eps_n + shifted.sum()
    return CandidateSlate(labels=labels, raw_scores=raw, norm_scores=shifted / denom / cand_norms)


def pnn_prior(feature: np.ndarray, exset: ExemplarSet, eps_r: float = 1e-2) -> np.ndarray:
    """Task-membership probabilities from nearest stored exemplars.

    Each learned task scores the reciprocal of (eps_r + distance to its
    nearest exemplar); scores normalize to a probability vector over tasks
    in ascending task order. eps_r > 0 keeps the zero-distance case finite.
    """
    if eps_r <= 0:
        raise ConfigError(f"eps_r must be positive, got {eps_r}")
    tasks = exset.learned_tasks()
    if not tasks:
        raise NumericError("no learned tasks; prior undefined")
    f = np.asarray(feature, dtype=np.float64)
    alphas = np.empty(len(tasks), dtype=np.float64)
    for i, t in enumerate(tasks):
        matrix = exset.task_matrix(t)
        if matrix.shape[0] == 0:
            raise NumericError(f"task {t} has no stored exemplars")
        diffs = matrix - f
        nearest = math.sqrt(float(np.min(np.einsum("ij,ij->i", diffs, diffs))))
        alphas[i] = 1.0 / (eps_r + nearest)
    return alphas / alphas.sum()


def vote(slate: CandidateSlate, prior: np.ndarray, params: VoteParams) -> int:
    """Combine normalized candidate scores with the task prior.

    The prior's spread (max minus min) over beta sets gamma; every task's
    score becomes norm_score + e^(gamma-1) * prior, and the winning task's
    candidate class is returned. Ties go to the lowest task index. A uniform
    prior adds the same amount everywhere, leaving the score argmax alone; a
    peaked prior with small beta dominates the scores.
    """
    prior = np.asarray(prior, dtype=np.float64)
    if len(slate) != prior.shape[0]:
        raise NumericError(f"slate has {len(slate)} tasks, prior has {prior.shape[0]}")
    gamma = (float(prior.max()) - float(prior.min())) / params.beta
    combined = slate.norm_scores + math.exp(gamma - 1.0) * prior
    return int(slate.labels[int(np.argmax(combined))])


def estimate_beta_pilot(
    exset: ExemplarSet,
    cfg: AugmentConfig,
    eps_r: float,
    rng: RngStream,
    default_beta: float = 0.5,
) -> float:
    """Estimate beta from a pilot set of augmented exemplar copies.

    One augmented copy per stored exemplar; each copy's prior contributes its
    max-minus-min spread, and the mean spread (clamped to [0.05, 1]) becomes
    beta. With fewer than two learned tasks the spread is degenerate and the
    fixed default is returned. The pilot always perturbs, regardless of
    whether training-time augmentation is enabled.
    """
    if len(exset.learned_tasks()) < 2:
        return default_beta
    diffs: list[float] = []
    for ex in exset.all_exemplars():
        pilot = augment(ex, exset, cfg, rng)
        w = pnn_prior(pilot, exset, eps_r)
        diffs.append(float(w.max()) - float(w.min()))
    return float(np.clip(np.mean(diffs), 0.05, 1.0))


def _nearest_exemplar_label(feature: np.ndarray, exset: ExemplarSet) -> int:
    if exset.total_items == 0:
        raise NumericError("no stored exemplars; nearest-exemplar prediction undefined")
    matrix, labels = exset.class_matrix(sorted(exset.stores))
    diffs = matrix.astype(np.float64) - np.asarray(feature, dtype=np.float64)
    d2 = np.einsum("ij,ij->i", diffs, diffs)
    return int(labels[int(np.argmin(d2))])


def predict(
    feature: np.ndarray,
    clf: SingleHeadClassifier,
    exset: ExemplarSet,
    params: VoteParams,
    mode: PredictionMode = "full",
    task_masks: Sequence[np.ndarray] | None = None,
    weight_norms: np.ndarray | None = None,
) -> int:
    """Predict a class index under the chosen inference variant.

    baseline and baseline_ea take the raw logit argmax over every class (the
    variants differ only in how training was run). cs_pnn_only returns the
    label of the globally nearest stored exemplar. full runs candidate
    selection, the distance prior, and the vote.

    task_masks and weight_norms are optional precomputed values; evaluation
    loops pass them to avoid rebuilding identical arrays per record.
    """
    if mode not in PREDICTION_MODES:
        raise ConfigError(f"unknown prediction mode {mode!r}")
    if mode in ("baseline", "baseline_ea"):
        return int(np.argmax(clf.logits(feature)))
    if mode == "cs_pnn_only":
        return _nearest_exemplar_label(feature, exset)
    if task_masks is None:
        task_masks = masks(exset, clf.num_classes)
    if weight_norms is None:
        weight_norms = clf.weight_norms()
    slate = select_candidates(clf.logits(feature), task_masks, weight_norms, params.eps_n)
    prior = pnn_prior(feature, exset, params.eps_r)
    return vote(slate, prior, params)
