"""Stateful learner coordinating the store, the classifier, and inference.

One ContinualLearner owns the full per-run state: the head grows at each
task boundary, training consumes stream batches exactly once (each record
feeds the running means, the store, and one SGD step), and ending a task
freezes its rows, re-quotas the store, and refreshes the voting beta when
pilot estimation is on. The experiment harness drives one learner per run;
the service keeps one per session.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .classifier import SingleHeadClassifier, TrainBatch, build_pair_batch
from .data import EmbeddingRecord
from .errors import ConfigError, NumericError
from .exemplars import (
    AugmentConfig,
    ExemplarSet,
    StorageReport,
    masks,
    observe,
    rebalance,
    storage_bytes,
)
from .numeric import RngStream, as_feature
from .voting import PredictionMode, VoteParams, estimate_beta_pilot, predict

__all__ = ["ContinualLearner"]


class ContinualLearner:
    """Online class-incremental learner with a bounded exemplar memory.

    Tasks are announced (begin_task), streamed (learn_batch), and sealed
    (end_task) strictly in order. Class indices are assigned contiguously in
    announcement order, so task k owns one contiguous index range.
    """

    def __init__(
        self,
        dim: int,
        capacity: int,
        learning_rate: float = 0.1,
        seed: int = 0,
        vote_params: VoteParams | None = None,
        augment_cfg: AugmentConfig | None = None,
        freeze: bool = True,
        replay: bool = True,
    ):
        self.dim = int(dim)
        self.seed = int(seed)
        self.classifier = SingleHeadClassifier(dim, learning_rate=learning_rate, seed=seed)
        self.exemplar_set = ExemplarSet(capacity)
        self.vote_params = vote_params if vote_params is not None else VoteParams()
        self.augment_cfg = augment_cfg if augment_cfg is not None else AugmentConfig()
        self.freeze = bool(freeze)
        self.replay = bool(replay)
        self.task_classes: list[list[int]] = []
        self.current_task: int | None = None
        self.effective_beta = self.vote_params.beta
        self.records_trained = 0
        base = RngStream(seed)
        self._pair_rng = base.child(2)
        self._pilot_rng = base.child(3)
        self._noise_rng = base.child(4)

    # ------------------------------------------------------------------ state

    @property
    def num_classes(self) -> int:
        return self.classifier.num_classes

    @property
    def num_tasks(self) -> int:
        return len(self.task_classes)

    @property
    def tasks_completed(self) -> int:
        return self.num_tasks - (1 if self.current_task is not None else 0)

    def storage_report(self) -> StorageReport:
        return storage_bytes(self.exemplar_set)

    # ------------------------------------------------------------------ learn

    def begin_task(self, num_new_classes: int) -> list[int]:
        """Open the next task and grow the head; returns its class indices."""
        if self.current_task is not None:
            raise ConfigError(
                f"task {self.current_task} is still open; call end_task first"
            )
        if num_new_classes <= 0:
            raise ConfigError(f"num_new_classes must be positive, got {num_new_classes}")
        start = self.num_classes
        self.classifier.expand(num_new_classes)
        assigned = list(range(start, start + num_new_classes))
        self.task_classes.append(assigned)
        self.current_task = len(self.task_classes) - 1
        return assigned

    def learn_batch(self, features: np.ndarray, labels: np.ndarray) -> float:
        """Consume one stream batch: update the store per record, then take
        one SGD step on the records paired with replayed exemplars."""
        if self.current_task is None:
            raise ConfigError("no open task; call begin_task first")
        feats = np.asarray(features, dtype=np.float32)
        if feats.ndim == 1:
            feats = feats.reshape(1, -1)
        labs = np.asarray(labels, dtype=np.int64).reshape(-1)
        if feats.shape[0] != labs.shape[0]:
            raise NumericError(
                f"{feats.shape[0]} feature rows but {labs.shape[0]} labels"
            )
        if feats.shape[0] == 0:
            raise NumericError("empty stream batch")
        if feats.shape[1] != self.dim:
            raise NumericError(f"feature dim {feats.shape[1]} != {self.dim}")
        if labs.min() < 0 or labs.max() >= self.num_classes:
            raise NumericError(
                f"label outside [0, {self.num_classes}): {int(labs.min())}..{int(labs.max())}"
            )
        records = [
            EmbeddingRecord(int(labs[i]), as_feature(feats[i])) for i in range(len(labs))
        ]
        for rec in records:
            observe(self.exemplar_set, rec, self.current_task)
        if self.replay:
            batch = build_pair_batch(
                records,
                self.exemplar_set,
                self.augment_cfg,
                self._pair_rng,
                noise_rng=self._noise_rng,
            )
        else:
            batch = TrainBatch(
                features=feats,
                targets=labs,
                from_exemplar=np.zeros(len(labs), dtype=bool),
            )
        self.records_trained += len(records)
        return self.classifier.train_step(batch)

    def end_task(self) -> None:
        """Seal the open task: freeze its rows, re-quota the store, and
        refresh beta from the pilot set when pilot mode is configured."""
        if self.current_task is None:
            raise ConfigError("no open task to end")
        if self.freeze:
            self.classifier.freeze_task(self.task_classes[self.current_task])
        rebalance(self.exemplar_set, self.num_classes)
        self.current_task = None
        if self.vote_params.beta_mode == "pilot":
            self.effective_beta = estimate_beta_pilot(
                self.exemplar_set,
                self.augment_cfg,
                self.vote_params.eps_r,
                self._pilot_rng,
                default_beta=self.vote_params.beta,
            )

    # ---------------------------------------------------------------- predict

    def _eval_params(self) -> VoteParams:
        return replace(self.vote_params, beta=self.effective_beta)

    def predict(self, feature: np.ndarray, mode: PredictionMode = "full") -> int:
        if self.num_classes == 0:
            raise ConfigError("no tasks learned yet")
        return predict(
            as_feature(feature, self.dim),
            self.classifier,
            self.exemplar_set,
            self._eval_params(),
            mode,
        )

    def predict_batch(self, features: np.ndarray, mode: PredictionMode = "full") -> np.ndarray:
        """Predict a whole matrix of rows, reusing masks and norms across rows."""
        if self.num_classes == 0:
            raise ConfigError("no tasks learned yet")
        feats = np.asarray(features, dtype=np.float32)
        if feats.ndim != 2 or feats.shape[1] != self.dim:
            raise NumericError(f"features shape {feats.shape} does not match dim {self.dim}")
        params = self._eval_params()
        task_masks = None
        norms = None
        if mode == "full":
            task_masks = masks(self.exemplar_set, self.num_classes)
            norms = self.classifier.weight_norms()
        out = np.empty(feats.shape[0], dtype=np.int64)
        for i in range(feats.shape[0]):
            out[i] = predict(
                feats[i],
                self.classifier,
                self.exemplar_set,
                params,
                mode,
                task_masks=task_masks,
                weight_norms=norms,
            )
        return out
