"""Tests for the task-by-task learner facade: lifecycle rules, freezing,
replay pairing, pilot-driven beta, prediction modes, and determinism."""

import numpy as np
import pytest

from candivote.engine import ContinualLearner
from candivote.errors import ConfigError, NumericError
from candivote.exemplars import AugmentConfig
from candivote.voting import VoteParams


def blob_batch(rng, labels, dim, spread=0.5):
    """Rows drawn around one-hot(label) * 10 — far apart per class."""
    labels = np.asarray(labels, dtype=np.int64)
    feats = rng.normal(scale=spread, size=(len(labels), dim))
    for i, y in enumerate(labels):
        feats[i, int(y) % dim] += 10.0
    return feats.astype(np.float32), labels


def run_task(learner, rng, classes, records_per_class=30, batch_size=10):
    learner.begin_task(len(classes))
    labels = np.repeat(classes, records_per_class)
    labels = labels[rng.permutation(len(labels))]
    for start in range(0, len(labels), batch_size):
        chunk = labels[start : start + batch_size]
        feats, ys = blob_batch(rng, chunk, learner.dim)
        learner.learn_batch(feats, ys)
    learner.end_task()


class TestTaskLifecycle:
    def test_classes_are_assigned_contiguously(self):
        learner = ContinualLearner(dim=4, capacity=20)
        assert learner.begin_task(2) == [0, 1]
        learner.end_task()
        assert learner.begin_task(3) == [2, 3, 4]
        assert learner.num_classes == 5
        assert learner.task_classes == [[0, 1], [2, 3, 4]]

    def test_tasks_completed_ignores_the_open_task(self):
        learner = ContinualLearner(dim=4, capacity=20)
        learner.begin_task(2)
        assert learner.num_tasks == 1
        assert learner.tasks_completed == 0
        learner.end_task()
        assert learner.tasks_completed == 1

    def test_begin_while_open_raises(self):
        learner = ContinualLearner(dim=4, capacity=20)
        learner.begin_task(2)
        with pytest.raises(ConfigError, match="still open"):
            learner.begin_task(2)

    def test_non_positive_class_count_raises(self):
        learner = ContinualLearner(dim=4, capacity=20)
        with pytest.raises(ConfigError, match="positive"):
            learner.begin_task(0)

    def test_end_without_open_task_raises(self):
        learner = ContinualLearner(dim=4, capacity=20)
        with pytest.raises(ConfigError, match="no open task"):
            learner.end_task()

    def test_learn_without_open_task_raises(self):
        learner = ContinualLearner(dim=4, capacity=20)
        with pytest.raises(ConfigError, match="begin_task"):
            learner.learn_batch(np.zeros((1, 4), dtype=np.float32), np.array([0]))

    def test_predict_before_any_task_raises(self):
        learner = ContinualLearner(dim=4, capacity=20)
        with pytest.raises(ConfigError, match="no tasks"):
            learner.predict(np.zeros(4, dtype=np.float32))
        with pytest.raises(ConfigError, match="no tasks"):
            learner.predict_batch(np.zeros((2, 4), dtype=np.float32))


class TestLearnBatch:
    def open_learner(self):
        learner = ContinualLearner(dim=4, capacity=20)
        learner.begin_task(2)
        return learner

    def test_counts_records_and_returns_loss(self):
        learner = self.open_learner()
        rng = np.random.default_rng(0)
        feats, labels = blob_batch(rng, [0, 1, 0], 4)
        loss = learner.learn_batch(feats, labels)
        assert loss > 0.0
        assert learner.records_trained == 3
        learner.learn_batch(*blob_batch(rng, [1, 1], 4))
        assert learner.records_trained == 5

    def test_label_outside_known_classes_raises(self):
        learner = self.open_learner()
        with pytest.raises(NumericError, match="label"):
            learner.learn_batch(np.zeros((1, 4), dtype=np.float32), np.array([2]))

    def test_dimension_mismatch_raises(self):
        learner = self.open_learner()
        with pytest.raises(NumericError, match="dim"):
            learner.learn_batch(np.zeros((1, 3), dtype=np.float32), np.array([0]))

    def test_row_label_count_mismatch_raises(self):
        learner = self.open_learner()
        with pytest.raises(NumericError):
            learner.learn_batch(np.zeros((2, 4), dtype=np.float32), np.array([0]))

    def test_empty_batch_raises(self):
        learner = self.open_learner()
        with pytest.raises(NumericError, match="empty"):
            learner.learn_batch(np.zeros((0, 4), dtype=np.float32), np.array([], dtype=np.int64))


class TestFreezing:
    def test_sealed_rows_are_bitwise_constant_during_later_tasks(self):
        learner = ContinualLearner(dim=8, capacity=40)
        rng = np.random.default_rng(1)
        run_task(learner, rng, [0, 1])
        sealed = learner.classifier.weights[:2].copy()
        run_task(learner, rng, [2, 3])
        assert learner.classifier.weights[:2].tobytes() == sealed.tobytes()

    def test_freeze_off_lets_old_rows_drift(self):
        learner = ContinualLearner(dim=8, capacity=40, freeze=False)
        rng = np.random.default_rng(1)
        run_task(learner, rng, [0, 1])
        sealed = learner.classifier.weights[:2].copy()
        run_task(learner, rng, [2, 3])
        assert not np.array_equal(learner.classifier.weights[:2], sealed)

    def test_store_respects_capacity_after_each_task(self):
        learner = ContinualLearner(dim=8, capacity=17)
        rng = np.random.default_rng(2)
        for k in range(4):
            run_task(learner, rng, [2 * k, 2 * k + 1])
            assert learner.exemplar_set.total_items <= 17


class TestPredictionModes:
    def trained_learner(self, tasks=2, seed=3, **kwargs):
        learner = ContinualLearner(dim=8, capacity=40, seed=seed, **kwargs)
        rng = np.random.default_rng(seed)
        for k in range(tasks):
            run_task(learner, rng, [2 * k, 2 * k + 1])
        return learner

    def test_single_task_full_equals_baseline(self):
        learner = self.trained_learner(tasks=1)
        rng = np.random.default_rng(4)
        feats, _ = blob_batch(rng, [0, 1, 0, 1], 8)
        full = learner.predict_batch(feats, mode="full")
        base = learner.predict_batch(feats, mode="baseline")
        assert np.array_equal(full, base)

    def test_nearest_exemplar_mode_recalls_stored_points(self):
        learner = self.trained_learner(tasks=2)
        for store in learner.exemplar_set.stores.values():
            probe = store.items[0].feature
            assert learner.predict(probe, mode="cs_pnn_only") == store.label

    def test_batch_agrees_with_single_prediction_in_every_mode(self):
        learner = self.trained_learner(tasks=2)
        rng = np.random.default_rng(5)
        feats, _ = blob_batch(rng, [0, 1, 2, 3, 2], 8)
        for mode in ("baseline", "baseline_ea", "cs_pnn_only", "full"):
            got = learner.predict_batch(feats, mode=mode)
            one_by_one = [learner.predict(f, mode=mode) for f in feats]
            assert got.tolist() == one_by_one

    def test_separated_stream_is_learned_accurately(self):
        learner = self.trained_learner(tasks=3)
        rng = np.random.default_rng(6)
        labels = np.tile(np.arange(6), 20)
        feats, ys = blob_batch(rng, labels, 8)
        preds = learner.predict_batch(feats, mode="full")
        assert (preds == ys).mean() >= 0.95

    def test_unknown_mode_raises(self):
        learner = self.trained_learner(tasks=1)
        with pytest.raises(ConfigError, match="mode"):
            learner.predict(np.zeros(8, dtype=np.float32), mode="nope")

    def test_batch_shape_is_validated(self):
        learner = self.trained_learner(tasks=1)
        with pytest.raises(NumericError, match="shape"):
            learner.predict_batch(np.zeros((2, 5), dtype=np.float32))


class TestReplayToggle:
    def weights_after_stream(self, replay: bool) -> np.ndarray:
        learner = ContinualLearner(dim=8, capacity=40, seed=7, replay=replay)
        rng = np.random.default_rng(7)
        run_task(learner, rng, [0, 1])
        run_task(learner, rng, [2, 3])
        return learner.classifier.weights.copy()

    def test_replay_changes_training_but_both_paths_run(self):
        with_replay = self.weights_after_stream(True)
        without = self.weights_after_stream(False)
        assert with_replay.shape == without.shape == (4, 8)
        assert not np.array_equal(with_replay, without)

    def test_replay_off_still_stores_exemplars(self):
        learner = ContinualLearner(dim=8, capacity=40, seed=7, replay=False)
        rng = np.random.default_rng(7)
        run_task(learner, rng, [0, 1])
        assert learner.exemplar_set.total_items > 0


class TestPilotBeta:
    def pilot_learner(self):
        return ContinualLearner(
            dim=8,
            capacity=40,
            seed=8,
            vote_params=VoteParams(beta=0.5, beta_mode="pilot"),
        )

    def test_default_beta_until_two_tasks_exist(self):
        learner = self.pilot_learner()
        rng = np.random.default_rng(8)
        run_task(learner, rng, [0, 1])
        assert learner.effective_beta == 0.5

    def test_refreshed_beta_stays_in_clamp_range(self):
        learner = self.pilot_learner()
        rng = np.random.default_rng(8)
        run_task(learner, rng, [0, 1])
        run_task(learner, rng, [2, 3])
        assert 0.05 <= learner.effective_beta <= 1.0

    def test_pilot_beta_is_reproducible(self):
        betas = []
        for _ in range(2):
            learner = self.pilot_learner()
            rng = np.random.default_rng(8)
            run_task(learner, rng, [0, 1])
            run_task(learner, rng, [2, 3])
            betas.append(learner.effective_beta)
        assert betas[0] == betas[1]

    def test_fixed_mode_never_moves_beta(self):
        learner = ContinualLearner(
            dim=8, capacity=40, seed=8, vote_params=VoteParams(beta=0.25)
        )
        rng = np.random.default_rng(8)
        run_task(learner, rng, [0, 1])
        run_task(learner, rng, [2, 3])
        assert learner.effective_beta == 0.25


class TestStorageReport:
    def test_bytes_follow_the_row_layout(self):
        learner = ContinualLearner(dim=8, capacity=12)
        rng = np.random.default_rng(9)
        run_task(learner, rng, [0, 1])
        report = learner.storage_report()
        items = learner.exemplar_set.total_items
        assert report.feature_bytes == 4 * 8 * items
        assert report.metadata_bytes == 8 * items
        assert report.formula_check


class TestDeterminism:
    def build_and_train(self):
        learner = ContinualLearner(
            dim=8,
            capacity=40,
            seed=11,
            vote_params=VoteParams(beta_mode="pilot"),
            augment_cfg=AugmentConfig(alpha_r=1.0, enabled=True),
        )
        rng = np.random.default_rng(11)
        run_task(learner, rng, [0, 1])
        run_task(learner, rng, [2, 3])
        return learner

    def test_identical_setups_agree_bitwise(self):
        a = self.build_and_train()
        b = self.build_and_train()
        assert a.classifier.weights.tobytes() == b.classifier.weights.tobytes()
        assert a.effective_beta == b.effective_beta
        rng = np.random.default_rng(12)
        feats, _ = blob_batch(rng, [0, 1, 2, 3], 8)
        assert np.array_equal(a.predict_batch(feats), b.predict_batch(feats))
