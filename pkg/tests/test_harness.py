"""Tests for the experiment harness and the command line: metric helpers,
run configuration, protocol runs, report files, and exit codes."""

import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from candivote.classifier import SingleHeadClassifier, save_classifier
from candivote.cli import _exit_on_error, main
from candivote.config import RunConfig, SynthSpec, config_from_dict, load_config_file
from candivote.data import (
    EmbeddingRecord,
    SynthConfig,
    generate_synthetic,
    load_embeddings,
    save_embeddings,
    save_embeddings_csv,
)
from candivote.errors import ConfigError, DataError, NumericError
from candivote.exemplars import ExemplarSet, observe, save_exemplars
from candivote.harness import (
    avg_last,
    bias_report,
    confusion,
    emit,
    recompute_metrics,
    run_experiment,
)


def synth_config(**overrides) -> RunConfig:
    base = {
        "synth": {
            "num_classes": 4,
            "dim": 8,
            "train_per_class": 30,
            "test_per_class": 10,
            "std": 1.0,
            "separation": 8.0,
            "seed": 0,
        },
        "step_size": 2,
        "capacity": 40,
        "batch_size": 10,
        "learning_rate": 0.1,
        "mode": "full",
        "seed": 0,
    }
    base.update(overrides)
    return config_from_dict(base)


def combined_output(result) -> str:
    text = result.output
    try:
        text += result.stderr
    except (ValueError, AttributeError):
        pass
    return text


class TestAvgLast:
    def test_mean_and_final(self):
        avg, last = avg_last([0.5, 1.0])
        assert avg == 0.75
        assert last == 1.0

    def test_single_step(self):
        assert avg_last([0.25]) == (0.25, 0.25)

    def test_empty_raises(self):
        with pytest.raises(NumericError):
            avg_last([])


class TestConfusion:
    def test_counts_land_at_true_then_predicted(self):
        mat = confusion([1, 1, 0], [0, 1, 0], num_classes=2)
        assert mat.tolist() == [[1, 1], [0, 1]]
        assert mat[0, 1] == 1  # true 0 predicted as 1 once

    def test_length_mismatch_raises(self):
        with pytest.raises(NumericError):
            confusion([0], [0, 1], num_classes=2)

    def test_out_of_range_raises(self):
        with pytest.raises(NumericError):
            confusion([2], [0], num_classes=2)


class TestBiasReport:
    def build_classifier(self, rows) -> SingleHeadClassifier:
        clf = SingleHeadClassifier(dim=2, seed=0)
        clf.expand(len(rows))
        clf.weights[:] = np.asarray(rows, dtype=np.float32)
        return clf

    def test_norm_trend_and_newest_fraction(self):
        clf = self.build_classifier([[3, 4], [0, 1], [2, 0], [6, 8]])
        rep = bias_report(clf, [[0, 1], [2, 3]], [0, 2, 3, 3])
        assert rep.norms_by_task[0] == pytest.approx([5.0, 1.0])
        assert rep.norms_by_task[1] == pytest.approx([2.0, 10.0])
        assert rep.newest_task_fraction == 0.75
        slope, intercept = np.polyfit([0, 1, 2, 3], [5.0, 1.0, 2.0, 10.0], 1)
        assert rep.slope == pytest.approx(slope, rel=1e-9)
        assert rep.intercept == pytest.approx(intercept, rel=1e-9)

    def test_single_class_has_no_trend(self):
        clf = self.build_classifier([[3, 4]])
        rep = bias_report(clf, [[0]], [0, 0])
        assert rep.slope is None
        assert rep.intercept is None
        assert rep.newest_task_fraction == 1.0

    def test_to_dict_uses_string_task_keys(self):
        clf = self.build_classifier([[3, 4], [0, 1]])
        doc = bias_report(clf, [[0, 1]], [1]).to_dict()
        assert set(doc) == {"norms_by_task", "slope", "intercept", "newest_task_fraction"}
        assert "0" in doc["norms_by_task"]


class TestRunConfig:
    def test_synthetic_source_with_defaults(self):
        cfg = synth_config()
        assert cfg.step_size == 2
        assert cfg.mode == "full"
        assert cfg.augment_enabled  # on for every mode except plain baseline
        assert cfg.vote_params().beta == 0.5
        assert cfg.augment_config().alpha_r == 1.0

    def test_file_and_synth_sources_are_exclusive(self):
        with pytest.raises(ConfigError, match="not both"):
            synth_config(train_path="a.cveb", test_path="b.cveb")

    def test_some_data_source_is_required(self):
        with pytest.raises(ConfigError, match="no data source"):
            config_from_dict({"capacity": 10})

    def test_train_and_test_paths_come_together(self):
        with pytest.raises(ConfigError, match="together"):
            config_from_dict({"train_path": "a.cveb", "capacity": 10})

    def test_capacity_is_required(self):
        raw = synth_config().echo()
        del raw["capacity"]
        with pytest.raises(ConfigError, match="capacity"):
            config_from_dict(raw)

    def test_unknown_keys_are_rejected(self):
        raw = synth_config().echo()
        raw["quota"] = 5
        with pytest.raises(ConfigError, match="quota"):
            config_from_dict(raw)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ConfigError, match="mode"):
            synth_config(mode="softmax")

    def test_beta_upper_boundary_is_inclusive(self):
        assert synth_config(beta=1.0).beta == 1.0
        with pytest.raises(ConfigError, match="beta"):
            synth_config(beta=1.0000001)
        with pytest.raises(ConfigError, match="beta"):
            synth_config(beta=0.0)

    def test_baseline_mode_disables_augmentation_by_default(self):
        assert not synth_config(mode="baseline").augment_enabled
        assert synth_config(mode="baseline_ea").augment_enabled
        assert synth_config(mode="baseline", augment=True).augment_enabled
        assert not synth_config(mode="full", augment=False).augment_enabled

    def test_echo_round_trips(self):
        cfg = synth_config(beta=0.25, pilot_beta=True, out_dir="reports")
        assert config_from_dict(cfg.echo()) == cfg

    def test_config_file_loading(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps(synth_config().echo()))
        assert load_config_file(str(path)) == synth_config()

    def test_invalid_json_file_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{nope")
        with pytest.raises(ConfigError, match="JSON"):
            load_config_file(str(path))

    def test_non_object_root_rejected(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigError, match="object"):
            load_config_file(str(path))

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config_file(str(tmp_path / "none.json"))


class TestRunExperiment:
    def test_two_step_protocol_shape(self):
        report = run_experiment(synth_config())
        assert [s.step for s in report.steps] == [1, 2]
        assert [s.classes_seen for s in report.steps] == [2, 4]
        assert len(report.steps[0].truths) == 20  # 2 classes x 10 test rows
        assert len(report.steps[1].truths) == 40
        assert report.steps[0].confusion.shape == (2, 2)
        assert report.steps[1].confusion.shape == (4, 4)
        assert len(report.weight_norms) == 4
        assert report.class_tasks == [0, 0, 1, 1]
        assert report.storage.formula_check

    def test_summary_statistics_match_the_steps(self):
        report = run_experiment(synth_config())
        accs = [s.accuracy for s in report.steps]
        avg, last = avg_last(accs)
        assert report.avg_accuracy == avg
        assert report.last_accuracy == last
        assert report.last_accuracy >= 0.9  # classes 8 std apart are separable

    def test_confusion_agrees_with_accuracy(self):
        report = run_experiment(synth_config())
        for s in report.steps:
            assert s.confusion.sum() == len(s.truths)
            diag = float(np.trace(s.confusion))
            assert s.accuracy == pytest.approx(diag / len(s.truths), abs=1e-12)

    def test_timings_live_outside_the_metrics_document(self):
        report = run_experiment(synth_config())
        assert report.timings  # measured
        assert "timings" not in report.to_dict()

    def test_every_mode_runs(self):
        for mode in ("baseline", "baseline_ea", "cs_pnn_only", "full"):
            report = run_experiment(synth_config(mode=mode))
            assert len(report.steps) == 2
            assert 0.0 <= report.last_accuracy <= 1.0

    def test_extra_first_task_epochs_change_training(self):
        plain = run_experiment(synth_config())
        warm = run_experiment(synth_config(first_task_epochs=3))
        assert len(warm.steps) == 2
        assert warm.steps[0].mean_train_loss != plain.steps[0].mean_train_loss

    def test_class_order_seed_shuffles_task_composition(self):
        report = run_experiment(synth_config(class_order_seed=4))
        assert len(report.steps) == 2  # still two tasks of two classes
        assert report.class_tasks == [0, 0, 1, 1]

    def test_identical_configs_agree_exactly(self):
        a = json.dumps(run_experiment(synth_config()).to_dict(), sort_keys=True)
        b = json.dumps(run_experiment(synth_config()).to_dict(), sort_keys=True)
        assert a == b

    def test_missing_train_file_raises(self, tmp_path):
        cfg = config_from_dict(
            {
                "train_path": str(tmp_path / "no.cveb"),
                "test_path": str(tmp_path / "no2.cveb"),
                "capacity": 10,
            }
        )
        with pytest.raises(DataError):
            run_experiment(cfg)


class TestEmit:
    EXPECTED = {
        "metrics.json",
        "timings.json",
        "accuracy_curve.csv",
        "confusion_step1.csv",
        "confusion_step2.csv",
        "predictions_step1.csv",
        "predictions_step2.csv",
        "weight_norms.csv",
        "storage.json",
        "curve.svg",
    }

    def test_expected_file_set(self, tmp_path):
        report = run_experiment(synth_config())
        outdir = str(tmp_path / "out")
        written = emit(report, outdir)
        assert {os.path.basename(p) for p in written} == self.EXPECTED
        assert set(os.listdir(outdir)) == self.EXPECTED

    def test_metrics_file_carries_the_report(self, tmp_path):
        report = run_experiment(synth_config())
        emit(report, str(tmp_path))
        doc = json.loads((tmp_path / "metrics.json").read_text())
        assert doc == json.loads(json.dumps(report.to_dict()))

    def test_accuracy_curve_rows(self, tmp_path):
        report = run_experiment(synth_config())
        emit(report, str(tmp_path))
        lines = (tmp_path / "accuracy_curve.csv").read_text().splitlines()
        assert lines[0] == "step,accuracy"
        assert len(lines) == 3
        assert float(lines[1].split(",")[1]) == report.steps[0].accuracy

    def test_reemit_is_byte_stable(self, tmp_path):
        report = run_experiment(synth_config())
        emit(report, str(tmp_path))
        first = (tmp_path / "metrics.json").read_bytes()
        emit(run_experiment(synth_config()), str(tmp_path))
        assert (tmp_path / "metrics.json").read_bytes() == first

    def test_unwritable_directory_raises(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(DataError, match="cannot create"):
            emit(run_experiment(synth_config()), str(blocker / "sub"))


class TestRecomputeMetrics:
    def test_recomputation_matches_the_report(self, tmp_path):
        report = run_experiment(synth_config())
        emit(report, str(tmp_path))
        audit = recompute_metrics(str(tmp_path))
        assert [s["step"] for s in audit["steps"]] == [1, 2]
        for recomputed, original in zip(audit["steps"], report.steps):
            assert recomputed["accuracy"] == original.accuracy
            assert recomputed["confusion"] == original.confusion.tolist()
        assert audit["avg_accuracy"] == report.avg_accuracy
        assert audit["last_accuracy"] == report.last_accuracy

    def test_directory_without_predictions_raises(self, tmp_path):
        with pytest.raises(DataError, match="prediction"):
            recompute_metrics(str(tmp_path))

    def test_wrong_header_raises(self, tmp_path):
        (tmp_path / "predictions_step1.csv").write_text("a,b\n1,2\n")
        with pytest.raises(DataError, match="header"):
            recompute_metrics(str(tmp_path))


class TestExitCodes:
    def test_each_error_kind_maps_to_its_code(self):
        cases = [(ConfigError, 2), (DataError, 3), (NumericError, 4)]
        for exc_type, code in cases:

            @_exit_on_error
            def boom(exc_type=exc_type):
                raise exc_type("synthetic failure")

            with pytest.raises(SystemExit) as caught:
                boom()
            assert caught.value.code == code


class TestCommandLine:
    def synth_files(self, tmp_path, classes=4, per_class=20):
        runner = CliRunner()
        train = str(tmp_path / "train.cveb")
        test = str(tmp_path / "test.cveb")
        result = runner.invoke(
            main,
            [
                "synth",
                "--classes",
                str(classes),
                "--dim",
                "8",
                "--train-per-class",
                str(per_class),
                "--test-per-class",
                "10",
                "--separation",
                "8.0",
                "--seed",
                "0",
                "--train-out",
                train,
                "--test-out",
                test,
            ],
        )
        assert result.exit_code == 0, combined_output(result)
        return train, test

    def test_version_flag(self):
        result = CliRunner().invoke(main, ["--version"])
        assert result.exit_code == 0
        assert "candivote" in result.output

    def test_synth_writes_loadable_datasets(self, tmp_path):
        train, test = self.synth_files(tmp_path)
        ds = load_embeddings(train)
        assert ds.num_rows == 80
        assert ds.dim == 8
        assert load_embeddings(test).num_rows == 40
        # the exact generator under the same seed
        expected, _ = generate_synthetic(
            SynthConfig(
                num_classes=4,
                dim=8,
                train_per_class=20,
                test_per_class=10,
                std=1.0,
                separation=8.0,
                seed=0,
            )
        )
        assert np.array_equal(ds.features, expected.features)

    def test_run_from_config_file_writes_reports(self, tmp_path):
        cfg = synth_config(out_dir=str(tmp_path / "out"))
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps(cfg.echo()))
        result = CliRunner().invoke(main, ["run", "--config", str(cfg_path)])
        assert result.exit_code == 0, combined_output(result)
        assert "avg" in result.output
        assert "wrote" in result.output
        doc = json.loads((tmp_path / "out" / "metrics.json").read_text())
        assert doc["config"]["mode"] == "full"
        assert len(doc["steps"]) == 2

    def test_run_flags_override_the_config_file(self, tmp_path):
        cfg = synth_config()
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps(cfg.echo()))
        out = str(tmp_path / "out")
        result = CliRunner().invoke(
            main,
            ["run", "--config", str(cfg_path), "--mode", "cs-pnn", "--out", out],
        )
        assert result.exit_code == 0, combined_output(result)
        doc = json.loads((tmp_path / "out" / "metrics.json").read_text())
        assert doc["config"]["mode"] == "cs_pnn_only"

    def test_run_on_embedding_files(self, tmp_path):
        train, test = self.synth_files(tmp_path)
        out = str(tmp_path / "out")
        result = CliRunner().invoke(
            main,
            [
                "run",
                "--train",
                train,
                "--test",
                test,
                "--capacity",
                "40",
                "--out",
                out,
            ],
        )
        assert result.exit_code == 0, combined_output(result)
        assert os.path.exists(os.path.join(out, "metrics.json"))

    def test_missing_capacity_exits_with_config_code(self, tmp_path):
        train, test = self.synth_files(tmp_path)
        result = CliRunner().invoke(main, ["run", "--train", train, "--test", test])
        assert result.exit_code == 2
        assert "config error" in combined_output(result)

    def test_missing_data_file_exits_with_data_code(self, tmp_path):
        result = CliRunner().invoke(
            main,
            [
                "run",
                "--train",
                str(tmp_path / "no.cveb"),
                "--test",
                str(tmp_path / "no2.cveb"),
                "--capacity",
                "10",
            ],
        )
        assert result.exit_code == 3
        assert "data error" in combined_output(result)

    def test_report_recomputes_from_an_out_dir(self, tmp_path):
        out = str(tmp_path / "out")
        emit(run_experiment(synth_config()), out)
        result = CliRunner().invoke(main, ["report", out])
        assert result.exit_code == 0, combined_output(result)
        audit = json.loads(result.output)
        metrics = json.loads((tmp_path / "out" / "metrics.json").read_text())
        assert audit["avg_accuracy"] == metrics["avg_accuracy"]

    def test_report_on_empty_directory_exits_with_data_code(self, tmp_path):
        result = CliRunner().invoke(main, ["report", str(tmp_path)])
        assert result.exit_code == 3

    def test_inspect_summarizes_every_format(self, tmp_path):
        train, _ = self.synth_files(tmp_path)

        exset = ExemplarSet(capacity=4)
        observe(
            exset,
            EmbeddingRecord(0, np.array([1.0, 2.0], dtype=np.float32)),
            task=0,
        )
        snapshot = str(tmp_path / "set.cves")
        save_exemplars(snapshot, exset)

        clf = SingleHeadClassifier(dim=2, seed=0)
        clf.expand(2)
        checkpoint = str(tmp_path / "clf.cvwt")
        save_classifier(checkpoint, clf)

        csv_path = str(tmp_path / "rows.csv")
        save_embeddings_csv(csv_path, load_embeddings(train))

        result = CliRunner().invoke(
            main, ["inspect", train, snapshot, checkpoint, csv_path]
        )
        assert result.exit_code == 0, combined_output(result)
        doc = json.loads(result.output)
        assert doc[train]["format"].startswith("embedding dataset")
        assert doc[train]["rows"] == 80
        assert doc[snapshot]["exemplars"] == 1
        assert doc[checkpoint]["classes"] == 2
        assert doc[csv_path]["format"] == "embedding dataset (CSV)"

    def test_inspect_rejects_unknown_files(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"XXXX1234")
        result = CliRunner().invoke(main, ["inspect", str(path)])
        assert result.exit_code == 3
        assert "unrecognized" in combined_output(result)
