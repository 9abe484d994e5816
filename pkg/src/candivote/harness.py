"""Experiment orchestration: run a task sequence, measure, and emit files.

A run loads (or synthesizes) paired train/test embedding tables, slices the
classes into tasks, and drives one ContinualLearner through them: expand,
stream the task once per epoch in seeded order, seal it, then evaluate on
the test rows of every class seen so far. Per-step accuracies, confusion
counts, weight-norm diagnostics, and storage accounting land in a metrics
report; `emit` writes the report as machine-readable files.

Wall-clock numbers are kept next to, but never inside, metrics.json: the
metrics file is a pure function of the config and seeds, so identical runs
produce identical bytes.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .classifier import SingleHeadClassifier
from .config import RunConfig
from .data import (
    EmbeddingDataset,
    generate_synthetic,
    load_embeddings,
    make_task_split,
    stream_task,
)
from .engine import ContinualLearner
from .errors import DataError, NumericError
from .exemplars import StorageReport
from .numeric import RngStream, least_squares_line

__all__ = [
    "StepMetrics",
    "BiasReport",
    "MetricsReport",
    "avg_last",
    "confusion",
    "bias_report",
    "run_experiment",
    "emit",
    "recompute_metrics",
]


def avg_last(per_step: Sequence[float]) -> tuple[float, float]:
    """Arithmetic mean of the per-step accuracies and the final one."""
    if len(per_step) == 0:
        raise NumericError("no per-step accuracies")
    return float(np.mean(per_step)), float(per_step[-1])


def confusion(predictions: Sequence[int], truths: Sequence[int], num_classes: int) -> np.ndarray:
    """(num_classes, num_classes) count matrix indexed [true, predicted]."""
    preds = np.asarray(predictions, dtype=np.int64)
    trues = np.asarray(truths, dtype=np.int64)
    if preds.shape != trues.shape:
        raise NumericError(f"{preds.shape[0]} predictions vs {trues.shape[0]} truths")
    mat = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(trues, preds):
        if not (0 <= t < num_classes and 0 <= p < num_classes):
            raise NumericError(f"label pair ({t}, {p}) outside [0, {num_classes})")
        mat[t, p] += 1
    return mat


@dataclass
class StepMetrics:
    """Evaluation snapshot taken after one task was learned."""

    step: int  # 1-based task count
    classes_seen: int
    accuracy: float
    newest_task_fraction: float  # share of predictions landing in the newest task
    mean_train_loss: float
    confusion: np.ndarray
    predictions: np.ndarray
    truths: np.ndarray


@dataclass
class BiasReport:
    """Weight-norm trend and prediction skew toward the newest task."""

    norms_by_task: dict[int, list[float]]
    slope: float | None
    intercept: float | None
    newest_task_fraction: float

    def to_dict(self) -> dict:
        return {
            "norms_by_task": {str(k): v for k, v in self.norms_by_task.items()},
            "slope": self.slope,
            "intercept": self.intercept,
            "newest_task_fraction": self.newest_task_fraction,
        }


@dataclass
class MetricsReport:
    """Everything a finished run reports, plus wall-clock kept separately."""

    steps: list[StepMetrics]
    avg_accuracy: float | None
    last_accuracy: float | None
    weight_norms: list[float]
    class_tasks: list[int]  # task index owning each class row
    trend_slope: float | None
    trend_intercept: float | None
    bias: BiasReport
    storage: StorageReport
    effective_beta: float
    config_echo: dict
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        """JSON-ready form. Timings are deliberately left out; see module doc."""
        return {
            "config": self.config_echo,
            "steps": [
                {
                    "step": s.step,
                    "classes_seen": s.classes_seen,
                    "accuracy": s.accuracy,
                    "newest_task_fraction": s.newest_task_fraction,
                    "mean_train_loss": s.mean_train_loss,
                    "confusion": s.confusion.tolist(),
                }
                for s in self.steps
            ],
            "avg_accuracy": self.avg_accuracy,
            "last_accuracy": self.last_accuracy,
            "weight_norms": self.weight_norms,
            "class_tasks": self.class_tasks,
            "trend": {"slope": self.trend_slope, "intercept": self.trend_intercept},
            "bias": self.bias.to_dict(),
            "storage": {
                "feature_bytes": self.storage.feature_bytes,
                "metadata_bytes": self.storage.metadata_bytes,
                "formula_check": self.storage.formula_check,
            },
            "effective_beta": self.effective_beta,
        }


def bias_report(
    clf: SingleHeadClassifier,
    task_split: Sequence[Sequence[int]],
    eval_predictions: Sequence[int],
) -> BiasReport:
    """Group weight norms by owning task, fit norm-vs-class-index, and
    measure how often the final evaluation predicted newest-task classes."""
    norms = clf.weight_norms()
    by_task: dict[int, list[float]] = {}
    for t, classes in enumerate(task_split):
        by_task[t] = [float(norms[c]) for c in classes]
    slope: float | None = None
    intercept: float | None = None
    if clf.num_classes >= 2:
        slope, intercept = least_squares_line(
            [(float(c), float(norms[c])) for c in range(clf.num_classes)]
        )
    preds = np.asarray(eval_predictions, dtype=np.int64)
    if preds.size and task_split:
        newest = np.asarray(list(task_split[-1]), dtype=np.int64)
        fraction = float(np.isin(preds, newest).mean())
    else:
        fraction = 0.0
    return BiasReport(
        norms_by_task=by_task, slope=slope, intercept=intercept, newest_task_fraction=fraction
    )


def _load_datasets(cfg: RunConfig) -> tuple[EmbeddingDataset, EmbeddingDataset]:
    if cfg.synth is not None:
        return generate_synthetic(cfg.synth.to_synth_config())
    assert cfg.train_path is not None and cfg.test_path is not None
    train = load_embeddings(cfg.train_path)
    test = load_embeddings(cfg.test_path)
    if train.dim != test.dim:
        raise DataError(f"train dim {train.dim} != test dim {test.dim}")
    if train.num_classes != test.num_classes:
        raise DataError(
            f"train has {train.num_classes} classes, test has {test.num_classes}"
        )
    return train, test


def run_experiment(cfg: RunConfig) -> MetricsReport:
    """Execute the full class-incremental protocol described by the config."""
    t_total = time.perf_counter()
    train, test = _load_datasets(cfg)
    split = make_task_split(train.num_classes, cfg.step_size, cfg.class_order_seed)

    # dataset labels may arrive in a shuffled class order; model class indices
    # are assigned contiguously in task order so each task owns a dense range
    remap: dict[int, int] = {}
    for classes in split:
        for orig in classes:
            remap[orig] = len(remap)
    test_model_labels = np.asarray([remap[int(l)] for l in test.labels], dtype=np.int64)

    learner = ContinualLearner(
        dim=train.dim,
        capacity=cfg.capacity,
        learning_rate=cfg.learning_rate,
        seed=cfg.seed,
        vote_params=cfg.vote_params(),
        augment_cfg=cfg.augment_config(),
        freeze=cfg.freeze,
        replay=cfg.replay,
    )
    data_rng = RngStream(cfg.seed).child(1)

    steps: list[StepMetrics] = []
    learn_seconds: list[float] = []
    eval_seconds: list[float] = []
    for k, classes in enumerate(split):
        t_learn = time.perf_counter()
        learner.begin_task(len(classes))
        epochs = cfg.first_task_epochs if k == 0 else cfg.epochs_per_task
        losses: list[float] = []
        for _ in range(epochs):
            feats_buf: list[np.ndarray] = []
            labels_buf: list[int] = []
            for rec in stream_task(train, classes, data_rng):
                feats_buf.append(rec.feature)
                labels_buf.append(remap[rec.label])
                if len(feats_buf) == cfg.batch_size:
                    losses.append(learner.learn_batch(np.stack(feats_buf), labels_buf))
                    feats_buf, labels_buf = [], []
            if feats_buf:
                losses.append(learner.learn_batch(np.stack(feats_buf), labels_buf))
        learner.end_task()
        learn_seconds.append(time.perf_counter() - t_learn)

        t_eval = time.perf_counter()
        seen = learner.num_classes
        rows = np.flatnonzero(test_model_labels < seen)
        truths = test_model_labels[rows]
        preds = learner.predict_batch(test.features[rows], cfg.mode)
        eval_seconds.append(time.perf_counter() - t_eval)

        newest = np.asarray(learner.task_classes[k], dtype=np.int64)
        steps.append(
            StepMetrics(
                step=k + 1,
                classes_seen=seen,
                accuracy=float((preds == truths).mean()),
                newest_task_fraction=float(np.isin(preds, newest).mean()),
                mean_train_loss=float(np.mean(losses)) if losses else 0.0,
                confusion=confusion(preds, truths, seen),
                predictions=preds,
                truths=truths,
            )
        )

    if steps:
        avg, last = avg_last([s.accuracy for s in steps])
        final_preds = steps[-1].predictions
    else:
        avg, last = None, None
        final_preds = np.empty(0, dtype=np.int64)
    norms = learner.classifier.weight_norms()
    class_tasks = [0] * learner.num_classes
    for t, model_classes in enumerate(learner.task_classes):
        for c in model_classes:
            class_tasks[c] = t
    bias = bias_report(learner.classifier, learner.task_classes, final_preds)
    return MetricsReport(
        steps=steps,
        avg_accuracy=avg,
        last_accuracy=last,
        weight_norms=[float(x) for x in norms],
        class_tasks=class_tasks,
        trend_slope=bias.slope,
        trend_intercept=bias.intercept,
        bias=bias,
        storage=learner.storage_report(),
        effective_beta=learner.effective_beta,
        config_echo=cfg.echo(),
        timings={
            "learn_seconds": learn_seconds,
            "eval_seconds": eval_seconds,
            "total_seconds": time.perf_counter() - t_total,
        },
    )


def _curve_svg(accuracies: Sequence[float]) -> str:
    """Dependency-free accuracy line plot: axes, gridlines, one polyline."""
    width, height = 600, 360
    left, right, top, bottom = 60, 20, 20, 40
    plot_w = width - left - right
    plot_h = height - top - bottom
    n = len(accuracies)
    pts = []
    for i, acc in enumerate(accuracies):
        x = left + (plot_w * i / max(n - 1, 1))
        y = top + plot_h * (1.0 - min(max(acc, 0.0), 1.0))
        pts.append(f"{x:.1f},{y:.1f}")
    grid = []
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = top + plot_h * (1.0 - frac)
        grid.append(
            f'<line x1="{left}" y1="{y:.1f}" x2="{width - right}" y2="{y:.1f}" '
            f'stroke="#ddd" stroke-width="1"/>'
            f'<text x="{left - 8}" y="{y + 4:.1f}" text-anchor="end" '
            f'font-size="12" font-family="sans-serif">{frac:.2f}</text>'
        )
    ticks = []
    for i in range(n):
        x = left + (plot_w * i / max(n - 1, 1))
        ticks.append(
            f'<text x="{x:.1f}" y="{height - bottom + 18}" text-anchor="middle" '
            f'font-size="12" font-family="sans-serif">{i + 1}</text>'
        )
    line = (
        f'<polyline points="{" ".join(pts)}" fill="none" stroke="#1f6fb2" stroke-width="2"/>'
        if n > 1
        else ""
    )
    dots = "".join(
        f'<circle cx="{p.split(",")[0]}" cy="{p.split(",")[1]}" r="3" fill="#1f6fb2"/>'
        for p in pts
    )
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
        f'<rect width="{width}" height="{height}" fill="white"/>'
        + "".join(grid)
        + f'<line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" stroke="#333"/>'
        + f'<line x1="{left}" y1="{height - bottom}" x2="{width - right}" '
        f'y2="{height - bottom}" stroke="#333"/>'
        + "".join(ticks)
        + line
        + dots
        + f'<text x="{left + plot_w / 2:.1f}" y="{height - 6}" text-anchor="middle" '
        f'font-size="13" font-family="sans-serif">step</text>'
        + "</svg>\n"
    )


def _write_text(path: str, text: str) -> None:
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def emit(report: MetricsReport, outdir: str) -> list[str]:
    """Write the report as files under outdir; returns the paths written.

    metrics.json carries the full deterministic report; timings.json carries
    the wall-clock numbers; CSVs cover the accuracy curve, per-step confusion
    counts and predictions, and per-class weight norms; curve.svg is a small
    standalone plot.
    """
    try:
        os.makedirs(outdir, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {outdir}: {exc}") from exc
    written: list[str] = []

    def target(name: str) -> str:
        path = os.path.join(outdir, name)
        written.append(path)
        return path

    _write_text(
        target("metrics.json"), json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    _write_text(
        target("timings.json"), json.dumps(report.timings, indent=2, sort_keys=True) + "\n"
    )
    acc_rows = ["step,accuracy"] + [f"{s.step},{s.accuracy!r}" for s in report.steps]
    _write_text(target("accuracy_curve.csv"), "\n".join(acc_rows) + "\n")
    for s in report.steps:
        c = s.classes_seen
        header = "true_class," + ",".join(f"pred_{j}" for j in range(c))
        rows = [header] + [
            f"{i}," + ",".join(str(int(x)) for x in s.confusion[i]) for i in range(c)
        ]
        _write_text(target(f"confusion_step{s.step}.csv"), "\n".join(rows) + "\n")
        pred_rows = ["truth,prediction"] + [
            f"{int(t)},{int(p)}" for t, p in zip(s.truths, s.predictions)
        ]
        _write_text(target(f"predictions_step{s.step}.csv"), "\n".join(pred_rows) + "\n")
    norm_rows = ["class,norm,task"] + [
        f"{c},{report.weight_norms[c]!r},{report.class_tasks[c]}"
        for c in range(len(report.weight_norms))
    ]
    _write_text(target("weight_norms.csv"), "\n".join(norm_rows) + "\n")
    _write_text(
        target("storage.json"),
        json.dumps(
            {
                "feature_bytes": report.storage.feature_bytes,
                "metadata_bytes": report.storage.metadata_bytes,
                "formula_check": report.storage.formula_check,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
    )
    if report.steps:
        _write_text(target("curve.svg"), _curve_svg([s.accuracy for s in report.steps]))
    return written


def recompute_metrics(outdir: str) -> dict:
    """Rebuild the accuracy curve and confusion counts from saved predictions.

    Reads every predictions_step{k}.csv in outdir; useful as an audit that
    metrics.json matches its own raw predictions.
    """
    import csv as _csv
    import re

    files: list[tuple[int, str]] = []
    try:
        names = os.listdir(outdir)
    except OSError as exc:
        raise DataError(f"cannot list {outdir}: {exc}") from exc
    for name in names:
        m = re.fullmatch(r"predictions_step(\d+)\.csv", name)
        if m:
            files.append((int(m.group(1)), os.path.join(outdir, name)))
    if not files:
        raise DataError(f"no predictions_step*.csv files in {outdir}")
    files.sort()
    steps = []
    for step, path in files:
        truths: list[int] = []
        preds: list[int] = []
        with open(path, newline="") as fh:
            reader = _csv.reader(fh)
            header = next(reader, None)
            if header != ["truth", "prediction"]:
                raise DataError(f"{path}: unexpected header {header}")
            for lineno, row in enumerate(reader, start=2):
                if len(row) != 2:
                    raise DataError(f"{path}: line {lineno}: expected 2 fields")
                try:
                    truths.append(int(row[0]))
                    preds.append(int(row[1]))
                except ValueError as exc:
                    raise DataError(f"{path}: line {lineno}: {exc}") from exc
        c = max(max(truths), max(preds)) + 1 if truths else 0
        mat = confusion(preds, truths, c) if c else np.zeros((0, 0), dtype=np.int64)
        acc = float(np.mean(np.asarray(preds) == np.asarray(truths))) if truths else 0.0
        steps.append({"step": step, "accuracy": acc, "records": len(truths), "confusion": mat.tolist()})
    avg, last = avg_last([s["accuracy"] for s in steps])
    return {"steps": steps, "avg_accuracy": avg, "last_accuracy": last}
