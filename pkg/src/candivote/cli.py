"""Command line front end.

`run` executes an experiment described by a JSON config file, with every
flag overriding its config key; `--server` ships the same config to a
running service instead and saves the returned report. `synth` writes a
synthetic train/test pair, `inspect` summarizes any of the binary file
formats, `report` recomputes metrics from saved per-step predictions, and
`serve` starts the HTTP service.

Exit codes: 0 success, 2 bad configuration or usage, 3 unreadable or
malformed data, 4 numeric contract violation.
"""

from __future__ import annotations

import functools
import json
import os
import sys
from typing import Any, Callable

import click

from . import __version__
from .config import RunConfig, config_from_dict
from .data import SynthConfig, generate_synthetic, load_embeddings, load_embeddings_csv, save_embeddings
from .errors import ConfigError, DataError, NumericError
from .harness import emit, recompute_metrics, run_experiment

MODE_FLAGS = {
    "baseline": "baseline",
    "baseline-ea": "baseline_ea",
    "cs-pnn": "cs_pnn_only",
    "full": "full",
}

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _exit_on_error(func: Callable) -> Callable:
    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any):
        try:
            return func(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except DataError as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(EXIT_DATA)
        except NumericError as exc:
            click.echo(f"numeric error: {exc}", err=True)
            sys.exit(EXIT_NUMERIC)

    return wrapper


@click.group()
@click.version_option(__version__, prog_name="candivote")
def main() -> None:
    """Online class-incremental learning with candidate voting."""


def _merged_config(config_path: str | None, overrides: dict[str, Any]) -> RunConfig:
    raw: dict[str, Any] = {}
    if config_path is not None:
        try:
            with open(config_path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{config_path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{config_path}: config root must be a JSON object")
    for key, value in overrides.items():
        if value is not None:
            raw[key] = value
    return config_from_dict(raw)


def _print_summary(metrics: dict) -> None:
    for step in metrics.get("steps", []):
        click.echo(
            f"step {step['step']}: classes {step['classes_seen']}, "
            f"accuracy {step['accuracy']:.4f}"
        )
    avg = metrics.get("avg_accuracy")
    last = metrics.get("last_accuracy")
    if avg is not None and last is not None:
        click.echo(f"avg {avg:.4f}  last {last:.4f}")
    click.echo(f"effective beta {metrics.get('effective_beta')}")


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None, help="JSON config file.")
@click.option("--train", "train_path", type=click.Path(), default=None, help="Training embedding file.")
@click.option("--test", "test_path", type=click.Path(), default=None, help="Test embedding file.")
@click.option("--step-size", type=int, default=None, help="Classes per task.")
@click.option("--capacity", type=int, default=None, help="Total exemplar budget Q.")
@click.option("--mode", type=click.Choice(sorted(MODE_FLAGS)), default=None, help="Inference variant.")
@click.option("--beta", type=float, default=None, help="Prior incorporation constant in (0,1).")
@click.option("--pilot-beta/--fixed-beta", "pilot_beta", default=None, help="Estimate beta from a pilot set at each task boundary.")
@click.option("--eps-n", type=float, default=None, help="Candidate-normalization regularizer.")
@click.option("--eps-r", type=float, default=None, help="Distance-prior regularizer.")
@click.option("--alpha-r", type=float, default=None, help="Augmentation noise scale.")
@click.option("--lr", "learning_rate", type=float, default=None, help="SGD learning rate.")
@click.option("--batch-size", type=int, default=None, help="Stream batch size.")
@click.option("--epochs", "epochs_per_task", type=int, default=None, help="Epochs per task.")
@click.option("--first-task-epochs", type=int, default=None, help="Epochs for the first task only.")
@click.option("--seed", type=int, default=None, help="Master seed.")
@click.option("--out", "out_dir", type=click.Path(), default=None, help="Output directory for report files.")
@click.option("--freeze/--no-freeze", "freeze", default=None, help="Freeze each task's weight rows after learning it.")
@click.option("--replay/--no-replay", "replay", default=None, help="Pair stream batches with stored exemplars.")
@click.option("--server", default=None, help="Run on a service at this base URL instead of locally.")
@_exit_on_error
def run(config_path: str | None, server: str | None, **overrides: Any) -> None:
    """Run a class-incremental experiment and write its report."""
    if overrides.get("mode") is not None:
        overrides["mode"] = MODE_FLAGS[overrides["mode"]]
    cfg = _merged_config(config_path, overrides)
    if server is not None:
        _run_remote(cfg, server)
        return
    report = run_experiment(cfg)
    metrics = report.to_dict()
    _print_summary(metrics)
    if cfg.out_dir:
        written = emit(report, cfg.out_dir)
        click.echo(f"wrote {len(written)} files to {cfg.out_dir}")


def _run_remote(cfg: RunConfig, server: str) -> None:
    """POST the config to a service and save the returned report locally.

    The service executes the run; file emission happens here, not there, so
    out_dir is stripped from the request. Only metrics.json and timings.json
    can be reconstructed client-side; per-step CSVs require a local run.
    """
    import httpx

    out_dir = cfg.out_dir
    payload = cfg.echo()
    payload["out_dir"] = None
    url = server.rstrip("/") + "/experiments"
    try:
        resp = httpx.post(url, json={"config": payload}, timeout=600.0)
    except httpx.HTTPError as exc:
        raise DataError(f"cannot reach service at {url}: {exc}") from exc
    if resp.status_code != 200:
        try:
            body = resp.json()
        except ValueError:
            body = {"error": "unknown", "detail": resp.text}
        detail = f"{body.get('detail', resp.text)} (HTTP {resp.status_code})"
        kind = body.get("error")
        if kind == "config_error":
            raise ConfigError(detail)
        if kind == "numeric_error":
            raise NumericError(detail)
        raise DataError(detail)
    result = resp.json()
    metrics = result["metrics"]
    _print_summary(metrics)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        metrics_path = os.path.join(out_dir, "metrics.json")
        with open(metrics_path, "w") as fh:
            fh.write(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
        with open(os.path.join(out_dir, "timings.json"), "w") as fh:
            fh.write(json.dumps(result.get("timings", {}), indent=2, sort_keys=True) + "\n")
        click.echo(f"wrote metrics.json and timings.json to {out_dir}")


@main.command()
@click.option("--classes", "num_classes", type=int, required=True, help="Number of classes.")
@click.option("--dim", type=int, required=True, help="Feature dimensionality.")
@click.option("--train-per-class", type=int, required=True, help="Training rows per class.")
@click.option("--test-per-class", type=int, required=True, help="Test rows per class.")
@click.option("--std", type=float, default=1.0, show_default=True, help="Within-class standard deviation.")
@click.option("--separation", type=float, default=10.0, show_default=True, help="Distance between adjacent class means, in std units.")
@click.option("--seed", type=int, default=0, show_default=True, help="Generator seed.")
@click.option("--train-out", required=True, type=click.Path(), help="Output path for the training file.")
@click.option("--test-out", required=True, type=click.Path(), help="Output path for the test file.")
@_exit_on_error
def synth(
    num_classes: int,
    dim: int,
    train_per_class: int,
    test_per_class: int,
    std: float,
    separation: float,
    seed: int,
    train_out: str,
    test_out: str,
) -> None:
    """Generate a synthetic Gaussian-blob train/test embedding pair."""
    cfg = SynthConfig(
        num_classes=num_classes,
        dim=dim,
        train_per_class=train_per_class,
        test_per_class=test_per_class,
        std=std,
        separation=separation,
        seed=seed,
    )
    train, test = generate_synthetic(cfg)
    save_embeddings(train_out, train)
    save_embeddings(test_out, test)
    click.echo(
        f"wrote {train.num_rows} train rows to {train_out} and "
        f"{test.num_rows} test rows to {test_out} ({num_classes} classes, dim {dim})"
    )


def _inspect_file(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    if magic == b"CVEB":
        ds = load_embeddings(path)
        counts = ds.class_counts()
        return {
            "format": "embedding dataset (CVEB v1)",
            "dim": ds.dim,
            "rows": ds.num_rows,
            "classes": ds.num_classes,
            "rows_per_class": {str(c): int(counts[c]) for c in range(ds.num_classes)},
        }
    if magic == b"CVES":
        from .exemplars import load_exemplars, storage_bytes

        exset = load_exemplars(path)
        report = storage_bytes(exset)
        return {
            "format": "exemplar snapshot (CVES v1)",
            "dim": exset.dim,
            "exemplars": exset.total_items,
            "classes": exset.num_classes,
            "tasks": exset.learned_tasks(),
            "per_class": {
                str(label): len(store.items) for label, store in sorted(exset.stores.items())
            },
            "feature_bytes": report.feature_bytes,
        }
    if magic == b"CVWT":
        from .classifier import load_classifier

        clf = load_classifier(path)
        norms = clf.weight_norms()
        return {
            "format": "classifier checkpoint (CVWT v1)",
            "classes": clf.num_classes,
            "dim": clf.dim,
            "frozen_classes": sorted(clf.frozen_classes),
            "weight_norms": [round(float(x), 6) for x in norms],
        }
    if path.endswith(".csv"):
        ds = load_embeddings_csv(path)
        counts = ds.class_counts()
        return {
            "format": "embedding dataset (CSV)",
            "dim": ds.dim,
            "rows": ds.num_rows,
            "classes": ds.num_classes,
            "rows_per_class": {str(c): int(counts[c]) for c in range(ds.num_classes)},
        }
    raise DataError(f"{path}: unrecognized magic {magic!r}")


@main.command()
@click.argument("paths", nargs=-1, required=True, type=click.Path())
@_exit_on_error
def inspect(paths: tuple[str, ...]) -> None:
    """Summarize dataset, snapshot, or checkpoint files."""
    out = {path: _inspect_file(path) for path in paths}
    click.echo(json.dumps(out, indent=2, sort_keys=True))


@main.command()
@click.argument("outdir", type=click.Path())
@_exit_on_error
def report(outdir: str) -> None:
    """Recompute metrics from the per-step prediction files in OUTDIR."""
    recomputed = recompute_metrics(outdir)
    click.echo(json.dumps(recomputed, indent=2, sort_keys=True))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True, help="Bind address.")
@click.option("--port", type=int, default=8000, show_default=True, help="Bind port.")
@_exit_on_error
def serve(host: str, port: int) -> None:
    """Start the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
