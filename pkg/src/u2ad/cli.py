"""Command-line entry point: generate / train / detect / evaluate / report.

Exit codes: 1 for configuration problems (including usage errors), 2 for
data problems, 3 for runtime failures.  Each failure prints one
machine-parsable line on stderr: ``u2ad: <class>-error: <reason>``.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click
import numpy as np

from . import harness
from .config import ConfigError, load_config
from .data import DataError, SyntheticSpec, generate_synthetic, load_series, save_series


def _build_config(config_path, overrides, seed):
    cfg = load_config(config_path, list(overrides))
    if seed is not None:
        cfg.train.seed = seed
        cfg.synthetic.seed = seed
    return cfg


common_options = [
    click.option("--config", "config_path", type=click.Path(), default=None, help="YAML config file."),
    click.option("--set", "overrides", multiple=True, help="Override a config key: section.key=value."),
    click.option("--out", "out_dir", type=click.Path(), default="runs/default", help="Run/output directory."),
    click.option("--seed", type=int, default=None, help="Override the training/generation seed."),
]


def with_common(fn):
    for opt in reversed(common_options):
        fn = opt(fn)
    return fn


@click.group()
def cli() -> None:
    """Score-based anomaly detection for multivariate time series."""


@cli.command()
@with_common
def generate(config_path, overrides, out_dir, seed) -> None:
    """Write a synthetic dataset: clean train split, labeled test split."""
    cfg = _build_config(config_path, overrides, seed)
    s = cfg.synthetic
    test_spec = SyntheticSpec(
        length=s.length,
        channels=s.channels,
        noise=s.noise,
        amplitude=s.amplitude,
        components=s.components,
        period_range=(s.period_min, s.period_max),
        mix=dict(s.anomalies),
        length_range=(s.length_min, s.length_max),
        seed=s.seed,
    )
    train_spec = SyntheticSpec(
        length=s.train_length,
        channels=s.channels,
        noise=s.noise,
        amplitude=s.amplitude,
        components=s.components,
        period_range=(s.period_min, s.period_max),
        mix={},
        length_range=(s.length_min, s.length_max),
        seed=s.seed,
    )
    out = Path(out_dir)
    save_series(generate_synthetic(train_spec), out / "train.csv")
    save_series(generate_synthetic(test_spec), out / "test.csv")
    click.echo(f"wrote {out / 'train.csv'} and {out / 'test.csv'} (+ labels)")


@cli.command()
@with_common
def train(config_path, overrides, out_dir, seed) -> None:
    """Train the score network and write run artifacts."""
    cfg = _build_config(config_path, overrides, seed)
    artifacts = harness.run_seeds(cfg, out_dir)
    for art in artifacts:
        click.echo(f"trained: {art.checkpoint_best}")


@cli.command()
@with_common
def evaluate(config_path, overrides, out_dir, seed) -> None:
    """Evaluate the trained model on the test split and print the report."""
    cfg = _build_config(config_path, overrides, seed)
    reports = harness.evaluate_seeds(cfg, out_dir)
    for report in reports:
        click.echo(report.to_table(), nl=False)


@cli.command()
@with_common
@click.option("--series", "series_path", type=click.Path(), required=True, help="Series file to score.")
def detect(config_path, overrides, out_dir, seed, series_path) -> None:
    """Score an unlabeled series; labels on disk are never read."""
    cfg = _build_config(config_path, overrides, seed)
    dest = harness.detect(cfg, out_dir, series_path, Path(out_dir) / "detect_scores.csv")
    click.echo(f"wrote {dest}")


@cli.command()
@with_common
def report(config_path, overrides, out_dir, seed) -> None:
    """Render score traces with the threshold line and print the metrics table."""
    import json

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cfg = _build_config(config_path, overrides, seed)
    out = Path(out_dir)
    scores_csv = out / "scores_test.csv"
    if not scores_csv.exists():
        raise DataError(f"{scores_csv}: not found (run evaluate first)")
    rows = np.loadtxt(scores_csv, delimiter=",", skiprows=1)
    scores = rows[:, 1]
    thr_file = out / "threshold.json"
    threshold = json.loads(thr_file.read_text())["threshold"] if thr_file.exists() else None

    fig, axes = plt.subplots(2, 1, figsize=(12, 6), sharex=True)
    if cfg.data.test_path and Path(cfg.data.test_path).exists():
        series = load_series(cfg.data.test_path, format=cfg.data.format, has_header=cfg.data.has_header)
        axes[0].plot(series.values[:, 0], lw=0.7, color="tab:gray")
        if series.labels is not None:
            for start, end in _label_spans(series.labels):
                axes[0].axvspan(start, end, color="tab:red", alpha=0.2)
    axes[0].set_ylabel("input (ch 0)")
    axes[1].plot(scores, lw=0.7, color="tab:blue")
    if threshold is not None:
        axes[1].axhline(threshold, ls=":", color="tab:blue")
    axes[1].set_ylabel("anomaly score")
    axes[1].set_xlabel("time")
    fig.tight_layout()
    fig.savefig(out / "report.png", dpi=120)
    plt.close(fig)
    click.echo(f"wrote {out / 'report.png'}")

    report_txt = out / "report.txt"
    if report_txt.exists():
        click.echo(report_txt.read_text(), nl=False)


def _label_spans(labels):
    spans = []
    start = None
    for i, v in enumerate(labels):
        if v and start is None:
            start = i
        elif not v and start is not None:
            spans.append((start, i))
            start = None
    if start is not None:
        spans.append((start, len(labels)))
    return spans


def run(argv: list[str]) -> int:
    """Invoke the CLI programmatically, mapping failures to exit codes."""
    try:
        cli.main(args=list(argv), prog_name="u2ad", standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        print("u2ad: runtime-error: aborted", file=sys.stderr)
        return 3
    except click.exceptions.UsageError as exc:
        ctx = exc.ctx
        usage = ctx.get_usage() if ctx is not None else cli.get_usage(click.Context(cli, info_name="u2ad"))
        print(usage, file=sys.stderr)
        print(f"u2ad: config-error: {exc.format_message()}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"u2ad: config-error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"u2ad: data-error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports anything else as runtime
        print(f"u2ad: runtime-error: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
