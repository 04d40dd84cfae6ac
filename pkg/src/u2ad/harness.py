"""Experiment orchestration: training with the two-phase minimax objective,
deterministic evaluation passes, ablation toggles, and artifact management.

A run directory is self-contained: checkpoint(s), a JSON manifest, the loss
log, score CSVs, the evaluation report, and a config snapshot suffice to
re-evaluate without retraining.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import os
import platform
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .config import ConfigError, ExperimentConfig, dump_config
from .data import (
    DataError,
    LabeledSeries,
    NormalizationStats,
    fit_stats,
    gap_statistic_ratio,
    load_series,
    normalize,
    window,
)
from .data.ratio import DegenerateScoresError
from .metrics import EvaluationReport, build_report
from .objectives import (
    Center,
    LossComponents,
    contextual_gain,
    denoise_estimate,
    init_center,
    rec_loss,
    total_loss,
    vm_loss,
    weighted_dsm_loss,
)
from .scorenet import DualPathwayScoreNet, ScoreNetConfig
from .scoring import (
    AnomalyScoreSeries,
    WindowScore,
    export_scores,
    stitch,
    threshold_by_ratio,
    window_anomaly_score,
)
from .sde import NoiseSchedule, perturb
from .solver import SolverConfig, integrate_reverse

THREADS_ENV = "U2AD_THREADS"


class TrainingDiverged(RuntimeError):
    """Non-finite loss; the last good checkpoint is retained on disk."""


@dataclass
class RunArtifacts:
    out_dir: Path
    checkpoint_best: Path
    checkpoint_last: Path
    manifest: Path
    loss_log: Path
    config_snapshot: Path


def apply_thread_cap() -> None:
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            torch.set_num_threads(max(1, int(cap)))
        except ValueError:
            pass


def environment_fingerprint() -> dict:
    return {
        "package": __version__,
        "python": platform.python_version(),
        "platform": platform.platform(),
        "numpy": np.__version__,
        "torch": torch.__version__,
    }


def make_schedule(cfg: ExperimentConfig) -> NoiseSchedule:
    s = cfg.sde
    return NoiseSchedule(
        kind=s.kind,
        beta_min=s.beta_min,
        beta_max=s.beta_max,
        sigma_min=s.sigma_min,
        sigma_max=s.sigma_max,
        t_eps=s.t_eps,
    )


def make_solver_config(cfg: ExperimentConfig) -> SolverConfig:
    s = cfg.solver
    return SolverConfig(t_rec=s.t_rec, t_end=s.t_end, rtol=s.rtol, atol=s.atol, max_steps=s.max_steps)


def make_net(cfg: ExperimentConfig, d_in: int) -> DualPathwayScoreNet:
    sc = cfg.scorenet
    net_cfg = ScoreNetConfig(
        K=sc.layers,
        d_model=sc.d_model,
        n_heads=sc.n_heads,
        N=cfg.data.window,
        d_in=d_in,
        dropout=sc.dropout,
        d_ff=sc.d_ff,
    )
    return DualPathwayScoreNet(net_cfg)


def _loss_weights(cfg: ExperimentConfig) -> tuple[float, float, float]:
    n = cfg.data.window
    l1 = cfg.loss.lambda1 if cfg.loss.lambda1 is not None else 1.0 / n
    l2 = cfg.loss.lambda2 if cfg.loss.lambda2 is not None else 1.0 / n
    return l1, l2, cfg.loss.lambda3


def _load_split(cfg: ExperimentConfig, path: str | None, role: str) -> LabeledSeries:
    if path is None:
        raise DataError(f"no {role} path configured")
    return load_series(path, format=cfg.data.format, has_header=cfg.data.has_header)


def _train_windows(cfg: ExperimentConfig, series: LabeledSeries) -> np.ndarray:
    stride = cfg.data.train_stride or cfg.data.window
    wins = window(series, cfg.data.window, stride)
    n_used = max(1, int(len(wins) * cfg.data.train_fraction))
    return np.stack([w.x0 for w in wins[:n_used]])


def _sample_times(rng: np.random.Generator, schedule: NoiseSchedule, n: int) -> np.ndarray:
    # uniform on (t_eps, T]
    return schedule.T - rng.random(n) * (schedule.T - schedule.t_eps)


def _compute_parts(cfg, model, schedule, center, x0_np, t_np, noise_np, rec_noise_np, detach_psi, detach_xi):
    """Forward pass(es) plus all enabled loss terms for one batch.

    The reconstruction term runs a separate pass at the solver's entry
    noise level ``t_rec``: that is the level the reverse solver starts from
    at inference, and it keeps the single-step inversion's 1/alpha
    amplification bounded (at t near T the factor explodes and would drown
    every other gradient).
    """
    dtype = next(model.parameters()).dtype
    raw = cfg.ablation.raw_model
    zero = torch.zeros((), dtype=dtype)
    x0_t = torch.as_tensor(x0_np, dtype=dtype)

    if raw:
        out = model(x0_t, torch.as_tensor(np.full(x0_np.shape[0], schedule.t_eps)))
        dsm = vm = zero
        rec = rec_loss(x0_t, out.score)[1] if cfg.loss.enable_rec else zero
    else:
        batch = perturb(schedule, x0_np, t_np, noise_np)
        out = model(torch.as_tensor(batch.xt, dtype=dtype), torch.as_tensor(t_np, dtype=torch.float64))
        dsm = weighted_dsm_loss(out.score, batch) if cfg.loss.enable_dsm else zero
        vm = vm_loss(out.score, center)[1] if cfg.loss.enable_vm else zero
        if cfg.loss.enable_rec:
            # unbiased subsample: the extra pass at t_rec is the step's main cost
            k = max(1, x0_np.shape[0] // 4)
            t_rec = cfg.solver.t_rec
            rec_batch = perturb(schedule, x0_np[:k], t_rec, rec_noise_np[:k])
            rec_out = model(torch.as_tensor(rec_batch.xt, dtype=dtype), t_rec)
            rec = rec_loss(x0_t[:k], denoise_estimate(rec_out.score, rec_batch))[1]
        else:
            rec = zero
    if cfg.loss.enable_gamma:
        gamma = contextual_gain(out.chars, detach_psi=detach_psi, detach_xi=detach_xi).mean()
    else:
        gamma = zero
    return out, dsm, rec, vm, gamma


def _log_line(fh, step, dsm, rec, vm, gamma, lambdas, phase) -> LossComponents:
    l1, l2, l3 = lambdas
    vals = [float(v.detach() if torch.is_tensor(v) else v) for v in (dsm, rec, vm, gamma)]
    comp = LossComponents(
        dsm=vals[0],
        rec=vals[1],
        vm=vals[2],
        gamma=vals[3],
        total=vals[0] + l1 * vals[1] + l2 * vals[2] - l3 * vals[3],
    )
    fh.write(
        json.dumps(
            {
                "step": step,
                "dsm": comp.dsm,
                "rec": comp.rec,
                "vm": comp.vm,
                "gamma": comp.gamma,
                "total": comp.total,
                "phase": phase,
            }
        )
        + "\n"
    )
    return comp


def _save_checkpoint(path: Path, model, center, stats, cfg: ExperimentConfig, step: int) -> None:
    torch.save(
        {
            "model_state": model.state_dict(),
            "center": center.c,
            "norm_mean": stats.mean if stats else None,
            "norm_std": stats.std if stats else None,
            "scorenet": dataclasses.asdict(cfg.scorenet),
            "sde": dataclasses.asdict(cfg.sde),
            "window": cfg.data.window,
            "d_in": model.cfg.d_in,
            "step": step,
        },
        path,
    )


def load_checkpoint(cfg: ExperimentConfig, path: Path):
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    blob = torch.load(path, weights_only=False)
    for section, key in (("scorenet", "scorenet"), ("sde", "sde")):
        if blob[key] != dataclasses.asdict(getattr(cfg, section)):
            raise ConfigError(f"checkpoint/config mismatch in section {section!r}")
    if blob["window"] != cfg.data.window:
        raise ConfigError("checkpoint/config mismatch in data.window")
    model = make_net(cfg, d_in=blob["d_in"])
    model.load_state_dict(blob["model_state"])
    model.eval()
    center = Center(c=blob["center"])
    stats = None
    if blob["norm_mean"] is not None:
        stats = NormalizationStats(mean=blob["norm_mean"], std=blob["norm_std"])
    return model, center, stats


def train(cfg: ExperimentConfig, out_dir: str | Path) -> RunArtifacts:
    """Train one model and write all run artifacts into ``out_dir``."""
    apply_thread_cap()
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    seed = cfg.train.seed
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)

    series = _load_split(cfg, cfg.data.train_path, "train")
    stats = fit_stats(series) if cfg.data.normalize else None
    if stats is not None:
        series = normalize(series, stats)
    x_train = _train_windows(cfg, series)
    n_windows, N, d = x_train.shape

    schedule = make_schedule(cfg)
    model = make_net(cfg, d_in=d)
    lambdas = _loss_weights(cfg)

    def perturb_fresh(x0):
        t = _sample_times(rng, schedule, x0.shape[0])
        noise = rng.standard_normal(x0.shape)
        return perturb(schedule, x0, t, noise)

    batch_iter = [x_train[i : i + cfg.train.batch_size] for i in range(0, n_windows, cfg.train.batch_size)]
    center = init_center(model, batch_iter, perturb_fresh)

    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.train.lr)
    sched = torch.optim.lr_scheduler.ExponentialLR(optimizer, gamma=cfg.train.scheduler_gamma)

    paths = RunArtifacts(
        out_dir=out,
        checkpoint_best=out / "checkpoint_best.pt",
        checkpoint_last=out / "checkpoint_last.pt",
        manifest=out / "manifest.json",
        loss_log=out / "loss_log.jsonl",
        config_snapshot=out / "config.yaml",
    )
    dump_config(cfg, paths.config_snapshot)
    _save_checkpoint(paths.checkpoint_last, model, center, stats, cfg, step=0)
    _save_checkpoint(paths.checkpoint_best, model, center, stats, cfg, step=0)

    step = 0
    best = float("inf")
    bad_epochs = 0
    epoch_history: list[float] = []
    two_phase = cfg.loss.enable_gamma and cfg.loss.gamma_mode == "minimax" and not cfg.train.minimax_combined

    with paths.loss_log.open("w") as fh:
        for epoch in range(cfg.train.epochs):
            order = rng.permutation(n_windows)
            epoch_totals: list[float] = []
            for lo in range(0, n_windows, cfg.train.batch_size):
                x0 = x_train[order[lo : lo + cfg.train.batch_size]]
                t = _sample_times(rng, schedule, x0.shape[0])
                noise = rng.standard_normal(x0.shape)
                rec_noise = rng.standard_normal(x0.shape)
                step += 1

                try:
                    comp = _run_step(
                        cfg, model, schedule, center, x0, t, noise, rec_noise,
                        lambdas, two_phase, optimizer, fh, step, paths,
                    )
                except FloatingPointError as exc:
                    raise _diverged(paths, exc) from exc
                epoch_totals.append(comp.total)

            sched.step()
            epoch_mean = float(np.mean(epoch_totals))
            epoch_history.append(epoch_mean)
            _save_checkpoint(paths.checkpoint_last, model, center, stats, cfg, step)
            if epoch_mean < best - 1e-12:
                best = epoch_mean
                bad_epochs = 0
                _save_checkpoint(paths.checkpoint_best, model, center, stats, cfg, step)
            else:
                bad_epochs += 1
                if bad_epochs >= cfg.train.patience:
                    break

    paths.manifest.write_text(
        json.dumps(
            {
                "config": cfg.to_dict(),
                "schedule": dataclasses.asdict(cfg.sde),
                "training_step": step,
                "loss_history": epoch_history,
                "environment": environment_fingerprint(),
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    return paths


def _run_step(cfg, model, schedule, center, x0, t, noise, rec_noise, lambdas, two_phase, optimizer, fh, step, paths):
    if cfg.loss.gamma_mode == "literal" or not cfg.loss.enable_gamma:
        _, dsm, rec, vm, gamma = _compute_parts(cfg, model, schedule, center, x0, t, noise, rec_noise, False, False)
        loss = total_loss(dsm, rec, vm, gamma, *lambdas, phase="a")
        comp = _log_line(fh, step, dsm, rec, vm, gamma, lambdas, "literal")
        _step_or_diverge(loss, optimizer, comp, paths)
    elif cfg.train.minimax_combined:
        out, dsm, rec, vm, g_a = _compute_parts(cfg, model, schedule, center, x0, t, noise, rec_noise, True, False)
        g_b = contextual_gain(out.chars, detach_xi=True).mean()
        loss = total_loss(dsm, rec, vm, g_a, *lambdas, phase="a") + lambdas[2] * g_b
        comp = _log_line(fh, step, dsm, rec, vm, g_a, lambdas, "combined")
        _step_or_diverge(loss, optimizer, comp, paths)
    else:
        _, dsm, rec, vm, gamma = _compute_parts(cfg, model, schedule, center, x0, t, noise, rec_noise, True, False)
        loss_a = total_loss(dsm, rec, vm, gamma, *lambdas, phase="a")
        comp = _log_line(fh, step, dsm, rec, vm, gamma, lambdas, "a")
        _step_or_diverge(loss_a, optimizer, comp, paths)
        if two_phase:
            _, dsm, rec, vm, gamma = _compute_parts(cfg, model, schedule, center, x0, t, noise, rec_noise, False, True)
            loss_b = total_loss(dsm, rec, vm, gamma, *lambdas, phase="b")
            comp_b = _log_line(fh, step, dsm, rec, vm, gamma, lambdas, "b")
            _step_or_diverge(loss_b, optimizer, comp_b, paths)
    return comp


def _step_or_diverge(loss, optimizer, comp: LossComponents, paths: RunArtifacts) -> None:
    if not np.isfinite(comp.total):
        raise TrainingDiverged(
            f"non-finite training loss (total={comp.total}); last good checkpoint kept at {paths.checkpoint_last}"
        )
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()


def _diverged(paths: RunArtifacts, exc: FloatingPointError) -> TrainingDiverged:
    return TrainingDiverged(f"{exc}; last good checkpoint kept at {paths.checkpoint_last}")


def torch_score_fn(model):
    """Wrap a network as a numpy score field for the reverse solver."""
    dtype = next(model.parameters()).dtype

    def fn(x: np.ndarray, t: float) -> np.ndarray:
        with torch.no_grad():
            out = model(torch.as_tensor(x, dtype=dtype), float(t))
        return out.score.double().numpy()

    return fn


def score_series(cfg: ExperimentConfig, model, center: Center, series: LabeledSeries, rng) -> AnomalyScoreSeries:
    """Reconstruct every window of a series and stitch the composite
    per-point anomaly scores (mean over covering windows)."""
    schedule = make_schedule(cfg)
    solver_cfg = make_solver_config(cfg)
    stride = cfg.data.eval_stride or cfg.data.window
    wins = window(series, cfg.data.window, stride)
    starts = [w.start_index for w in wins]
    x_all = np.stack([w.x0 for w in wins])
    dtype = next(model.parameters()).dtype
    score_fn = torch_score_fn(model)
    c_np = center.c.double().numpy()

    window_scores: list[WindowScore] = []
    bs = max(1, cfg.solver.batch_windows)
    for lo in range(0, x_all.shape[0], bs):
        x0 = x_all[lo : lo + bs]
        if cfg.ablation.raw_model:
            with torch.no_grad():
                out = model(torch.as_tensor(x0, dtype=dtype), schedule.t_eps)
            x_hat = out.score.double().numpy()
            gamma = contextual_gain(out.chars).double().numpy()
            svals = np.zeros_like(x0)
            c_here = np.zeros_like(c_np)
        else:
            noise = rng.standard_normal(x0.shape)
            batch = perturb(schedule, x0, solver_cfg.t_rec, noise)
            with torch.no_grad():
                out = model(torch.as_tensor(batch.xt, dtype=dtype), solver_cfg.t_rec)
            gamma = contextual_gain(out.chars).double().numpy()
            svals = out.score.double().numpy()
            x_hat, _ = integrate_reverse(batch.xt, solver_cfg.t_rec, score_fn, schedule, solver_cfg)
            c_here = c_np
        for b in range(x0.shape[0]):
            window_scores.append(
                window_anomaly_score(x0[b], x_hat[b], svals[b], gamma[b], c_here)
            )
    return stitch(window_scores, starts, series.length)


def select_ratio(cfg: ExperimentConfig, train_scores: np.ndarray) -> float:
    if cfg.threshold.ratio_source == "fixed":
        return cfg.threshold.fixed_ratio
    try:
        return gap_statistic_ratio(train_scores)
    except (DegenerateScoresError, ValueError):
        return cfg.threshold.fixed_ratio


def evaluate(cfg: ExperimentConfig, out_dir: str | Path) -> EvaluationReport:
    """Score the test split against the trained model and write the report."""
    apply_thread_cap()
    cfg.validate()
    out = Path(out_dir)
    model, center, stats = load_checkpoint(cfg, out / f"checkpoint_{cfg.train.eval_checkpoint}.pt")
    rng = np.random.default_rng(cfg.train.seed)

    test_series = _load_split(cfg, cfg.data.test_path, "test")
    if test_series.labels is None:
        raise DataError("test split has no labels; evaluation requires a label sidecar")
    if stats is not None:
        test_series = normalize(test_series, stats)

    # train-split scores are only needed for the gap-statistic ratio or the
    # train+test threshold pool
    need_train = cfg.threshold.ratio_source == "gap_statistic" or cfg.threshold.pool == "train_test"
    train_scored = None
    if need_train:
        train_series = _load_split(cfg, cfg.data.train_path, "train")
        if stats is not None:
            train_series = normalize(train_series, stats)
        train_scored = score_series(cfg, model, center, train_series, rng)

    test_scored = score_series(cfg, model, center, test_series, rng)

    ratio = select_ratio(cfg, train_scored.scores) if train_scored is not None else cfg.threshold.fixed_ratio
    pool = (
        np.concatenate([train_scored.scores, test_scored.scores])
        if cfg.threshold.pool == "train_test"
        else test_scored.scores
    )
    detection = threshold_by_ratio(test_scored.scores, ratio, pool=pool)
    report = build_report(
        test_series.labels,
        test_scored.scores,
        detection.predictions,
        fixed_buffer=cfg.metrics.vus_fixed_buffer,
    )
    if train_scored is not None:
        export_scores(out / "scores_train.csv", train_scored)
    export_scores(out / "scores_test.csv", test_scored, detection.predictions)
    (out / "report.json").write_text(report.to_json())
    (out / "report.txt").write_text(report.to_table())
    (out / "threshold.json").write_text(
        json.dumps({"threshold": detection.threshold, "anomaly_ratio": detection.anomaly_ratio}, indent=2) + "\n"
    )
    return report


def detect(cfg: ExperimentConfig, out_dir: str | Path, series_path: str | Path, dest: str | Path) -> Path:
    """Score an unlabeled series and write scores + threshold; labels, even
    if present on disk, are never read."""
    apply_thread_cap()
    out = Path(out_dir)
    model, center, stats = load_checkpoint(cfg, out / f"checkpoint_{cfg.train.eval_checkpoint}.pt")
    series = load_series(series_path, format=cfg.data.format, has_header=cfg.data.has_header, attach_labels=False)
    if stats is not None:
        series = normalize(series, stats)
    rng = np.random.default_rng(cfg.train.seed)
    scored = score_series(cfg, model, center, series, rng)
    ratio = cfg.threshold.fixed_ratio if cfg.threshold.ratio_source == "fixed" else select_ratio(cfg, scored.scores)
    detection = threshold_by_ratio(scored.scores, ratio)
    dest = Path(dest)
    export_scores(dest, scored, detection.predictions)
    dest.with_suffix(".threshold.json").write_text(
        json.dumps({"threshold": detection.threshold, "anomaly_ratio": detection.anomaly_ratio}, indent=2) + "\n"
    )
    return dest


def run_seeds(cfg: ExperimentConfig, out_dir: str | Path) -> list[RunArtifacts]:
    """Train ``runs.n_seeds`` models (seed, seed+1, ...) into seed_i subdirs,
    or a flat directory when a single seed is requested."""
    out = Path(out_dir)
    if cfg.runs.n_seeds == 1:
        return [train(cfg, out)]
    artifacts = []
    for i in range(cfg.runs.n_seeds):
        sub_cfg = config_with_seed(cfg, cfg.train.seed + i)
        artifacts.append(train(sub_cfg, out / f"seed_{i}"))
    return artifacts


def config_with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    out = copy.deepcopy(cfg)
    out.train.seed = seed
    return out


def evaluate_seeds(cfg: ExperimentConfig, out_dir: str | Path) -> list[EvaluationReport]:
    """Evaluate every seed run and, for multi-seed runs, write an aggregate
    report with mean and standard deviation per metric."""
    out = Path(out_dir)
    if cfg.runs.n_seeds == 1:
        return [evaluate(cfg, out)]
    reports = []
    for i in range(cfg.runs.n_seeds):
        sub_cfg = config_with_seed(cfg, cfg.train.seed + i)
        reports.append(evaluate(sub_cfg, out / f"seed_{i}"))
    fields = ["precision", "recall", "f1", "add", "nrd", "auc_roc", "auc_pr", "vus_roc", "vus_pr"]
    agg = {}
    for f in fields:
        vals = [getattr(r, f) for r in reports if getattr(r, f) is not None]
        if vals:
            agg[f] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
    (out / "report_aggregate.json").write_text(json.dumps(agg, indent=2, sort_keys=True) + "\n")
    return reports
