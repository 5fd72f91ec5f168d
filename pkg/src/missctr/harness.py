"""Experiment protocols over the trainer: hyperparameter sweeps,
label-sparsity and label-noise robustness studies, and plot-ready
report tables.

Every report is a delimiter-separated file with a one-line schema
header.  File names encode the study axis and a caller-supplied dataset
tag; content is byte-deterministic for fixed seeds, so a rerun can be
diffed against its predecessor.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from .data import Splits, downsample_train, flip_labels
from .errors import ConfigError, MissError
from .metrics import EvalReport, evaluate_scores
from .trainer import ExperimentConfig, TrainResult, predict_scores, train

SWEEP_AXES = ("loss_weight", "temperature")
ROBUSTNESS_KINDS = ("sparsity", "noise")


def run_experiment(cfg: ExperimentConfig, splits: Splits) -> tuple[TrainResult, EvalReport]:
    """One train run evaluated on the held-out test split."""
    result = train(cfg, splits)
    scores = predict_scores(result.model, splits.test, cfg.batch_size)
    return result, evaluate_scores(scores, splits.test.label)


def _with_axis(cfg: ExperimentConfig, axis: str, value: float) -> ExperimentConfig:
    if axis == "loss_weight":
        return replace(cfg, alpha_interest=value, alpha_feature=value)
    if axis == "temperature":
        return replace(cfg, tau=value)
    raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")


@dataclass
class SweepRow:
    value: float
    auc_per_seed: list[float]
    logloss_per_seed: list[float]

    @property
    def auc_mean(self) -> float:
        return float(np.mean(self.auc_per_seed))

    @property
    def auc_std(self) -> float:
        return float(np.std(self.auc_per_seed))

    @property
    def logloss_mean(self) -> float:
        return float(np.mean(self.logloss_per_seed))

    @property
    def logloss_std(self) -> float:
        return float(np.std(self.logloss_per_seed))


@dataclass
class SweepReport:
    axis: str
    seeds: list[int]
    rows: list[SweepRow]  # sorted by grid value


def sweep(
    axis: str,
    grid: list[float],
    cfg: ExperimentConfig,
    splits: Splits,
    seeds: list[int],
) -> SweepReport:
    """Train one model per (grid value, seed); aggregate test metrics."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    if not grid:
        raise ConfigError("sweep grid must be non-empty")
    if not seeds:
        raise ConfigError("sweep needs at least one seed")
    rows = []
    for value in sorted(grid):
        aucs, lls = [], []
        for seed in seeds:
            run_cfg = replace(_with_axis(cfg, axis, value), seed=seed)
            try:
                _, report = run_experiment(run_cfg, splits)
            except MissError as exc:
                exc.args = (f"{axis}={value} seed={seed}: {exc}",)
                raise
            aucs.append(report.auc)
            lls.append(report.logloss)
        rows.append(SweepRow(value=value, auc_per_seed=aucs, logloss_per_seed=lls))
    return SweepReport(axis=axis, seeds=list(seeds), rows=rows)


@dataclass
class RobustnessRow:
    rate: float
    auc_base: float
    auc_miss: float

    @property
    def ri(self) -> float:
        # relative improvement, recomputable from the two AUC columns
        return (self.auc_miss - self.auc_base) / self.auc_base


@dataclass
class RobustnessReport:
    kind: str
    seeds: list[int]
    rows: list[RobustnessRow]


def _perturb(kind: str, splits: Splits, rate: float, seed: int) -> Splits:
    if kind == "sparsity":
        return downsample_train(splits, rate, seed)
    return flip_labels(splits, rate, seed)


def robustness_study(
    kind: str,
    rates: list[float],
    cfg_base: ExperimentConfig,
    cfg_miss: ExperimentConfig,
    splits: Splits,
    seeds: list[int],
) -> RobustnessReport:
    """Degrade the training labels, train both models per seed, report
    mean test AUC and the relative improvement at each rate."""
    if kind not in ROBUSTNESS_KINDS:
        raise ConfigError(f"robustness kind must be one of {ROBUSTNESS_KINDS}, got {kind!r}")
    if not rates:
        raise ConfigError("robustness study needs at least one rate")
    if not seeds:
        raise ConfigError("robustness study needs at least one seed")
    for r in rates:
        if kind == "sparsity" and not (0.0 < r <= 1.0):
            raise ConfigError(f"sparsity rate must lie in (0, 1], got {r}")
        if kind == "noise" and not (0.0 <= r < 1.0):
            raise ConfigError(f"noise rate must lie in [0, 1), got {r}")
    rows = []
    for rate in rates:
        base_aucs, miss_aucs = [], []
        for seed in seeds:
            degraded = _perturb(kind, splits, rate, seed)
            for cfg, sink in ((cfg_base, base_aucs), (cfg_miss, miss_aucs)):
                run_cfg = replace(cfg, seed=seed)
                try:
                    _, report = run_experiment(run_cfg, degraded)
                except MissError as exc:
                    exc.args = (f"{kind}={rate} seed={seed}: {exc}",)
                    raise
                sink.append(report.auc)
        rows.append(
            RobustnessRow(
                rate=rate,
                auc_base=float(np.mean(base_aucs)),
                auc_miss=float(np.mean(miss_aucs)),
            )
        )
    return RobustnessReport(kind=kind, seeds=list(seeds), rows=rows)


# ---------------------------------------------------------------------------
# report files


def _write_rows(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def write_sweep_report(report: SweepReport, out_dir: str, tag: str) -> str:
    path = os.path.join(out_dir, f"sweep_{report.axis}_{tag}.tsv")
    header = ["value", "auc_mean", "auc_std", "logloss_mean", "logloss_std"]
    header += [f"auc_seed{s}" for s in report.seeds]
    rows = []
    for r in report.rows:
        rows.append(
            [r.value, r.auc_mean, r.auc_std, r.logloss_mean, r.logloss_std, *r.auc_per_seed]
        )
    _write_rows(path, header, rows)
    return path


def write_robustness_report(report: RobustnessReport, out_dir: str, tag: str) -> str:
    path = os.path.join(out_dir, f"robustness_{report.kind}_{tag}.tsv")
    header = ["rate", "auc_base", "auc_miss", "relative_improvement"]
    rows = [[r.rate, r.auc_base, r.auc_miss, r.ri] for r in report.rows]
    _write_rows(path, header, rows)
    return path


def write_history(path: str, result: TrainResult) -> None:
    header = ["epoch", "loss_ll", "loss_interest", "loss_feature", "val_auc", "val_logloss"]
    rows = [
        [r.epoch, r.loss_ll, r.loss_interest, r.loss_feature, r.val_auc, r.val_logloss]
        for r in result.history
    ]
    _write_rows(path, header, rows)


def write_telemetry(path: str, result: TrainResult) -> None:
    header = [
        "step", "loss_ll", "loss_interest", "loss_feature", "total",
        "sim_mean", "sim_min", "sim_max", "n_infeasible_interest", "n_infeasible_feature",
    ]
    rows = [
        [
            r.step, r.loss_ll, r.loss_interest, r.loss_feature, r.total,
            r.sim_mean, r.sim_min, r.sim_max,
            r.n_infeasible_interest, r.n_infeasible_feature,
        ]
        for r in result.telemetry
    ]
    _write_rows(path, header, rows)
