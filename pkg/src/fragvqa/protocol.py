"""Repeated-split evaluation: shuffle, train, score, aggregate.

Each iteration reshuffles the corpus into 64/16/20 train/val/test portions
under its own seed, trains a fresh head, and scores the held-out portion.
The report keeps every per-iteration result; medians and standard
deviations cover completed iterations only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import head as head_mod
from .errors import ConfigError, DivergenceError, InsufficientDataError, UndefinedCorrelationError
from .head import TrainConfig
from .metrics import MetricsReport, compute_metrics, srcc

METRIC_NAMES = ("srcc", "krcc", "plcc", "rmse", "train_srcc")
SUMMARY_MAGIC = "fragvqa-protocol-summary 1"


@dataclass(frozen=True)
class ProtocolConfig:
    train_frac: float = 0.64
    val_frac: float = 0.16
    iterations: int = 21
    base_seed: int = 0

    def __post_init__(self):
        if not 0 < self.train_frac < 1 or not 0 < self.val_frac < 1:
            raise ConfigError("split fractions must be in (0, 1)")
        if self.train_frac + self.val_frac >= 1:
            raise ConfigError("train + val fractions must leave a test share")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")


def split_indices(
    n: int, train_frac: float, val_frac: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded shuffle split; sizes rounded half-up, test takes the rest."""
    if n < 10:
        raise InsufficientDataError(f"protocol needs at least 10 videos, got {n}")
    perm = rng.permutation(n)
    n_train = int(np.floor(train_frac * n + 0.5))
    n_val = int(np.floor(val_frac * n + 0.5))
    if n_train < 1 or n_val < 1 or n_train + n_val >= n:
        raise InsufficientDataError(f"degenerate split sizes for n={n}")
    return (
        perm[:n_train],
        perm[n_train : n_train + n_val],
        perm[n_train + n_val :],
    )


@dataclass(frozen=True)
class IterationResult:
    iteration: int
    seed: int
    metrics: MetricsReport | None
    train_srcc: float | None
    error: str = ""
    # held-out predictions kept for plotting; never serialized to the CSV
    test_pred: tuple[float, ...] = ()
    test_truth: tuple[float, ...] = ()

    @property
    def failed(self) -> bool:
        return self.metrics is None


@dataclass
class ProtocolReport:
    config: ProtocolConfig
    iterations: list[IterationResult]
    medians: dict[str, float] = field(default_factory=dict)
    stds: dict[str, float] = field(default_factory=dict)

    @property
    def n_failed(self) -> int:
        return sum(1 for it in self.iterations if it.failed)

    @property
    def n_completed(self) -> int:
        return len(self.iterations) - self.n_failed


def _aggregate(results: list[IterationResult]) -> tuple[dict, dict]:
    done = [r for r in results if not r.failed]
    if not done:
        return {}, {}
    columns = {
        "srcc": [r.metrics.srcc for r in done],
        "krcc": [r.metrics.krcc for r in done],
        "plcc": [r.metrics.plcc for r in done],
        "rmse": [r.metrics.rmse for r in done],
        "train_srcc": [r.train_srcc for r in done],
    }
    medians = {k: float(np.median(v)) for k, v in columns.items()}
    stds = {k: float(np.std(v)) for k, v in columns.items()}
    return medians, stds


def run_protocol(
    features: np.ndarray,
    labels: np.ndarray,
    protocol: ProtocolConfig,
    train_cfg: TrainConfig,
    log=None,
) -> ProtocolReport:
    """Train and evaluate across seeded reshuffles of the same corpus."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64).ravel()
    if x.ndim != 2 or x.shape[0] != y.size:
        raise ConfigError(f"features {x.shape} do not match {y.size} labels")
    results: list[IterationResult] = []
    for it in range(protocol.iterations):
        seed = protocol.base_seed + it
        rng = np.random.default_rng(seed)
        tr, va, te = split_indices(y.size, protocol.train_frac, protocol.val_frac, rng)
        cfg = replace(train_cfg, seed=seed)
        try:
            trained = head_mod.train(x[tr], y[tr], x[va], y[va], cfg)
            train_pred = trained.model.predict(x[tr])
            test_pred = trained.model.predict(x[te])
            metrics = compute_metrics(test_pred, y[te])
            result = IterationResult(
                iteration=it,
                seed=seed,
                metrics=metrics,
                train_srcc=srcc(train_pred, y[tr]),
                test_pred=tuple(float(v) for v in test_pred),
                test_truth=tuple(float(v) for v in y[te]),
            )
        except (DivergenceError, UndefinedCorrelationError, InsufficientDataError) as exc:
            result = IterationResult(
                iteration=it, seed=seed, metrics=None, train_srcc=None,
                error=f"{type(exc).__name__}: {exc}",
            )
        results.append(result)
        if log is not None:
            if result.failed:
                log.warning("iteration %d failed: %s", it, result.error)
            else:
                log.info(
                    "iteration %d: test srcc=%.4f plcc=%.4f rmse=%.4f",
                    it, result.metrics.srcc, result.metrics.plcc, result.metrics.rmse,
                )
    medians, stds = _aggregate(results)
    return ProtocolReport(config=protocol, iterations=results, medians=medians, stds=stds)


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------


def write_protocol_csv(path: str | Path, report: ProtocolReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "iteration", "seed", "status", "n_test", "srcc", "krcc", "plcc",
                "rmse", "train_srcc", "beta1", "beta2", "beta3", "beta4",
                "fit_converged", "error",
            ]
        )
        for r in report.iterations:
            if r.failed:
                writer.writerow(
                    [r.iteration, r.seed, "failed", "", "", "", "", "", "", "",
                     "", "", "", "", r.error]
                )
            else:
                m = r.metrics
                writer.writerow(
                    [
                        r.iteration, r.seed, "ok", m.n,
                        repr(m.srcc), repr(m.krcc), repr(m.plcc), repr(m.rmse),
                        repr(r.train_srcc),
                        repr(m.betas[0]), repr(m.betas[1]),
                        repr(m.betas[2]), repr(m.betas[3]),
                        str(m.fit_converged).lower(), "",
                    ]
                )


def write_protocol_summary(path: str | Path, report: ProtocolReport) -> None:
    lines = [
        SUMMARY_MAGIC,
        f"iterations = {len(report.iterations)}",
        f"completed = {report.n_completed}",
        f"failed = {report.n_failed}",
        f"train_frac = {repr(report.config.train_frac)}",
        f"val_frac = {repr(report.config.val_frac)}",
        f"base_seed = {report.config.base_seed}",
    ]
    for name in METRIC_NAMES:
        if name in report.medians:
            lines.append(f"{name}_median = {repr(report.medians[name])}")
            lines.append(f"{name}_std = {repr(report.stds[name])}")
    Path(path).write_text("\n".join(lines) + "\n")
