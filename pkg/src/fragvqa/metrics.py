"""Correlation metrics and the four-parameter logistic mapping.

SRCC uses average ranks for ties, KRCC is tau-b; both delegate to scipy
after explicit degenerate-input checks so failure modes are typed errors
instead of NaNs. PLCC and RMSE are reported after fitting the logistic
curve f(x) = b2 + (b1 - b2) / (1 + exp(-x + b3/|b4|)) by damped least
squares.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import InsufficientDataError, ShapeError, UndefinedCorrelationError

LOGISTIC_MAX_ITER = 400
LOGISTIC_REL_TOL = 1e-10


def _paired(pred, truth, min_n: int) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.ndim != 1 or t.ndim != 1:
        raise ShapeError("metric inputs must be 1-D")
    if p.size != t.size:
        raise ShapeError(f"length mismatch: {p.size} vs {t.size}")
    if p.size < min_n:
        raise InsufficientDataError(f"need at least {min_n} samples, got {p.size}")
    return p, t


def srcc(pred, truth) -> float:
    """Spearman rank correlation, average ranks for ties."""
    p, t = _paired(pred, truth, 2)
    if np.ptp(p) == 0 or np.ptp(t) == 0:
        raise UndefinedCorrelationError("constant input has no rank ordering")
    return float(stats.spearmanr(p, t).statistic)


def krcc(pred, truth) -> float:
    """Kendall rank correlation, tau-b tie correction."""
    p, t = _paired(pred, truth, 2)
    if np.ptp(p) == 0 or np.ptp(t) == 0:
        raise UndefinedCorrelationError("constant input has no rank ordering")
    return float(stats.kendalltau(p, t, variant="b").statistic)


def plcc(pred, truth) -> float:
    """Pearson linear correlation."""
    p, t = _paired(pred, truth, 2)
    if np.ptp(p) == 0 or np.ptp(t) == 0:
        raise UndefinedCorrelationError("constant input has zero variance")
    return float(stats.pearsonr(p, t).statistic)


def rmse(pred, truth) -> float:
    p, t = _paired(pred, truth, 1)
    return float(np.sqrt(np.mean((p - t) ** 2)))


# ---------------------------------------------------------------------------
# Four-parameter logistic fit
# ---------------------------------------------------------------------------

# The exponent is taken as printed: beta4 enters only through b3/|b4|, so b3
# and b4 are jointly identifiable only up to that ratio. b4 therefore stays
# frozen at 1 unless the damped iteration stalls. The conventional variant
# with exponent -(x - b3)/|b4| is available via form="scaled".


def logistic(x: np.ndarray, betas, form: str = "printed") -> np.ndarray:
    b1, b2, b3, b4 = betas
    safe_b4 = max(abs(b4), 1e-12)
    if form == "printed":
        expo = -np.asarray(x, dtype=np.float64) + b3 / safe_b4
    elif form == "scaled":
        expo = -(np.asarray(x, dtype=np.float64) - b3) / safe_b4
    else:
        raise ValueError(f"unknown logistic form {form!r}")
    expo = np.clip(expo, -700.0, 700.0)
    return b2 + (b1 - b2) / (1.0 + np.exp(expo))


@dataclass(frozen=True)
class LogisticFit:
    betas: tuple[float, float, float, float]
    mapped: np.ndarray
    converged: bool
    iterations: int
    cost: float


def _fd_jacobian(x, betas, free, form) -> np.ndarray:
    base = logistic(x, betas, form)
    cols = []
    for idx in free:
        step = 1e-6 * max(1.0, abs(betas[idx]))
        bumped = list(betas)
        bumped[idx] += step
        cols.append((logistic(x, bumped, form) - base) / step)
    return np.stack(cols, axis=1)


def logistic_fit(pred, truth, form: str = "printed") -> LogisticFit:
    """Least-squares fit of the logistic curve to (pred, truth).

    Damped (Levenberg-style) iteration with a finite-difference Jacobian.
    b4 starts frozen; it is released only when the damped step stalls with
    the remaining parameters. Non-convergence is reported, not raised, and
    the best parameters found still produce the mapping.
    """
    p, t = _paired(pred, truth, 5)
    betas = [float(t.max()), float(t.min()), float(p.mean()), 1.0]
    free = [0, 1, 2]
    lam = 1e-3
    resid = logistic(p, betas, form) - t
    cost = float(resid @ resid)
    converged = False
    iterations = 0
    while iterations < LOGISTIC_MAX_ITER:
        iterations += 1
        jac = _fd_jacobian(p, betas, free, form)
        jtj = jac.T @ jac
        jtr = jac.T @ resid
        stepped = False
        while lam < 1e12:
            damped = jtj + lam * np.diag(np.maximum(np.diag(jtj), 1e-12))
            try:
                delta = np.linalg.solve(damped, -jtr)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = list(betas)
            for k, idx in enumerate(free):
                trial[idx] += delta[k]
            trial_resid = logistic(p, trial, form) - t
            trial_cost = float(trial_resid @ trial_resid)
            if np.isfinite(trial_cost) and trial_cost < cost:
                rel_drop = (cost - trial_cost) / max(cost, 1e-300)
                betas, resid, cost = trial, trial_resid, trial_cost
                lam = max(lam / 3.0, 1e-12)
                stepped = True
                if rel_drop < LOGISTIC_REL_TOL:
                    converged = True
                break
            lam *= 10.0
        if not stepped:
            if len(free) == 3:  # stalled with b4 frozen: release it and retry
                free = [0, 1, 2, 3]
                lam = 1e-3
                continue
            break
        if converged:
            if len(free) == 3:
                # settling with b4 frozen is only provisional; require
                # convergence again with the full parameter set
                free = [0, 1, 2, 3]
                lam = 1e-3
                converged = False
                continue
            break
    return LogisticFit(
        betas=tuple(float(b) for b in betas),
        mapped=logistic(p, betas, form),
        converged=converged or cost == 0.0,
        iterations=iterations,
        cost=cost,
    )


def plcc_rmse_after_fit(pred, truth, form: str = "printed") -> tuple[float, float, LogisticFit]:
    """Pearson correlation and RMSE between mapped predictions and truth."""
    fit = logistic_fit(pred, truth, form)
    return plcc(fit.mapped, truth), rmse(fit.mapped, truth), fit


@dataclass(frozen=True)
class MetricsReport:
    srcc: float
    krcc: float
    plcc: float
    rmse: float
    betas: tuple[float, float, float, float]
    n: int
    fit_converged: bool

    def __post_init__(self):
        for name in ("srcc", "krcc", "plcc"):
            v = getattr(self, name)
            if not -1.0 - 1e-9 <= v <= 1.0 + 1e-9:
                raise ShapeError(f"{name}={v} outside [-1, 1]")
        if self.rmse < 0:
            raise ShapeError("rmse must be non-negative")


def compute_metrics(pred, truth, form: str = "printed") -> MetricsReport:
    """SRCC/KRCC on raw predictions, PLCC/RMSE after the logistic mapping."""
    p, t = _paired(pred, truth, 5)
    fitted_plcc, fitted_rmse, fit = plcc_rmse_after_fit(p, t, form)
    return MetricsReport(
        srcc=srcc(p, t),
        krcc=krcc(p, t),
        plcc=fitted_plcc,
        rmse=fitted_rmse,
        betas=fit.betas,
        n=p.size,
        fit_converged=fit.converged,
    )
