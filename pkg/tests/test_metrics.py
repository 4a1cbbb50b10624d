"""Correlation metrics, the logistic mapping, and its fitting routine.

The oracles are the hand-rolled definitions in tests/oracles.py, which
share no code path with the scipy-backed implementations.
"""

import numpy as np
import pytest

from fragvqa.errors import (
    DivergenceError,
    InsufficientDataError,
    UndefinedCorrelationError,
)
from fragvqa.metrics import (
    compute_metrics,
    krcc,
    logistic,
    logistic_fit,
    plcc,
    plcc_rmse_after_fit,
    rmse,
    srcc,
)
from oracles import krcc_oracle, pearson_oracle, rmse_oracle, srcc_oracle


# --- Spot examples -----------------------------------------------------------


def test_srcc_examples():
    truth = np.arange(1.0, 6.0)
    assert srcc(truth, truth) == pytest.approx(1.0)
    assert srcc(-truth, truth) == pytest.approx(-1.0)
    assert srcc([1, 3, 2, 5, 4], truth) == pytest.approx(0.8)


def test_krcc_examples():
    truth = np.arange(1.0, 5.0)
    assert krcc(truth, truth) == pytest.approx(1.0)
    assert krcc(truth[::-1], truth) == pytest.approx(-1.0)
    assert krcc([1, 3, 2, 4], truth) == pytest.approx(2.0 / 3.0, abs=1e-4)


def test_plcc_and_rmse_shift_example():
    truth = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    assert plcc(truth + 2.0, truth) == pytest.approx(1.0)
    assert rmse(truth + 2.0, truth) == pytest.approx(2.0)
    assert plcc(truth, truth) == pytest.approx(1.0)
    assert rmse(truth, truth) == 0.0


def test_constant_inputs_are_undefined():
    const = np.full(6, 3.0)
    varying = np.arange(6.0)
    for fn in (srcc, krcc, plcc):
        with pytest.raises(UndefinedCorrelationError):
            fn(const, varying)
        with pytest.raises(UndefinedCorrelationError):
            fn(varying, const)


def test_metrics_need_enough_points():
    with pytest.raises(InsufficientDataError):
        srcc([1.0], [1.0])
    with pytest.raises(InsufficientDataError):
        rmse([], [])
    with pytest.raises(InsufficientDataError):
        compute_metrics([1, 2, 3, 4], [1, 2, 3, 4])


def test_paired_inputs_must_match():
    from fragvqa.errors import ShapeError

    with pytest.raises(ShapeError):
        srcc([1.0, 2.0, 3.0], [1.0, 2.0])


# --- Oracle sweeps -----------------------------------------------------------


def random_pair(rng):
    n = int(rng.integers(5, 40))
    pred = rng.normal(size=n)
    truth = rng.normal(size=n)
    if rng.random() < 0.4:
        # force ties in both vectors
        pred = np.round(pred * 2) / 2
        truth = np.round(truth * 2) / 2
    if np.ptp(pred) == 0 or np.ptp(truth) == 0:
        pred[0] += 1.0
        truth[0] += 1.0
    return pred, truth


def test_metrics_match_oracles():
    rng = np.random.default_rng(99)
    for _ in range(50):
        pred, truth = random_pair(rng)
        assert srcc(pred, truth) == pytest.approx(srcc_oracle(pred, truth), abs=1e-9)
        assert krcc(pred, truth) == pytest.approx(krcc_oracle(pred, truth), abs=1e-9)
        assert plcc(pred, truth) == pytest.approx(pearson_oracle(pred, truth), abs=1e-9)
        assert rmse(pred, truth) == pytest.approx(rmse_oracle(pred, truth), abs=1e-9)


def test_srcc_invariant_under_monotone_map():
    rng = np.random.default_rng(100)
    pred = rng.normal(size=20)
    truth = rng.normal(size=20)
    base = srcc(pred, truth)
    warped = np.exp(pred * 0.5) + 3.0
    assert srcc(warped, truth) == pytest.approx(base, abs=1e-12)


def test_srcc_antisymmetric_under_reversal():
    rng = np.random.default_rng(101)
    pred = rng.normal(size=15)
    truth = rng.normal(size=15)
    assert srcc(-pred, truth) == pytest.approx(-srcc(pred, truth), abs=1e-12)


# --- Logistic mapping --------------------------------------------------------


def test_logistic_limits_and_midpoint():
    betas = (90.0, 10.0, 2.0, 1.0)
    assert logistic(np.array([1e6]), betas)[0] == pytest.approx(90.0)
    assert logistic(np.array([-1e6]), betas)[0] == pytest.approx(10.0)
    # exponent vanishes at x = b3/|b4|, where the curve crosses the mean
    mid = logistic(np.array([2.0 / 1.0]), betas)[0]
    assert mid == pytest.approx((90.0 + 10.0) / 2.0)


def test_logistic_scaled_form_midpoint():
    betas = (1.0, -1.0, 5.0, 2.0)
    mid = logistic(np.array([5.0]), betas, form="scaled")[0]
    assert mid == pytest.approx(0.0, abs=1e-12)


def test_logistic_extreme_exponent_is_clipped():
    out = logistic(np.array([-1e9]), (1.0, 0.0, 0.0, 1.0))
    assert np.isfinite(out).all()


def test_logistic_tiny_b4_does_not_divide_by_zero():
    out = logistic(np.array([0.0, 1.0]), (1.0, 0.0, 0.5, 0.0))
    assert np.isfinite(out).all()


def test_logistic_rejects_unknown_form():
    with pytest.raises(ValueError):
        logistic(np.array([0.0]), (1.0, 0.0, 0.0, 1.0), form="cubic")


# --- Fitting -----------------------------------------------------------------


def test_fit_recovers_noiseless_curve():
    betas = (90.0, 10.0, 2.0, 1.0)
    x = np.linspace(-5.0, 8.0, 60)
    y = logistic(x, betas)
    fit = logistic_fit(x, y)
    assert rmse_oracle(fit.mapped, y) < 1e-3


def test_fit_improves_plcc_under_noise():
    rng = np.random.default_rng(102)
    betas = (90.0, 10.0, 2.0, 1.0)
    x = np.linspace(-5.0, 8.0, 80)
    y = logistic(x, betas) + rng.normal(0.0, 2.0, size=x.size)
    raw = plcc(x, y)
    mapped_plcc, _, _ = plcc_rmse_after_fit(x, y)
    assert mapped_plcc >= raw


def test_fit_linear_relation_absorbs_offset():
    # the curve cannot be exactly linear, but the fitted mapping must absorb
    # nearly all of a constant offset that raw rmse would report as 2.0
    truth = np.linspace(0.0, 1.0, 30)
    pred = truth + 2.0
    mapped_plcc, mapped_rmse, _ = plcc_rmse_after_fit(pred, truth)
    assert mapped_plcc > 0.999
    assert mapped_rmse < 0.05
    assert rmse(pred, truth) == pytest.approx(2.0)


def test_fit_constant_truth_propagates_error():
    pred = np.arange(10.0)
    truth = np.full(10, 5.0)
    with pytest.raises((UndefinedCorrelationError, DivergenceError)):
        plcc, _, _ = plcc_rmse_after_fit(pred, truth)


def test_fit_needs_five_points():
    with pytest.raises(InsufficientDataError):
        logistic_fit([1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0])


def test_fit_scaled_form():
    betas = (1.0, 0.0, 0.5, 0.2)
    x = np.linspace(-1.0, 2.0, 50)
    y = logistic(x, betas, form="scaled")
    fit = logistic_fit(x, y, form="scaled")
    assert rmse_oracle(fit.mapped, y) < 1e-3


# --- Reports -----------------------------------------------------------------


def test_compute_metrics_full_report():
    rng = np.random.default_rng(103)
    truth = np.linspace(0.0, 1.0, 40)
    pred = truth * 3.0 - 1.0 + rng.normal(0.0, 0.02, size=40)
    report = compute_metrics(pred, truth)
    assert report.n == 40
    assert report.srcc > 0.95
    assert report.krcc > 0.85
    assert report.plcc > 0.95
    assert report.rmse < 0.1
    assert len(report.betas) == 4


def test_compute_metrics_matches_pieces():
    rng = np.random.default_rng(104)
    truth = rng.normal(size=25)
    pred = truth + rng.normal(0.0, 0.3, size=25)
    report = compute_metrics(pred, truth)
    assert report.srcc == pytest.approx(srcc(pred, truth), abs=1e-12)
    assert report.krcc == pytest.approx(krcc(pred, truth), abs=1e-12)
    fitted_plcc, fitted_rmse, _ = plcc_rmse_after_fit(pred, truth)
    assert report.plcc == pytest.approx(fitted_plcc, abs=1e-12)
    assert report.rmse == pytest.approx(fitted_rmse, abs=1e-12)
