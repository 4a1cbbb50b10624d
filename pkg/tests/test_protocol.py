"""Seeded split-and-retrain evaluation protocol and its report files."""

import csv

import numpy as np
import pytest

from fragvqa.errors import ConfigError, InsufficientDataError
from fragvqa.head import TrainConfig
from fragvqa.protocol import (
    METRIC_NAMES,
    SUMMARY_MAGIC,
    ProtocolConfig,
    run_protocol,
    split_indices,
    write_protocol_csv,
    write_protocol_summary,
)


def linear_task(n, d=3, seed=0, noise=0.0):
    """Features with labels given by a fixed linear rule."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    w = np.array([1.0, -1.0, 0.5])[:d]
    y = x @ w + noise * rng.normal(size=n)
    return x, y


def fast_cfg(**kw):
    base = dict(lr=0.05, epochs=15, batch_size=16, weight_decay=0.0, patience=100)
    base.update(kw)
    return TrainConfig(**base)


# --- Splits ------------------------------------------------------------------


def test_split_sizes_round_half_up():
    rng = np.random.default_rng(0)
    tr, va, te = split_indices(100, 0.64, 0.16, rng)
    assert (len(tr), len(va), len(te)) == (64, 16, 20)
    tr, va, te = split_indices(10, 0.64, 0.16, np.random.default_rng(0))
    assert (len(tr), len(va), len(te)) == (6, 2, 2)


def test_split_partitions_all_indices():
    rng = np.random.default_rng(1)
    tr, va, te = split_indices(37, 0.64, 0.16, rng)
    combined = np.sort(np.concatenate([tr, va, te]))
    assert np.array_equal(combined, np.arange(37))


def test_split_rejects_small_n():
    with pytest.raises(InsufficientDataError):
        split_indices(9, 0.64, 0.16, np.random.default_rng(0))


def test_split_is_seed_deterministic():
    a = split_indices(50, 0.64, 0.16, np.random.default_rng(7))
    b = split_indices(50, 0.64, 0.16, np.random.default_rng(7))
    for pa, pb in zip(a, b):
        assert np.array_equal(pa, pb)
    c = split_indices(50, 0.64, 0.16, np.random.default_rng(8))
    assert not np.array_equal(a[0], c[0])


def test_protocol_config_validation():
    with pytest.raises(ConfigError):
        ProtocolConfig(train_frac=0.0)
    with pytest.raises(ConfigError):
        ProtocolConfig(train_frac=0.9, val_frac=0.2)
    with pytest.raises(ConfigError):
        ProtocolConfig(iterations=0)


# --- Running -----------------------------------------------------------------


def test_single_iteration_median_is_that_iteration():
    x, y = linear_task(30, seed=2)
    rep = run_protocol(x, y, ProtocolConfig(iterations=1), fast_cfg())
    assert rep.n_completed == 1
    only = rep.iterations[0]
    assert rep.medians["srcc"] == pytest.approx(only.metrics.srcc)
    assert rep.medians["train_srcc"] == pytest.approx(only.train_srcc)
    assert rep.stds["srcc"] == 0.0


def test_protocol_reproducible_across_runs():
    x, y = linear_task(30, seed=3)
    cfg = ProtocolConfig(iterations=3, base_seed=5)
    a = run_protocol(x, y, cfg, fast_cfg())
    b = run_protocol(x, y, cfg, fast_cfg())
    for ra, rb in zip(a.iterations, b.iterations):
        assert ra.seed == rb.seed
        assert ra.metrics.srcc == rb.metrics.srcc
        assert ra.metrics.rmse == rb.metrics.rmse
    assert a.medians == b.medians


def test_iteration_seeds_follow_base_seed():
    x, y = linear_task(30, seed=4)
    rep = run_protocol(x, y, ProtocolConfig(iterations=3, base_seed=40), fast_cfg())
    assert [it.seed for it in rep.iterations] == [40, 41, 42]


def test_realizable_labels_score_high():
    x, y = linear_task(40, seed=5)
    rep = run_protocol(
        x, y, ProtocolConfig(iterations=3), fast_cfg(epochs=40, l1_w=1.0, rank_w=0.2)
    )
    assert rep.n_failed == 0
    assert rep.medians["srcc"] > 0.95


def test_failed_iterations_excluded_from_medians():
    # constant labels make every correlation undefined; iterations must fail
    # in isolation rather than raising out of the protocol loop
    x, _ = linear_task(20, seed=6)
    y = np.full(20, 0.5)
    rep = run_protocol(x, y, ProtocolConfig(iterations=2), fast_cfg(epochs=2))
    assert rep.n_failed == 2
    assert rep.n_completed == 0
    assert rep.medians == {}
    for it in rep.iterations:
        assert it.failed
        assert it.error


def test_protocol_rejects_mismatched_shapes():
    x, y = linear_task(20, seed=7)
    with pytest.raises(ConfigError):
        run_protocol(x, y[:-1], ProtocolConfig(iterations=1), fast_cfg())


# --- Report files ------------------------------------------------------------


@pytest.fixture(scope="module")
def small_report():
    x, y = linear_task(30, seed=8)
    return run_protocol(x, y, ProtocolConfig(iterations=3, base_seed=1), fast_cfg())


def test_csv_columns_and_values(tmp_path, small_report):
    path = tmp_path / "iterations.csv"
    write_protocol_csv(path, small_report)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    for row, it in zip(rows, small_report.iterations):
        assert int(row["iteration"]) == it.iteration
        assert int(row["seed"]) == it.seed
        assert row["status"] == "ok"
        # repr round-trip: the parsed value is the float itself
        assert float(row["srcc"]) == it.metrics.srcc
        assert float(row["train_srcc"]) == it.train_srcc
        assert int(row["n_test"]) == it.metrics.n


def test_csv_medians_recompute(tmp_path, small_report):
    path = tmp_path / "iterations.csv"
    write_protocol_csv(path, small_report)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for name in METRIC_NAMES:
        values = [float(r[name]) for r in rows if r["status"] == "ok"]
        assert small_report.medians[name] == pytest.approx(
            float(np.median(values)), abs=1e-15
        )


def test_csv_bytes_deterministic(tmp_path, small_report):
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_protocol_csv(p1, small_report)
    write_protocol_csv(p2, small_report)
    assert p1.read_bytes() == p2.read_bytes()


def test_csv_failed_rows_keep_error(tmp_path):
    x, _ = linear_task(20, seed=9)
    rep = run_protocol(
        x, np.full(20, 1.0), ProtocolConfig(iterations=1), fast_cfg(epochs=2)
    )
    path = tmp_path / "failed.csv"
    write_protocol_csv(path, rep)
    with open(path, newline="") as fh:
        row = next(csv.DictReader(fh))
    assert row["status"] == "failed"
    assert row["srcc"] == ""
    assert row["error"]


def test_summary_format(tmp_path, small_report):
    path = tmp_path / "summary.txt"
    write_protocol_summary(path, small_report)
    text = path.read_text()
    lines = text.splitlines()
    assert lines[0] == SUMMARY_MAGIC
    keys = dict(line.split(" = ") for line in lines[1:] if " = " in line)
    assert int(keys["iterations"]) == 3
    assert int(keys["failed"]) == 0
    for name in METRIC_NAMES:
        assert float(keys[f"{name}_median"]) == small_report.medians[name]
        assert float(keys[f"{name}_std"]) == small_report.stds[name]
