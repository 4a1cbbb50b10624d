"""Pipeline configuration: INI round-trips, hashing, validation."""

import dataclasses

import pytest

from fragvqa.backbones import resnet50_spec, vit_b16_spec
from fragvqa.config import (
    PipelineConfig,
    config_hash,
    load_pipeline_config,
    save_pipeline_config,
)
from fragvqa.errors import ConfigError
from fragvqa.features import BRANCH_CONV_POOL, BRANCH_PATCH_POOL, FeaturePlan
from fragvqa.head import TrainConfig
from fragvqa.motion import FlowParams
from fragvqa.protocol import ProtocolConfig


def test_defaults_load_without_file():
    cfg = load_pipeline_config()
    assert cfg.interval_s == 0.5
    assert cfg.patch_size == 16
    assert cfg.target_size == 224
    assert cfg.alpha == 0.5
    assert cfg.plan.streams == ("merged", "spatial", "resized_frame")
    assert cfg.conv_backbone is not None
    assert cfg.conv_backbone.kind == "toy_conv"


def test_ini_round_trip(tmp_path):
    cfg = PipelineConfig(
        interval_s=0.25,
        patch_size=8,
        target_size=64,
        alpha=0.75,
        flow=FlowParams(window_size=11, levels=2),
        train=TrainConfig(lr=0.03, epochs=60, use_batch_norm=True, seed=4),
        protocol=ProtocolConfig(iterations=5, base_seed=9),
        cache_dir="featcache",
    )
    path = tmp_path / "pipeline.ini"
    save_pipeline_config(path, cfg)
    back = load_pipeline_config(path)
    assert back == cfg
    assert config_hash(back) == config_hash(cfg)


def test_round_trip_with_both_backbones(tmp_path):
    cfg = PipelineConfig(
        conv_backbone=resnet50_spec(),
        patch_backbone=vit_b16_spec(),
        plan=FeaturePlan(
            streams=("merged",),
            branches=(BRANCH_CONV_POOL, BRANCH_PATCH_POOL),
        ),
    )
    path = tmp_path / "full.ini"
    save_pipeline_config(path, cfg)
    back = load_pipeline_config(path)
    assert back.conv_backbone == cfg.conv_backbone
    assert back.patch_backbone == cfg.patch_backbone
    assert back.plan == cfg.plan


def test_missing_file_is_an_error(tmp_path):
    with pytest.raises(ConfigError):
        load_pipeline_config(tmp_path / "nope.ini")


def test_hash_excludes_seeds():
    cfg = PipelineConfig()
    reseeded = cfg.with_seed(1234)
    assert reseeded.train.seed == 1234
    assert reseeded.protocol.base_seed == 1234
    assert config_hash(reseeded) == config_hash(cfg)


def test_hash_tracks_pipeline_knobs():
    base = config_hash(PipelineConfig())
    assert config_hash(PipelineConfig(alpha=0.25)) != base
    assert config_hash(PipelineConfig(patch_size=8)) != base
    assert config_hash(PipelineConfig(interval_s=1.0)) != base
    assert len(base) == 16


def test_hash_ignores_regression_side_settings():
    # caches hold features only, so train/protocol changes must not stale them
    base = config_hash(PipelineConfig())
    assert config_hash(PipelineConfig(train=TrainConfig(lr=0.5))) == base
    assert config_hash(PipelineConfig(protocol=ProtocolConfig(iterations=3))) == base


def test_hash_tracks_flow_settings():
    base = config_hash(PipelineConfig())
    assert config_hash(PipelineConfig(flow=FlowParams(window_size=21))) != base


def test_validation_rules():
    with pytest.raises(ConfigError):
        PipelineConfig(interval_s=0.0)
    with pytest.raises(ConfigError):
        PipelineConfig(patch_size=0)
    with pytest.raises(ConfigError):
        PipelineConfig(patch_size=32, target_size=16)
    with pytest.raises(ConfigError):
        PipelineConfig(alpha=1.5)


def test_patch_pool_requires_patch_backbone():
    plan = FeaturePlan(streams=("merged",), branches=(BRANCH_PATCH_POOL,))
    with pytest.raises(ConfigError):
        PipelineConfig(plan=plan, patch_backbone=None)


def test_conv_branches_require_conv_backbone():
    with pytest.raises(ConfigError):
        PipelineConfig(conv_backbone=None)


def test_config_is_frozen():
    cfg = PipelineConfig()
    with pytest.raises(dataclasses.FrozenInstanceError):
        cfg.alpha = 0.9


def test_partial_ini_keeps_other_defaults(tmp_path):
    path = tmp_path / "partial.ini"
    path.write_text("[pipeline]\nalpha = 0.3\n")
    cfg = load_pipeline_config(path)
    assert cfg.alpha == 0.3
    assert cfg.patch_size == 16
    assert cfg.train == TrainConfig()


def test_bad_ini_value_raises_config_error(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[pipeline]\nalpha = plenty\n")
    with pytest.raises(ConfigError):
        load_pipeline_config(path)
