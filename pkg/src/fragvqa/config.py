"""Pipeline configuration: INI file in and out, plus the content hash.

The hash is a SHA-256 over the canonical JSON form of every semantically
meaningful field. Seeds are run identity rather than configuration, so two
runs that differ only in seed share a hash and can reuse each other's
feature caches; every artifact still records its own seed in its header.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .backbones import (
    KIND_CONV_STAGES,
    KIND_PATCH_TRANSFORMER,
    KIND_TOY_CONV,
    BackboneSpec,
)
from .errors import ConfigError
from .features import BRANCH_PATCH_POOL, FeaturePlan
from .head import TrainConfig
from .motion import FlowParams
from .protocol import ProtocolConfig

DEFAULT_STREAMS = ("merged", "spatial", "resized_frame")
DEFAULT_BRANCHES = ("conv_stack",)


@dataclass(frozen=True)
class PipelineConfig:
    interval_s: float = 0.5
    patch_size: int = 16
    target_size: int = 224
    alpha: float = 0.5
    plan: FeaturePlan = field(
        default_factory=lambda: FeaturePlan(DEFAULT_STREAMS, DEFAULT_BRANCHES)
    )
    conv_backbone: BackboneSpec | None = field(
        default_factory=lambda: BackboneSpec(kind=KIND_TOY_CONV)
    )
    patch_backbone: BackboneSpec | None = None
    flow: FlowParams = field(default_factory=FlowParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    cache_dir: str = "features"

    def __post_init__(self):
        if self.interval_s <= 0:
            raise ConfigError("interval_s must be positive")
        if self.patch_size < 1 or self.target_size < self.patch_size:
            raise ConfigError("need target_size >= patch_size >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must be in [0, 1]")
        if BRANCH_PATCH_POOL in self.plan.branches and self.patch_backbone is None:
            raise ConfigError("plan enables patch_pool but no patch backbone is set")
        needs_conv = any(b != BRANCH_PATCH_POOL for b in self.plan.branches)
        if needs_conv and self.conv_backbone is None:
            raise ConfigError("plan enables conv branches but no conv backbone is set")

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(
            self,
            train=replace(self.train, seed=seed),
            protocol=replace(self.protocol, base_seed=seed),
        )


def _backbone_dict(spec: BackboneSpec | None) -> dict | None:
    if spec is None:
        return None
    return {
        "kind": spec.kind,
        "stage_names": list(spec.stage_names),
        "stage_channels": list(spec.stage_channels),
        "embedding_dim": spec.embedding_dim,
        "weights_source": spec.weights_source,
        "cls_row": spec.cls_row,
        "input_size": spec.input_size,
    }


def canonical_dict(cfg: PipelineConfig) -> dict:
    """The settings that determine feature content, stable across formatting.

    Training and protocol knobs are deliberately absent: a cache stays valid
    when only the regression side changes, so command-line overrides like a
    different selection rule or iteration count never force re-extraction.
    """
    return {
        "interval_s": cfg.interval_s,
        "patch_size": cfg.patch_size,
        "target_size": cfg.target_size,
        "alpha": cfg.alpha,
        "streams": list(cfg.plan.streams),
        "branches": list(cfg.plan.branches),
        "conv_backbone": _backbone_dict(cfg.conv_backbone),
        "patch_backbone": _backbone_dict(cfg.patch_backbone),
        "flow": {
            "pyramid_scale": cfg.flow.pyramid_scale,
            "levels": cfg.flow.levels,
            "window_size": cfg.flow.window_size,
            "iterations": cfg.flow.iterations,
            "poly_n": cfg.flow.poly_n,
            "poly_sigma": cfg.flow.poly_sigma,
        },
    }


def config_hash(cfg: PipelineConfig) -> str:
    payload = json.dumps(canonical_dict(cfg), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _tuple_of_str(raw: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in raw.split(",") if s.strip())


def _tuple_of_int(raw: str) -> tuple[int, ...]:
    return tuple(int(s) for s in raw.split(",") if s.strip())


def _backbone_from_section(sec) -> BackboneSpec | None:
    kind = sec.get("kind", "none").strip()
    if kind == "none":
        return None
    if kind == KIND_TOY_CONV:
        return BackboneSpec(kind=kind, weights_source=sec.get("weights", "") or None)
    if kind == KIND_CONV_STAGES:
        return BackboneSpec(
            kind=kind,
            stage_names=_tuple_of_str(sec.get("stage_names", "")),
            stage_channels=_tuple_of_int(sec.get("stage_channels", "")),
            weights_source=sec.get("weights", "") or None,
            input_size=sec.getint("input_size", 224),
        )
    if kind == KIND_PATCH_TRANSFORMER:
        cls_raw = sec.get("cls_row", "0").strip()
        return BackboneSpec(
            kind=kind,
            stage_names=_tuple_of_str(sec.get("tokens_name", "tokens")),
            embedding_dim=sec.getint("embedding_dim", 768),
            weights_source=sec.get("weights", "") or None,
            cls_row=None if cls_raw == "none" else int(cls_raw),
            input_size=sec.getint("input_size", 224),
        )
    raise ConfigError(f"unknown backbone kind {kind!r}")


def load_pipeline_config(path: str | Path | None = None) -> PipelineConfig:
    """Defaults, overridden by any sections present in the INI file."""
    cfg = PipelineConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    read = parser.read(str(path))
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    try:
        return _parse_sections(parser, cfg)
    except (ValueError, configparser.Error) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_sections(parser, cfg: PipelineConfig) -> PipelineConfig:
    kwargs: dict = {}
    if parser.has_section("pipeline"):
        sec = parser["pipeline"]
        kwargs["interval_s"] = sec.getfloat("interval_s", cfg.interval_s)
        kwargs["patch_size"] = sec.getint("patch_size", cfg.patch_size)
        kwargs["target_size"] = sec.getint("target_size", cfg.target_size)
        kwargs["alpha"] = sec.getfloat("alpha", cfg.alpha)
        kwargs["cache_dir"] = sec.get("cache_dir", cfg.cache_dir)
        streams = _tuple_of_str(sec.get("streams", ",".join(cfg.plan.streams)))
        branches = _tuple_of_str(sec.get("branches", ",".join(cfg.plan.branches)))
        kwargs["plan"] = FeaturePlan(streams, branches)
    if parser.has_section("backbone"):
        kwargs["conv_backbone"] = _backbone_from_section(parser["backbone"])
    if parser.has_section("patch_backbone"):
        kwargs["patch_backbone"] = _backbone_from_section(parser["patch_backbone"])
    if parser.has_section("flow"):
        sec = parser["flow"]
        kwargs["flow"] = FlowParams(
            pyramid_scale=sec.getfloat("pyramid_scale", cfg.flow.pyramid_scale),
            levels=sec.getint("levels", cfg.flow.levels),
            window_size=sec.getint("window_size", cfg.flow.window_size),
            iterations=sec.getint("iterations", cfg.flow.iterations),
            poly_n=sec.getint("poly_n", cfg.flow.poly_n),
            poly_sigma=sec.getfloat("poly_sigma", cfg.flow.poly_sigma),
        )
    if parser.has_section("train"):
        sec = parser["train"]
        kwargs["train"] = TrainConfig(
            lr=sec.getfloat("lr", cfg.train.lr),
            weight_decay=sec.getfloat("weight_decay", cfg.train.weight_decay),
            batch_size=sec.getint("batch_size", cfg.train.batch_size),
            epochs=sec.getint("epochs", cfg.train.epochs),
            swa_lr=sec.getfloat("swa_lr", cfg.train.swa_lr),
            swa_start_fraction=sec.getfloat(
                "swa_start_fraction", cfg.train.swa_start_fraction
            ),
            patience=sec.getint("patience", cfg.train.patience),
            l1_w=sec.getfloat("l1_w", cfg.train.l1_w),
            rank_w=sec.getfloat("rank_w", cfg.train.rank_w),
            selection=sec.get("selection", cfg.train.selection),
            seed=sec.getint("seed", cfg.train.seed),
            use_batch_norm=sec.getboolean("use_batch_norm", cfg.train.use_batch_norm),
        )
    if parser.has_section("protocol"):
        sec = parser["protocol"]
        kwargs["protocol"] = ProtocolConfig(
            train_frac=sec.getfloat("train_frac", cfg.protocol.train_frac),
            val_frac=sec.getfloat("val_frac", cfg.protocol.val_frac),
            iterations=sec.getint("iterations", cfg.protocol.iterations),
            base_seed=sec.getint("base_seed", cfg.protocol.base_seed),
        )
    return PipelineConfig(**kwargs)


def save_pipeline_config(path: str | Path, cfg: PipelineConfig) -> None:
    parser = configparser.ConfigParser()
    parser["pipeline"] = {
        "interval_s": repr(cfg.interval_s),
        "patch_size": str(cfg.patch_size),
        "target_size": str(cfg.target_size),
        "alpha": repr(cfg.alpha),
        "streams": ", ".join(cfg.plan.streams),
        "branches": ", ".join(cfg.plan.branches),
        "cache_dir": cfg.cache_dir,
    }

    def backbone_section(spec: BackboneSpec | None) -> dict[str, str]:
        if spec is None:
            return {"kind": "none"}
        out = {"kind": spec.kind}
        if spec.weights_source and not spec.weights_source.startswith("builtin-seed:"):
            out["weights"] = spec.weights_source
        if spec.kind == KIND_CONV_STAGES:
            out["stage_names"] = ", ".join(spec.stage_names)
            out["stage_channels"] = ", ".join(str(c) for c in spec.stage_channels)
            out["input_size"] = str(spec.input_size)
        if spec.kind == KIND_PATCH_TRANSFORMER:
            out["tokens_name"] = spec.stage_names[0]
            out["embedding_dim"] = str(spec.embedding_dim)
            out["cls_row"] = "none" if spec.cls_row is None else str(spec.cls_row)
            out["input_size"] = str(spec.input_size)
        return out

    parser["backbone"] = backbone_section(cfg.conv_backbone)
    parser["patch_backbone"] = backbone_section(cfg.patch_backbone)
    parser["flow"] = {
        "pyramid_scale": repr(cfg.flow.pyramid_scale),
        "levels": str(cfg.flow.levels),
        "window_size": str(cfg.flow.window_size),
        "iterations": str(cfg.flow.iterations),
        "poly_n": str(cfg.flow.poly_n),
        "poly_sigma": repr(cfg.flow.poly_sigma),
    }
    parser["train"] = {
        "lr": repr(cfg.train.lr),
        "weight_decay": repr(cfg.train.weight_decay),
        "batch_size": str(cfg.train.batch_size),
        "epochs": str(cfg.train.epochs),
        "swa_lr": repr(cfg.train.swa_lr),
        "swa_start_fraction": repr(cfg.train.swa_start_fraction),
        "patience": str(cfg.train.patience),
        "l1_w": repr(cfg.train.l1_w),
        "rank_w": repr(cfg.train.rank_w),
        "selection": cfg.train.selection,
        "seed": str(cfg.train.seed),
        "use_batch_norm": str(cfg.train.use_batch_norm).lower(),
    }
    parser["protocol"] = {
        "train_frac": repr(cfg.protocol.train_frac),
        "val_frac": repr(cfg.protocol.val_frac),
        "iterations": str(cfg.protocol.iterations),
        "base_seed": str(cfg.protocol.base_seed),
    }
    buf = io.StringIO()
    parser.write(buf)
    Path(path).write_text(buf.getvalue())
