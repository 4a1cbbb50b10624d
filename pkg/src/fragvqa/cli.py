"""Command-line entry point: extract, train, predict, evaluate.

Exit codes: 0 success, 1 partial or data failure, 2 configuration or usage
error. Feature caches are keyed by the config hash, so reruns with an
unchanged configuration skip extraction entirely.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import backbones, head as head_mod, protocol as protocol_mod, report
from .config import PipelineConfig, config_hash, load_pipeline_config
from .errors import (
    ConfigError,
    FormatError,
    FragVqaError,
    InsufficientDataError,
    LayoutError,
    LoadError,
)
from .features import (
    CachedFeatures,
    FeatureVector,
    frame_pair_feature,
    layout_to_string,
    read_cache_header,
    read_feature_cache,
    read_manifest,
    write_feature_cache,
)
from .fragments import FRAGMENT_KINDS, build_fragment_bundle
from .media import load_frame_sequence, sample_frame_pairs

log = logging.getLogger("fragvqa")


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _load_extractors(cfg: PipelineConfig):
    conv_ex = None
    patch_ex = None
    if any(b != "patch_pool" for b in cfg.plan.branches):
        conv_ex = backbones.load_backbone(cfg.conv_backbone)
    if "patch_pool" in cfg.plan.branches:
        patch_ex = backbones.load_backbone(cfg.patch_backbone)
    return conv_ex, patch_ex


def _backbone_hash(cfg: PipelineConfig) -> str:
    parts = []
    if cfg.conv_backbone is not None:
        parts.append(cfg.conv_backbone.spec_hash())
    if cfg.patch_backbone is not None:
        parts.append(cfg.patch_backbone.spec_hash())
    return "+".join(parts) if parts else "-"


def _cache_path(cache_dir: Path, video_id: str) -> Path:
    return cache_dir / f"{video_id}.feat"


def _video_features(
    source: Path, cfg: PipelineConfig, conv_ex, patch_ex
) -> list[FeatureVector]:
    seq = load_frame_sequence(source)
    pairs = sample_frame_pairs(seq, cfg.interval_s)
    if not pairs:
        raise InsufficientDataError(f"{source}: too few frames for any pair")
    vectors = []
    for pair in pairs:
        bundle = build_fragment_bundle(
            pair,
            flow_params=cfg.flow,
            p=cfg.patch_size,
            n=cfg.target_size,
            alpha=cfg.alpha,
        )
        vectors.append(frame_pair_feature(bundle, cfg.plan, conv_ex, patch_ex))
    return vectors


def _dump_fragments(dump_root: Path, video_id: str, cfg: PipelineConfig, source: Path) -> None:
    from PIL import Image

    seq = load_frame_sequence(source)
    pairs = sample_frame_pairs(seq, cfg.interval_s)
    out_dir = dump_root / video_id
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for pair in pairs:
        bundle = build_fragment_bundle(
            pair, flow_params=cfg.flow, p=cfg.patch_size,
            n=cfg.target_size, alpha=cfg.alpha,
        )
        for kind in FRAGMENT_KINDS:
            frag = bundle.stream(kind)
            img = frag.image.data
            Image.fromarray(img if img.shape[2] == 3 else img[:, :, 0]).save(
                out_dir / f"pair{pair.index:03d}_{kind}.png"
            )
        diff_cells = ",".join(f"{r}-{c}" for r, c in bundle.diff_positions.cells)
        flow_cells = ",".join(f"{r}-{c}" for r, c in bundle.flow_positions.cells)
        lines.append(f"pair {pair.index} diff_cells {diff_cells}")
        lines.append(f"pair {pair.index} flow_cells {flow_cells}")
    (out_dir / "positions.txt").write_text("\n".join(lines) + "\n")


def cmd_extract(args, cfg: PipelineConfig) -> int:
    chash = config_hash(cfg)
    bhash = _backbone_hash(cfg)
    manifest_path = Path(args.manifest)
    rows = read_manifest(manifest_path)
    root = manifest_path.parent
    cache_dir = Path(args.features) if args.features else root / cfg.cache_dir
    cache_dir.mkdir(parents=True, exist_ok=True)
    if not rows:
        log.info("manifest is empty, nothing to extract")
        return 0
    conv_ex, patch_ex = _load_extractors(cfg)

    def process(row) -> str:
        cache_path = _cache_path(cache_dir, row.video_id)
        if cache_path.exists():
            try:
                meta = read_cache_header(cache_path)
                if meta.get("config_hash") == chash and meta.get("backbone_hash") == bhash:
                    return "cached"
            except FormatError:
                pass  # unreadable cache entry: recompute it
        vectors = _video_features(root / row.path, cfg, conv_ex, patch_ex)
        write_feature_cache(cache_path, row.video_id, vectors, chash, bhash)
        if args.dump_fragments:
            _dump_fragments(cache_dir / "fragments", row.video_id, cfg, root / row.path)
        return "extracted"

    failures = 0
    stats = {"cached": 0, "extracted": 0}
    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        futures = {pool.submit(process, row): row for row in rows}
        for fut in concurrent.futures.as_completed(futures):
            row = futures[fut]
            try:
                stats[fut.result()] += 1
            except Exception as exc:
                failures += 1
                log.error("%s: %s", row.video_id, exc)
    log.info(
        "extract done: %d computed, %d cache hits, %d failed",
        stats["extracted"], stats["cached"], failures,
    )
    return 1 if failures else 0


def _load_feature_matrix(
    rows, cache_dir: Path, chash: str
) -> tuple[np.ndarray, np.ndarray, str]:
    """Stack per-video aggregate vectors; enforces cache/config agreement."""
    vectors = []
    labels = []
    layout = None
    for row in rows:
        cache_path = _cache_path(cache_dir, row.video_id)
        if not cache_path.exists():
            raise LoadError(
                f"no feature cache for {row.video_id}; run extract first "
                f"(expected {cache_path})"
            )
        cached: CachedFeatures = read_feature_cache(cache_path)
        if cached.config_hash != chash:
            raise LayoutError(
                f"{row.video_id}: cache built under config {cached.config_hash}, "
                f"current config is {chash}"
            )
        vec = cached.video_vector()
        if layout is None:
            layout = layout_to_string(vec.layout)
        elif layout_to_string(vec.layout) != layout:
            raise LayoutError(f"{row.video_id}: feature layout differs from corpus")
        vectors.append(vec.values.astype(np.float64))
        labels.append(row.mos)
    return np.stack(vectors), np.asarray(labels, dtype=np.float64), layout


def _split_for_training(rows, cfg: PipelineConfig):
    tagged = {r.split for r in rows}
    if "train" in tagged and "val" in tagged:
        train_idx = [i for i, r in enumerate(rows) if r.split == "train"]
        val_idx = [i for i, r in enumerate(rows) if r.split == "val"]
        return np.asarray(train_idx), np.asarray(val_idx)
    rng = np.random.default_rng(cfg.train.seed)
    tr, va, _ = protocol_mod.split_indices(
        len(rows), cfg.protocol.train_frac, cfg.protocol.val_frac, rng
    )
    return tr, va


def cmd_train(args, cfg: PipelineConfig) -> int:
    if args.selection:
        from dataclasses import replace

        cfg = replace(cfg, train=replace(cfg.train, selection=args.selection))
    chash = config_hash(cfg)
    manifest_path = Path(args.manifest)
    rows = read_manifest(manifest_path)
    cache_dir = Path(args.features) if args.features else manifest_path.parent / cfg.cache_dir
    x, y, layout = _load_feature_matrix(rows, cache_dir, chash)
    tr, va = _split_for_training(rows, cfg)
    log.info("training on %d videos, validating on %d", tr.size, va.size)
    trained = head_mod.train(x[tr], y[tr], x[va], y[va], cfg.train)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    head_mod.save_checkpoint(out, trained, config_hash=chash, layout=layout)
    log_path = out.with_name(out.name + ".log")
    log_lines = ["epoch,lr,train_loss,val_metric"]
    for entry in trained.history:
        log_lines.append(
            f"{entry['epoch']},{repr(entry['lr'])},"
            f"{repr(entry['train_loss'])},{repr(entry['val_metric'])}"
        )
    log_path.write_text("\n".join(log_lines) + "\n")
    log.info(
        "checkpoint written to %s (best %s %.6f at epoch %d, %d epochs run, swa=%s)",
        out, trained.config.selection, trained.selection_value,
        trained.best_epoch, trained.epochs_run, trained.swa_engaged,
    )
    return 0


def cmd_predict(args, cfg: PipelineConfig) -> int:
    trained, meta = head_mod.load_checkpoint(args.checkpoint)
    chash = config_hash(cfg)
    source = Path(args.source)
    if not source.exists():
        raise ConfigError(f"source does not exist: {source}")

    is_cache = False
    if source.is_file():
        try:
            read_cache_header(source)
            is_cache = True
        except FormatError:
            is_cache = False
    if is_cache:
        cached = read_feature_cache(source)
        if cached.config_hash != chash:
            raise LayoutError(
                f"feature file built under config {cached.config_hash}, "
                f"current config is {chash}"
            )
        video_id = cached.video_id
        n_pairs = len(cached.per_pair)
        vec = cached.video_vector()
    else:
        conv_ex, patch_ex = _load_extractors(cfg)
        vectors = _video_features(source, cfg, conv_ex, patch_ex)
        video_id = source.name
        n_pairs = len(vectors)
        from .features import video_feature

        vec = video_feature(vectors)

    layout = layout_to_string(vec.layout)
    if meta.get("layout") not in ("-", layout):
        raise LayoutError("checkpoint was trained on a different feature layout")
    if vec.values.size != trained.model.dims[0]:
        raise LayoutError(
            f"feature length {vec.values.size} does not match "
            f"model input {trained.model.dims[0]}"
        )
    score = float(trained.model.predict(vec.values.astype(np.float64)[np.newaxis])[0])
    if args.json:
        print(json.dumps(
            {"video_id": video_id, "score": score, "n_pairs": n_pairs, "config_hash": chash}
        ))
    else:
        print(score)
    return 0


def cmd_evaluate(args, cfg: PipelineConfig) -> int:
    if args.selection:
        from dataclasses import replace

        cfg = replace(cfg, train=replace(cfg.train, selection=args.selection))
    if args.iterations:
        from dataclasses import replace

        cfg = replace(cfg, protocol=replace(cfg.protocol, iterations=args.iterations))
    chash = config_hash(cfg)
    manifest_path = Path(args.manifest)
    rows = read_manifest(manifest_path)
    cache_dir = Path(args.features) if args.features else manifest_path.parent / cfg.cache_dir
    x, y, _ = _load_feature_matrix(rows, cache_dir, chash)
    rep = protocol_mod.run_protocol(x, y, cfg.protocol, cfg.train, log=log)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    protocol_mod.write_protocol_csv(out_dir / "iterations.csv", rep)
    protocol_mod.write_protocol_summary(out_dir / "summary.txt", rep)
    report.save_metric_distribution_figure(rep, out_dir / "metrics_distribution.png")
    report.save_fit_scatter_figure(rep, out_dir / "fit_scatter.png")
    for name in ("srcc", "krcc", "plcc", "rmse"):
        if name in rep.medians:
            log.info("%s median %.4f std %.4f", name, rep.medians[name], rep.stds[name])
    log.info("reports written to %s", out_dir)
    return 1 if rep.n_failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fragvqa",
        description="No-reference video quality pipeline: residual fragments, "
        "deep features, MLP regression.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file (defaults used when absent)")
    common.add_argument("--seed", type=int, help="override training/protocol seeds")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common], help="compute feature caches")
    p.add_argument("manifest", help="CSV with video_id, path, mos[, split]")
    p.add_argument("--features", help="cache directory (default from config)")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.add_argument(
        "--dump-fragments", action="store_true",
        help="also write fragment images and patch positions",
    )
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", parents=[common], help="train the regression head")
    p.add_argument("manifest")
    p.add_argument("--features", help="cache directory (default from config)")
    p.add_argument("--out", default="head.ckpt", help="checkpoint path")
    p.add_argument("--selection", choices=["byrmse", "bykrcc"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="score one video")
    p.add_argument("source", help="video source or feature cache file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--json", action="store_true", help="emit a JSON record")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common], help="repeated-split protocol")
    p.add_argument("manifest")
    p.add_argument("--features", help="cache directory (default from config)")
    p.add_argument("--out", default="evaluation", help="report directory")
    p.add_argument("--iterations", type=int, help="override protocol iterations")
    p.add_argument("--selection", choices=["byrmse", "bykrcc"])
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(getattr(args, "verbose", False))
    try:
        cfg = load_pipeline_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
    except (ConfigError, FormatError) as exc:
        log.error("bad configuration: %s", exc)
        return 2
    try:
        return args.func(args, cfg)
    except ConfigError as exc:
        log.error("%s", exc)
        return 2
    except FragVqaError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
