"""Per-pair feature assembly, per-video averaging, and the on-disk cache.

A feature vector is the concatenation of one segment per enabled
(stream, branch) combination: streams in the order the plan declares them,
branches always conv_stack then conv_pool then patch_pool. The layout of
those segments travels with the vector so caches from different runs can be
compared before use.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import backbones
from .errors import (
    ConfigError,
    FormatError,
    InsufficientDataError,
    LayoutError,
    ShapeError,
)
from .fragments import FRAGMENT_KINDS, FragmentBundle

BRANCH_CONV_STACK = "conv_stack"
BRANCH_CONV_POOL = "conv_pool"
BRANCH_PATCH_POOL = "patch_pool"
BRANCH_ORDER = (BRANCH_CONV_STACK, BRANCH_CONV_POOL, BRANCH_PATCH_POOL)

CACHE_MAGIC = "fragvqa-features 1"


@dataclass(frozen=True)
class FeaturePlan:
    """Which fragment streams and pooling branches feed the final vector."""

    streams: tuple[str, ...]
    branches: tuple[str, ...]

    def __post_init__(self):
        if not self.streams or not self.branches:
            raise ConfigError("feature plan needs at least one stream and one branch")
        for s in self.streams:
            if s not in FRAGMENT_KINDS:
                raise ConfigError(f"unknown stream {s!r}")
        if len(set(self.streams)) != len(self.streams):
            raise ConfigError("duplicate stream in plan")
        for b in self.branches:
            if b not in BRANCH_ORDER:
                raise ConfigError(f"unknown branch {b!r}")
        # branches are canonically ordered regardless of how they were given
        object.__setattr__(
            self, "branches", tuple(b for b in BRANCH_ORDER if b in self.branches)
        )


@dataclass(eq=False)
class FeatureVector:
    """Fixed-length float32 vector plus the segment layout that built it."""

    values: np.ndarray
    layout: tuple[tuple[str, str, int, int], ...]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 1:
            raise ShapeError(f"feature vector must be 1-D, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ShapeError("feature vector contains non-finite values")
        total = sum(seg[3] for seg in self.layout)
        if total != self.values.size:
            raise LayoutError(
                f"layout covers {total} values, vector has {self.values.size}"
            )

    def segment(self, stream: str, branch: str) -> np.ndarray:
        for s, b, off, length in self.layout:
            if s == stream and b == branch:
                return self.values[off : off + length]
        raise LayoutError(f"no segment for ({stream}, {branch})")


def layout_to_string(layout: tuple[tuple[str, str, int, int], ...]) -> str:
    return ";".join(f"{s}:{b}:{off}:{length}" for s, b, off, length in layout)


def layout_from_string(text: str) -> tuple[tuple[str, str, int, int], ...]:
    segments = []
    for part in text.split(";"):
        fields = part.split(":")
        if len(fields) != 4:
            raise FormatError(f"bad layout segment {part!r}")
        segments.append((fields[0], fields[1], int(fields[2]), int(fields[3])))
    return tuple(segments)


def _branch_vector(branch: str, image, conv_extractor, patch_extractor) -> np.ndarray:
    if branch == BRANCH_CONV_STACK:
        if conv_extractor is None:
            raise ConfigError("plan enables conv branches but no conv extractor given")
        return backbones.layer_stack_features(conv_extractor.extract_stage_maps(image))
    if branch == BRANCH_CONV_POOL:
        if conv_extractor is None:
            raise ConfigError("plan enables conv branches but no conv extractor given")
        maps = conv_extractor.extract_stage_maps(image)
        return backbones.global_pool_conv(backbones.channel_means(maps[-1]))
    if branch == BRANCH_PATCH_POOL:
        if patch_extractor is None:
            raise ConfigError("plan enables patch_pool but no patch extractor given")
        return backbones.patch_embedding_pool(
            patch_extractor.extract_patch_embeddings(image)
        )
    raise ConfigError(f"unknown branch {branch!r}")


def frame_pair_feature(
    bundle: FragmentBundle,
    plan: FeaturePlan,
    conv_extractor=None,
    patch_extractor=None,
) -> FeatureVector:
    """Extract, pool, and concatenate every enabled (stream, branch) segment."""
    pieces = []
    layout = []
    offset = 0
    for stream in plan.streams:
        image = bundle.stream(stream)
        for branch in plan.branches:
            vec = _branch_vector(branch, image, conv_extractor, patch_extractor)
            pieces.append(vec)
            layout.append((stream, branch, offset, vec.size))
            offset += vec.size
    return FeatureVector(np.concatenate(pieces), tuple(layout))


def _pairwise_sum(rows: np.ndarray) -> np.ndarray:
    """Tree reduction in index order; stable and order-deterministic."""
    n = rows.shape[0]
    if n == 1:
        return rows[0].copy()
    half = n // 2
    return _pairwise_sum(rows[:half]) + _pairwise_sum(rows[half:])


def video_feature(per_pair: list[FeatureVector]) -> FeatureVector:
    """Elementwise mean over frame-pair vectors; layout must agree."""
    if not per_pair:
        raise InsufficientDataError("no frame-pair features to average")
    layout = per_pair[0].layout
    for fv in per_pair[1:]:
        if fv.layout != layout:
            raise LayoutError("mixed layouts in video aggregation")
    stack = np.stack([fv.values.astype(np.float64) for fv in per_pair])
    mean = _pairwise_sum(stack) / len(per_pair)
    return FeatureVector(mean, layout)


# ---------------------------------------------------------------------------
# Cache files: structured-text header, blank line, raw float32 LE payload
# ---------------------------------------------------------------------------


def write_feature_cache(
    path: str | Path,
    video_id: str,
    per_pair: list[FeatureVector],
    config_hash: str,
    backbone_hash: str,
) -> None:
    if not per_pair:
        raise InsufficientDataError("nothing to cache")
    layout = per_pair[0].layout
    for fv in per_pair[1:]:
        if fv.layout != layout:
            raise LayoutError("mixed layouts in cache write")
    length = per_pair[0].values.size
    header = "\n".join(
        [
            CACHE_MAGIC,
            f"video_id = {video_id}",
            f"config_hash = {config_hash}",
            f"backbone_hash = {backbone_hash}",
            f"n_pairs = {len(per_pair)}",
            f"length = {length}",
            f"layout = {layout_to_string(layout)}",
            "",
            "",
        ]
    )
    payload = np.stack([fv.values for fv in per_pair]).astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header.encode())
        fh.write(payload)


@dataclass
class CachedFeatures:
    video_id: str
    config_hash: str
    backbone_hash: str
    per_pair: list[FeatureVector] = field(repr=False)

    def video_vector(self) -> FeatureVector:
        return video_feature(self.per_pair)


def read_cache_header(path: str | Path) -> dict[str, str]:
    """Parse just the text header; cheap existence/compatibility probe."""
    with open(path, "rb") as fh:
        raw = fh.read(4096)
    sep = raw.find(b"\n\n")
    if sep < 0:
        raise FormatError(f"{path}: missing header terminator")
    lines = raw[:sep].decode(errors="replace").splitlines()
    if not lines or lines[0] != CACHE_MAGIC:
        raise FormatError(f"{path}: not a feature cache file")
    meta = {}
    for line in lines[1:]:
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    return meta


def read_feature_cache(path: str | Path) -> CachedFeatures:
    raw = Path(path).read_bytes()
    sep = raw.find(b"\n\n")
    if sep < 0:
        raise FormatError(f"{path}: missing header terminator")
    lines = raw[:sep].decode().splitlines()
    if not lines or lines[0] != CACHE_MAGIC:
        raise FormatError(f"{path}: not a feature cache file")
    meta = {}
    for line in lines[1:]:
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    try:
        n_pairs = int(meta["n_pairs"])
        length = int(meta["length"])
        layout = layout_from_string(meta["layout"])
    except KeyError as exc:
        raise FormatError(f"{path}: header missing {exc}") from exc
    payload = raw[sep + 2 :]
    expected = n_pairs * length * 4
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, header declares {expected}"
        )
    matrix = np.frombuffer(payload, dtype="<f4").reshape(n_pairs, length)
    per_pair = [FeatureVector(row, layout) for row in matrix]
    return CachedFeatures(
        video_id=meta.get("video_id", ""),
        config_hash=meta.get("config_hash", ""),
        backbone_hash=meta.get("backbone_hash", ""),
        per_pair=per_pair,
    )


# ---------------------------------------------------------------------------
# Dataset manifest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRow:
    video_id: str
    path: str
    mos: float
    split: str = ""


def read_manifest(path: str | Path) -> list[ManifestRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"video_id", "path", "mos"} <= set(
            reader.fieldnames
        ):
            raise FormatError(f"{path}: manifest needs video_id, path, mos columns")
        for rec in reader:
            try:
                mos = float(rec["mos"])
            except (TypeError, ValueError) as exc:
                raise FormatError(f"{path}: bad mos value {rec['mos']!r}") from exc
            rows.append(
                ManifestRow(
                    video_id=rec["video_id"],
                    path=rec["path"],
                    mos=mos,
                    split=(rec.get("split") or "").strip(),
                )
            )
    return rows


def write_manifest(path: str | Path, rows: list[ManifestRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "path", "mos", "split"])
        for row in rows:
            writer.writerow([row.video_id, row.path, repr(row.mos), row.split])
