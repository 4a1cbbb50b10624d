"""Patch scoring, top-K selection, and fragment assembly.

A fragment is a fixed-size mosaic (default 224x224) built from the highest
energy p x p patches of a residual or flow map, re-tiled in raster order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, CapacityError, ShapeError, SizeError
from .media import Frame, FramePair, resize_bilinear, to_luma
from .motion import (
    FlowParams,
    ResidualMap,
    estimate_flow,
    flow_magnitude,
    flow_to_rgb,
    frame_difference,
)

KIND_RESIDUAL_DIFF = "residual_diff"
KIND_RESIDUAL_FLOW = "residual_flow"
KIND_MERGED = "merged"
KIND_SPATIAL = "spatial"
KIND_RESIZED_FRAME = "resized_frame"
FRAGMENT_KINDS = (
    KIND_RESIDUAL_DIFF,
    KIND_RESIDUAL_FLOW,
    KIND_MERGED,
    KIND_SPATIAL,
    KIND_RESIZED_FRAME,
)


@dataclass(eq=False)
class ScoreGrid:
    """Per-cell patch scores over a non-overlapping p x p grid."""

    scores: np.ndarray  # (rows, cols) float64
    patch_size: int

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2:
            raise ShapeError(f"scores must be 2-D, got {self.scores.shape}")
        if self.scores.size and float(self.scores.min()) < 0:
            raise ShapeError("patch scores must be >= 0")

    @property
    def rows(self) -> int:
        return self.scores.shape[0]

    @property
    def cols(self) -> int:
        return self.scores.shape[1]


@dataclass(eq=False)
class PatchPositions:
    """Selected grid cells, raster-sorted, with their source geometry."""

    cells: list[tuple[int, int]]  # (grid_y, grid_x)
    patch_size: int
    source_h: int
    source_w: int

    def __post_init__(self):
        cells = [(int(y), int(x)) for y, x in self.cells]
        if len(set(cells)) != len(cells):
            raise BoundsError("duplicate patch positions")
        if cells != sorted(cells):
            raise BoundsError("patch positions must be in raster order")
        p = self.patch_size
        for y, x in cells:
            if y < 0 or x < 0 or (y + 1) * p > self.source_h or (x + 1) * p > self.source_w:
                raise BoundsError(f"cell ({y}, {x}) outside {self.source_h}x{self.source_w} at p={p}")
        self.cells = cells

    def __len__(self) -> int:
        return len(self.cells)


@dataclass(eq=False)
class Fragment:
    """An n x n mosaic image plus the positions it was cut from."""

    image: Frame
    kind: str
    positions: PatchPositions | None = None

    def __post_init__(self):
        if self.kind not in FRAGMENT_KINDS:
            raise ShapeError(f"unknown fragment kind {self.kind!r}")
        if self.image.width != self.image.height:
            raise ShapeError("fragment image must be square")


@dataclass(eq=False)
class FragmentBundle:
    """All fragment streams derived from one frame pair."""

    residual_diff: Fragment
    residual_flow: Fragment
    merged: Fragment
    spatial: Fragment
    resized_frame: Fragment
    diff_positions: PatchPositions
    flow_positions: PatchPositions
    diff_scores: ScoreGrid
    flow_scores: ScoreGrid
    pair_index: int = 0
    time_s: float = 0.0

    def stream(self, name: str) -> Fragment:
        if name not in FRAGMENT_KINDS:
            raise ShapeError(f"unknown stream {name!r}")
        return getattr(self, name)


def _as_values(source: Frame | ResidualMap) -> np.ndarray:
    if isinstance(source, Frame):
        return source.data.astype(np.float64)
    return source.values


def patch_scores(source: Frame | ResidualMap, p: int) -> ScoreGrid:
    """Sum each non-overlapping p x p patch over all channels.

    Trailing rows/columns that do not fill a whole patch are ignored.
    """
    if p < 1:
        raise SizeError(f"patch size must be >= 1, got {p}")
    values = _as_values(source)
    h, w, c = values.shape
    rows, cols = h // p, w // p
    if rows < 1 or cols < 1:
        raise SizeError(f"map {h}x{w} smaller than one {p}x{p} patch")
    cropped = values[: rows * p, : cols * p, :]
    sums = cropped.reshape(rows, p, cols, p, c).sum(axis=(1, 3, 4))
    return ScoreGrid(sums, patch_size=p)


def select_top_patches(grid: ScoreGrid, k: int) -> PatchPositions:
    """The k highest-scoring cells, ties broken by smaller linear index,
    returned re-sorted into raster order."""
    cells_total = grid.rows * grid.cols
    if not 1 <= k <= cells_total:
        raise CapacityError(f"k={k} outside [1, {cells_total}]")
    flat = grid.scores.ravel()
    order = np.argsort(-flat, kind="stable")  # stable keeps ascending index on ties
    top = np.sort(order[:k])
    cells = [divmod(int(i), grid.cols) for i in top]
    return PatchPositions(
        cells,
        patch_size=grid.patch_size,
        source_h=grid.rows * grid.patch_size,
        source_w=grid.cols * grid.patch_size,
    )


def assemble_fragment(
    source: Frame | ResidualMap,
    positions: PatchPositions,
    n: int,
    kind: str,
    bit_depth: int = 8,
) -> Fragment:
    """Copy the selected patches into an n x n mosaic in raster order.

    Cell idx of the mosaic grid is (idx // (n//p), idx % (n//p)); cells past
    the selected count stay zero. Values are rounded half-up into the
    fragment's integer range.
    """
    p = positions.patch_size
    grid_n = n // p
    if grid_n < 1:
        raise SizeError(f"target size {n} smaller than patch size {p}")
    if len(positions) > grid_n * grid_n:
        raise CapacityError(f"{len(positions)} patches exceed a {grid_n}x{grid_n} mosaic")
    values = _as_values(source)
    h, w, c = values.shape
    for y, x in positions.cells:
        if (y + 1) * p > h or (x + 1) * p > w:
            raise BoundsError(f"cell ({y}, {x}) outside source {h}x{w}")
    peak = (1 << bit_depth) - 1
    dtype = np.uint8 if bit_depth <= 8 else np.uint16
    target = np.zeros((n, n, c), dtype=dtype)
    for idx, (y, x) in enumerate(positions.cells):
        patch = values[y * p : (y + 1) * p, x * p : (x + 1) * p, :]
        ty, tx = divmod(idx, grid_n)
        target[ty * p : (ty + 1) * p, tx * p : (tx + 1) * p, :] = np.clip(
            np.floor(patch + 0.5), 0, peak
        ).astype(dtype)
    return Fragment(Frame(target, bit_depth=bit_depth), kind=kind, positions=positions)


def merge_fragments(rf_diff: Fragment, rf_flow: Fragment, alpha: float = 0.5) -> Fragment:
    """Pixelwise blend alpha*diff + (1-alpha)*flow, rounded half-up."""
    a, b = rf_diff.image, rf_flow.image
    if a.data.shape != b.data.shape:
        raise ShapeError(f"fragment shapes differ: {a.data.shape} vs {b.data.shape}")
    if a.channels != 3:
        raise ShapeError("merged fragments require 3-channel inputs")
    blend = alpha * a.data.astype(np.float64) + (1.0 - alpha) * b.data.astype(np.float64)
    data = np.floor(blend + 0.5).astype(a.data.dtype)
    return Fragment(Frame(data, bit_depth=a.bit_depth), kind=KIND_MERGED, positions=None)


def spatial_fragment(frame: Frame, diff_positions: PatchPositions, n: int) -> Fragment:
    """Cut the decoded frame at the frame-difference top-K positions."""
    return assemble_fragment(frame, diff_positions, n, kind=KIND_SPATIAL, bit_depth=frame.bit_depth)


def _ensure_rgb(fragment: Fragment) -> Fragment:
    if fragment.image.channels == 3:
        return fragment
    data = np.repeat(fragment.image.data, 3, axis=2)
    return Fragment(
        Frame(data, bit_depth=fragment.image.bit_depth),
        kind=fragment.kind,
        positions=fragment.positions,
    )


def build_fragment_bundle(
    pair: FramePair,
    flow_params: FlowParams = FlowParams(),
    p: int = 16,
    n: int = 224,
    alpha: float = 0.5,
) -> FragmentBundle:
    """Run the full per-pair fragment pipeline.

    Frame-difference and flow-magnitude maps are scored on the same grid;
    each stream keeps its own top-K (K = (n//p)^2, clamped to the grid so
    undersized frames pad the mosaic with zero cells instead of failing).
    Single-channel sources are replicated to RGB so every stream matches the
    3-channel extractor input.
    """
    second = pair.second
    diff = frame_difference(pair.first, second)
    diff_grid = patch_scores(diff, p)
    k = min((n // p) ** 2, diff_grid.rows * diff_grid.cols)
    diff_pos = select_top_patches(diff_grid, k)
    rf_diff = _ensure_rgb(
        assemble_fragment(diff, diff_pos, n, kind=KIND_RESIDUAL_DIFF, bit_depth=second.bit_depth)
    )

    flow = estimate_flow(to_luma(pair.first), to_luma(second), flow_params)
    flow_rgb = flow_to_rgb(flow, bit_depth=second.bit_depth)
    flow_grid = patch_scores(flow_magnitude(flow), p)
    flow_pos = select_top_patches(flow_grid, k)
    rf_flow = assemble_fragment(
        flow_rgb, flow_pos, n, kind=KIND_RESIDUAL_FLOW, bit_depth=second.bit_depth
    )

    merged = merge_fragments(rf_diff, rf_flow, alpha)
    spatial = _ensure_rgb(spatial_fragment(second, diff_pos, n))
    resized = _ensure_rgb(
        Fragment(resize_bilinear(second, n, n), kind=KIND_RESIZED_FRAME, positions=None)
    )
    return FragmentBundle(
        residual_diff=rf_diff,
        residual_flow=rf_flow,
        merged=merged,
        spatial=spatial,
        resized_frame=resized,
        diff_positions=diff_pos,
        flow_positions=flow_pos,
        diff_scores=diff_grid,
        flow_scores=flow_grid,
        pair_index=pair.index,
        time_s=pair.time_s,
    )
