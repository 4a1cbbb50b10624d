"""Frame differencing, dense optical flow, and flow visualization.

The flow estimator is polynomial-expansion pyramidal flow (Farneback) via
OpenCV; everything around it is plain numpy so pixel-level outputs stay
bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .errors import ShapeError, SizeError
from .media import Frame


@dataclass(eq=False)
class ResidualMap:
    """Non-negative per-pixel values, (h, w, c) float64."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 2:
            values = values[:, :, np.newaxis]
        if values.ndim != 3:
            raise ShapeError(f"residual map must be (h, w, c), got {values.shape}")
        if values.size and float(values.min()) < 0:
            raise ShapeError("residual map values must be >= 0")
        self.values = values

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass(eq=False)
class FlowField:
    """Dense displacement field: u (horizontal) and v (vertical), pixels."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise ShapeError("u and v must be identical 2-D arrays")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise ShapeError("flow components must be finite")

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]


@dataclass(frozen=True)
class FlowParams:
    """Pyramidal polynomial-expansion flow parameters."""

    pyramid_scale: float = 0.5
    levels: int = 3
    window_size: int = 15
    iterations: int = 3
    poly_n: int = 5
    poly_sigma: float = 1.2

    def __post_init__(self):
        if not 0 < self.pyramid_scale < 1:
            raise ShapeError(f"pyramid_scale must be in (0, 1), got {self.pyramid_scale}")
        if self.levels < 1 or self.iterations < 1:
            raise ShapeError("levels and iterations must be >= 1")
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ShapeError(f"window_size must be odd and >= 1, got {self.window_size}")
        if self.poly_n < 1 or self.poly_n % 2 == 0:
            raise ShapeError(f"poly_n must be odd and >= 1, got {self.poly_n}")
        if self.poly_sigma <= 0:
            raise ShapeError(f"poly_sigma must be > 0, got {self.poly_sigma}")


def frame_difference(f_t: Frame, f_t1: Frame) -> ResidualMap:
    """Per-pixel, per-channel absolute difference between two frames."""
    if f_t.data.shape != f_t1.data.shape:
        raise ShapeError(f"frame shapes differ: {f_t.data.shape} vs {f_t1.data.shape}")
    a = f_t.data.astype(np.int32)
    b = f_t1.data.astype(np.int32)
    return ResidualMap(np.abs(b - a).astype(np.float64))


def estimate_flow(luma_t: Frame, luma_t1: Frame, params: FlowParams = FlowParams()) -> FlowField:
    """Dense displacement from ``luma_t`` toward ``luma_t1``.

    Quadratic local-model flow refined coarse-to-fine over an image pyramid
    with windowed displacement averaging and a fixed iteration count per
    level. Deterministic for fixed parameters.
    """
    if luma_t.channels != 1 or luma_t1.channels != 1:
        raise ShapeError("flow needs single-channel frames; convert with to_luma first")
    if luma_t.data.shape != luma_t1.data.shape:
        raise ShapeError("flow frames must share dimensions")
    min_dim = min(luma_t.height, luma_t.width)
    if min_dim < max(params.window_size, params.poly_n):
        raise SizeError(
            f"frame side {min_dim} too small for window {params.window_size} / neighborhood {params.poly_n}"
        )
    prev = luma_t.data[:, :, 0]
    nxt = luma_t1.data[:, :, 0]
    if prev.dtype != np.uint8:
        scale = 255.0 / luma_t.peak
        prev = np.floor(prev * scale + 0.5).astype(np.uint8)
        nxt = np.floor(nxt * scale + 0.5).astype(np.uint8)
    if np.array_equal(prev, nxt):
        # the estimator leaves sub-pixel noise even on identical inputs, and
        # the visualization normalizes by the field max, amplifying it
        zeros = np.zeros(prev.shape, dtype=np.float64)
        return FlowField(zeros, zeros.copy())
    # The windowed estimator is biased near image borders; reflect-pad by the
    # window width and crop so border pixels are estimated as interior ones.
    p = min(params.window_size, prev.shape[0] - 1, prev.shape[1] - 1)
    prev = cv2.copyMakeBorder(prev, p, p, p, p, cv2.BORDER_REFLECT_101)
    nxt = cv2.copyMakeBorder(nxt, p, p, p, p, cv2.BORDER_REFLECT_101)
    flow = cv2.calcOpticalFlowFarneback(
        prev,
        nxt,
        None,
        params.pyramid_scale,
        params.levels,
        params.window_size,
        params.iterations,
        params.poly_n,
        params.poly_sigma,
        0,
    )
    flow = flow[p : p + luma_t.height, p : p + luma_t.width]
    return FlowField(flow[:, :, 0], flow[:, :, 1])


def flow_magnitude(field: FlowField) -> ResidualMap:
    """Per-pixel Euclidean magnitude of the flow vectors."""
    return ResidualMap(np.hypot(field.u, field.v))


def flow_to_rgb(field: FlowField, bit_depth: int = 8) -> Frame:
    """Encode flow direction/velocity as an RGB frame.

    Hue is the vector angle in degrees wrapped to [0, 360); saturation is
    full scale; value is the magnitude normalized by the field maximum (all
    black when the field is still). The value channel is quantized half-up
    before the sector conversion so encoded images are bit-exact.
    """
    if field.u.size == 0:
        raise ShapeError("empty flow field")
    peak = (1 << bit_depth) - 1
    mag = np.hypot(field.u, field.v)
    max_mag = float(mag.max())
    if max_mag > 0:
        value = np.floor(np.minimum(mag / max_mag, 1.0) * peak + 0.5)
    else:
        value = np.zeros_like(mag)

    # arctan2 yields (-180, 180]; adding 360 to negatives lands in [0, 360)
    hue = np.degrees(np.arctan2(field.v, field.u))
    hue = np.where(hue < 0, hue + 360.0, hue)

    v = value / peak  # saturation is 1, so chroma == v
    sector = hue / 60.0
    x = v * (1.0 - np.abs(np.mod(sector, 2.0) - 1.0))
    zero = np.zeros_like(v)
    sec = np.floor(sector).astype(np.int64) % 6
    r = np.choose(sec, [v, x, zero, zero, x, v])
    g = np.choose(sec, [x, v, v, x, zero, zero])
    b = np.choose(sec, [zero, zero, x, v, v, x])
    rgb = np.stack([r, g, b], axis=2) * peak
    data = np.floor(rgb + 0.5).astype(np.uint8 if bit_depth <= 8 else np.uint16)
    return Frame(data, bit_depth=bit_depth)
