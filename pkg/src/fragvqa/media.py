"""Frame decoding and temporal pair sampling.

Frames are immutable-by-convention uint8/uint16 arrays wrapped with their
bit depth. Three sources are supported: raw planar files with a plain-text
sidecar, directories of image files, and a piped child decoder writing raw
interleaved frames to stdout.
"""

from __future__ import annotations

import math
import shlex
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InsufficientDataError, ShapeError

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}

# Rec.601 luma weights for 8-bit video pipelines.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(eq=False)
class Frame:
    """One decoded frame: (height, width, channels) interleaved intensities."""

    data: np.ndarray
    bit_depth: int = 8

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, np.newaxis]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ShapeError(f"frame must be (h, w, c) with c in {{1, 3}}, got {data.shape}")
        if not (1 <= self.bit_depth <= 16):
            raise FormatError(f"unsupported bit depth {self.bit_depth}")
        peak = (1 << self.bit_depth) - 1
        if np.issubdtype(data.dtype, np.floating):
            raise FormatError("frame intensities must be integers")
        if data.size and (int(data.min()) < 0 or int(data.max()) > peak):
            raise FormatError(f"intensities outside [0, {peak}]")
        wanted = np.uint8 if self.bit_depth <= 8 else np.uint16
        self.data = np.ascontiguousarray(data.astype(wanted, copy=False))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def peak(self) -> int:
        return (1 << self.bit_depth) - 1


@dataclass(eq=False)
class FrameSequence:
    """Ordered frames from one source, all sharing dimensions and depth."""

    frames: list[Frame]
    fps: float
    source_id: str = ""

    def __post_init__(self):
        if self.fps <= 0:
            raise FormatError(f"fps must be > 0, got {self.fps}")
        if self.frames:
            first = self.frames[0]
            for i, f in enumerate(self.frames[1:], start=1):
                if (f.width, f.height, f.channels, f.bit_depth) != (
                    first.width,
                    first.height,
                    first.channels,
                    first.bit_depth,
                ):
                    raise FormatError(f"frame {i} dimensions differ from frame 0")

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(eq=False)
class FramePair:
    """Two consecutive source frames sampled at a cadence point."""

    first: Frame
    second: Frame
    time_s: float
    index: int

    def __post_init__(self):
        if (self.first.height, self.first.width, self.first.channels) != (
            self.second.height,
            self.second.width,
            self.second.channels,
        ):
            raise ShapeError("paired frames must share dimensions")


def read_sidecar(path: Path) -> dict[str, str]:
    """Parse a key=value sidecar manifest; '#' starts a comment line."""
    entries: dict[str, str] = {}
    for raw in path.read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"bad sidecar line in {path}: {raw!r}")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def _sidecar_for(source: Path) -> Path | None:
    if source.is_dir():
        candidate = source / "manifest.txt"
    else:
        candidate = source.with_name(source.name + ".meta")
    return candidate if candidate.exists() else None


def _resolve_geometry(source: Path, width, height, channels, fps) -> tuple[int, int, int, float]:
    sidecar = _sidecar_for(source)
    meta = read_sidecar(sidecar) if sidecar else {}
    try:
        width = int(width if width is not None else meta["width"])
        height = int(height if height is not None else meta["height"])
        channels = int(channels if channels is not None else meta.get("channels", 3))
        fps = float(fps if fps is not None else meta["fps"])
    except KeyError as exc:
        raise FormatError(f"missing {exc.args[0]} (no sidecar entry or argument) for {source}") from exc
    return width, height, channels, fps


def _frames_from_planar(buf: bytes, width: int, height: int, channels: int, source) -> list[Frame]:
    frame_bytes = width * height * channels
    if frame_bytes == 0 or len(buf) % frame_bytes != 0:
        raise FormatError(
            f"{source}: byte count {len(buf)} is not a multiple of w*h*c = {frame_bytes}"
        )
    n = len(buf) // frame_bytes
    stack = np.frombuffer(buf, dtype=np.uint8).reshape(n, channels, height, width)
    return [Frame(np.ascontiguousarray(np.moveaxis(stack[i], 0, 2))) for i in range(n)]


def _frames_from_interleaved(buf: bytes, width: int, height: int, channels: int, source) -> list[Frame]:
    frame_bytes = width * height * channels
    if frame_bytes == 0 or len(buf) % frame_bytes != 0:
        raise FormatError(
            f"{source}: byte count {len(buf)} is not a multiple of w*h*c = {frame_bytes}"
        )
    n = len(buf) // frame_bytes
    stack = np.frombuffer(buf, dtype=np.uint8).reshape(n, height, width, channels)
    return [Frame(stack[i].copy()) for i in range(n)]


def load_frame_sequence(
    source: str | Path,
    format: str | None = None,
    *,
    width: int | None = None,
    height: int | None = None,
    channels: int | None = None,
    fps: float | None = None,
    decoder_template: str | None = None,
) -> FrameSequence:
    """Decode a frame source into a FrameSequence.

    ``format`` is one of ``raw_planar``, ``image_directory``, ``piped_decoder``;
    when omitted it is inferred (directory -> image_directory, otherwise
    piped_decoder if a decoder template is supplied, else raw_planar).
    Geometry and fps come from explicit arguments first, then the sidecar
    manifest (``<file>.meta`` next to files, ``manifest.txt`` inside
    directories).
    """
    source = Path(source)
    if not source.exists():
        raise FormatError(f"source does not exist: {source}")
    if format is None:
        if source.is_dir():
            format = "image_directory"
        elif decoder_template:
            format = "piped_decoder"
        else:
            format = "raw_planar"

    if format == "image_directory":
        from PIL import Image

        paths = sorted(p for p in source.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not paths:
            raise FormatError(f"no image files in {source}")
        sidecar = _sidecar_for(source)
        meta = read_sidecar(sidecar) if sidecar else {}
        if fps is None:
            if "fps" not in meta:
                raise FormatError(f"fps not given and no manifest.txt in {source}")
            fps = float(meta["fps"])
        frames = []
        for p in paths:
            with Image.open(p) as img:
                arr = np.asarray(img.convert("L") if img.mode in ("L", "1", "I;16") else img.convert("RGB"))
            frames.append(Frame(arr))
        seq = FrameSequence(frames, fps=fps, source_id=source.name)
    elif format == "raw_planar":
        width, height, channels, fps = _resolve_geometry(source, width, height, channels, fps)
        try:
            buf = source.read_bytes()
        except OSError as exc:
            raise FormatError(f"cannot read {source}: {exc}") from exc
        frames = _frames_from_planar(buf, width, height, channels, source)
        seq = FrameSequence(frames, fps=fps, source_id=source.name)
    elif format == "piped_decoder":
        if not decoder_template:
            raise FormatError("piped_decoder requires a decoder command template")
        width, height, channels, fps = _resolve_geometry(source, width, height, channels, fps)
        cmd = [part.format(path=str(source)) for part in shlex.split(decoder_template)]
        try:
            proc = subprocess.run(cmd, stdout=subprocess.PIPE, check=True)
        except (OSError, subprocess.CalledProcessError) as exc:
            raise FormatError(f"decoder failed for {source}: {exc}") from exc
        frames = _frames_from_interleaved(proc.stdout, width, height, channels, source)
        seq = FrameSequence(frames, fps=fps, source_id=source.name)
    else:
        raise FormatError(f"unknown source format {format!r}")

    if not seq.frames:
        raise FormatError(f"{source}: decoded zero frames")
    return seq


def sample_frame_pairs(seq: FrameSequence, interval_s: float = 0.5) -> list[FramePair]:
    """Sample consecutive-frame pairs every ``interval_s`` seconds.

    The k-th sample anchors at frame i = round(k * interval_s * fps) and pairs
    it with frame i+1; sampling stops once i+1 runs past the sequence.
    """
    if interval_s <= 0:
        raise FormatError(f"interval_s must be > 0, got {interval_s}")
    if len(seq) < 2:
        raise InsufficientDataError(f"need at least 2 frames, got {len(seq)}")
    pairs: list[FramePair] = []
    k = 0
    while True:
        i = int(math.floor(k * interval_s * seq.fps + 0.5))  # round half up
        if i + 1 >= len(seq):
            break
        pairs.append(FramePair(seq.frames[i], seq.frames[i + 1], time_s=i / seq.fps, index=k))
        k += 1
    return pairs


def to_luma(frame: Frame) -> Frame:
    """Rec.601 luma; single-channel frames pass through unchanged."""
    if frame.channels == 1:
        return frame
    rgb = frame.data.astype(np.float64)
    y = LUMA_WEIGHTS[0] * rgb[:, :, 0] + LUMA_WEIGHTS[1] * rgb[:, :, 1] + LUMA_WEIGHTS[2] * rgb[:, :, 2]
    y = np.floor(y + 0.5).astype(frame.data.dtype)
    return Frame(y[:, :, np.newaxis], bit_depth=frame.bit_depth)


def resize_bilinear(frame: Frame, out_w: int, out_h: int) -> Frame:
    """Bilinear resize with half-pixel-center alignment."""
    if out_w < 1 or out_h < 1:
        raise ShapeError(f"target dimensions must be >= 1, got {out_w}x{out_h}")
    h, w = frame.height, frame.width
    if (out_w, out_h) == (w, h):
        return Frame(frame.data.copy(), bit_depth=frame.bit_depth)
    src = frame.data.astype(np.float64)

    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[np.newaxis, :, np.newaxis]
    fy = (ys - y0)[:, np.newaxis, np.newaxis]

    top = src[y0][:, x0] * (1.0 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1.0 - fx) + src[y1][:, x1] * fx
    out = top * (1.0 - fy) + bot * fy
    out = np.floor(out + 0.5).astype(frame.data.dtype)
    return Frame(out, bit_depth=frame.bit_depth)
