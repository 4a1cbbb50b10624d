"""Procedural test corpus: drifting textures with graded degradation.

Each clip is a colored sinusoid field translating at a constant velocity,
degraded by gaussian blur plus additive noise whose strength is the clip's
degradation level d in [0, 1]. The label is 1 - d, so quality is exactly
monotone in the corruption and a working pipeline must recover the ranking.
Clips are written as raw planar files with key=value sidecars.
"""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np

from .features import ManifestRow, write_manifest


def write_raw_clip(path: str | Path, frames: np.ndarray, fps: float) -> None:
    """Store (n, h, w, c) uint8 frames as frame-major channel planes + sidecar."""
    path = Path(path)
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.dtype != np.uint8:
        raise ValueError(f"expected (n, h, w, c) uint8, got {frames.shape} {frames.dtype}")
    n, h, w, c = frames.shape
    path.write_bytes(np.ascontiguousarray(np.moveaxis(frames, 3, 1)).tobytes())
    sidecar = path.with_name(path.name + ".meta")
    sidecar.write_text(f"width = {w}\nheight = {h}\nchannels = {c}\nfps = {repr(fps)}\n")


def texture_frames(
    rng: np.random.Generator,
    n_frames: int,
    height: int,
    width: int,
) -> np.ndarray:
    """Smooth drifting color field, float64 in roughly [0, 255]."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    vel = rng.uniform(-2.5, 2.5, size=2)
    while np.hypot(*vel) < 0.8:  # guarantee visible motion
        vel = rng.uniform(-2.5, 2.5, size=2)
    out = np.empty((n_frames, height, width, 3))
    for ch in range(3):
        amp = rng.uniform(18.0, 42.0, size=4)
        freq = rng.uniform(0.05, 0.35, size=(4, 2))
        phase = rng.uniform(0.0, 2.0 * np.pi, size=4)
        level = rng.uniform(100.0, 156.0)
        for t in range(n_frames):
            ox, oy = vel[0] * t, vel[1] * t
            acc = np.full((height, width), level)
            for k in range(4):
                acc += amp[k] * np.sin(freq[k, 0] * (xx + ox) + freq[k, 1] * (yy + oy) + phase[k])
            out[t, :, :, ch] = acc
    return out


def degrade_frames(frames: np.ndarray, degradation: float, rng: np.random.Generator) -> np.ndarray:
    """Blur then add noise, both scaled by degradation in [0, 1]; uint8 out."""
    if not 0.0 <= degradation <= 1.0:
        raise ValueError(f"degradation must be in [0, 1], got {degradation}")
    out = np.empty_like(frames)
    ksize = 2 * int(np.floor(3.0 * degradation + 0.5)) + 1
    sigma = 0.3 + 2.4 * degradation
    noise_sd = 45.0 * degradation
    for t in range(frames.shape[0]):
        f = frames[t]
        if degradation > 0.0 and ksize > 1:
            f = cv2.GaussianBlur(f, (ksize, ksize), sigma)
        if noise_sd > 0.0:
            f = f + rng.normal(0.0, noise_sd, size=f.shape)
        out[t] = f
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def generate_clip(
    path: str | Path,
    degradation: float,
    seed: int,
    n_frames: int = 18,
    height: int = 64,
    width: int = 64,
    fps: float = 8.0,
) -> None:
    rng = np.random.default_rng(seed)
    clean = texture_frames(rng, n_frames, height, width)
    write_raw_clip(path, degrade_frames(clean, degradation, rng), fps)


def generate_corpus(
    root: str | Path,
    n_clips: int = 50,
    seed: int = 7,
    n_frames: int = 18,
    height: int = 64,
    width: int = 64,
    fps: float = 8.0,
) -> Path:
    """Write clips plus a manifest; returns the manifest path."""
    root = Path(root)
    clip_dir = root / "clips"
    clip_dir.mkdir(parents=True, exist_ok=True)
    degradations = np.linspace(0.0, 0.95, n_clips)
    rows = []
    for i, d in enumerate(degradations):
        video_id = f"clip{i:03d}"
        rel = f"clips/{video_id}.raw"
        generate_clip(
            root / rel, float(d), seed=seed * 100003 + i,
            n_frames=n_frames, height=height, width=width, fps=fps,
        )
        rows.append(ManifestRow(video_id=video_id, path=rel, mos=float(1.0 - d)))
    manifest = root / "manifest.csv"
    write_manifest(manifest, rows)
    return manifest
