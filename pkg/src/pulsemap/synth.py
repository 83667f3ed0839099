"""Synthetic pulsatile video with exact ground truth.

A skin-colored patch on a plain background is luma-modulated by
amplitude/2 * sin(2*pi*phi(t)), where phi(t) is the exact integral of the
(piecewise-linear) bpm trace divided by 60. Optional patch motion,
scheduled occlusions (a distractor color pasted over a region) and Gaussian
pixel noise are applied on top. Every frame draws its noise from its own
substream (PCG64 seeded with SeedSequence([rng_seed, frame_index])), so the
output is bit-reproducible and frames could be generated in any order.

write_clip produces the exact directory layout the dataset module ingests:
numbered PNG frames, a key=value manifest, and a per-second gt.txt.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import GT_FILENAME, MANIFEST_FILENAME, HrSample


@dataclass
class Motion:
    """Patch motion: 'none', 'drift' (vx/vy px per second) or 'sway'
    (sinusoidal x displacement with amplitude amp_px and period period_s)."""

    kind: str = "none"
    vx: float = 0.0
    vy: float = 0.0
    amp_px: float = 0.0
    period_s: float = 1.0

    def offset(self, t: float) -> tuple[int, int]:
        if self.kind == "none":
            return 0, 0
        if self.kind == "drift":
            return int(round(self.vx * t)), int(round(self.vy * t))
        if self.kind == "sway":
            return int(round(self.amp_px * math.sin(2 * math.pi * t / self.period_s))), 0
        raise ValueError(f"unknown motion kind {self.kind!r}")


@dataclass
class Occlusion:
    """Overwrite a rectangle with a distractor color during [start_s, end_s)."""

    start_s: float
    end_s: float
    region: tuple[int, int, int, int]  # x, y, w, h
    color: tuple[int, int, int] = (30, 90, 30)


@dataclass
class SynthConfig:
    width: int = 64
    height: int = 64
    fps: float = 30.0
    duration_s: float = 60.0
    bpm_trace: list[tuple[float, float]] = field(default_factory=lambda: [(0.0, 80.0)])
    pulse_amplitude: float = 2.0
    patch_shape: str = "rect"  # or "ellipse"
    patch: tuple[int, int, int, int] = (16, 16, 32, 32)  # x, y, w, h
    patch_rgb: tuple[int, int, int] = (200, 150, 130)
    background_rgb: tuple[int, int, int] = (60, 60, 70)
    motion: Motion = field(default_factory=Motion)
    occlusions: list[Occlusion] = field(default_factory=list)
    noise_sigma: float = 1.0
    rng_seed: int = 0
    subject: str = "synth"

    def __post_init__(self) -> None:
        if not self.bpm_trace:
            raise ValueError("bpm_trace must have at least one knot")
        self.bpm_trace = sorted((float(t), float(b)) for t, b in self.bpm_trace)
        bpms = [b for _, b in self.bpm_trace]
        if min(bpms) < 40 or max(bpms) > 220:
            raise ValueError("bpm_trace values must lie in [40, 220]")
        if self.pulse_amplitude < 0 or self.noise_sigma < 0:
            raise ValueError("amplitudes must be nonnegative")
        if self.fps <= 2 * max(bpms) / 60.0:
            raise ValueError(
                f"Nyquist violation: fps={self.fps} must exceed "
                f"2 * max bpm / 60 = {2 * max(bpms) / 60.0:.3f}"
            )
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")

    def bpm_at(self, t: np.ndarray | float) -> np.ndarray:
        """Piecewise-linear bpm trace, held constant beyond the knots."""
        knots_t = np.array([k for k, _ in self.bpm_trace])
        knots_b = np.array([b for _, b in self.bpm_trace])
        return np.interp(t, knots_t, knots_b)

    def phase_at(self, t: np.ndarray) -> np.ndarray:
        """Exact beat phase phi(t) = integral_0^t bpm(tau)/60 dtau.

        The trapezoid rule is exact on each linear segment of the trace.
        """
        t = np.asarray(t, dtype=np.float64)
        knots_t = np.array([k for k, _ in self.bpm_trace])
        knots_b = np.array([b for _, b in self.bpm_trace])
        seg = np.diff(knots_t) * (knots_b[:-1] + knots_b[1:]) / 2.0 / 60.0
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        idx = np.clip(np.searchsorted(knots_t, t, side="right") - 1, 0, len(knots_t) - 1)
        dt = t - knots_t[idx]
        b0 = knots_b[idx]
        b1 = self.bpm_at(t)
        return cum[idx] + dt * (b0 + b1) / 2.0 / 60.0


@dataclass
class SynthClip:
    frames: np.ndarray          # (n, h, w, 3) uint8
    gt: list[HrSample]
    config: SynthConfig


def _patch_mask(config: SynthConfig, offset: tuple[int, int]) -> np.ndarray:
    x0, y0, w, h = config.patch
    x0, y0 = x0 + offset[0], y0 + offset[1]
    yy, xx = np.mgrid[0:config.height, 0:config.width]
    if config.patch_shape == "rect":
        return (xx >= x0) & (xx < x0 + w) & (yy >= y0) & (yy < y0 + h)
    if config.patch_shape == "ellipse":
        cx, cy = x0 + w / 2.0, y0 + h / 2.0
        rx, ry = max(w / 2.0, 1e-9), max(h / 2.0, 1e-9)
        return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    raise ValueError(f"unknown patch shape {config.patch_shape!r}")


def generate(config: SynthConfig) -> SynthClip:
    """Render the configured clip; deterministic for a given rng_seed."""
    n_frames = int(round(config.duration_s * config.fps))
    if n_frames == 0:
        raise ValueError("duration too short for one frame")
    t = np.arange(n_frames) / config.fps
    delta = config.pulse_amplitude / 2.0 * np.sin(2 * np.pi * config.phase_at(t))
    frames = np.empty((n_frames, config.height, config.width, 3), dtype=np.uint8)
    background = np.empty((config.height, config.width, 3), dtype=np.float64)
    background[:] = config.background_rgb
    patch_rgb = np.asarray(config.patch_rgb, dtype=np.float64)
    for i in range(n_frames):
        img = background.copy()
        mask = _patch_mask(config, config.motion.offset(t[i]))
        img[mask] = patch_rgb + delta[i]
        for occ in config.occlusions:
            if occ.start_s <= t[i] < occ.end_s:
                ox, oy, ow, oh = occ.region
                img[max(0, oy):oy + oh, max(0, ox):ox + ow] = occ.color
        if config.noise_sigma > 0:
            rng = np.random.default_rng(
                np.random.SeedSequence([config.rng_seed, i])
            )
            img += rng.normal(0.0, config.noise_sigma, img.shape)
        frames[i] = np.clip(np.round(img), 0, 255).astype(np.uint8)
    gt = [
        HrSample(t_s=s, bpm=float(config.bpm_at(float(s))))
        for s in range(int(math.floor(config.duration_s)))
    ]
    return SynthClip(frames=frames, gt=gt, config=config)


def write_clip(clip: SynthClip, out_dir: str | Path) -> Path:
    """Write frames, manifest and ground truth in the dataset layout."""
    if len(clip.frames) == 0:
        raise ValueError("empty clip")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for i, frame in enumerate(clip.frames):
            Image.fromarray(frame, mode="RGB").save(
                out / f"frame_{i:06d}.png", format="PNG"
            )
        manifest = (
            f"fps={clip.config.fps!r}\n"
            f"subject={clip.config.subject}\n"
        )
        (out / MANIFEST_FILENAME).write_text(manifest, encoding="utf-8")
        gt_lines = "".join(f"{s.t_s},{s.bpm!r}\n" for s in clip.gt)
        (out / GT_FILENAME).write_text(gt_lines, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"failed writing clip to {out}: {exc}") from exc
    return out
