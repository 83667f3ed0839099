"""Spatio-temporal maps: clip slicing, sliding windows, row normalization, I/O.

A trace matrix (superpixels x frames x YUV) is cut into non-overlapping
clips; a temporal window slides over each clip to produce K x T x 3 maps.
Each map is min-max normalized per row and channel so superpixel-local gain
and offset drop out, then can be stored losslessly as an 8-bit PNG plus a
JSON sidecar.

Frame counts are derived from seconds via round(seconds * fps); at 59.94 fps
a 10 s window is T = 599 frames. The number of windows per clip is
M = floor((N - T) / S) + 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


@dataclass
class TraceMatrix:
    """Per-superpixel YUV color signals: values has shape (k, n_frames, 3)."""

    values: np.ndarray
    fps: float
    start_s: float = 0.0
    clip_id: str = ""

    def __post_init__(self) -> None:
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[2] != 3:
            raise ValueError("trace values must have shape (k, n, 3)")
        if not np.isfinite(self.values).all():
            raise ValueError("trace values must be finite")

    @property
    def k(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n / self.fps


@dataclass
class WindowingParams:
    clip_len_s: float = 60.0
    window_len_s: float = 10.0
    stride_s: float = 0.5

    def __post_init__(self) -> None:
        if not 0 < self.window_len_s <= self.clip_len_s:
            raise ValueError("require 0 < window_len_s <= clip_len_s")
        if self.stride_s <= 0:
            raise ValueError("stride_s must be positive")

    def window_frames(self, fps: float) -> int:
        return int(round(self.window_len_s * fps))

    def stride_frames(self, fps: float) -> int:
        return max(1, int(round(self.stride_s * fps)))


@dataclass
class SpatioTemporalMap:
    """One normalized K x T x 3 window; values in [0, 1]."""

    values: np.ndarray
    window_start_s: float       # seconds from clip start
    window_len_s: float
    fps: float
    source_clip: str = ""
    clip_start_s: float = 0.0   # clip offset from video start
    bpm: float | None = None    # ground-truth label when known

    @property
    def k(self) -> int:
        return self.values.shape[0]

    @property
    def t(self) -> int:
        return self.values.shape[1]


def slice_clips(trace: TraceMatrix, params: WindowingParams) -> list[TraceMatrix]:
    """Cut a trace into consecutive non-overlapping clips.

    A trailing remainder shorter than one window is dropped; a remainder of
    at least one window is kept as a short final clip.
    """
    if trace.n == 0:
        raise ValueError("empty trace")
    clip_frames = int(round(params.clip_len_s * trace.fps))
    window_frames = params.window_frames(trace.fps)
    clips: list[TraceMatrix] = []
    start = 0
    while trace.n - start >= window_frames:
        end = min(start + clip_frames, trace.n)
        clips.append(
            TraceMatrix(
                values=trace.values[:, start:end],
                fps=trace.fps,
                start_s=trace.start_s + start / trace.fps,
                clip_id=f"clip{len(clips):03d}",
            )
        )
        start = end
    return clips


def normalize_map(raw: np.ndarray) -> np.ndarray:
    """Min-max scale each (row, channel) time series to [0, 1].

    A constant row-channel has no pulsatile content to scale; it maps to a
    flat 0.5.
    """
    raw = np.asarray(raw, dtype=np.float64)
    mn = raw.min(axis=1, keepdims=True)
    mx = raw.max(axis=1, keepdims=True)
    span = mx - mn
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(span > 0, (raw - mn) / np.where(span > 0, span, 1.0), 0.5)
    return out


def build_maps(clip: TraceMatrix, params: WindowingParams) -> list[SpatioTemporalMap]:
    """Slide a window over one clip and emit a normalized map per position.

    With N clip frames, T window frames and stride S, this produces
    M = floor((N - T) / S) + 1 maps.
    """
    t_frames = params.window_frames(clip.fps)
    s_frames = params.stride_frames(clip.fps)
    if clip.n < t_frames:
        raise ValueError(
            f"clip of {clip.n} frames is shorter than the {t_frames}-frame window"
        )
    m = (clip.n - t_frames) // s_frames + 1
    maps = []
    for i in range(m):
        start = i * s_frames
        raw = clip.values[:, start:start + t_frames]
        maps.append(
            SpatioTemporalMap(
                values=normalize_map(raw),
                window_start_s=start / clip.fps,
                window_len_s=params.window_len_s,
                fps=clip.fps,
                source_clip=clip.clip_id,
                clip_start_s=clip.start_s,
            )
        )
    return maps


def expected_map_count(n: int, t: int, s: int) -> int:
    """Window count for n frames, t-frame window, stride s (requires n >= t)."""
    if n < t:
        return 0
    return (n - t) // s + 1


def serialize_map(stmap: SpatioTemporalMap, path: str | Path) -> None:
    """Write a map as an 8-bit lossless PNG plus a JSON sidecar.

    Values are quantized with round(v * 255). The sidecar (same path with
    '.json' appended to the stem) records source_clip, clip_start_s,
    window_start_s, window_len_s, fps, k, t and bpm when known.
    """
    path = Path(path)
    quantized = np.round(np.clip(stmap.values, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(path, format="PNG")
    meta = {
        "source_clip": stmap.source_clip,
        "clip_start_s": stmap.clip_start_s,
        "window_start_s": stmap.window_start_s,
        "window_len_s": stmap.window_len_s,
        "fps": stmap.fps,
        "k": stmap.k,
        "t": stmap.t,
        "bpm": stmap.bpm,
    }
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")


def load_map(path: str | Path) -> SpatioTemporalMap:
    """Inverse of serialize_map; values come back within 1/255 per entry."""
    path = Path(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    values = np.asarray(Image.open(path), dtype=np.float64) / 255.0
    return SpatioTemporalMap(
        values=values,
        window_start_s=meta["window_start_s"],
        window_len_s=meta["window_len_s"],
        fps=meta["fps"],
        source_clip=meta["source_clip"],
        clip_start_s=meta["clip_start_s"],
        bpm=meta["bpm"],
    )
