"""Dataset ingestion, per-map labeling, subject splits, and error metrics.

Expected on-disk layout per video (codec-free by design; real videos are
transcoded to frames with any external tool first):

    <video_dir>/
        frame_000000.png ...   zero-padded, lossless 8-bit RGB, no gaps
        manifest               key=value lines: fps=<float>, subject=<id>
        gt.txt                 one "t_s,bpm" pair per line, no header

Ground truth is one bpm sample per integer second. Per-map labels are the
mean of the samples whose timestamp falls inside the map's window; a map
whose window is not fully covered by ground truth is dropped (and counted)
rather than given an interpolated label.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from PIL import Image

MANIFEST_FILENAME = "manifest"
GT_FILENAME = "gt.txt"

BPM_MIN = 30.0
BPM_MAX = 250.0

_FRAME_RE = re.compile(r"^frame_(\d+)\.png$")


class DatasetError(Exception):
    """Malformed or inconsistent input data."""


class HrSample(NamedTuple):
    t_s: int
    bpm: float


@dataclass
class SplitSpec:
    train_subjects: list[str]
    test_subjects: list[str]

    def __post_init__(self) -> None:
        if not self.train_subjects or not self.test_subjects:
            raise DatasetError("split must have subjects on both sides")
        overlap = set(self.train_subjects) & set(self.test_subjects)
        if overlap:
            raise DatasetError(
                f"split leakage: subjects in both sides: {sorted(overlap)}"
            )


@dataclass
class MetricReport:
    mae: float
    rmse: float
    n_maps: int
    per_clip: dict[str, dict[str, float]] = field(default_factory=dict)


def load_manifest(video_dir: str | Path) -> dict[str, str]:
    path = Path(video_dir) / MANIFEST_FILENAME
    if not path.is_file():
        raise DatasetError(f"missing manifest: {path}")
    entries: dict[str, str] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DatasetError(f"{path}: malformed manifest line {line!r}")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    if "fps" not in entries:
        raise DatasetError(f"{path}: manifest missing required key 'fps'")
    return entries


def load_frames(video_dir: str | Path) -> tuple[np.ndarray, float, str]:
    """Load a frame directory. Returns (frames (n,h,w,3) uint8, fps, subject)."""
    video_dir = Path(video_dir)
    manifest = load_manifest(video_dir)
    fps = float(manifest["fps"])
    subject = manifest.get("subject", video_dir.name)

    indexed: dict[int, Path] = {}
    for p in video_dir.iterdir():
        m = _FRAME_RE.match(p.name)
        if m:
            indexed[int(m.group(1))] = p
    if not indexed:
        raise DatasetError(f"no frames found in {video_dir}")
    n = max(indexed) + 1
    missing = sorted(set(range(n)) - set(indexed))
    if missing:
        raise DatasetError(
            f"{video_dir}: gap in frame numbering, missing index {missing[0]}"
        )
    frames = []
    for i in range(n):
        try:
            with Image.open(indexed[i]) as img:
                frames.append(np.asarray(img.convert("RGB"), dtype=np.uint8))
        except OSError as exc:
            raise DatasetError(f"corrupt frame {indexed[i]}: {exc}") from exc
    stack = np.stack(frames)
    return stack, fps, subject


def load_ground_truth(path: str | Path) -> list[HrSample]:
    """Parse a gt file; timestamps must strictly increase, bpm in [30, 250]."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"missing ground-truth file: {path}")
    samples: list[HrSample] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise DatasetError(f"{path}:{lineno}: expected 't_s,bpm', got {line!r}")
        try:
            t_s = int(parts[0])
            bpm = float(parts[1])
        except ValueError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from exc
        if t_s < 0:
            raise DatasetError(f"{path}:{lineno}: negative timestamp {t_s}")
        if samples and t_s <= samples[-1].t_s:
            raise DatasetError(
                f"{path}:{lineno}: non-monotone timestamp {t_s} "
                f"(previous {samples[-1].t_s})"
            )
        if not BPM_MIN <= bpm <= BPM_MAX:
            raise DatasetError(
                f"{path}:{lineno}: bpm {bpm} outside [{BPM_MIN:g}, {BPM_MAX:g}]"
            )
        samples.append(HrSample(t_s=t_s, bpm=bpm))
    return samples


def label_maps(maps: Sequence, gt: Sequence[HrSample]) -> tuple[list[tuple], int]:
    """Attach a bpm label (window mean of per-second gt) to each map.

    A map is dropped when any integer second inside its window has no gt
    sample. Returns (list of (map, bpm), dropped count).
    """
    by_second = {s.t_s: s.bpm for s in gt}
    labeled: list[tuple] = []
    dropped = 0
    for m in maps:
        start = m.clip_start_s + m.window_start_s
        first = math.ceil(start - 1e-9)
        last = math.ceil(start + m.window_len_s - 1e-9)  # exclusive
        seconds = range(first, last)
        values = [by_second.get(s) for s in seconds]
        if not values or any(v is None for v in values):
            dropped += 1
            continue
        labeled.append((m, float(np.mean(values))))
    return labeled, dropped


def compute_metrics(
    pred: Sequence[float],
    truth: Sequence[float],
    clip_ids: Sequence[str] | None = None,
) -> MetricReport:
    """MAE and RMSE over maps, optionally broken down per clip."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(
            f"length mismatch: {pred.shape[0]} predictions vs {truth.shape[0]} truths"
        )
    if pred.size == 0:
        raise ValueError("empty prediction list")
    err = pred - truth
    report = MetricReport(
        mae=float(np.abs(err).mean()),
        rmse=float(np.sqrt((err**2).mean())),
        n_maps=int(pred.size),
    )
    if clip_ids is not None:
        ids = list(clip_ids)
        if len(ids) != pred.size:
            raise ValueError("clip_ids length mismatch")
        for cid in sorted(set(ids)):
            sel = np.array([i == cid for i in ids])
            e = err[sel]
            report.per_clip[cid] = {
                "mae": float(np.abs(e).mean()),
                "rmse": float(np.sqrt((e**2).mean())),
                "n_maps": int(sel.sum()),
            }
    return report


def load_split(path: str | Path) -> SplitSpec:
    """Parse a split file with 'train: id id ...' and 'test: id id ...' lines."""
    path = Path(path)
    sides: dict[str, list[str]] = {"train": [], "test": []}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise DatasetError(f"{path}:{lineno}: expected 'train:' or 'test:' line")
        side, ids = line.split(":", 1)
        side = side.strip()
        if side not in sides:
            raise DatasetError(f"{path}:{lineno}: unknown split side {side!r}")
        sides[side].extend(ids.split())
    return SplitSpec(train_subjects=sides["train"], test_subjects=sides["test"])
