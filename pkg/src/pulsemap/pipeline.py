"""End-to-end orchestration: frames -> superpixels -> traces -> maps -> bpm.

This is the glue the CLI drives; each step delegates to the focused module.
One video is processed sequentially (temporal seed propagation is a strict
frame-to-frame dependency); distinct videos are independent and can run in
parallel worker processes, with results merged in input order.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import dataset
from .cnn import HeartRateCnn, cnn_forward
from .color import srgb_to_lab
from .hr import aggregate_clip, spectral_estimate
from .stmap import SpatioTemporalMap, TraceMatrix, build_maps, slice_clips
from .superpixel import extract_traces, propagate_and_segment


def downscale_frames(frames: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean downscale by an integer factor (trailing remainder cropped)."""
    if factor == 1:
        return frames
    n, h, w, c = frames.shape
    hc, wc = (h // factor) * factor, (w // factor) * factor
    blocks = frames[:, :hc, :wc].astype(np.float64)
    blocks = blocks.reshape(n, hc // factor, factor, wc // factor, factor, c)
    return np.clip(np.round(blocks.mean(axis=(2, 4))), 0, 255).astype(np.uint8)


def discover_videos(input_dir: str | Path) -> list[tuple[str, Path]]:
    """Find video directories: either input_dir itself or its subdirectories."""
    root = Path(input_dir)
    if not root.is_dir():
        raise dataset.DatasetError(f"input directory not found: {root}")
    if (root / dataset.MANIFEST_FILENAME).is_file():
        return [(root.name or ".", root)]
    videos = [
        (p.name, p)
        for p in sorted(root.iterdir())
        if p.is_dir() and (p / dataset.MANIFEST_FILENAME).is_file()
    ]
    if not videos:
        raise dataset.DatasetError(f"no video directories with a manifest in {root}")
    return videos


def video_to_maps(
    video_dir: str | Path, config: dict
) -> tuple[list[SpatioTemporalMap], float, str]:
    """Run segmentation and windowing for one video directory.

    Returns (maps across all clips, fps, subject).
    """
    frames, fps, subject = dataset.load_frames(video_dir)
    frames = downscale_frames(frames, int(config["pipeline"]["downscale"]))
    seg_params = cfgmod.segmentation_params(config)
    win_params = cfgmod.windowing_params(config)

    labelmaps = []
    lab_frames = (srgb_to_lab(f) for f in frames)
    for labels, _seeds in propagate_and_segment(lab_frames, seg_params):
        labelmaps.append(labels)
    traces = extract_traces(frames, labelmaps, seg_params.k)
    trace = TraceMatrix(values=traces, fps=fps)
    maps: list[SpatioTemporalMap] = []
    for clip in slice_clips(trace, win_params):
        maps.extend(build_maps(clip, win_params))
    return maps, fps, subject


def predict_maps(
    maps: list[SpatioTemporalMap],
    config: dict,
    mode: str,
    model: HeartRateCnn | None = None,
) -> list[float]:
    if mode == "spectral":
        params = cfgmod.spectral_params(config)
        return [spectral_estimate(m.values, m.fps, params) for m in maps]
    if mode == "cnn":
        if model is None:
            raise cfgmod.UsageError("cnn mode requires a model checkpoint")
        return [cnn_forward(model, m) for m in maps]
    raise cfgmod.UsageError(f"unknown mode {mode!r}")


def process_video(
    name: str,
    video_dir: str | Path,
    config: dict,
    mode: str,
    model: HeartRateCnn | None = None,
) -> tuple[list[dict], list[dict]]:
    """Predict bpm for every map of one video.

    Returns (map_rows, clip_rows) ready for CSV serialization.
    """
    maps, _fps, _subject = video_to_maps(video_dir, config)
    bpm = predict_maps(maps, config, mode, model)
    map_rows = []
    by_clip: dict[str, list[float]] = {}
    clip_meta: dict[str, float] = {}
    index_in_clip: dict[str, int] = {}
    for m, value in zip(maps, bpm):
        idx = index_in_clip.get(m.source_clip, 0)
        index_in_clip[m.source_clip] = idx + 1
        map_rows.append(
            {
                "video": name,
                "clip_id": m.source_clip,
                "clip_start_s": m.clip_start_s,
                "window_start_s": m.window_start_s,
                "window_len_s": m.window_len_s,
                "map_index": idx,
                "bpm": value,
            }
        )
        by_clip.setdefault(m.source_clip, []).append(value)
        clip_meta[m.source_clip] = m.clip_start_s
    clip_rows = []
    for clip_id in sorted(by_clip):
        pred = aggregate_clip(by_clip[clip_id], clip_id)
        clip_rows.append(
            {
                "video": name,
                "clip_id": clip_id,
                "clip_start_s": clip_meta[clip_id],
                "n_maps": len(pred.per_map_bpm),
                "bpm": pred.bpm,
            }
        )
    return map_rows, clip_rows


def _worker(args) -> tuple[list[dict], list[dict]]:
    name, video_dir, config, mode, model_path = args
    model = None
    if model_path is not None:
        from .cnn import load_checkpoint

        model = load_checkpoint(model_path)
    return process_video(name, video_dir, config, mode, model)


def run_pipeline(
    input_dir: str | Path,
    config: dict,
    mode: str,
    model_path: str | Path | None = None,
) -> tuple[list[dict], list[dict]]:
    """Process every video under input_dir; rows merged in input order."""
    videos = discover_videos(input_dir)
    jobs = int(config["pipeline"]["jobs"])
    tasks = [(name, str(path), config, mode, model_path) for name, path in videos]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_worker, tasks))
    else:
        results = [_worker(t) for t in tasks]
    map_rows: list[dict] = []
    clip_rows: list[dict] = []
    for mrows, crows in results:
        map_rows.extend(mrows)
        clip_rows.extend(crows)
    return map_rows, clip_rows
