"""Windowing arithmetic, normalization, clip slicing, and map round trips."""

import numpy as np
import pytest

from pulsemap.stmap import (
    SpatioTemporalMap,
    TraceMatrix,
    WindowingParams,
    build_maps,
    expected_map_count,
    load_map,
    normalize_map,
    serialize_map,
    slice_clips,
)


def counting_loop(n, t, s):
    count = 0
    start = 0
    while start + t <= n:
        count += 1
        start += s
    return count


def test_map_count_matches_counting_loop():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        t = int(rng.integers(1, 200))
        n = int(rng.integers(t, 2000))
        s = int(rng.integers(1, 100))
        assert expected_map_count(n, t, s) == counting_loop(n, t, s)


def test_default_configuration_counts():
    params = WindowingParams(clip_len_s=60.0, window_len_s=10.0, stride_s=0.5)
    for fps, expected in ((30.0, 101), (59.94, 100)):
        n = int(round(60.0 * fps))
        t = params.window_frames(fps)
        s = params.stride_frames(fps)
        assert expected_map_count(n, t, s) == expected


def test_build_maps_count_and_offsets():
    fps = 10.0
    trace = TraceMatrix(values=np.random.default_rng(1).random((4, 80, 3)), fps=fps)
    params = WindowingParams(clip_len_s=8.0, window_len_s=3.0, stride_s=1.0)
    clip = slice_clips(trace, params)[0]
    maps = build_maps(clip, params)
    assert len(maps) == expected_map_count(80, 30, 10)
    assert [m.window_start_s for m in maps] == [float(i) for i in range(len(maps))]
    assert all(m.t == 30 and m.k == 4 for m in maps)


def test_build_maps_rejects_short_clip():
    trace = TraceMatrix(values=np.zeros((2, 5, 3)), fps=10.0)
    params = WindowingParams(clip_len_s=10.0, window_len_s=1.0, stride_s=0.5)
    with pytest.raises(ValueError, match="shorter than"):
        build_maps(trace, params)


def test_normalize_map_ranges():
    rng = np.random.default_rng(2)
    raw = rng.normal(size=(5, 40, 3)) * 10 + 100
    out = normalize_map(raw)
    assert out.min() >= 0.0 and out.max() <= 1.0
    # Every non-constant row/channel spans the full [0, 1] range.
    np.testing.assert_allclose(out.min(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.max(axis=1), 1.0, atol=1e-12)


def test_normalize_map_constant_row_is_half():
    raw = np.full((2, 10, 3), 7.0)
    raw[1, :, 0] = np.arange(10)
    out = normalize_map(raw)
    assert (out[0] == 0.5).all()
    assert (out[1, :, 1] == 0.5).all()
    assert out[1, 0, 0] == 0.0 and out[1, -1, 0] == 1.0


def test_normalize_is_invariant_to_row_gain_and_offset():
    rng = np.random.default_rng(3)
    raw = rng.random((3, 25, 3))
    scaled = raw * 7.5 - 3.0
    np.testing.assert_allclose(normalize_map(raw), normalize_map(scaled), atol=1e-12)


def test_slice_clips_boundaries():
    fps = 10.0
    # 250 frames = two full 10 s clips plus a 5 s remainder (>= one window).
    trace = TraceMatrix(values=np.zeros((2, 250, 3)), fps=fps)
    params = WindowingParams(clip_len_s=10.0, window_len_s=4.0, stride_s=1.0)
    clips = slice_clips(trace, params)
    assert [c.n for c in clips] == [100, 100, 50]
    assert [c.start_s for c in clips] == [0.0, 10.0, 20.0]
    assert [c.clip_id for c in clips] == ["clip000", "clip001", "clip002"]


def test_slice_clips_drops_subwindow_remainder():
    trace = TraceMatrix(values=np.zeros((2, 105, 3)), fps=10.0)
    params = WindowingParams(clip_len_s=10.0, window_len_s=4.0, stride_s=1.0)
    clips = slice_clips(trace, params)
    assert len(clips) == 1  # 5 trailing frames < one 40-frame window


def test_trace_matrix_validation():
    with pytest.raises(ValueError, match="fps"):
        TraceMatrix(values=np.zeros((1, 1, 3)), fps=0.0)
    with pytest.raises(ValueError, match="shape"):
        TraceMatrix(values=np.zeros((1, 1, 2)), fps=1.0)
    with pytest.raises(ValueError, match="finite"):
        TraceMatrix(values=np.full((1, 1, 3), np.nan), fps=1.0)


def test_windowing_params_validation():
    with pytest.raises(ValueError):
        WindowingParams(clip_len_s=5.0, window_len_s=10.0)
    with pytest.raises(ValueError):
        WindowingParams(stride_s=0.0)


def test_serialize_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    stmap = SpatioTemporalMap(
        values=rng.random((6, 30, 3)),
        window_start_s=2.5,
        window_len_s=3.0,
        fps=10.0,
        source_clip="clip001",
        clip_start_s=60.0,
        bpm=95.5,
    )
    path = tmp_path / "map.png"
    serialize_map(stmap, path)
    assert path.is_file()
    assert (tmp_path / "map.png.json").is_file()
    loaded = load_map(path)
    assert np.abs(loaded.values - stmap.values).max() <= 0.5 / 255.0 + 1e-12
    assert loaded.source_clip == "clip001"
    assert loaded.clip_start_s == 60.0
    assert loaded.window_start_s == 2.5
    assert loaded.fps == 10.0
    assert loaded.bpm == 95.5
