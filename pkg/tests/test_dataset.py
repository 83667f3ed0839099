"""Dataset parsing, map labeling, metric oracles, and split handling."""

import numpy as np
import pytest
from PIL import Image

from pulsemap.dataset import (
    DatasetError,
    HrSample,
    SplitSpec,
    compute_metrics,
    label_maps,
    load_frames,
    load_ground_truth,
    load_manifest,
    load_split,
)
from pulsemap.stmap import SpatioTemporalMap


def write_video(tmp_path, n_frames=3, fps=10.0, subject="s01"):
    d = tmp_path / "vid"
    d.mkdir()
    for i in range(n_frames):
        Image.fromarray(
            np.full((4, 4, 3), i * 10, dtype=np.uint8), mode="RGB"
        ).save(d / f"frame_{i:06d}.png")
    (d / "manifest").write_text(f"fps={fps}\nsubject={subject}\n")
    return d


def make_map(clip_start_s=0.0, window_start_s=0.0, window_len_s=4.0):
    return SpatioTemporalMap(
        values=np.zeros((2, 8, 3)),
        window_start_s=window_start_s,
        window_len_s=window_len_s,
        fps=2.0,
        clip_start_s=clip_start_s,
    )


# -- manifest / frames --------------------------------------------------------


def test_load_frames(tmp_path):
    d = write_video(tmp_path)
    frames, fps, subject = load_frames(d)
    assert frames.shape == (3, 4, 4, 3)
    assert fps == 10.0
    assert subject == "s01"
    assert (frames[1] == 10).all()


def test_missing_manifest(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(DatasetError, match="missing manifest"):
        load_manifest(tmp_path / "empty")


def test_manifest_requires_fps(tmp_path):
    d = tmp_path / "vid"
    d.mkdir()
    (d / "manifest").write_text("subject=s01\n")
    with pytest.raises(DatasetError, match="fps"):
        load_manifest(d)


def test_malformed_manifest_line(tmp_path):
    d = tmp_path / "vid"
    d.mkdir()
    (d / "manifest").write_text("fps 30\n")
    with pytest.raises(DatasetError, match="malformed"):
        load_manifest(d)


def test_frame_gap_detected(tmp_path):
    d = write_video(tmp_path)
    (d / "frame_000001.png").unlink()
    with pytest.raises(DatasetError, match="missing index 1"):
        load_frames(d)


def test_no_frames(tmp_path):
    d = tmp_path / "vid"
    d.mkdir()
    (d / "manifest").write_text("fps=10\n")
    with pytest.raises(DatasetError, match="no frames"):
        load_frames(d)


# -- ground truth --------------------------------------------------------------


def test_load_ground_truth(tmp_path):
    p = tmp_path / "gt.txt"
    p.write_text("0,72.5\n1,73.0\n\n2,74.0\n")
    assert load_ground_truth(p) == [
        HrSample(0, 72.5), HrSample(1, 73.0), HrSample(2, 74.0)
    ]


def test_gt_rejects_non_monotone(tmp_path):
    p = tmp_path / "gt.txt"
    p.write_text("0,72\n0,73\n")
    with pytest.raises(DatasetError, match="non-monotone"):
        load_ground_truth(p)


def test_gt_rejects_out_of_range_bpm(tmp_path):
    p = tmp_path / "gt.txt"
    p.write_text("0,300\n")
    with pytest.raises(DatasetError, match="outside"):
        load_ground_truth(p)


def test_gt_missing_file(tmp_path):
    with pytest.raises(DatasetError, match="missing ground-truth"):
        load_ground_truth(tmp_path / "nope.txt")


# -- labeling ------------------------------------------------------------------


def test_label_is_window_mean():
    # gt rises 60 -> 69 one bpm per second; a [0, 10) s window averages 64.5.
    gt = [HrSample(s, 60.0 + s) for s in range(10)]
    m = make_map(window_len_s=10.0)
    labeled, dropped = label_maps([m], gt)
    assert dropped == 0
    assert labeled[0][1] == 64.5


def test_map_past_gt_coverage_is_dropped():
    gt = [HrSample(s, 80.0) for s in range(5)]
    inside = make_map(window_len_s=4.0)
    past = make_map(window_start_s=3.0, window_len_s=4.0)  # needs seconds 3..6
    labeled, dropped = label_maps([inside, past], gt)
    assert len(labeled) == 1 and dropped == 1


def test_label_respects_clip_offset():
    gt = [HrSample(s, float(60 + s)) for s in range(20)]
    m = make_map(clip_start_s=10.0, window_start_s=2.0, window_len_s=4.0)
    labeled, _ = label_maps([m], gt)
    # Window covers seconds 12..15 -> mean of 72, 73, 74, 75.
    assert labeled[0][1] == 73.5


def test_label_within_gt_bounds():
    rng = np.random.default_rng(0)
    gt = [HrSample(s, float(rng.uniform(60, 180))) for s in range(30)]
    maps = [make_map(window_start_s=float(s), window_len_s=5.0) for s in range(25)]
    labeled, _ = label_maps(maps, gt)
    by_second = {s.t_s: s.bpm for s in gt}
    for m, bpm in labeled:
        window = [by_second[s] for s in range(int(m.window_start_s),
                                              int(m.window_start_s) + 5)]
        assert min(window) <= bpm <= max(window)


# -- metrics -------------------------------------------------------------------


def test_metrics_hand_computed_examples():
    r = compute_metrics([100.0, 110.0], [110.0, 100.0])
    assert r.mae == 10.0 and r.rmse == 10.0 and r.n_maps == 2
    r = compute_metrics([70.0, 80.0], [70.0, 80.0])
    assert r.mae == 0.0 and r.rmse == 0.0
    r = compute_metrics([0.0], [3.0])
    assert r.mae == 3.0 and r.rmse == 3.0


def test_rmse_at_least_mae():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        n = int(rng.integers(1, 20))
        pred = rng.uniform(40, 200, n)
        truth = rng.uniform(40, 200, n)
        r = compute_metrics(pred, truth)
        assert r.rmse >= r.mae >= 0.0


def test_metrics_permutation_invariant():
    rng = np.random.default_rng(2)
    pred = rng.uniform(60, 180, 50)
    truth = rng.uniform(60, 180, 50)
    perm = rng.permutation(50)
    r1 = compute_metrics(pred, truth)
    r2 = compute_metrics(pred[perm], truth[perm])
    assert r1.mae == pytest.approx(r2.mae)
    assert r1.rmse == pytest.approx(r2.rmse)


def test_metrics_per_clip_breakdown():
    r = compute_metrics([100.0, 104.0, 90.0], [102.0, 102.0, 90.0],
                        clip_ids=["a", "a", "b"])
    assert r.per_clip["a"]["mae"] == 2.0
    assert r.per_clip["b"]["mae"] == 0.0
    assert r.per_clip["a"]["n_maps"] == 2


def test_metrics_validation():
    with pytest.raises(ValueError, match="mismatch"):
        compute_metrics([1.0], [1.0, 2.0])
    with pytest.raises(ValueError, match="empty"):
        compute_metrics([], [])


# -- splits --------------------------------------------------------------------


def test_load_split(tmp_path):
    p = tmp_path / "split.txt"
    p.write_text("# comment\ntrain: s01 s02 s03\ntest: s04\n")
    split = load_split(p)
    assert split.train_subjects == ["s01", "s02", "s03"]
    assert split.test_subjects == ["s04"]


def test_split_leakage_rejected():
    with pytest.raises(DatasetError, match="leakage"):
        SplitSpec(train_subjects=["s01", "s02"], test_subjects=["s02"])


def test_split_requires_both_sides():
    with pytest.raises(DatasetError, match="both sides"):
        SplitSpec(train_subjects=["s01"], test_subjects=[])
