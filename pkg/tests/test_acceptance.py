"""Acceptance gate: nine end-to-end criteria with explicit tolerances.

Each criterion prints one PASS/FAIL line on the real terminal (bypassing
pytest capture) and then asserts, so the verdicts are visible in the test
log even on success.
"""

import csv
import math
import sys
import time

import numpy as np
import pytest
from skimage.measure import label as connected_components

from pulsemap import config as cfgmod
from pulsemap.cli import EXIT_OK, main
from pulsemap.cnn import HeartRateCnn, TrainConfig, cnn_train
from pulsemap.color import rgb_to_yuv, srgb_to_lab
from pulsemap.dataset import compute_metrics, label_maps
from pulsemap.hr import aggregate_clip, spectral_estimate
from pulsemap.stmap import (
    TraceMatrix,
    WindowingParams,
    build_maps,
    expected_map_count,
    normalize_map,
    slice_clips,
)
from pulsemap.superpixel import (
    SegmentationParams,
    assign_pixels,
    init_seeds,
    propagate_and_segment,
    update_seeds,
)
from pulsemap.synth import Motion, SynthConfig, generate


def _report(capfd, num, name, ok, detail=""):
    verdict = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    with capfd.disabled():
        print(f"\n[ACCEPTANCE {num}] {name}: {verdict}{suffix}",
              file=sys.__stdout__, flush=True)


def _segment_clip(frames, params):
    lab = (srgb_to_lab(f) for f in frames)
    return [labels for labels, _seeds in propagate_and_segment(lab, params)]


def _maps_for_clip(clip, seg_params, win_params):
    from pulsemap.superpixel import extract_traces

    labelmaps = _segment_clip(clip.frames, seg_params)
    traces = extract_traces(clip.frames, labelmaps, seg_params.k)
    trace = TraceMatrix(values=traces, fps=clip.config.fps)
    maps = []
    for c in slice_clips(trace, win_params):
        maps.extend(build_maps(c, win_params))
    return maps


# -- 1. color oracle -----------------------------------------------------------


def test_criterion_1_color_oracle(capfd):
    t0 = time.time()
    white = srgb_to_lab([255, 255, 255])
    white_ok = np.abs(white - [100.0, 0.0, 0.0]).max() < 1e-2

    grays = np.stack([np.arange(256)] * 3, axis=-1).astype(np.float64)
    lab = srgb_to_lab(grays)
    yuv = rgb_to_yuv(grays)
    gray_ok = (
        np.abs(lab[:, 1]).max() < 1e-6
        and np.abs(lab[:, 2]).max() < 1e-6
        and (yuv[:, 1] == 0.0).all()
        and (yuv[:, 2] == 0.0).all()
    )
    elapsed = time.time() - t0
    ok = white_ok and gray_ok and elapsed < 1.0
    _report(capfd, 1, "color oracle", ok, f"{elapsed:.2f}s")
    assert white_ok, f"white -> {white}"
    assert gray_ok
    assert elapsed < 1.0


# -- 2. superpixel correctness ---------------------------------------------------


def _exhaustive_argmin(frame_lab, seeds, theta):
    """Global brute-force argmin of d_total, lowest id on ties (scalar math)."""
    height, width = frame_lab.shape[:2]
    labels = np.empty((height, width), dtype=np.int32)
    for y in range(height):
        for x in range(width):
            best, best_d = -1, math.inf
            for sid in range(len(seeds)):
                if not seeds.alive[sid]:
                    continue
                d0 = frame_lab[y, x, 0] - seeds.lab[sid, 0]
                d1 = frame_lab[y, x, 1] - seeds.lab[sid, 1]
                d2 = frame_lab[y, x, 2] - seeds.lab[sid, 2]
                d = math.sqrt(d0 * d0 + d1 * d1 + d2 * d2) + theta * math.hypot(
                    x - seeds.x[sid], y - seeds.y[sid]
                )
                if d < best_d:
                    best, best_d = sid, d
            labels[y, x] = best
    return labels


def test_criterion_2_superpixel_correctness(capfd):
    t0 = time.time()
    rng = np.random.default_rng(2024)
    exact = 0
    total = 0
    for i in range(50):
        palette = rng.integers(0, 256, size=(3, 3)).astype(np.float64)
        frame = srgb_to_lab(palette[rng.integers(0, 3, size=(16, 16))])
        for k in (2, 4, 9):
            # A huge search radius makes assign_pixels an exhaustive argmin.
            params = SegmentationParams(k=k, compacity=1.0,
                                        search_radius_factor=1e9)
            seeds = init_seeds(frame, k)
            if i % 2 == 1:
                # Also exercise off-grid seed positions.
                labels0 = assign_pixels(frame, seeds, params)
                seeds = update_seeds(frame, labels0, seeds)
            got = assign_pixels(frame, seeds, params)
            want = _exhaustive_argmin(frame, seeds, params.theta)
            total += 1
            if (got == want).all():
                exact += 1
    argmin_ok = exact == total

    clip = generate(SynthConfig(width=64, height=64, fps=30.0, duration_s=10.0,
                                bpm_trace=[(0.0, 120.0)], pulse_amplitude=2.0,
                                noise_sigma=1.0, rng_seed=0))
    params = SegmentationParams(k=300)
    invariants_ok = True
    for labels in _segment_clip(clip.frames, params):
        if labels.min() < 0 or labels.max() >= 300:
            invariants_ok = False
            break
        # Each label 4-connected <=> one component per present label.
        comps = connected_components(labels, connectivity=1, background=-1)
        if comps.max() != len(np.unique(labels)):
            invariants_ok = False
            break

    elapsed = time.time() - t0
    ok = argmin_ok and invariants_ok and elapsed < 120.0
    _report(capfd, 2, "superpixel correctness", ok,
            f"{exact}/{total} exact, {elapsed:.1f}s")
    assert argmin_ok, f"only {exact}/{total} assignments matched the oracle"
    assert invariants_ok
    assert elapsed < 120.0


# -- 3. temporal coherence -------------------------------------------------------


def test_criterion_3_temporal_coherence(capfd):
    t0 = time.time()
    static = generate(SynthConfig(width=64, height=64, fps=30.0, duration_s=1.0,
                                  bpm_trace=[(0.0, 80.0)], pulse_amplitude=0.0,
                                  noise_sigma=0.0))
    params = SegmentationParams(k=64, max_iters=15, convergence_eps=0.01)
    labelmaps = _segment_clip(static.frames, params)
    static_ok = all((l == labelmaps[0]).all() for l in labelmaps[1:])

    moving = generate(SynthConfig(width=64, height=64, fps=30.0, duration_s=1.0,
                                  bpm_trace=[(0.0, 80.0)], pulse_amplitude=0.0,
                                  noise_sigma=0.0, patch=(8, 24, 16, 16),
                                  motion=Motion(kind="drift", vx=30.0)))
    positions = []
    sid = None
    lab = (srgb_to_lab(f) for f in moving.frames)
    for labels, seeds in propagate_and_segment(lab, SegmentationParams(k=64)):
        if sid is None:
            d = np.hypot(seeds.x - 16.0, seeds.y - 32.0)
            d[~seeds.alive] = np.inf
            sid = int(np.argmin(d))
        positions.append((seeds.x[sid], seeds.y[sid]))
    pos = np.array(positions)
    # The patch translates exactly 1 px/frame in x; the tracking seed's
    # per-frame displacement must match within 1.5 px.
    step = np.diff(pos, axis=0)
    err = np.hypot(step[:, 0] - 1.0, step[:, 1])
    track_ok = bool(err.max() <= 1.5)

    elapsed = time.time() - t0
    ok = static_ok and track_ok and elapsed < 120.0
    _report(capfd, 3, "temporal coherence", ok,
            f"max track err {err.max():.2f}px, {elapsed:.1f}s")
    assert static_ok
    assert track_ok, f"max per-frame tracking error {err.max():.3f} px"
    assert elapsed < 120.0


# -- 4. windowing arithmetic -----------------------------------------------------


def test_criterion_4_windowing_arithmetic(capfd):
    t0 = time.time()
    rng = np.random.default_rng(4)
    counting_ok = True
    for _ in range(1000):
        t = int(rng.integers(1, 300))
        n = int(rng.integers(t, 3000))
        s = int(rng.integers(1, 150))
        count, start = 0, 0
        while start + t <= n:
            count += 1
            start += s
        if expected_map_count(n, t, s) != count:
            counting_ok = False
            break

    params = WindowingParams(clip_len_s=60.0, window_len_s=10.0, stride_s=0.5)
    m30 = expected_map_count(int(round(60 * 30.0)),
                             params.window_frames(30.0),
                             params.stride_frames(30.0))
    m5994 = expected_map_count(int(round(60 * 59.94)),
                               params.window_frames(59.94),
                               params.stride_frames(59.94))
    paper_ok = (m30, m5994) == (101, 100)

    elapsed = time.time() - t0
    ok = counting_ok and paper_ok and elapsed < 10.0
    _report(capfd, 4, "windowing arithmetic", ok,
            f"M30={m30}, M59.94={m5994}, {elapsed:.2f}s")
    assert counting_ok
    assert paper_ok
    assert elapsed < 10.0


# -- 5. end-to-end spectral oracle -----------------------------------------------


def test_criterion_5_end_to_end_spectral_oracle(capfd):
    t0 = time.time()
    config = cfgmod.resolve()
    seg = cfgmod.segmentation_params(config)
    win = cfgmod.windowing_params(config)
    spectral = cfgmod.spectral_params(config)

    constant = generate(SynthConfig(width=64, height=64, fps=30.0,
                                    duration_s=60.0, bpm_trace=[(0.0, 120.0)],
                                    pulse_amplitude=2.0, noise_sigma=1.0,
                                    rng_seed=0))
    maps = _maps_for_clip(constant, seg, win)
    per_map = [spectral_estimate(m.values, m.fps, spectral) for m in maps]
    clip_bpm = aggregate_clip(per_map).bpm
    constant_ok = abs(clip_bpm - 120.0) <= 3.0

    ramp = generate(SynthConfig(width=64, height=64, fps=30.0, duration_s=120.0,
                                bpm_trace=[(0.0, 60.0), (120.0, 180.0)],
                                pulse_amplitude=2.0, noise_sigma=1.0,
                                rng_seed=1))
    ramp_maps = _maps_for_clip(ramp, seg, win)
    labeled, _dropped = label_maps(ramp_maps, ramp.gt)
    errors = [abs(spectral_estimate(m.values, m.fps, spectral) - bpm)
              for m, bpm in labeled]
    ramp_mae = float(np.mean(errors))
    ramp_ok = ramp_mae <= 6.0

    elapsed = time.time() - t0
    ok = constant_ok and ramp_ok and elapsed < 600.0
    _report(capfd, 5, "end-to-end spectral oracle", ok,
            f"const {clip_bpm:.2f}bpm, ramp MAE {ramp_mae:.2f}, {elapsed:.0f}s")
    assert constant_ok, f"clip prediction {clip_bpm:.3f} off 120 by > 3 bpm"
    assert ramp_ok, f"ramp map-level MAE {ramp_mae:.3f} > 6 bpm"
    assert elapsed < 600.0


# -- 6. CNN training sanity ------------------------------------------------------


def _synthetic_map(rng, bpm, rows=24, frames=150, fps=15.0):
    """A pipeline-like map: one shared cardiac phase, per-row gain/jitter."""
    t = np.arange(frames) / fps
    phase0 = rng.uniform(0, 2 * np.pi)
    jitter = rng.uniform(-0.3, 0.3, size=rows)
    amp = rng.uniform(0.5, 1.5, size=rows)
    base = np.sin(2 * np.pi * (bpm / 60.0) * t[None, :]
                  + phase0 + jitter[:, None]) * amp[:, None]
    m = np.stack([base, 0.3 * base, 0.2 * base], axis=-1)
    return normalize_map(m + rng.normal(0, 0.3, size=m.shape))


def test_criterion_6_cnn_training_sanity(capfd):
    t0 = time.time()
    # (a) gradient check on a <= 500-parameter model
    rng = np.random.default_rng(0)
    model = HeartRateCnn(widths=(2, 3), in_channels=3, seed=0)
    small = model.param_count() <= 500
    x = rng.random((2, 6, 8, 3))
    y = np.array([100.0, 140.0])
    _, analytic = model.loss_and_grad(x, y)
    worst = 0.0
    h = 1e-6
    for name, p in model.params.items():
        flat = p.ravel()
        fd = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp, _ = model.loss_and_grad(x, y)
            flat[i] = orig - h
            lm, _ = model.loss_and_grad(x, y)
            flat[i] = orig
            fd[i] = (lp - lm) / (2 * h)
        a = analytic[name].ravel()
        rel = np.abs(a - fd) / np.maximum(np.abs(a) + np.abs(fd), 1e-4)
        worst = max(worst, float(rel.max()))
    grad_elapsed = time.time() - t0
    grad_ok = small and worst < 1e-4 and grad_elapsed < 60.0

    # (b) single-sample overfit to MAE < 1 bpm
    t1 = time.time()
    m = np.random.default_rng(3).random((24, 120, 3))
    _model, log = cnn_train(
        [(m, 120.0)],
        TrainConfig(epochs=60, batch_size=1, lr=3e-3, lr_final=1e-5, seed=0),
        widths=(8, 16),
    )
    overfit_elapsed = time.time() - t1
    overfit_ok = log[-1] < 1.0 and overfit_elapsed < 120.0

    # (c) generalization: 200 training maps, 40 held out, 60-180 bpm
    t2 = time.time()
    rng = np.random.default_rng(42)
    data = [(_synthetic_map(rng, bpm), float(bpm))
            for bpm in rng.uniform(60, 180, 240)]
    train, held = data[:200], data[200:]
    trained, _ = cnn_train(
        train,
        TrainConfig(epochs=60, batch_size=16, lr=3e-3, lr_final=1e-4, seed=0),
        widths=(12, 24, 32),
    )
    preds = trained.forward(np.stack([v for v, _ in held]))
    mae = float(np.mean(np.abs(preds - np.array([b for _, b in held]))))
    gen_elapsed = time.time() - t2
    gen_ok = mae <= 10.0 and gen_elapsed < 900.0

    ok = grad_ok and overfit_ok and gen_ok
    _report(capfd, 6, "CNN training sanity", ok,
            f"grad rel {worst:.1e}, overfit {log[-1]:.3f}bpm, "
            f"held-out MAE {mae:.2f}, {time.time() - t0:.0f}s")
    assert grad_ok, f"worst gradient rel error {worst:.3e}"
    assert overfit_ok, f"overfit loss {log[-1]:.4f}"
    assert gen_ok, f"held-out MAE {mae:.3f} > 10 bpm"


# -- 7. metrics oracle -----------------------------------------------------------


def test_criterion_7_metrics_oracle(capfd):
    t0 = time.time()
    r1 = compute_metrics([100.0, 110.0], [110.0, 100.0])
    r2 = compute_metrics([70.0, 80.0], [70.0, 80.0])
    r3 = compute_metrics([0.0], [3.0])
    exact_ok = (
        (r1.mae, r1.rmse) == (10.0, 10.0)
        and (r2.mae, r2.rmse) == (0.0, 0.0)
        and (r3.mae, r3.rmse) == (3.0, 3.0)
    )
    rng = np.random.default_rng(7)
    property_ok = True
    for _ in range(1000):
        n = int(rng.integers(1, 30))
        r = compute_metrics(rng.uniform(40, 220, n), rng.uniform(40, 220, n))
        if not (r.rmse >= r.mae >= 0.0):
            property_ok = False
            break
    elapsed = time.time() - t0
    ok = exact_ok and property_ok and elapsed < 5.0
    _report(capfd, 7, "metrics oracle", ok, f"{elapsed:.2f}s")
    assert exact_ok
    assert property_ok
    assert elapsed < 5.0


# -- 8. determinism ---------------------------------------------------------------


def test_criterion_8_determinism(tmp_path, capfd):
    data = tmp_path / "vid"
    assert main(["synth", "--out", str(data), "--width", "24", "--height", "24",
                 "--fps", "10", "--duration", "12", "--bpm", "110",
                 "--amplitude", "3", "--noise-sigma", "0.5",
                 "--seed", "5"]) == EXIT_OK

    tiny = ["--k", "16", "--clip-len", "12", "--window-len", "5",
            "--stride", "1", "--seed", "5"]
    outs = []
    for run in ("r1", "r2"):
        out = tmp_path / run
        assert main(["pipeline", str(data), "--mode", "spectral",
                     "--out", str(out)] + tiny) == EXIT_OK
        outs.append(out)
    maps_same = (
        (outs[0] / "predictions_maps.csv").read_bytes()
        == (outs[1] / "predictions_maps.csv").read_bytes()
    )
    clips_same = (
        (outs[0] / "predictions_clips.csv").read_bytes()
        == (outs[1] / "predictions_clips.csv").read_bytes()
    )

    ckpts = []
    for run in ("m1", "m2"):
        ckpt = tmp_path / f"{run}.ckpt"
        assert main(["train", str(data), "--out-model", str(ckpt),
                     "--epochs", "4"] + tiny) == EXIT_OK
        ckpts.append(ckpt.read_bytes())
    ckpt_same = ckpts[0] == ckpts[1]

    ok = maps_same and clips_same and ckpt_same
    _report(capfd, 8, "determinism", ok)
    assert maps_same
    assert clips_same
    assert ckpt_same


# -- 9. benchmark harness ----------------------------------------------------------


def test_criterion_9_benchmark_harness(tmp_path, capfd):
    t0 = time.time()
    data = tmp_path / "vid"
    assert main(["synth", "--out", str(data), "--width", "48", "--height", "48",
                 "--fps", "10", "--duration", "30", "--bpm", "80"]) == EXIT_OK
    out = tmp_path / "bench.csv"
    assert main(["bench", str(data), "--reps", "3", "--k", "100",
                 "--out", str(out)]) == EXIT_OK
    with out.open() as fh:
        rows = {r["method"]: r for r in csv.DictReader(fh)}
    have_all = set(rows) == {"ibis_warm", "ibis_cold", "grid"}
    warm = float(rows["ibis_warm"]["fps_median"])
    cold = float(rows["ibis_cold"]["fps_median"])
    positive = all(float(r["fps_median"]) > 0 for r in rows.values())
    relative_ok = warm >= cold

    elapsed = time.time() - t0
    ok = have_all and positive and relative_ok and elapsed < 600.0
    _report(capfd, 9, "benchmark harness", ok,
            f"warm {warm:.1f} vs cold {cold:.1f} fps, {elapsed:.0f}s")
    assert have_all
    assert positive
    assert relative_ok, f"ibis_warm {warm:.2f} < ibis_cold {cold:.2f} fps"
    assert elapsed < 600.0
