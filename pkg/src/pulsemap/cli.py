"""Command-line entry point: synth, pipeline, train, eval, bench.

Configuration is layered: built-in defaults < --config JSON file <
PULSEMAP_SEED / PULSEMAP_JOBS environment variables < explicit flags.
`--dump-config` prints the fully resolved configuration as JSON (itself a
valid --config file) and exits.

Exit codes: 0 success, 2 usage/configuration error, 3 data error,
4 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import bench as benchmod
from . import config as cfgmod
from . import dataset, pipeline, synth
from .cnn import cnn_train, load_checkpoint, save_checkpoint
from .color import srgb_to_lab
from .config import UsageError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4

# flag destination -> dotted config key
_FLAG_KEYS = {
    "k": "segmentation.k",
    "compacity": "segmentation.compacity",
    "max_iters": "segmentation.max_iters",
    "downscale": "pipeline.downscale",
    "clip_len": "windowing.clip_len_s",
    "window_len": "windowing.window_len_s",
    "stride": "windowing.stride_s",
    "band_lo": "spectral.band_lo_hz",
    "band_hi": "spectral.band_hi_hz",
    "aggregator": "spectral.aggregator",
    "epochs": "cnn.epochs",
    "lr": "cnn.lr",
    "batch_size": "cnn.batch_size",
    "seed": "pipeline.seed",
    "jobs": "pipeline.jobs",
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    parser.add_argument("--jobs", type=int, default=argparse.SUPPRESS)
    parser.add_argument(
        "--dump-config",
        action="store_true",
        help="print the resolved config as JSON and exit",
    )


def _add_segmentation(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--k", type=int, default=argparse.SUPPRESS)
    parser.add_argument("--compacity", type=float, default=argparse.SUPPRESS)
    parser.add_argument("--max-iters", type=int, default=argparse.SUPPRESS)
    parser.add_argument("--downscale", type=int, default=argparse.SUPPRESS)


def _add_windowing(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--clip-len", type=float, default=argparse.SUPPRESS)
    parser.add_argument("--window-len", type=float, default=argparse.SUPPRESS)
    parser.add_argument("--stride", type=float, default=argparse.SUPPRESS)


def _resolve_config(args: argparse.Namespace) -> dict:
    overrides: dict[str, object] = {}
    for env, dotted in (
        ("PULSEMAP_SEED", "pipeline.seed"),
        ("PULSEMAP_JOBS", "pipeline.jobs"),
    ):
        if env in os.environ:
            overrides[dotted] = int(os.environ[env])
    for dest, dotted in _FLAG_KEYS.items():
        if hasattr(args, dest):
            overrides[dotted] = getattr(args, dest)
    return cfgmod.resolve(getattr(args, "config", None), overrides)


def _maybe_dump(args: argparse.Namespace, config: dict) -> bool:
    if getattr(args, "dump_config", False):
        print(cfgmod.dump(config))
        return True
    return False


def _write_csv(path: Path, rows: list[dict], fields: list[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row[k]) for k in fields})


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


# -- subcommands -------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    if _maybe_dump(args, config):
        return EXIT_OK
    if args.bpm is not None and args.bpm_ramp is not None:
        raise UsageError("give either --bpm or --bpm-ramp, not both")
    if args.bpm_ramp is not None:
        lo, hi = (float(v) for v in args.bpm_ramp.split(":"))
        trace = [(0.0, lo), (args.duration, hi)]
    else:
        bpm = 120.0 if args.bpm is None else args.bpm
        trace = [(0.0, bpm)]
    motion = synth.Motion()
    if args.motion is not None:
        kind, _, rest = args.motion.partition(":")
        values = [float(v) for v in rest.split(",")] if rest else []
        if kind == "drift" and len(values) == 2:
            motion = synth.Motion(kind="drift", vx=values[0], vy=values[1])
        elif kind == "sway" and len(values) == 2:
            motion = synth.Motion(kind="sway", amp_px=values[0], period_s=values[1])
        else:
            raise UsageError(
                f"bad --motion {args.motion!r}; use drift:VX,VY or sway:AMP,PERIOD"
            )
    try:
        synth_config = synth.SynthConfig(
            width=args.width,
            height=args.height,
            fps=args.fps,
            duration_s=args.duration,
            bpm_trace=trace,
            pulse_amplitude=args.amplitude,
            noise_sigma=args.noise_sigma,
            motion=motion,
            rng_seed=int(config["pipeline"]["seed"]),
            subject=args.subject,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    clip = synth.generate(synth_config)
    out = synth.write_clip(clip, args.out)
    print(f"wrote {len(clip.frames)} frames and {len(clip.gt)} gt samples to {out}")
    return EXIT_OK


def cmd_pipeline(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    if _maybe_dump(args, config):
        return EXIT_OK
    model = None
    if args.mode == "cnn":
        if args.model is None:
            raise UsageError("--model is required in cnn mode")
        model = load_checkpoint(args.model)
    map_rows, clip_rows = pipeline.run_pipeline(
        args.input_dir, config, args.mode, args.model
    )
    out = Path(args.out)
    _write_csv(
        out / "predictions_maps.csv",
        map_rows,
        ["video", "clip_id", "clip_start_s", "window_start_s",
         "window_len_s", "map_index", "bpm"],
    )
    _write_csv(
        out / "predictions_clips.csv",
        clip_rows,
        ["video", "clip_id", "clip_start_s", "n_maps", "bpm"],
    )
    del model
    print(f"wrote {len(map_rows)} map and {len(clip_rows)} clip predictions to {out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    if _maybe_dump(args, config):
        return EXIT_OK
    split = dataset.load_split(args.split) if args.split else None
    labeled: list[tuple[np.ndarray, float]] = []
    dropped_total = 0
    for input_dir in args.data:
        for name, video_dir in pipeline.discover_videos(input_dir):
            maps, _fps, subject = pipeline.video_to_maps(video_dir, config)
            if split is not None:
                if subject in split.test_subjects:
                    raise UsageError(
                        f"split leakage: training video {name} has test "
                        f"subject {subject!r}"
                    )
            gt = dataset.load_ground_truth(Path(video_dir) / dataset.GT_FILENAME)
            pairs, dropped = dataset.label_maps(maps, gt)
            dropped_total += dropped
            labeled.extend((m.values, bpm) for m, bpm in pairs)
    if not labeled:
        raise dataset.DatasetError("no labeled maps found in the training data")
    train_cfg = cfgmod.train_config(config)
    model, loss_log = cnn_train(
        labeled, train_cfg, widths=tuple(int(w) for w in config["cnn"]["widths"])
    )
    meta = {
        "seed": train_cfg.seed,
        "lr": train_cfg.lr,
        "epochs": train_cfg.epochs,
        "batch_size": train_cfg.batch_size,
        "n_maps": len(labeled),
        "dropped_maps": dropped_total,
        "final_loss": loss_log[-1],
    }
    out_model = Path(args.out_model)
    out_model.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out_model, meta)
    loss_path = out_model.with_suffix(out_model.suffix + ".loss.csv")
    _write_csv(
        loss_path,
        [{"epoch": i, "loss": v} for i, v in enumerate(loss_log)],
        ["epoch", "loss"],
    )
    print(
        f"trained on {len(labeled)} maps ({dropped_total} dropped), "
        f"final loss {loss_log[-1]:.3f} bpm -> {out_model}"
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    if _maybe_dump(args, config):
        return EXIT_OK
    pred_path = Path(args.pred)
    if pred_path.is_dir():
        pred_path = pred_path / "predictions_maps.csv"
    if not pred_path.is_file():
        raise dataset.DatasetError(f"predictions file not found: {pred_path}")
    with pred_path.open(encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise dataset.DatasetError(f"no prediction rows in {pred_path}")

    data_root = Path(args.data)
    gt_cache: dict[str, dict[int, float]] = {}
    preds, truths, clip_keys = [], [], []
    dropped = 0
    for row in rows:
        video = row["video"]
        if video not in gt_cache:
            video_dir = data_root if (data_root / dataset.GT_FILENAME).is_file() \
                else data_root / video
            gt = dataset.load_ground_truth(video_dir / dataset.GT_FILENAME)
            gt_cache[video] = {s.t_s: s.bpm for s in gt}
        by_second = gt_cache[video]
        start = float(row["clip_start_s"]) + float(row["window_start_s"])
        length = float(row["window_len_s"])
        seconds = range(
            int(np.ceil(start - 1e-9)), int(np.ceil(start + length - 1e-9))
        )
        values = [by_second.get(s) for s in seconds]
        if not values or any(v is None for v in values):
            dropped += 1
            continue
        preds.append(float(row["bpm"]))
        truths.append(float(np.mean(values)))
        clip_keys.append(f"{video}/{row['clip_id']}")
    report = dataset.compute_metrics(preds, truths, clip_keys)

    clip_pred: dict[str, list[float]] = {}
    clip_truth: dict[str, list[float]] = {}
    for p, t, c in zip(preds, truths, clip_keys):
        clip_pred.setdefault(c, []).append(p)
        clip_truth.setdefault(c, []).append(t)
    clip_level = dataset.compute_metrics(
        [float(np.mean(clip_pred[c])) for c in sorted(clip_pred)],
        [float(np.mean(clip_truth[c])) for c in sorted(clip_pred)],
    )
    payload = {
        "map_level": {"mae": report.mae, "rmse": report.rmse, "n_maps": report.n_maps},
        "clip_level": {
            "mae": clip_level.mae,
            "rmse": clip_level.rmse,
            "n_clips": clip_level.n_maps,
        },
        "dropped_maps": dropped,
        "per_clip": report.per_clip,
    }
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                       encoding="utf-8")
    print(f"{'level':<10} {'MAE':>8} {'RMSE':>8} {'n':>6}")
    print(f"{'map':<10} {report.mae:8.3f} {report.rmse:8.3f} {report.n_maps:6d}")
    print(f"{'clip':<10} {clip_level.mae:8.3f} {clip_level.rmse:8.3f} "
          f"{clip_level.n_maps:6d}")
    if dropped:
        print(f"dropped {dropped} maps without full ground-truth coverage")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    if _maybe_dump(args, config):
        return EXIT_OK
    methods = tuple(m.strip() for m in args.methods.split(","))
    for m in methods:
        if m not in benchmod.METHODS:
            raise UsageError(
                f"unknown method {m!r} (choose from {', '.join(benchmod.METHODS)})"
            )
    frames, _fps, _subject = dataset.load_frames(args.input_dir)
    frames = pipeline.downscale_frames(frames, int(config["pipeline"]["downscale"]))
    frames_lab = [srgb_to_lab(f) for f in frames]
    seg_params = cfgmod.segmentation_params(config)
    results = benchmod.run_benchmark(frames_lab, seg_params, methods, reps=args.reps)
    rows = [
        {
            "method": r.method,
            "fps_median": r.fps_median,
            "label_stability": r.label_stability,
            "n_frames": r.n_frames,
        }
        for r in results
    ]
    if args.out:
        _write_csv(Path(args.out), rows,
                   ["method", "fps_median", "label_stability", "n_frames"])
    print(f"{'method':<12} {'frames/sec':>12} {'stability':>10}")
    for r in results:
        print(f"{r.method:<12} {r.fps_median:12.2f} {r.label_stability:10.4f}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pulsemap",
        description="Video heart-rate estimation via temporal superpixels",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic pulsatile clip")
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--bpm", type=float, default=None)
    p.add_argument("--bpm-ramp", default=None, metavar="LO:HI")
    p.add_argument("--amplitude", type=float, default=2.0)
    p.add_argument("--noise-sigma", type=float, default=1.0)
    p.add_argument("--motion", default=None, metavar="drift:VX,VY|sway:AMP,PERIOD")
    p.add_argument("--subject", default="synth")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pipeline", help="frames -> superpixels -> maps -> bpm")
    p.add_argument("input_dir")
    p.add_argument("--mode", choices=("spectral", "cnn"), default="spectral")
    p.add_argument("--model", default=None, help="checkpoint (cnn mode)")
    p.add_argument("--out", required=True, help="output directory")
    _add_segmentation(p)
    _add_windowing(p)
    p.add_argument("--band-lo", type=float, default=argparse.SUPPRESS)
    p.add_argument("--band-hi", type=float, default=argparse.SUPPRESS)
    p.add_argument("--aggregator", default=argparse.SUPPRESS)
    _add_common(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("train", help="train the CNN regressor on labeled data")
    p.add_argument("data", nargs="+", help="dataset directories (frames + gt)")
    p.add_argument("--out-model", required=True)
    p.add_argument("--split", default=None, help="subject split file")
    _add_segmentation(p)
    _add_windowing(p)
    p.add_argument("--epochs", type=int, default=argparse.SUPPRESS)
    p.add_argument("--lr", type=float, default=argparse.SUPPRESS)
    p.add_argument("--batch-size", type=int, default=argparse.SUPPRESS)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True, help="predictions_maps.csv or its dir")
    p.add_argument("--data", required=True, help="dataset root with gt files")
    p.add_argument("--out", default=None, help="write JSON report here")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="superpixel throughput benchmark")
    p.add_argument("input_dir")
    p.add_argument("--methods", default=",".join(benchmod.METHODS))
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--out", default=None, help="write CSV report here")
    _add_segmentation(p)
    _add_common(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except dataset.DatasetError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
