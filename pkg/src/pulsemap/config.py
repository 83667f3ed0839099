"""Layered pipeline configuration: built-in defaults < config file < flags.

The configuration is a nested dict with fixed sections; override keys are
addressed with dotted paths (e.g. "segmentation.k"). Validation happens on
the fully resolved config before any work starts and names the offending
key in its error message.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .cnn import TrainConfig
from .hr import SpectralParams
from .stmap import WindowingParams
from .superpixel import SegmentationParams


class UsageError(Exception):
    """Invalid invocation or configuration."""


DEFAULTS: dict = {
    "segmentation": {
        "k": 300,
        "compacity": 1.0,
        "max_iters": 5,
        "convergence_eps": 0.5,
        "search_radius_factor": 2.0,
        "max_motion": None,
    },
    "windowing": {
        "clip_len_s": 60.0,
        "window_len_s": 10.0,
        "stride_s": 0.5,
    },
    "spectral": {
        "band_lo_hz": 0.7,
        "band_hi_hz": 3.2,
        "zero_pad_factor": 4,
        "aggregator": "snr_weighted_median",
        "channel": 0,
    },
    "cnn": {
        "widths": [16, 32, 64, 64],
        "lr": 1e-3,
        "lr_final": 1e-4,
        "batch_size": 16,
        "epochs": 100,
    },
    "pipeline": {
        "downscale": 1,
        "seed": 0,
        "jobs": 1,
    },
}


def resolve(
    config_file: str | Path | None = None,
    overrides: dict[str, object] | None = None,
) -> dict:
    """Merge defaults, an optional JSON config file, and dotted overrides."""
    config = copy.deepcopy(DEFAULTS)
    if config_file is not None:
        path = Path(config_file)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path}: invalid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError(f"config file {path}: top level must be an object")
        _merge(config, loaded, prefix="")
    for dotted, value in (overrides or {}).items():
        _set_dotted(config, dotted, value)
    validate(config)
    return config


def _merge(base: dict, incoming: dict, prefix: str) -> None:
    for key, value in incoming.items():
        dotted = f"{prefix}{key}"
        if key not in base:
            raise UsageError(f"unknown config key: {dotted}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise UsageError(f"config key {dotted} must be a section")
            _merge(base[key], value, prefix=f"{dotted}.")
        else:
            base[key] = value


def _set_dotted(config: dict, dotted: str, value: object) -> None:
    parts = dotted.split(".")
    node = config
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise UsageError(f"unknown config key: {dotted}")
        node = node[part]
    if parts[-1] not in node:
        raise UsageError(f"unknown config key: {dotted}")
    node[parts[-1]] = value


def validate(config: dict) -> None:
    """Reject invalid values, naming the offending key."""
    try:
        segmentation_params(config)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid segmentation config: {exc}") from exc
    try:
        windowing_params(config)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid windowing config: {exc}") from exc
    try:
        spectral_params(config)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid spectral config: {exc}") from exc
    cnn = config["cnn"]
    if not cnn["widths"] or any(int(w) < 1 for w in cnn["widths"]):
        raise UsageError("invalid config key cnn.widths: widths must be >= 1")
    if cnn["lr"] <= 0:
        raise UsageError("invalid config key cnn.lr: must be positive")
    if int(cnn["batch_size"]) < 1:
        raise UsageError("invalid config key cnn.batch_size: must be >= 1")
    if int(cnn["epochs"]) < 1:
        raise UsageError("invalid config key cnn.epochs: must be >= 1")
    pipe = config["pipeline"]
    if int(pipe["downscale"]) < 1:
        raise UsageError("invalid config key pipeline.downscale: must be >= 1")
    if int(pipe["jobs"]) < 1:
        raise UsageError("invalid config key pipeline.jobs: must be >= 1")


def segmentation_params(config: dict) -> SegmentationParams:
    s = config["segmentation"]
    return SegmentationParams(
        k=int(s["k"]),
        compacity=float(s["compacity"]),
        max_iters=int(s["max_iters"]),
        convergence_eps=float(s["convergence_eps"]),
        search_radius_factor=float(s["search_radius_factor"]),
        max_motion=None if s["max_motion"] is None else float(s["max_motion"]),
    )


def windowing_params(config: dict) -> WindowingParams:
    w = config["windowing"]
    return WindowingParams(
        clip_len_s=float(w["clip_len_s"]),
        window_len_s=float(w["window_len_s"]),
        stride_s=float(w["stride_s"]),
    )


def spectral_params(config: dict) -> SpectralParams:
    s = config["spectral"]
    return SpectralParams(
        band_lo_hz=float(s["band_lo_hz"]),
        band_hi_hz=float(s["band_hi_hz"]),
        zero_pad_factor=int(s["zero_pad_factor"]),
        aggregator=str(s["aggregator"]),
        channel=int(s["channel"]),
    )


def train_config(config: dict) -> TrainConfig:
    c = config["cnn"]
    return TrainConfig(
        lr=float(c["lr"]),
        lr_final=float(c["lr_final"]),
        batch_size=int(c["batch_size"]),
        epochs=int(c["epochs"]),
        seed=int(config["pipeline"]["seed"]),
    )


def dump(config: dict) -> str:
    return json.dumps(config, indent=2, sort_keys=True)
