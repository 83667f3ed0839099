"""Spectral heart-rate estimation from spatio-temporal maps.

Each superpixel row is detrended, Hann-windowed, zero-padded and Fourier
transformed; the dominant in-band frequency is refined with parabolic
interpolation of the power spectrum around the peak bin. Row estimates are
combined with an SNR-weighted median by default, which keeps rows that carry
no pulse (background, occluders) from dragging the estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_CONSTANT_STD = 1e-12


@dataclass
class SpectralParams:
    """Band limits in Hz, spectral oversampling, and row aggregation rule."""

    band_lo_hz: float = 0.7
    band_hi_hz: float = 3.2
    zero_pad_factor: int = 4
    aggregator: str = "snr_weighted_median"
    channel: int = 0            # 0 = luma; chroma channels behind this flag
    snr_guard_hz: float = 0.1   # peak exclusion half-width for the SNR floor

    def __post_init__(self) -> None:
        if not 0 < self.band_lo_hz < self.band_hi_hz:
            raise ValueError("require 0 < band_lo_hz < band_hi_hz")
        if self.zero_pad_factor < 1:
            raise ValueError("zero_pad_factor must be >= 1")
        if self.aggregator not in ("snr_weighted_median", "median", "mean"):
            raise ValueError(f"unknown aggregator {self.aggregator!r}")


@dataclass
class ClipPrediction:
    """Per-map bpm estimates for one clip and their arithmetic mean."""

    clip_id: str
    per_map_bpm: list[float]
    bpm: float


def _detrend(x: np.ndarray) -> np.ndarray:
    """Subtract the least-squares line from each row (last axis)."""
    n = x.shape[-1]
    t = np.arange(n, dtype=np.float64)
    t = t - t.mean()
    slope = (x * t).sum(axis=-1, keepdims=True) / (t * t).sum()
    return x - x.mean(axis=-1, keepdims=True) - slope * t


def _parabolic_offset(p_prev: float, p_peak: float, p_next: float) -> float:
    """Sub-bin peak offset in [-0.5, 0.5] from three power samples."""
    denom = p_prev - 2.0 * p_peak + p_next
    if denom == 0:
        return 0.0
    return float(np.clip(0.5 * (p_prev - p_next) / denom, -0.5, 0.5))


def weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    """Median of values under nonnegative weights (lower value on ties)."""
    order = np.argsort(values, kind="stable")
    v = np.asarray(values, dtype=np.float64)[order]
    w = np.asarray(weights, dtype=np.float64)[order]
    total = w.sum()
    if total <= 0:
        return float(np.median(v))
    cum = np.cumsum(w)
    idx = int(np.searchsorted(cum, 0.5 * total))
    return float(v[min(idx, len(v) - 1)])


def spectral_estimate(
    values: np.ndarray, fps: float, params: SpectralParams | None = None
) -> float:
    """Estimate bpm from a K x T x 3 map (or a bare K x T / length-T signal).

    Raises ValueError when the band exceeds Nyquist or no row carries any
    time-varying signal.
    """
    if params is None:
        params = SpectralParams()
    if params.band_hi_hz >= fps / 2:
        raise ValueError(
            f"band outside Nyquist: band_hi_hz={params.band_hi_hz} >= fps/2={fps / 2}"
        )
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 3:
        rows = values[:, :, params.channel]
    elif values.ndim == 2:
        rows = values
    else:
        rows = values[None, :]
    n = rows.shape[1]
    if n < 4:
        raise ValueError("signal too short for spectral estimation")

    active = rows.std(axis=1) > _CONSTANT_STD
    if not active.any():
        raise ValueError("no pulsatile signal: all rows are constant")
    rows = _detrend(rows[active])
    window = np.hanning(n)
    n_fft = n * params.zero_pad_factor
    spectrum = np.fft.rfft(rows * window, n=n_fft, axis=1)
    power = np.abs(spectrum) ** 2
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / fps)

    band = (freqs >= params.band_lo_hz) & (freqs <= params.band_hi_hz)
    band_idx = np.flatnonzero(band)
    if band_idx.size == 0:
        raise ValueError("no frequency bins inside the analysis band")

    df = freqs[1] - freqs[0]
    row_freqs = np.empty(rows.shape[0])
    row_snrs = np.empty(rows.shape[0])
    for i in range(rows.shape[0]):
        p = power[i]
        peak = band_idx[int(np.argmax(p[band_idx]))]
        offset = 0.0
        if 0 < peak < len(p) - 1:
            offset = _parabolic_offset(p[peak - 1], p[peak], p[peak + 1])
        row_freqs[i] = freqs[peak] + offset * df
        guard = np.abs(freqs[band_idx] - freqs[peak]) > params.snr_guard_hz
        floor = p[band_idx[guard]].mean() if guard.any() else 0.0
        row_snrs[i] = p[peak] / floor if floor > 0 else np.inf

    if params.aggregator == "mean":
        f = float(row_freqs.mean())
    elif params.aggregator == "median":
        f = float(np.median(row_freqs))
    else:
        finite = np.isfinite(row_snrs)
        if finite.all():
            weights = row_snrs
        else:
            # Noise-free rows have infinite SNR; they alone decide the vote.
            weights = np.where(finite, 0.0, 1.0)
        if weights.sum() == 0:
            weights = np.ones_like(row_freqs)
        f = weighted_median(row_freqs, weights)
    return 60.0 * f


def aggregate_clip(per_map_bpm: list[float], clip_id: str = "") -> ClipPrediction:
    """Average per-map predictions into one bpm for the clip."""
    if len(per_map_bpm) == 0:
        raise ValueError("empty per-map prediction list")
    values = np.asarray(per_map_bpm, dtype=np.float64)
    if not np.isfinite(values).all():
        raise ValueError("per-map predictions must be finite")
    return ClipPrediction(
        clip_id=clip_id,
        per_map_bpm=[float(v) for v in values],
        bpm=float(values.mean()),
    )
