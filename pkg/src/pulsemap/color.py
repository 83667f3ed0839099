"""Color space conversions: sRGB to CIELAB (segmentation metric) and YUV (traces).

All conversions are computed in double precision and accept either a single
RGB triplet or an array of shape (..., 3) with channels in [0, 255].

Conventions:
  * CIELAB uses the D65 illuminant (2 degree observer), sRGB's native white.
    The white point is taken as the row sums of the sRGB->XYZ matrix so that
    neutral inputs map to exactly zero chroma.
  * YUV is BT.601 full-range with zero-centered chroma:
        y =  0.299 r + 0.587 g + 0.114 b
        u =  0.564 (b - y)          # 0.564 = 0.5 / (1 - 0.114)
        v =  0.713 (r - y)          # 0.713 = 0.5 / (1 - 0.299)
"""

from __future__ import annotations

import numpy as np

# sRGB primaries -> XYZ, D65 (Bruce Lindbloom's matrix)
_M_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ],
    dtype=np.float64,
)

# Row sums (= XYZ of pure white) used as the reference white.
_WHITE = _M_RGB_TO_XYZ.sum(axis=1)

_EPSILON = (6.0 / 29.0) ** 3          # CIE 216/24389
_LINEAR_SLOPE = (29.0 / 6.0) ** 2 / 3.0

_YUV_U_SCALE = 0.5 / (1.0 - 0.114)
_YUV_V_SCALE = 0.5 / (1.0 - 0.299)


def srgb_gamma_expand(rgb01: np.ndarray) -> np.ndarray:
    """sRGB transfer function: gamma-compressed [0,1] -> linear [0,1]."""
    rgb01 = np.asarray(rgb01, dtype=np.float64)
    return np.where(
        rgb01 <= 0.04045,
        rgb01 / 12.92,
        ((rgb01 + 0.055) / 1.055) ** 2.4,
    )


def srgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Convert 8-bit sRGB to CIELAB.

    Args:
        rgb: array-like of shape (..., 3), channels in [0, 255].

    Returns:
        float64 array of shape (..., 3): L* in [0, 100], a*, b* chroma.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    linear = srgb_gamma_expand(rgb / 255.0)
    xyz = linear @ _M_RGB_TO_XYZ.T
    ratio = xyz / _WHITE
    f = np.where(
        ratio > _EPSILON,
        np.cbrt(ratio),
        _LINEAR_SLOPE * ratio + 4.0 / 29.0,
    )
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    lab = np.stack(
        [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)],
        axis=-1,
    )
    return lab


def rgb_to_yuv(rgb: np.ndarray) -> np.ndarray:
    """Convert RGB (real-valued, nominally [0, 255]) to full-range BT.601 YUV.

    Luma stays in [0, 255] for valid input; chroma is zero-centered, so any
    gray triplet maps to u = v = 0 exactly.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    # Written as r + 0.587(g-r) + 0.114(b-r) (algebraically identical since the
    # coefficients sum to 1) so gray inputs give y == r and u == v == 0 exactly.
    y = r + 0.587 * (g - r) + 0.114 * (b - r)
    u = _YUV_U_SCALE * (b - y)
    v = _YUV_V_SCALE * (r - y)
    return np.stack([y, u, v], axis=-1)
