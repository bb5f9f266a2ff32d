"""Malvar-He-Cutler linear demosaicing for 2x2 Bayer patterns."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .cfa import Channel, CfaPattern, RawImage

# Kernels scaled by 16 so that integer input gives exact float sums.
KERNEL_SCALE = 16.0

G_AT_RB = np.array([
    [0, 0, -2, 0, 0],
    [0, 0, 4, 0, 0],
    [-2, 4, 8, 4, -2],
    [0, 0, 4, 0, 0],
    [0, 0, -2, 0, 0],
], dtype=np.float64)

# R or B at a green site whose row holds that color.
RB_AT_G_ROW = np.array([
    [0, 0, 1, 0, 0],
    [0, -2, 0, -2, 0],
    [-2, 8, 10, 8, -2],
    [0, -2, 0, -2, 0],
    [0, 0, 1, 0, 0],
], dtype=np.float64)

RB_AT_G_COL = RB_AT_G_ROW.T.copy()

# R at B sites and B at R sites.
RB_AT_BR = np.array([
    [0, 0, -3, 0, 0],
    [0, 4, 0, 4, 0],
    [-3, 0, 12, 0, -3],
    [0, 4, 0, 4, 0],
    [0, 0, -3, 0, 0],
], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class RgbImage:
    """Linear RGB, ``planes`` shaped ``(3, height, width)`` in R, G, B order."""

    planes: np.ndarray

    def __post_init__(self):
        planes = np.asarray(self.planes, dtype=np.float64)
        if planes.ndim != 3 or planes.shape[0] != 3:
            raise ValueError(f"expected (3, h, w) planes, got {planes.shape}")
        if not np.all(np.isfinite(planes)):
            raise ValueError("RGB samples must be finite")
        object.__setattr__(self, "planes", planes)

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]


def kernel_for(pattern: CfaPattern, site_y: int, site_x: int, target: Channel) -> np.ndarray | None:
    """Kernel (x16) that estimates ``target`` at the given phase, or None when
    the site already measures it."""
    tile = pattern.tile
    here = tile[site_y % 2][site_x % 2]
    if here == target:
        return None
    if target == Channel.G:
        return G_AT_RB
    if here == Channel.G:
        return RB_AT_G_ROW if tile[site_y % 2][(site_x + 1) % 2] == target else RB_AT_G_COL
    return RB_AT_BR


def malvar(mosaic: np.ndarray, pattern: CfaPattern) -> np.ndarray:
    """Demosaic a Bayer mosaic to ``(3, h, w)`` float64, same units as input.

    Borders use mirror padding (no edge repeat), which keeps the CFA phase.
    No clipping is applied.
    """
    if pattern.period_x != 2 or pattern.period_y != 2 or not pattern.is_bayer:
        raise ValueError(f"Malvar demosaic needs a 2x2 Bayer pattern, got {pattern.name}")
    src = np.asarray(mosaic, dtype=np.float64)
    h, w = src.shape
    out = np.empty((3, h, w))
    filtered = {}
    for i in range(2):
        for j in range(2):
            for t in (Channel.R, Channel.G, Channel.B):
                k = kernel_for(pattern, i, j, t)
                if k is None:
                    out[t, i::2, j::2] = src[i::2, j::2]
                    continue
                key = id(k)
                if key not in filtered:
                    filtered[key] = ndimage.correlate(src, k, mode="mirror")
                out[t, i::2, j::2] = filtered[key][i::2, j::2] / KERNEL_SCALE
    return out


def demosaic_raw(bayer: RawImage) -> RgbImage:
    """Malvar demosaic normalized by ``white_level - black_level`` and
    clipped to [0, 1]."""
    scale = float(bayer.white_level - bayer.black_level)
    rgb = (malvar(bayer.data, bayer.pattern) - bayer.black_level) / scale
    return RgbImage(np.clip(rgb, 0.0, 1.0))
