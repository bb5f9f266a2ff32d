"""Synthetic paired data: diagonal binning, half-resolution demosaic,
RGBW/Bayer re-mosaic from a shared 4-channel field, and gain-dependent
shot + read noise synthesis and calibration.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import ndimage

from .cfa import (
    BAYER_GBRG,
    RGBW_DIAG,
    RGBW_PATTERNS,
    Channel,
    CfaPattern,
    RawImage,
    write_mraw,
)
from .demosaic import RgbImage, demosaic_raw

log = logging.getLogger(__name__)

CHALLENGE_GAINS = (0, 24, 42)

# Placeholder sensor model, not published values.
DEFAULT_SHOT_SLOPE = 0.25
DEFAULT_READ_SIGMA = 1.5


@dataclass(frozen=True)
class NoiseParams:
    """Noise variance model ``var = (Y - black) * sigma_s_sq + sigma_c_sq``."""

    sigma_s_sq: float
    sigma_c_sq: float
    gain_db: float = 0.0

    def __post_init__(self):
        if self.sigma_s_sq < 0 or self.sigma_c_sq < 0:
            raise ValueError(
                f"noise variances must be non-negative, got "
                f"sigma_s_sq={self.sigma_s_sq}, sigma_c_sq={self.sigma_c_sq}"
            )
        if self.gain_db < 0:
            raise ValueError(f"gain must be non-negative, got {self.gain_db} dB")

    def variance(self, signal_above_black):
        return np.asarray(signal_above_black, dtype=np.float64) * self.sigma_s_sq + self.sigma_c_sq


def default_noise_params(gain_db: float, *, shot_slope: float = DEFAULT_SHOT_SLOPE,
                         read_sigma: float = DEFAULT_READ_SIGMA) -> NoiseParams:
    """Gain-scaled noise. 0 dB is the clean reference and gets no noise."""
    if gain_db == 0:
        return NoiseParams(0.0, 0.0, 0.0)
    g = 10.0 ** (gain_db / 20.0)
    return NoiseParams(shot_slope * g, (g * read_sigma) ** 2, float(gain_db))


def default_noise_table(gains: Sequence[float] = CHALLENGE_GAINS) -> dict[float, NoiseParams]:
    return {g: default_noise_params(g) for g in gains}


@dataclass(frozen=True, eq=False)
class ScenePair:
    input_rgbw: RawImage
    gt_bayer: RawImage
    gain_db: float
    scene_id: str
    seed: int


def fmt_gain(gain_db: float) -> str:
    return f"{gain_db:g}"


def derive_seed(seed: int, scene_id: str, gain_db: float) -> int:
    """Per-(scene, gain) noise seed, independent of generation order."""
    digest = hashlib.sha256(f"{seed}:{scene_id}:{fmt_gain(gain_db)}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def _to_dn(values: np.ndarray, white_level: int) -> np.ndarray:
    return np.clip(_round_half_up(values), 0, white_level).astype(np.uint16)


# -- binning / demosaic / re-mosaic ---------------------------------------

def _block_diagonals(pattern: CfaPattern) -> tuple[tuple[int, int], tuple[int, int]]:
    """Offsets inside a 2x2 block of (color diagonal, W diagonal)."""
    if pattern.tile[0][0] == Channel.W:
        return ((0, 1), (1, 0)), ((0, 0), (1, 1))
    return ((0, 0), (1, 1)), ((0, 1), (1, 0))


def diagonal_bin(rgbw: RawImage) -> tuple[RawImage, np.ndarray]:
    """Average same-color diagonal pairs in each 2x2 block.

    Returns the half-resolution GBRG Bayer (DBinB) and the half-resolution
    white plane (DBinC, uint16). Averages round half up.
    """
    if rgbw.pattern not in RGBW_PATTERNS:
        raise ValueError(f"diagonal binning needs an RGBW_DIAG input, got {rgbw.pattern.name}")
    d = rgbw.data.astype(np.int64)
    (c0, c1), (w0, w1) = _block_diagonals(rgbw.pattern)
    color = (d[c0[0]::2, c0[1]::2] + d[c1[0]::2, c1[1]::2] + 1) // 2
    white = (d[w0[0]::2, w0[1]::2] + d[w1[0]::2, w1[1]::2] + 1) // 2
    return rgbw.with_data(color.astype(np.uint16), BAYER_GBRG), white.astype(np.uint16)


def demosaic_half(dbinb: RawImage) -> RgbImage:
    """Half-resolution RGB from the binned Bayer (Malvar-He-Cutler)."""
    if dbinb.pattern != BAYER_GBRG:
        raise ValueError(f"expected a GBRG Bayer, got {dbinb.pattern.name}")
    return demosaic_raw(dbinb)


def _upsample2_nearest(plane: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(plane, 2, axis=0), 2, axis=1)


def _upsample2_bilinear(plane: np.ndarray) -> np.ndarray:
    # Pixel-center aligned: outputs sit 1/4 and 3/4 of the way between inputs.
    p = np.pad(np.asarray(plane, dtype=np.float64), 1, mode="edge")

    def rows_up(a):
        out = np.empty((2 * (a.shape[0] - 2),) + a.shape[1:])
        out[0::2] = 0.25 * a[:-2] + 0.75 * a[1:-1]
        out[1::2] = 0.75 * a[1:-1] + 0.25 * a[2:]
        return out

    return rows_up(rows_up(p).T).T


UPSAMPLERS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "nearest": _upsample2_nearest,
    "bilinear": _upsample2_bilinear,
}


def build_field(rgb_half: RgbImage, w_half: np.ndarray, *, black_level: int = 0,
                white_level: int = 1023, upsample: str = "nearest") -> np.ndarray:
    """Full-resolution 4-channel (R, G, B, W) field in integer DN,
    shape ``(4, 2h, 2w)``."""
    w_half = np.asarray(w_half)
    if w_half.shape != (rgb_half.height, rgb_half.width):
        raise ValueError(
            f"RGB is {rgb_half.width}x{rgb_half.height} but W plane is "
            f"{w_half.shape[1]}x{w_half.shape[0]}"
        )
    try:
        up = UPSAMPLERS[upsample]
    except KeyError:
        raise ValueError(f"unknown upsampling {upsample!r}") from None
    scale = white_level - black_level
    half = np.concatenate([rgb_half.planes * scale + black_level, w_half[None].astype(np.float64)])
    full = np.stack([up(plane) for plane in half])
    return _to_dn(full, white_level)


def mosaic(field: np.ndarray, pattern: CfaPattern) -> np.ndarray:
    """Sample a ``(4, h, w)`` field through a CFA pattern."""
    _, h, w = field.shape
    cmap = pattern.channel_map(h, w).astype(np.intp)
    return np.take_along_axis(field, cmap[None], axis=0)[0]


def upsample_and_mosaic(rgb_half: RgbImage, w_half: np.ndarray, *, bit_depth: int = 10,
                        black_level: int = 0, white_level: int | None = None,
                        upsample: str = "nearest",
                        rgbw_pattern: CfaPattern = RGBW_DIAG) -> tuple[RawImage, RawImage]:
    """Clean full-resolution RGBW and GT Bayer, both sampled from one field."""
    if white_level is None:
        white_level = (1 << bit_depth) - 1
    field = build_field(rgb_half, w_half, black_level=black_level,
                        white_level=white_level, upsample=upsample)
    levels = dict(bit_depth=bit_depth, black_level=black_level, white_level=white_level)
    return (RawImage(mosaic(field, rgbw_pattern), rgbw_pattern, **levels),
            RawImage(mosaic(field, BAYER_GBRG), BAYER_GBRG, **levels))


# -- noise ----------------------------------------------------------------

def synthesize_noise(img: RawImage, params: NoiseParams, seed: int) -> RawImage:
    """Add zero-mean Gaussian noise with variance ``(Y-black)*s + c``, then
    round half up and clamp to [0, white_level]."""
    if params.sigma_s_sq == 0 and params.sigma_c_sq == 0:
        return img
    y = img.data.astype(np.float64)
    var = params.variance(np.maximum(y - img.black_level, 0.0))
    rng = np.random.default_rng(seed)
    noisy = y + rng.standard_normal(y.shape) * np.sqrt(var)
    return img.with_data(_to_dn(noisy, img.white_level))


@dataclass(frozen=True)
class PhotonTransferFit:
    slope: float
    intercept: float
    r_squared: float


def fit_photon_transfer(signal: Sequence[float], variance: Sequence[float]) -> PhotonTransferFit:
    """Line fit of variance against signal above black.

    Weighted least squares with weights ``1/var^2``, iterated from an
    ordinary fit: the sampling error of a variance estimate grows with the
    variance itself, so an unweighted fit lets the brightest patch dominate
    the intercept.
    """
    x = np.asarray(signal, dtype=np.float64)
    v = np.asarray(variance, dtype=np.float64)
    if len(np.unique(x)) < 2:
        raise ValueError("need at least two distinct signal levels to fit a slope")
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef = np.linalg.lstsq(A, v, rcond=None)[0]
    for _ in range(3):
        model = np.maximum(A @ coef, 1e-3)
        wts = 1.0 / model
        coef = np.linalg.lstsq(A * wts[:, None], v * wts, rcond=None)[0]
    resid = v - A @ coef
    ss_tot = float(np.sum((v - v.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return PhotonTransferFit(float(coef[0]), float(coef[1]), r2)


def calibrate_noise(flat_patches: Sequence[tuple[float, RawImage]], gain_db: float = 0.0) -> NoiseParams:
    """Estimate shot/read variance from flat patches given as
    ``(mean DN, patch)`` pairs."""
    levels = {float(m) for m, _ in flat_patches}
    if len(levels) < 2:
        raise ValueError("calibration needs flat patches at two or more distinct levels")
    signal, variance = [], []
    for mean, patch in flat_patches:
        if patch.width < 64 or patch.height < 64:
            raise ValueError(f"flat patch {patch.width}x{patch.height} is smaller than 64x64")
        signal.append(float(mean) - patch.black_level)
        variance.append(float(np.var(patch.data.astype(np.float64), ddof=1)))
    fit = fit_photon_transfer(signal, variance)
    return NoiseParams(max(fit.slope, 0.0), max(fit.intercept, 0.0), gain_db)


# -- scene generation -----------------------------------------------------

def clean_pair(capture: RawImage, upsample: str = "nearest") -> tuple[RawImage, RawImage]:
    """Bin -> demosaic -> re-mosaic. Returns (clean RGBW, GT Bayer)."""
    dbinb, dbinc = diagonal_bin(capture)
    rgb = demosaic_half(dbinb)
    return upsample_and_mosaic(
        rgb, dbinc, bit_depth=capture.bit_depth, black_level=capture.black_level,
        white_level=capture.white_level, upsample=upsample, rgbw_pattern=capture.pattern,
    )


def generate_scene_pair(capture: RawImage, gains: Sequence[float],
                        noise_table: Mapping[float, NoiseParams] | None = None,
                        seed: int = 0, scene_id: str = "scene",
                        upsample: str = "nearest") -> list[ScenePair]:
    if capture.pattern not in RGBW_PATTERNS:
        raise ValueError(f"capture must be RGBW_DIAG, got {capture.pattern.name}")
    table = dict(noise_table) if noise_table is not None else {}
    clean_rgbw, gt = clean_pair(capture, upsample)
    pairs = []
    for g in gains:
        params = table.get(g) or default_noise_params(g)
        noisy = synthesize_noise(clean_rgbw, params, derive_seed(seed, scene_id, g))
        pairs.append(ScenePair(noisy, gt, g, scene_id, seed))
    return pairs


def _smooth_noise(rng: np.random.Generator, h: int, w: int, cell: int) -> np.ndarray:
    coarse = rng.random((h // cell + 2, w // cell + 2))
    ys = np.linspace(0, h / cell, h, endpoint=False)
    xs = np.linspace(0, w / cell, w, endpoint=False)
    y0, x0 = ys.astype(int), xs.astype(int)
    fy, fx = (ys - y0)[:, None], (xs - x0)[None, :]
    a = coarse[y0][:, x0]
    b = coarse[y0][:, x0 + 1]
    c = coarse[y0 + 1][:, x0]
    d = coarse[y0 + 1][:, x0 + 1]
    return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy


def procedural_rgb(width: int, height: int, seed: int) -> np.ndarray:
    """Linear RGB test scene in [0, 1], shape ``(3, height, width)``.

    Smooth color ramps carry the chroma; a radial resolution wedge, text-like
    glyph blocks and a noise texture modulate luminance, as in natural
    scenes where fine detail is mostly achromatic.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float32)
    u, v = xx / max(width - 1, 1), yy / max(height - 1, 1)

    mix = rng.random(3)
    base = np.stack([
        0.2 + 0.5 * (mix[0] * u + (1 - mix[0]) * v),
        0.2 + 0.5 * (mix[1] * (1 - u) + (1 - mix[1]) * v),
        0.2 + 0.5 * (mix[2] * u * v + (1 - mix[2]) * (1 - v)),
    ])
    luma = np.ones((height, width), dtype=np.float32)

    # resolution wedge: frequency rises to 0.2 cycles/px at the rim
    cy, cx = rng.uniform(0.3, 0.7) * height, rng.uniform(0.3, 0.7) * width
    r2 = (yy - cy) ** 2 + (xx - cx) ** 2
    radius = 0.22 * min(width, height)
    zone = 0.5 + 0.5 * np.cos(2 * np.pi * 0.1 * r2 / radius)
    luma = np.where(r2 < radius ** 2, 0.35 + 0.65 * zone, luma)

    # text-like glyph blocks
    glyph = max(3, min(width, height) // 48)
    for _ in range(int(rng.integers(20, 60))):
        gy = int(rng.integers(0, max(1, height - 5 * glyph)))
        gx = int(rng.integers(0, max(1, width - 4 * glyph)))
        bits = rng.random((5, 4)) < 0.5
        block = np.kron(bits, np.ones((glyph, glyph), dtype=bool))
        region = (slice(gy, gy + block.shape[0]), slice(gx, gx + block.shape[1]))
        luma[region] = np.where(block, rng.uniform(0.1, 0.4), luma[region])

    texture = _smooth_noise(rng, height, width, cell=max(2, min(width, height) // 40))
    rgb = base * (luma * (0.75 + 0.5 * texture.astype(np.float32)))[None]
    rgb = ndimage.gaussian_filter(rgb, sigma=(0, 0.7, 0.7), mode="nearest")
    return np.clip(rgb, 0.0, 1.0)


def procedural_capture(width: int, height: int, seed: int, *, bit_depth: int = 10,
                       black_level: int = 0, pattern: CfaPattern = RGBW_DIAG) -> RawImage:
    """Simulated RGBW sensor capture of a procedural scene."""
    white_level = (1 << bit_depth) - 1
    rgb = procedural_rgb(width, height, seed)
    # W passes roughly all three color bands.
    w = np.clip(0.45 * rgb.sum(axis=0), 0.0, 1.0)
    field = np.concatenate([rgb, w[None]]) * (white_level - black_level) + black_level
    data = mosaic(_to_dn(field, white_level), pattern)
    return RawImage(data, pattern, bit_depth=bit_depth, black_level=black_level,
                    white_level=white_level)


def split_for(index: int, count: int) -> str:
    """70/15/15 train/val/test assignment by position. Val and test each
    get ``round(0.15 * count)`` trailing scenes, at least one from three
    scenes up."""
    if count < 3:
        return "train"
    k = max(1, round(0.15 * count))
    if index >= count - k:
        return "test"
    if index >= count - 2 * k:
        return "val"
    return "train"


def noise_table_from_config(cfg: Mapping, gains: Sequence[float]) -> dict[float, NoiseParams]:
    """``{"24": {"sigma_s_sq": .., "sigma_c_sq": ..}}`` entries override the
    default table."""
    table = default_noise_table(gains)
    for key, entry in (cfg or {}).items():
        g = float(key)
        g = int(g) if g.is_integer() else g
        table[g] = NoiseParams(float(entry["sigma_s_sq"]), float(entry["sigma_c_sq"]), g)
    return table


def write_dataset(root: str | Path, n_scenes: int, *, width: int = 480, height: int = 320,
                  gains: Sequence[float] = CHALLENGE_GAINS,
                  noise_table: Mapping[float, NoiseParams] | None = None,
                  seed: int = 0, upsample: str = "nearest", hide_test_gt: bool = False) -> Path:
    """Generate a procedural dataset in the on-disk layout::

        <root>/manifest.json
        <root>/<scene_id>/rgbw_<gain>db.rgbw
        <root>/<scene_id>/gt.bayer
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    table = dict(default_noise_table(gains))
    table.update(noise_table or {})
    scenes = []
    for i in range(n_scenes):
        scene_id = f"scene{i:03d}"
        split = split_for(i, n_scenes)
        capture = procedural_capture(width, height, _scene_seed(seed, i))
        pairs = generate_scene_pair(capture, gains, table, seed, scene_id, upsample)
        sdir = root / scene_id
        sdir.mkdir(exist_ok=True)
        for pair in pairs:
            write_mraw(sdir / f"rgbw_{fmt_gain(pair.gain_db)}db.rgbw", pair.input_rgbw)
        if not (hide_test_gt and split == "test"):
            write_mraw(sdir / "gt.bayer", pairs[0].gt_bayer)
        scenes.append({"id": scene_id, "split": split})
        log.info("wrote %s (%s)", scene_id, split)
    manifest = {
        "scenes": scenes,
        "gains": list(gains),
        "noise": {fmt_gain(g): {"sigma_s_sq": table[g].sigma_s_sq,
                                "sigma_c_sq": table[g].sigma_c_sq} for g in gains},
        "seed": seed,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                        encoding="utf-8")
    return root


def _scene_seed(seed: int, index: int) -> int:
    digest = hashlib.sha256(f"scene:{seed}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little")
