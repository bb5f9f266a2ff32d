"""RGBW -> GBRG Bayer remosaicing.

Built-in baselines (nearest, bilinear, W-guided color difference), an
optional same-channel denoise prefilter, and the external plugin contract
for learned methods::

    <command> <input.rgbw> <output.bayer>
"""

from __future__ import annotations

import logging
import shlex
import subprocess
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from scipy import ndimage

from .cfa import (
    BAYER_GBRG,
    RGBW_PATTERNS,
    Channel,
    MrawError,
    PlaneStack,
    RawImage,
    pixel_shuffle,
    pixel_unshuffle,
    read_mraw,
    write_mraw,
)

log = logging.getLogger(__name__)

BUILTIN_KINDS = ("nearest", "bilinear", "wguided")
DEFAULT_PLUGIN_TIMEOUT = 600.0


class RemosaicFailure(RuntimeError):
    """A remosaic run that produced no usable Bayer output."""


@dataclass(frozen=True)
class RemosaicAlgo:
    name: str
    kind: str
    plugin_command: str | None = None
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in BUILTIN_KINDS + ("plugin",):
            raise ValueError(f"unknown remosaic kind {self.kind!r}")
        if self.kind == "plugin" and not self.plugin_command:
            raise ValueError(f"plugin algorithm {self.name!r} needs a command")

    @classmethod
    def builtin(cls, kind: str, **params) -> RemosaicAlgo:
        return cls(kind, kind, None, params)

    @classmethod
    def plugin(cls, name: str, command: str, timeout: float = DEFAULT_PLUGIN_TIMEOUT) -> RemosaicAlgo:
        return cls(name, "plugin", command, {"timeout": timeout})


@dataclass(frozen=True, eq=False)
class ChannelField:
    """Full-resolution R, G, B, W planes with measured-sample masks."""

    values: np.ndarray  # (4, h, w) float64, 0 where not measured
    measured: np.ndarray  # (4, h, w) bool


def _check_rgbw(img: RawImage) -> None:
    if img.pattern not in RGBW_PATTERNS:
        raise ValueError(f"remosaic needs an RGBW_DIAG input, got {img.pattern.name}")


def scatter(rgbw: RawImage) -> ChannelField:
    _check_rgbw(rgbw)
    cmap = rgbw.pattern.channel_map(rgbw.height, rgbw.width)
    measured = np.stack([cmap == c for c in Channel])
    values = np.where(measured, rgbw.data.astype(np.float64)[None], 0.0)
    return ChannelField(values, measured)


def _to_bayer(rgbw: RawImage, values: np.ndarray) -> RawImage:
    out = np.clip(np.floor(values + 0.5), 0, rgbw.white_level).astype(np.uint16)
    return rgbw.with_data(out, BAYER_GBRG)


def _bayer_needs(h: int, w: int) -> np.ndarray:
    return BAYER_GBRG.channel_map(h, w)


# -- nearest ----------------------------------------------------------------

@lru_cache(maxsize=None)
def _nearest_candidates(tile: tuple, py: int, px: int, channel: int, radius: int = 5):
    """Offsets to samples of ``channel`` ordered by distance, then (dy, dx)."""
    ky, kx = len(tile), len(tile[0])
    cands = [
        (dy * dy + dx * dx, dy, dx)
        for dy in range(-radius, radius + 1)
        for dx in range(-radius, radius + 1)
        if tile[(py + dy) % ky][(px + dx) % kx] == channel
    ]
    return [(dy, dx) for _, dy, dx in sorted(cands)]


def remosaic_nearest(rgbw: RawImage) -> RawImage:
    """Copy each required Bayer channel from the closest in-image sample of
    that channel (Euclidean; ties to the smallest (dy, dx))."""
    _check_rgbw(rgbw)
    h, w = rgbw.height, rgbw.width
    data = rgbw.data
    need = _bayer_needs(h, w)
    out = np.zeros((h, w), dtype=np.float64)
    tile = rgbw.pattern.tile
    for py in range(4):
        for px in range(4):
            ys, xs = np.mgrid[py:h:4, px:w:4]
            if ys.size == 0:
                continue
            c = int(need[py, px])
            got = np.zeros(ys.shape, dtype=bool)
            vals = np.zeros(ys.shape)
            for dy, dx in _nearest_candidates(tile, py, px, c):
                yy, xx = ys + dy, xs + dx
                ok = ~got & (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
                if ok.any():
                    vals[ok] = data[yy[ok], xx[ok]]
                    got |= ok
                if got.all():
                    break
            out[py::4, px::4] = vals
    return _to_bayer(rgbw, out)


# -- lattice interpolation ---------------------------------------------------

def solve_weights(offsets: np.ndarray) -> np.ndarray:
    """Weights for estimating a value at the origin from samples at
    ``offsets`` (n x 2, as dy, dx).

    Minimizes ``sum(d_i^2 w_i^2)`` subject to ``sum(w) = 1``, zero weighted
    centroid and ``w >= 0``. The result is a convex, distance-weighted
    average that reproduces affine signals exactly. If the origin is outside
    the samples' hull the centroid constraint is dropped (inverse-square
    distance weighting).
    """
    off = np.asarray(offsets, dtype=np.float64).reshape(-1, 2)
    d2 = np.sum(off ** 2, axis=1)
    if np.any(d2 == 0):
        w = (d2 == 0).astype(np.float64)
        return w / w.sum()
    active = np.ones(len(off), dtype=bool)
    while active.sum() >= 3:
        A = np.vstack([np.ones(active.sum()), off[active].T])
        inv_d = 1.0 / d2[active]
        M = (A * inv_d) @ A.T
        if abs(np.linalg.det(M)) < 1e-9:
            break
        lam = np.linalg.solve(M, np.array([1.0, 0.0, 0.0]))
        wa = inv_d * (A.T @ lam)
        if wa.min() >= -1e-12:
            w = np.zeros(len(off))
            w[active] = np.maximum(wa, 0.0)
            return w / w.sum()
        idx = np.flatnonzero(active)
        active[idx[np.argmin(wa)]] = False
    w = 1.0 / d2
    return w / w.sum()


def _surrounds(offsets: np.ndarray, weights: np.ndarray) -> bool:
    return bool(np.all(np.abs(weights @ offsets) < 1e-9))


@lru_cache(maxsize=4096)
def _weights_for_window(window_bits: bytes, size: int, min_radius: int) -> np.ndarray:
    """Weights over a flattened window; uses the smallest centered
    sub-window (radius >= ``min_radius``) whose samples surround the center."""
    r = size // 2
    win = np.unpackbits(np.frombuffer(window_bits, dtype=np.uint8))[: size * size].reshape(size, size)
    full = np.zeros((size, size))
    for rr in range(min(min_radius, r), r + 1):
        sub = np.zeros_like(win)
        sub[r - rr:r + rr + 1, r - rr:r + rr + 1] = win[r - rr:r + rr + 1, r - rr:r + rr + 1]
        dy, dx = np.nonzero(sub)
        if dy.size == 0:
            continue
        offsets = np.stack([dy - r, dx - r], axis=1).astype(np.float64)
        wts = solve_weights(offsets)
        if _surrounds(offsets, wts) or rr == r:
            full[:] = 0.0
            full[dy, dx] = wts
            break
    return full.ravel()


def interpolate_missing(values: np.ndarray, measured: np.ndarray, targets: np.ndarray,
                        radius: int, period: int = 4, min_radius: int | None = None) -> np.ndarray:
    """Estimate ``values`` at ``targets`` from ``measured`` samples within a
    ``(2r+1)^2`` window, mirror padded. With ``min_radius`` the window starts
    at that radius and only grows where its samples do not surround the
    pixel.

    ``measured`` must be ``period``-periodic; the interior is processed one
    pattern phase at a time with fixed weights, the border band per window
    configuration. Entries outside ``targets`` are returned as 0.
    """
    h, w = values.shape
    r = radius
    size = 2 * r + 1
    r_min = r if min_radius is None else min_radius
    vpad = np.pad(values.astype(np.float64), r, mode="reflect")
    mpad = np.pad(measured, r, mode="reflect")
    out = np.zeros((h, w))

    interior = np.zeros((h, w), dtype=bool)
    interior[r:h - r, r:w - r] = True

    for py in range(period):
        for px in range(period):
            y0 = r + (py - r) % period
            x0 = r + (px - r) % period
            if y0 >= h - r or x0 >= w - r:
                continue
            sel = (slice(y0, h - r, period), slice(x0, w - r, period))
            tmask = targets[sel]
            if not tmask.any():
                continue
            win = mpad[y0:y0 + size, x0:x0 + size]
            wts = _weights_for_window(np.packbits(win).tobytes(), size, r_min).reshape(size, size)
            est = np.zeros(tmask.shape)
            ny, nx = tmask.shape
            for dy, dx in zip(*np.nonzero(wts)):
                est += wts[dy, dx] * vpad[y0 + dy:y0 + dy + period * ny:period,
                                          x0 + dx:x0 + dx + period * nx:period]
            out[sel] = np.where(tmask, est, 0.0)

    ys, xs = np.nonzero(targets & ~interior)
    if ys.size:
        gy, gx = np.mgrid[0:size, 0:size]
        iy = ys[:, None] + gy.ravel()[None]
        ix = xs[:, None] + gx.ravel()[None]
        wins = mpad[iy, ix]
        keys = np.packbits(wins, axis=1)
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        table = np.stack([_weights_for_window(k.tobytes(), size, r_min) for k in uniq])
        out[ys, xs] = np.sum(table[inverse.ravel()] * vpad[iy, ix], axis=1)
    return out


def remosaic_bilinear(rgbw: RawImage) -> RawImage:
    """Fill each required channel with a distance-weighted convex average of
    measured same-channel samples in a 5x5 window.

    For R and B the 5x5 window sometimes holds only two collinear samples
    beside the pixel; there it widens to 7x7 so affine signals still
    reconstruct exactly.
    """
    f = scatter(rgbw)
    h, w = rgbw.height, rgbw.width
    need = _bayer_needs(h, w)
    out = np.zeros((h, w))
    for c in (Channel.R, Channel.G, Channel.B):
        here = need == c
        out[here & f.measured[c]] = f.values[c][here & f.measured[c]]
        targets = here & ~f.measured[c]
        est = interpolate_missing(f.values[c], f.measured[c], targets, radius=3, min_radius=2)
        out[targets] = est[targets]
    return _to_bayer(rgbw, out)


def interpolate_white(f: ChannelField) -> np.ndarray:
    """Full-resolution W. W sites form a checkerboard, so every other site
    is the mean of its four axis neighbours."""
    w_meas = f.measured[Channel.W]
    wpad = np.pad(f.values[Channel.W], 1, mode="reflect")
    cross = (wpad[:-2, 1:-1] + wpad[2:, 1:-1] + wpad[1:-1, :-2] + wpad[1:-1, 2:]) / 4.0
    return np.where(w_meas, f.values[Channel.W], cross)


def remosaic_wguided(rgbw: RawImage, radius: int = 4) -> RawImage:
    """Color-difference interpolation guided by the dense white channel.

    W is interpolated to every pixel, then ``C - W`` is interpolated from
    the measured sites of each color ``C`` and added back onto W.
    """
    f = scatter(rgbw)
    h, w = rgbw.height, rgbw.width
    w_hat = interpolate_white(f)
    need = _bayer_needs(h, w)
    out = np.zeros((h, w))
    for c in (Channel.R, Channel.G, Channel.B):
        here = need == c
        meas = f.measured[c]
        out[here & meas] = f.values[c][here & meas]
        targets = here & ~meas
        diff = np.where(meas, f.values[c] - w_hat, 0.0)
        d_hat = interpolate_missing(diff, meas, targets, radius)
        out[targets] = w_hat[targets] + d_hat[targets]
    return _to_bayer(rgbw, out)


def denoise_prefilter(img: RawImage, strength: float) -> RawImage:
    """Gaussian smoothing of each pixel-shuffled plane, so that only samples
    of the same CFA phase are mixed. ``strength`` is the sigma in plane
    pixels; 0 is the identity."""
    if strength <= 0:
        return img
    stack = pixel_shuffle(img)
    smoothed = np.stack([
        ndimage.gaussian_filter(p.astype(np.float64), strength, mode="mirror")
        for p in stack.planes
    ])
    planes = np.clip(np.floor(smoothed + 0.5), 0, img.white_level).astype(np.uint16)
    return pixel_unshuffle(PlaneStack(planes, stack.labels), img.pattern, bit_depth=img.bit_depth,
                           black_level=img.black_level, white_level=img.white_level)


_BUILTINS = {
    "nearest": lambda img, p: remosaic_nearest(img),
    "bilinear": lambda img, p: remosaic_bilinear(img),
    "wguided": lambda img, p: remosaic_wguided(img, int(p.get("radius", 4))),
}


def apply_builtin(algo: RemosaicAlgo, rgbw: RawImage) -> RawImage:
    strength = float(algo.params.get("denoise", 0.0))
    if strength > 0:
        rgbw = denoise_prefilter(rgbw, strength)
    return _BUILTINS[algo.kind](rgbw, algo.params)


def validate_output(out: RawImage, ref: RawImage) -> None:
    if out.pattern != BAYER_GBRG:
        raise RemosaicFailure(f"output pattern is {out.pattern.name}, expected BAYER_GBRG")
    if out.size != ref.size:
        raise RemosaicFailure(
            f"output is {out.width}x{out.height}, input is {ref.width}x{ref.height}"
        )


def run_plugin(command: str, in_path: str | Path, out_path: str | Path,
               timeout: float = DEFAULT_PLUGIN_TIMEOUT) -> tuple[float, str]:
    """Run ``command <in> <out>``. Returns (wall-clock seconds including
    process start-up, combined stdout/stderr)."""
    argv = shlex.split(command) + [str(in_path), str(out_path)]
    t0 = time.perf_counter()
    try:
        proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout)
    except subprocess.TimeoutExpired:
        raise RemosaicFailure(f"plugin timed out after {timeout:g} s") from None
    except OSError as exc:
        raise RemosaicFailure(f"plugin could not start: {exc}") from None
    elapsed = time.perf_counter() - t0
    output = (proc.stdout or "") + (proc.stderr or "")
    if output.strip():
        log.info("plugin %s: %s", argv[0], output.strip())
    if proc.returncode != 0:
        raise RemosaicFailure(f"plugin exited with status {proc.returncode}: {output.strip()[-500:]}")
    return elapsed, output


def run_remosaic(algo: RemosaicAlgo, in_path: str | Path, out_path: str | Path) -> float:
    """Remosaic one file and return the measured runtime in seconds.

    Builtins are timed around the algorithm only (file I/O excluded);
    plugins are timed over the whole subprocess lifetime.
    """
    rgbw = read_mraw(in_path)
    if algo.kind == "plugin":
        Path(out_path).unlink(missing_ok=True)
        elapsed, _ = run_plugin(algo.plugin_command, in_path, out_path,
                                float(algo.params.get("timeout", DEFAULT_PLUGIN_TIMEOUT)))
        try:
            out = read_mraw(out_path)
        except FileNotFoundError:
            raise RemosaicFailure(f"plugin wrote no output at {out_path}") from None
        except MrawError as exc:
            raise RemosaicFailure(f"plugin output is not valid MRAW1: {exc}") from None
        validate_output(out, rgbw)
        return elapsed
    t0 = time.perf_counter()
    out = apply_builtin(algo, rgbw)
    elapsed = time.perf_counter() - t0
    write_mraw(out_path, out)
    return elapsed
