"""Challenge scoring: PSNR and SSIM on ISP-rendered RGB, KL divergence on
the raw Bayer value histograms, externally supplied LPIPS, and the M4
score ``PSNR * SSIM * 2 ** (1 - LPIPS - KLD)``.

Aggregation averages per-image values, M4 included; M4 is never
recomputed from averaged metrics.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .cfa import RawImage
from .isp import DisplayImage, IspConfig, run_isp

PSNR_CAP = 100.0
M4_MAX = 100.0
KLD_BINS = 256
KLD_EPS = 1e-8

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

METRIC_COLUMNS = ("scene_id", "gain_db", "psnr", "ssim", "lpips", "lpips_source", "kld", "m4")


class LpipsCsvError(ValueError):
    pass


def _check_same_size(a, b, what="images"):
    if (a.width, a.height) != (b.width, b.height):
        raise ValueError(
            f"{what} differ in size: {a.width}x{a.height} vs {b.width}x{b.height}"
        )


def psnr(ref: DisplayImage, test: DisplayImage) -> float:
    _check_same_size(ref, test)
    diff = ref.data.astype(np.float64) - test.data.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(255.0 ** 2 / mse))


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _ssim_plane(x: np.ndarray, y: np.ndarray, win: np.ndarray) -> float:
    r = len(win) // 2

    def filt(a):
        a = ndimage.correlate1d(a, win, axis=0, mode="constant")
        a = ndimage.correlate1d(a, win, axis=1, mode="constant")
        return a[r:-r or None, r:-r or None]

    c1 = (SSIM_K1 * 255.0) ** 2
    c2 = (SSIM_K2 * 255.0) ** 2
    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x * mu_x
    syy = filt(y * y) - mu_y * mu_y
    sxy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(ref: DisplayImage, test: DisplayImage, luma_only: bool = False) -> float:
    """Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5) over
    valid window positions, averaged over the RGB channels."""
    _check_same_size(ref, test)
    if min(ref.width, ref.height) < SSIM_WIN:
        raise ValueError(
            f"SSIM needs images of at least {SSIM_WIN}x{SSIM_WIN}, got {ref.width}x{ref.height}"
        )
    win = gaussian_window()
    a = ref.data.astype(np.float64)
    b = test.data.astype(np.float64)
    if luma_only:
        coeffs = np.array([0.299, 0.587, 0.114])
        return _ssim_plane(a @ coeffs, b @ coeffs, win)
    return float(np.mean([_ssim_plane(a[..., c], b[..., c], win) for c in range(3)]))


def value_histogram(img: RawImage, bins: int = KLD_BINS, eps: float = KLD_EPS) -> np.ndarray:
    """Normalized, eps-smoothed histogram of level-normalized samples."""
    x = (img.data.astype(np.float64) - img.black_level) / (img.white_level - img.black_level)
    counts, _ = np.histogram(np.clip(x, 0.0, 1.0), bins=bins, range=(0.0, 1.0))
    p = counts / counts.sum() + eps
    return p / p.sum()


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """``sum p ln(p / q)`` in nats; terms with p = 0 contribute 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    nz = p > 0
    return float(max(0.0, np.sum(p[nz] * np.log(p[nz] / q[nz]))))


def kld(pred_bayer: RawImage, gt_bayer: RawImage, bins: int = KLD_BINS, eps: float = KLD_EPS) -> float:
    """KL(gt || pred) between raw value histograms."""
    _check_same_size(pred_bayer, gt_bayer, "Bayer images")
    if not (pred_bayer.pattern.is_bayer and gt_bayer.pattern.is_bayer):
        raise ValueError("KLD is computed between Bayer images")
    return kl_divergence(value_histogram(gt_bayer, bins, eps), value_histogram(pred_bayer, bins, eps))


def m4(psnr: float, ssim: float, lpips: float, kld: float) -> float:
    return psnr * ssim * 2.0 ** (1.0 - lpips - kld)


def clamp_m4(value: float) -> float:
    return min(M4_MAX, max(0.0, value))


@dataclass(frozen=True)
class MetricRecord:
    scene_id: str
    gain_db: float
    psnr: float
    ssim: float
    lpips: float
    lpips_source: str  # "external" or "absent"
    kld: float
    m4: float

    @property
    def m4_reported(self) -> float:
        return clamp_m4(self.m4)

    @property
    def m4_clamped(self) -> bool:
        return self.m4_reported != self.m4


def evaluate_pair(pred_bayer: RawImage, gt_bayer: RawImage, isp_config: IspConfig | None = None,
                  lpips: float | None = None, scene_id: str = "", gain_db: float = 0) -> MetricRecord:
    _check_same_size(pred_bayer, gt_bayer, "prediction and ground truth")
    config = isp_config or IspConfig()
    ref_rgb = run_isp(gt_bayer, config)
    test_rgb = run_isp(pred_bayer, config)
    p = psnr(ref_rgb, test_rgb)
    s = ssim(ref_rgb, test_rgb)
    k = kld(pred_bayer, gt_bayer)
    source = "external" if lpips is not None else "absent"
    lp = float(lpips) if lpips is not None else 0.0
    return MetricRecord(scene_id, gain_db, p, s, lp, source, k, m4(p, s, lp, k))


# -- LPIPS ingestion ----------------------------------------------------------

def gain_key(gain_db) -> str:
    return f"{float(gain_db):g}"


def lpips_ingest(source: str | Path | None) -> dict[tuple[str, str], float] | None:
    """Read a ``scene_id,gain_db,lpips`` CSV into ``{(scene, gain): lpips}``.

    Returns None when no source is given or the file does not exist; records
    then carry LPIPS 0 tagged "absent".
    """
    if source is None:
        return None
    path = Path(source)
    if not path.exists():
        return None
    scores: dict[tuple[str, str], float] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["scene_id", "gain_db", "lpips"]:
            raise LpipsCsvError(f"{path}:1: expected header scene_id,gain_db,lpips, got {header}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise LpipsCsvError(f"{path}:{line}: expected 3 fields, got {len(row)}")
            scene, gain, value = (c.strip() for c in row)
            try:
                key = (scene, gain_key(gain))
                score = float(value)
            except ValueError:
                raise LpipsCsvError(f"{path}:{line}: non-numeric gain or lpips in {row}") from None
            if not scene or not math.isfinite(score) or score < 0:
                raise LpipsCsvError(f"{path}:{line}: invalid row {row}")
            if key in scores:
                raise LpipsCsvError(f"{path}:{line}: duplicate entry for scene {scene} at {gain} dB")
            scores[key] = score
    return scores


# -- aggregation ----------------------------------------------------------------

@dataclass(frozen=True)
class AggregateRow:
    n: int
    psnr: float
    ssim: float
    lpips: float
    kld: float
    m4: float
    m4_clamped: int
    lpips_absent: int


def _mean_row(records: Sequence[MetricRecord]) -> AggregateRow:
    n = len(records)

    def mean(values: Iterable[float]) -> float:
        return math.fsum(values) / n

    return AggregateRow(
        n=n,
        psnr=mean(r.psnr for r in records),
        ssim=mean(r.ssim for r in records),
        lpips=mean(r.lpips for r in records),
        kld=mean(r.kld for r in records),
        m4=mean(r.m4_reported for r in records),
        m4_clamped=sum(r.m4_clamped for r in records),
        lpips_absent=sum(r.lpips_source == "absent" for r in records),
    )


def aggregate(records: Sequence[MetricRecord]) -> dict[str, AggregateRow]:
    """Per-gain and overall (key ``"all"``) means of every metric column.

    M4 is the mean of per-image M4 values, each clamped to [0, 100].
    """
    if not records:
        raise ValueError("cannot aggregate an empty list of records")
    out = {}
    for g in sorted({r.gain_db for r in records}):
        out[gain_key(g)] = _mean_row([r for r in records if r.gain_db == g])
    out["all"] = _mean_row(records)
    return out


def format_record(r: MetricRecord) -> list[str]:
    return [r.scene_id, gain_key(r.gain_db), f"{r.psnr:.4f}", f"{r.ssim:.6f}", f"{r.lpips:.4f}",
            r.lpips_source, f"{r.kld:.6f}", f"{r.m4_reported:.4f}"]


def records_to_csv(records: Sequence[MetricRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    for r in records:
        writer.writerow(format_record(r))
    return buf.getvalue()
