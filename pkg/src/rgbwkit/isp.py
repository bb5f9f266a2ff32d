"""Minimal Bayer -> display RGB pipeline: demosaic, white balance, color
matrix, gamma, 8-bit quantization.

The same pipeline renders predictions and ground truth before PSNR/SSIM.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cfa import BAYER_GBRG, RawImage
from .demosaic import RgbImage, demosaic_raw


@dataclass(frozen=True, eq=False)
class IspConfig:
    """``gamma`` is ``"srgb"`` or a power exponent such as 2.2."""

    wb_gains: tuple[float, float, float] = (1.0, 1.0, 1.0)
    ccm: np.ndarray = field(default_factory=lambda: np.eye(3))
    gamma: str | float = "srgb"

    def __post_init__(self):
        gains = tuple(float(g) for g in self.wb_gains)
        if len(gains) != 3 or min(gains) <= 0:
            raise ValueError(f"white-balance gains must be three positive numbers, got {gains}")
        ccm = np.asarray(self.ccm, dtype=np.float64)
        if ccm.shape != (3, 3):
            raise ValueError(f"color matrix must be 3x3, got {ccm.shape}")
        if np.any(np.abs(ccm.sum(axis=1) - 1.0) > 1e-6):
            raise ValueError("color matrix rows must each sum to 1")
        if self.gamma != "srgb" and not (isinstance(self.gamma, (int, float)) and self.gamma > 0):
            raise ValueError(f"gamma must be 'srgb' or a positive exponent, got {self.gamma!r}")
        ccm.flags.writeable = False
        object.__setattr__(self, "wb_gains", gains)
        object.__setattr__(self, "ccm", ccm)

    @classmethod
    def from_dict(cls, d: dict) -> IspConfig:
        gamma = d.get("gamma", "srgb")
        if isinstance(gamma, dict):
            gamma = float(gamma["power"])
        return cls(tuple(d.get("wb", (1.0, 1.0, 1.0))), np.asarray(d.get("ccm", np.eye(3))), gamma)

    def to_dict(self) -> dict:
        gamma = "srgb" if self.gamma == "srgb" else {"power": float(self.gamma)}
        return {"wb": list(self.wb_gains), "ccm": self.ccm.tolist(), "gamma": gamma}

    @classmethod
    def load(cls, path: str | Path) -> IspConfig:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True, eq=False)
class DisplayImage:
    """Interleaved 8-bit RGB, ``data`` shaped ``(height, width, 3)``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or data.shape[2] != 3 or data.dtype != np.uint8:
            raise ValueError(f"expected (h, w, 3) uint8, got {data.shape} {data.dtype}")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def demosaic_full(bayer: RawImage) -> RgbImage:
    if bayer.pattern != BAYER_GBRG:
        raise ValueError(f"ISP expects a GBRG Bayer, got {bayer.pattern.name}")
    return demosaic_raw(bayer)


def apply_wb_ccm(rgb: RgbImage, config: IspConfig) -> RgbImage:
    scaled = rgb.planes * np.asarray(config.wb_gains)[:, None, None]
    if not np.array_equal(config.ccm, np.eye(3)):
        scaled = np.einsum("ij,jhw->ihw", config.ccm, scaled)
    return RgbImage(np.clip(scaled, 0.0, 1.0))


def srgb_encode(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)


def gamma_encode(rgb: RgbImage, config: IspConfig) -> DisplayImage:
    x = np.clip(rgb.planes, 0.0, 1.0)
    if config.gamma == "srgb":
        y = srgb_encode(x)
    else:
        y = np.power(x, 1.0 / float(config.gamma))
    q = np.floor(y * 255.0 + 0.5)
    return DisplayImage(np.clip(q, 0, 255).astype(np.uint8).transpose(1, 2, 0).copy())


def run_isp(bayer: RawImage, config: IspConfig | None = None) -> DisplayImage:
    config = config or IspConfig()
    return gamma_encode(apply_wb_ccm(demosaic_full(bayer), config), config)


def write_ppm(path: str | Path, img: DisplayImage) -> None:
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.data.tobytes())


def read_ppm(path: str | Path) -> DisplayImage:
    buf = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        end = pos
        while not buf[end:end + 1].isspace():
            end += 1
        tokens.append(buf[pos:end])
        pos = end
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: only binary 8-bit PPM (P6, maxval 255) is supported")
    w, h = int(tokens[1]), int(tokens[2])
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h * 3, offset=pos + 1)
    return DisplayImage(data.reshape(h, w, 3).copy())
