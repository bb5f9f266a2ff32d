"""Raw image and CFA pattern types, pattern indexing, pixel (un)shuffle and
the MRAW1 container format.

Channel planes are indexed R=0, G=1, B=2, W=3 everywhere in the package.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class Channel(enum.IntEnum):
    R = 0
    G = 1
    B = 2
    W = 3


@dataclass(frozen=True)
class CfaPattern:
    """Periodic tile of channel labels, stored row-major as ``tile[y][x]``."""

    name: str
    tile: tuple[tuple[Channel, ...], ...]

    def __post_init__(self):
        rows = tuple(tuple(Channel(c) for c in row) for row in self.tile)
        object.__setattr__(self, "tile", rows)
        if len(rows) not in (2, 4) or any(len(r) != len(rows[0]) for r in rows):
            raise ValueError(f"pattern {self.name!r}: tile must be 2 or 4 rows of equal length")
        if len(rows[0]) not in (2, 4):
            raise ValueError(f"pattern {self.name!r}: period_x must be 2 or 4")

    @property
    def period_y(self) -> int:
        return len(self.tile)

    @property
    def period_x(self) -> int:
        return len(self.tile[0])

    @property
    def is_bayer(self) -> bool:
        return all(c != Channel.W for row in self.tile for c in row)

    def channel_map(self, height: int, width: int) -> np.ndarray:
        """Channel index of every pixel of a ``height`` x ``width`` image."""
        tile = np.array(self.tile, dtype=np.int8)
        reps = (-(-height // self.period_y), -(-width // self.period_x))
        return np.tile(tile, reps)[:height, :width]

    def census(self) -> dict[Channel, int]:
        counts = {c: 0 for c in Channel}
        for row in self.tile:
            for c in row:
                counts[c] += 1
        return counts


_G, _B, _R, _W = Channel.G, Channel.B, Channel.R, Channel.W

BAYER_GBRG = CfaPattern("BAYER_GBRG", ((_G, _B), (_R, _G)))

# Block colors follow GBRG at 2x2-block level; the color sits on the main
# diagonal of its block and W on the anti-diagonal.
RGBW_DIAG = CfaPattern(
    "RGBW_DIAG",
    (
        (_G, _W, _B, _W),
        (_W, _G, _W, _B),
        (_R, _W, _G, _W),
        (_W, _R, _W, _G),
    ),
)

# Same block layout with color on the anti-diagonal, for data captured under
# the opposite convention.
RGBW_DIAG_ANTI = CfaPattern(
    "RGBW_DIAG_ANTI",
    (
        (_W, _G, _W, _B),
        (_G, _W, _B, _W),
        (_W, _R, _W, _G),
        (_R, _W, _G, _W),
    ),
)

PATTERN_IDS: dict[int, CfaPattern] = {0: BAYER_GBRG, 1: RGBW_DIAG, 2: RGBW_DIAG_ANTI}
RGBW_PATTERNS = (RGBW_DIAG, RGBW_DIAG_ANTI)


def pattern_id(pattern: CfaPattern) -> int:
    for pid, p in PATTERN_IDS.items():
        if p.tile == pattern.tile:
            return pid
    raise ValueError(f"pattern {pattern.name!r} has no MRAW1 pattern id")


def pattern_from_descriptor(desc: dict) -> CfaPattern:
    """Build a pattern from a config descriptor such as
    ``{"name": "X", "tile": ["GWBW", "WGWB", "RWGW", "WRWG"]}``."""
    rows = []
    for row in desc["tile"]:
        labels = row if not isinstance(row, str) else list(row)
        rows.append(tuple(Channel[str(c).upper()] for c in labels))
    return CfaPattern(desc.get("name", "custom"), tuple(rows))


def pattern_at(pattern: CfaPattern, x: int, y: int) -> Channel:
    if x < 0 or y < 0:
        raise ValueError("pixel indices must be non-negative")
    return pattern.tile[y % pattern.period_y][x % pattern.period_x]


@dataclass(frozen=True, eq=False)
class RawImage:
    """Single-plane mosaiced sensor image.

    ``data`` is a read-only ``(height, width)`` uint16 array.
    """

    data: np.ndarray
    pattern: CfaPattern
    bit_depth: int = 10
    black_level: int = 0
    white_level: int | None = None

    def __post_init__(self):
        if self.white_level is None:
            object.__setattr__(self, "white_level", (1 << self.bit_depth) - 1)
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError(f"raw data must be 2-D, got shape {data.shape}")
        if data.dtype != np.uint16:
            if data.size and (data.min() < 0 or data.max() > 0xFFFF):
                raise ValueError("samples do not fit in uint16")
            data = data.astype(np.uint16)
        h, w = data.shape
        p = self.pattern
        if w % p.period_x or h % p.period_y:
            raise ValueError(
                f"image size {w}x{h} is not a multiple of the {p.name} period "
                f"{p.period_x}x{p.period_y}"
            )
        if not (0 <= self.black_level < self.white_level <= (1 << self.bit_depth) - 1):
            raise ValueError(
                f"invalid levels black={self.black_level} white={self.white_level} "
                f"for {self.bit_depth}-bit data"
            )
        if data.size and int(data.max()) > self.white_level:
            raise ValueError(f"sample {int(data.max())} exceeds white level {self.white_level}")
        if data.flags.writeable:
            data = data.copy()
            data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return self.width, self.height

    def with_data(self, data: np.ndarray, pattern: CfaPattern | None = None) -> RawImage:
        """Same levels and bit depth, new samples (and optionally pattern)."""
        return RawImage(
            data,
            pattern or self.pattern,
            bit_depth=self.bit_depth,
            black_level=self.black_level,
            white_level=self.white_level,
        )

    def __eq__(self, other):
        if not isinstance(other, RawImage):
            return NotImplemented
        return (
            self.pattern == other.pattern
            and self.bit_depth == other.bit_depth
            and self.black_level == other.black_level
            and self.white_level == other.white_level
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class PlaneStack:
    """Sub-sampled planes of a raw image, one per offset within the pattern
    period, ordered row-major by ``(offset_y, offset_x)``."""

    planes: np.ndarray
    labels: tuple[tuple[Channel, int, int], ...] = field(default=())

    @property
    def plane_height(self) -> int:
        return self.planes.shape[1]

    @property
    def plane_width(self) -> int:
        return self.planes.shape[2]

    def __len__(self):
        return self.planes.shape[0]


def pixel_shuffle(img: RawImage) -> PlaneStack:
    p = img.pattern
    ky, kx = p.period_y, p.period_x
    if img.height % ky or img.width % kx:
        raise ValueError(f"image size {img.width}x{img.height} not divisible by {kx}x{ky}")
    h, w = img.height // ky, img.width // kx
    # (h, ky, w, kx) -> (ky, kx, h, w)
    planes = img.data.reshape(h, ky, w, kx).transpose(1, 3, 0, 2).reshape(ky * kx, h, w)
    labels = tuple((p.tile[i][j], j, i) for i in range(ky) for j in range(kx))
    return PlaneStack(np.ascontiguousarray(planes), labels)


def pixel_unshuffle(stack: PlaneStack, pattern: CfaPattern, *, bit_depth: int = 10,
                    black_level: int = 0, white_level: int | None = None) -> RawImage:
    ky, kx = pattern.period_y, pattern.period_x
    planes = np.asarray(stack.planes)
    if planes.ndim != 3:
        raise ValueError("plane stack must be a (n, h, w) array of equally sized planes")
    if planes.shape[0] != ky * kx:
        raise ValueError(
            f"{planes.shape[0]} planes given, pattern {pattern.name} needs {ky * kx}"
        )
    n, h, w = planes.shape
    data = planes.reshape(ky, kx, h, w).transpose(2, 0, 3, 1).reshape(h * ky, w * kx)
    return RawImage(data, pattern, bit_depth=bit_depth, black_level=black_level,
                    white_level=white_level)


# -- MRAW1 container -------------------------------------------------------

MAGIC = b"MIPIRAW1"
_HEADER = struct.Struct("<8sIIHHHBB")
HEADER_SIZE = _HEADER.size  # 24


class MrawError(ValueError):
    """Raised for malformed or truncated MRAW1 files."""


def encode_mraw(img: RawImage) -> bytes:
    header = _HEADER.pack(
        MAGIC, img.width, img.height, img.bit_depth, img.black_level,
        img.white_level, pattern_id(img.pattern), 0,
    )
    return header + img.data.astype("<u2", copy=False).tobytes()


def decode_mraw(buf: bytes, source: str = "<bytes>") -> RawImage:
    if len(buf) < HEADER_SIZE:
        raise MrawError(f"{source}: truncated header, {len(buf)} of {HEADER_SIZE} bytes")
    magic, w, h, depth, black, white, pid, _ = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise MrawError(f"{source}: bad magic {magic!r}")
    if pid not in PATTERN_IDS:
        raise MrawError(f"{source}: unknown pattern id {pid}")
    expected = HEADER_SIZE + 2 * w * h
    if len(buf) != expected:
        raise MrawError(f"{source}: expected {expected} bytes for {w}x{h}, got {len(buf)}")
    data = np.frombuffer(buf, dtype="<u2", offset=HEADER_SIZE).reshape(h, w).astype(np.uint16)
    try:
        return RawImage(data, PATTERN_IDS[pid], bit_depth=depth, black_level=black,
                        white_level=white)
    except ValueError as exc:
        raise MrawError(f"{source}: {exc}") from None


def write_mraw(path: str | Path, img: RawImage) -> None:
    Path(path).write_bytes(encode_mraw(img))


def read_mraw(path: str | Path) -> RawImage:
    path = Path(path)
    return decode_mraw(path.read_bytes(), str(path))
