"""Test plugin: writes a valid MRAW1 Bayer of half the input size."""
import sys

import numpy as np

from rgbwkit.cfa import BAYER_GBRG, RawImage, read_mraw, write_mraw

img = read_mraw(sys.argv[1])
small = np.zeros((img.height // 2, img.width // 2), dtype=np.uint16)
write_mraw(sys.argv[2], RawImage(small, BAYER_GBRG, bit_depth=img.bit_depth,
                                 black_level=img.black_level, white_level=img.white_level))
