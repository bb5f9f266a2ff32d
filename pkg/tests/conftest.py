import sys
from pathlib import Path

import numpy as np
import pytest

from rgbwkit.cfa import BAYER_GBRG, RGBW_DIAG, RawImage
from rgbwkit.datagen import write_dataset

PLUGINS = Path(__file__).parent / "plugins"


def plugin_cmd(script: str, *args: str) -> str:
    """Command line running a helper plugin with the current interpreter."""
    parts = [sys.executable, str(PLUGINS / script), *args]
    return " ".join(f'"{p}"' for p in parts)


def random_raw(rng, h, w, pattern=RGBW_DIAG, bit_depth=10, black_level=0):
    white = (1 << bit_depth) - 1
    data = rng.integers(black_level, white + 1, size=(h, w), dtype=np.uint16)
    return RawImage(data, pattern, bit_depth=bit_depth, black_level=black_level)


def constant_raw(value, h, w, pattern=RGBW_DIAG):
    return RawImage(np.full((h, w), value, dtype=np.uint16), pattern)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Three 96x64 scenes at 0/24/42 dB."""
    root = tmp_path_factory.mktemp("ds")
    write_dataset(root, 3, width=96, height=64, seed=7)
    return root


@pytest.fixture
def gbrg():
    return BAYER_GBRG


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
