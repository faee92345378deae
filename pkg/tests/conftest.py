import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES, key=lambda t: t[0]):
        terminalreporter.write_line(line)


def smooth_image(rng, size):
    """Random smooth RGB image: low-resolution noise upsampled, values in [0, 1]."""
    low = rng.uniform(0, 1, (3, 4, 4))
    img = low.repeat(size // 4, 1).repeat(size // 4, 2)
    img = img + 0.05 * rng.normal(size=img.shape)
    return np.clip(img, 0, 1)


def write_png(path, chw):
    Image.fromarray(np.round(np.clip(chw, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)).save(path)


@pytest.fixture
def tiny_corpus(tmp_path):
    """Twelve 32x32 PNG images."""
    rng = np.random.default_rng(123)
    d = tmp_path / "corpus"
    d.mkdir()
    for i in range(12):
        write_png(d / f"img_{i:02d}.png", smooth_image(rng, 32))
    return d
