import json
import sys
from pathlib import Path

import numpy as np
import pytest

DATA = Path(__file__).parent / "data"
sys.path.insert(0, str(Path(__file__).parent))

from camfuse.imaging import load_image, load_mask  # noqa: E402
from camfuse.model import load_weights  # noqa: E402


def central_diff(f, x, idx, h=1e-6):
    """Central finite difference of scalar ``f`` w.r.t. ``x[idx]`` (x is mutated and restored)."""
    old = x[idx]
    x[idx] = old + h
    fp = f(x)
    x[idx] = old - h
    fm = f(x)
    x[idx] = old
    return (fp - fm) / (2 * h)


def rel_err(a, b, floor=1e-12):
    return abs(a - b) / max(abs(a), abs(b), floor)


@pytest.fixture(scope="session")
def golden_model():
    return load_weights(DATA / "golden.camf")


@pytest.fixture(scope="session")
def test_image():
    return load_image(DATA / "test_image.png")


@pytest.fixture(scope="session")
def test_mask():
    return load_mask(DATA / "test_mask.png")


@pytest.fixture(scope="session")
def oracle_values():
    return json.loads((DATA / "oracle_values.json").read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

