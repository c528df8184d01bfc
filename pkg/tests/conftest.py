import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from cosparse.lattice import Image, Lattice  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def square_image():
    """8 x 8 image, a bright 3 x 3 block on a positive background."""
    grid = np.full((8, 8), 0.5)
    grid[2:5, 3:6] = 1.0
    return Image(Lattice((8, 8)), grid.ravel())


@pytest.fixture
def store(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path
