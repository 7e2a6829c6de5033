import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from projgeom.grid import build_fiber_grid  # noqa: E402


@pytest.fixture(scope="session")
def grid():
    return build_fiber_grid(1, (32, 64))


@pytest.fixture(scope="session")
def coarse_grid():
    return build_fiber_grid(1, (16, 32))
