import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from skeff import flows, quantum  # noqa: E402

TWO_CYCLE = (math.pi, 0.0)
BIG_ISLAND = (1.1, math.pi)
DOUBLE_ISLAND = (math.pi + 0.25, 0.0)
CHAOTIC = (0.5, 0.5)

DEFAULT_RATIOS = (math.sqrt(2) / 100, 0.03, 0.04, math.sqrt(2), 3.4, 4.5,
                100 * math.sqrt(2), 101.3, 104.5)


@pytest.fixture
def sm():
    return flows.StandardMap(2.0)


@pytest.fixture
def spin():
    return quantum.spin_kick_model(0.25, 0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
