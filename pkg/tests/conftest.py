import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from arasr.text import Alphabet  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def abc():
    """Three letters plus the word separator; blank is index 4."""
    return Alphabet(("a", "b", "c", " "))
