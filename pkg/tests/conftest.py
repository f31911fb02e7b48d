import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import make_trend_fixture


@pytest.fixture(scope="session")
def trend_dataset(tmp_path_factory) -> Path:
    """The 500-image synthetic dataset used by the end-to-end criteria."""
    root = tmp_path_factory.mktemp("trend")
    make_trend_fixture(root)
    return root
