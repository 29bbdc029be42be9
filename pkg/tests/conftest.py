import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def reference_ply():
    """A reference-trained splat PLY, looked up via GAMES_DATA_DIR."""
    data_dir = os.environ.get("GAMES_DATA_DIR")
    if not data_dir:
        pytest.skip("GAMES_DATA_DIR not set; no reference-trained PLY available")
    candidates = sorted(Path(data_dir).glob("**/*.ply"))
    if not candidates:
        pytest.skip(f"no .ply files under GAMES_DATA_DIR={data_dir}")
    return candidates[0]
