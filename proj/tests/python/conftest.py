import json
import os
import shutil
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[2]

# Small enough that synth + a few training steps take well under a second.
SMALL_SPEC = {
    "seed": 3,
    "gaussian_count": 12,
    "camera_count": 10,
    "test_every": 5,
    "width": 32,
    "height": 32,
}


@pytest.fixture(scope="session")
def scenes_dir():
    return Path(os.environ.get("NHSPLAT_SCENES", ROOT / "scenes"))


@pytest.fixture(scope="session")
def cli():
    exe = os.environ.get("NHSPLAT_CLI") or shutil.which("nhsplat")
    if not exe:
        pytest.skip("nhsplat executable not found (set NHSPLAT_CLI)")
    return exe


@pytest.fixture
def small_spec(tmp_path):
    p = tmp_path / "small.json"
    p.write_text(json.dumps(SMALL_SPEC))
    return p
