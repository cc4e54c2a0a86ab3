from pathlib import Path

import hypothesis
import pytest

from tramopt.network import load_scenario

hypothesis.settings.register_profile("ci", max_examples=25, deadline=None)
hypothesis.settings.load_profile("ci")

REPO_ROOT = Path(__file__).resolve().parents[1]
DIAMOND_PATH = REPO_ROOT / "scenarios" / "diamond.json"


@pytest.fixture(scope="session")
def diamond_path() -> Path:
    return DIAMOND_PATH


@pytest.fixture(scope="session")
def diamond():
    return load_scenario(DIAMOND_PATH.read_text())
