from pathlib import Path

import pytest

from kglink.storage import load_bundle

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def tiny_bundle_dir() -> Path:
    return DATA_DIR / "tiny_bundle"


@pytest.fixture(scope="session")
def tiny_bundle(tiny_bundle_dir):
    return load_bundle(tiny_bundle_dir)
