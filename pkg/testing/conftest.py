#!/usr/bin/env python3
"""
Shared test fixtures
Puts the repo root on the import path and hands out seeded generators.
"""

import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))

from lab_settings import make_rng  # noqa: E402

FIXTURES = ROOT / 'fixtures'
DOCS = ROOT / 'docs'


@pytest.fixture
def rng():
    return make_rng(20240601, 'tests')


@pytest.fixture
def fixture_path():
    return lambda name: FIXTURES / name


@pytest.fixture
def docs_path():
    return lambda name: DOCS / name
