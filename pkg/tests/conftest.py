import json
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

DATA = Path(__file__).resolve().parent.parent / "src" / "revsel" / "data"


@pytest.fixture(scope="session")
def fixture_path():
    return DATA / "fixture_corpus.jsonl"


@pytest.fixture(scope="session")
def fixture_manifest():
    with open(DATA / "fixture_manifest.json", encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def fixture_records(fixture_path):
    from revsel.corpus import load_corpus
    return load_corpus(fixture_path)


@pytest.fixture(scope="session")
def filtered_records(fixture_records):
    from revsel.corpus import apply_filters
    return apply_filters(fixture_records)[0]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
