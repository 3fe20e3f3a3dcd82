import json
from pathlib import Path

import pytest

from sdklint.apidb import load_api_db
from sdklint.report import VetOptions, vet_one
from sdklint.rules import default_rules

HERE = Path(__file__).resolve().parent
DATA = HERE / "data"
FIXTURES = DATA / "fixtures"
GOLDEN = HERE / "golden"
MINI_DB = DATA / "mini-api-versions.xml"


def fixture_path(name: str) -> Path:
    path = FIXTURES / f"{name}.apk"
    assert path.exists(), f"missing fixture {path}; run tools/make_goldens.py"
    return path


def golden(name: str) -> dict:
    return json.loads((GOLDEN / f"{name}.json").read_text())


def golden_names():
    return sorted(p.stem for p in GOLDEN.glob("*.json"))


@pytest.fixture(scope="session")
def mini_db():
    return load_api_db(MINI_DB)


@pytest.fixture(scope="session")
def rules():
    return default_rules()


@pytest.fixture(scope="session")
def vet(mini_db, rules):
    cache = {}

    def run(name, **opts):
        key = (name, tuple(sorted(opts.items())))
        if key not in cache:
            cache[key] = vet_one(fixture_path(name), mini_db, rules, VetOptions(**opts))
        return cache[key]

    return run


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        terminalreporter.write_line(f"CRITERION {number} {RESULTS[number]}")
