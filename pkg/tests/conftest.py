from __future__ import annotations

import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def fixture_config():
    from cityrec.experiment import load_config
    from cityrec.synthetic import fixture_path

    return load_config(fixture_path("fixture.cfg"))


@pytest.fixture(scope="session")
def prepared(fixture_config):
    from cityrec.experiment import prepare

    return prepare(fixture_config)


def small_config_text(data_dir, body: str = "", cities: str = "south", strategies: str = "single,ncd:1") -> str:
    """Config over the shipped fixture data with a caller-chosen roster."""
    return f"""\
[data]
checkins = {data_dir}/fixture_checkins.tsv
venues = {data_dir}/fixture_venues.tsv

[split]
train_start = 2012-05-01
train_end = 2012-10-31
test_start = 2012-11-01
test_end = 2012-11-30

[experiment]
cities = {cities}
strategies = {strategies}
seed = 7
{body}"""


@pytest.fixture(scope="session")
def fixture_run(tmp_path_factory, fixture_config):
    """One full pipeline run over the shipped fixture."""
    from cityrec.experiment import run_pipeline

    out = tmp_path_factory.mktemp("fixture_run")
    run_pipeline(fixture_config.with_overrides(out=out))
    return out


# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
