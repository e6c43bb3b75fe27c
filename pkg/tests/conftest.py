import os
import re

import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# acceptance criteria record one line each here; printed at the end of the run
ACCEPTANCE_LINES = {}


def pytest_addoption(parser):
    parser.addoption("--extended", action="store_true", default=False,
                     help="also run the long acceptance criteria (hours)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--extended"):
        return
    skip = pytest.mark.skip(reason="extended criterion; run with --extended")
    for item in items:
        if "extended" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: (int(re.match(r"\d+", k).group()), k)):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def record():
    """``record(key, ok, detail)`` stores one PASS/FAIL line for the summary."""
    def _record(key: str, ok: bool, detail: str):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {key}: {detail}"
        ACCEPTANCE_LINES[key] = line
        print(line, flush=True)
        return ok
    return _record
