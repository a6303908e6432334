import re
import sys
from pathlib import Path

import numpy as np
import pytest

from mftd.geometry import LBracketGeometry, build_lbracket

sys.path.insert(0, str(Path(__file__).parent))

# 10x10-cell band: L=2 with 0.2 cells, one-cell load strip
TINY = LBracketGeometry(outer_size=2.0, leg_width=0.8, load_length=0.2, nondesign_depth=0.2)


@pytest.fixture(scope="session")
def tiny_grid():
    return build_lbracket(TINY, 0.2)


@pytest.fixture(scope="session")
def desk_grid():
    return build_lbracket(LBracketGeometry(), 0.04)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------- acceptance summary

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = re.match(r"test_criterion_(\d+)_", item.name)
    if m is None:
        return
    n = int(m.group(1))
    title = (item.function.__doc__ or item.name).strip().splitlines()[0]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA[n] = (title, "PASS" if report.outcome == "passed" else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, verdict = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {verdict}  {title}")
