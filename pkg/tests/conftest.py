import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vscreen.dock import Pocket, Site  # noqa: E402
from vscreen.library import synthetic_library  # noqa: E402


@pytest.fixture(scope="session")
def corpus():
    return synthetic_library(200, seed=11)


@pytest.fixture
def single_well():
    return Pocket((Site((1.0, -0.5, 0.25), 1.0, 1.0),), ((-4, -4, -4), (4, 4, 4)), clash_radius=1.0, clash_penalty=1.0)


@pytest.fixture
def small_library(tmp_path):
    path = tmp_path / "lib.smi"
    records = synthetic_library(12, seed=5)
    path.write_text("".join(f"{s}\t{i}\n" for s, i in records))
    return path


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
