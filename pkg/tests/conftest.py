import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

# persistent table cache shared by the whole session (tables are expensive)
os.environ.setdefault("DISLOGAMMA_CACHE_DIR", str(Path(__file__).resolve().parent.parent / ".cache"))

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one verdict line per acceptance criterion, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
