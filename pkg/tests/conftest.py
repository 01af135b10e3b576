import json
import os
import sys

import numpy as np
import pytest

HERE = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, HERE)


@pytest.fixture(scope="session")
def frozen():
    with open(os.path.join(HERE, "data", "frozen.json")) as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def provinces():
    from mortsmooth.graphs import spain_provinces

    return spain_provinces()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_tables(areas, years, ages, sexes=("M",), seed=0, missing=(), base_rate=1e-4,
                pop=(20000, 200000)):
    """CSV texts for a full grid; ``missing`` lists (area, year, age, sex) keys with empty deaths."""
    r = np.random.default_rng(seed)
    c_lines = ["area,year,age_group,sex,deaths"]
    p_lines = ["area,year,age_group,sex,population"]
    miss = set(missing)
    for a in areas:
        for y in years:
            for g in ages:
                for s in sexes:
                    n = int(r.integers(*pop))
                    d = int(r.poisson(n * base_rate))
                    dv = "" if (a, y, g, s) in miss else str(d)
                    c_lines.append(f"{a},{y},{g},{s},{dv}")
                    p_lines.append(f"{a},{y},{g},{s},{n}")
    return "\n".join(c_lines) + "\n", "\n".join(p_lines) + "\n"


AGES8 = ("10-19", "20-29", "30-39", "40-49", "50-59", "60-69", "70-79", "80+")


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
