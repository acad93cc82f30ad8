import sys

import numpy as np
import pytest

from distill_lab import presets
from distill_lab.schedule import NoiseSchedule

TWO_MODE_CFG = """\
[schedule]
t_min = 20

[mixture label:0]
weight = 0.5
component = 0.5, -1.5, 0.5
component = 0.5, 1.5, 0.5

[mixture label:background]
weight = 0.5
component = 1.0, 0.0, 3.0

[distill]
variants = SDS, DSD
condition = label:0
n_steps = 20
n_ddim = 10
cfg_low = 7.5
cfg_high = 7.5
cfg_path = 7.5

[sweep]
seeds = 0..3
"""


@pytest.fixture(scope="session")
def schedule():
    return NoiseSchedule()


@pytest.fixture(scope="session")
def pair():
    return presets.symmetric_pair()


@pytest.fixture(scope="session")
def bench():
    return presets.two_mode_benchmark()


@pytest.fixture(scope="session")
def three():
    return presets.three_mode_2d()


@pytest.fixture(scope="session")
def gauss1():
    return presets.standard_gaussian(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cfg_text():
    return TWO_MODE_CFG


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
