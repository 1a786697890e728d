import numpy as np
import pytest

from csvideo.frames import Frame
from csvideo.synthetic import moving_square

_ACCEPTANCE: list[str] = []


def record_acceptance(number, title, passed, detail=""):
    status = "PASS" if passed else "FAIL"
    _ACCEPTANCE.append(f"[{status}] criterion {number}: {title}" + (f" ({detail})" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def qcif_clip():
    return moving_square(176, 144, 12, size=16, velocity=(2.0, 1.0))


@pytest.fixture
def random_frame(rng):
    def make(width=24, height=16):
        return Frame(rng.integers(0, 256, (height, width), dtype=np.uint8))
    return make
