import numpy as np
import pytest
from hypothesis import settings

from cslsm.forward import EncodeConfig, encode, generate_masks
from cslsm.phantom import PhantomSpec, generate_phantom

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture(scope="session")
def desk_phantom():
    return generate_phantom(PhantomSpec())


@pytest.fixture(scope="session")
def desk_r4(desk_phantom):
    masks = generate_masks(64, 64, 4)
    return encode(desk_phantom, EncodeConfig(4), masks), masks


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion."""
    def record(number, title, passed, detail=""):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title}" + (f" | {detail}" if detail else "")
        _CRITERIA[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.write_sep("=", "acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
