import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stochns.spectral import fourier_model, lp_norm, random_field

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance checks")


@pytest.fixture(scope="session")
def model2():
    return fourier_model(2, 16)


@pytest.fixture(scope="session")
def model3():
    return fourier_model(3, 8)


@pytest.fixture(scope="session")
def u0_unit(model2):
    """Smooth initial field with unit L^4 norm."""
    u0 = random_field(model2, np.random.default_rng(1), decay=2.0)
    return u0 * (1 / lp_norm(u0, 4))


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def record_criterion():
    """Record and print one verdict line per acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
