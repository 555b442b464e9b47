import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from riskpo.game_oracle import solve_gare_value_iteration
from riskpo.models import cartpole_model, illustrative_model
from riskpo.sysid_init import find_initial_gain_for_model

settings.register_profile(
    "riskpo", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("riskpo")


@pytest.fixture(scope="session")
def illus():
    return illustrative_model()


@pytest.fixture(scope="session")
def cart():
    return cartpole_model()


@pytest.fixture(scope="session")
def illus_ref(illus):
    return solve_gare_value_iteration(illus)


@pytest.fixture(scope="session")
def cart_ref(cart):
    return solve_gare_value_iteration(cart)


@pytest.fixture(scope="session")
def illus_K1(illus):
    return find_initial_gain_for_model(illus).K


@pytest.fixture(scope="session")
def cart_K1(cart):
    return find_initial_gain_for_model(cart).K


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
