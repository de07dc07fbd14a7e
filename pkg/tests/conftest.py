import pytest

from hjvariance.hjb_solver import KineticCost, Payoff


@pytest.fixture
def kinetic():
    return KineticCost()


@pytest.fixture
def drift_payoff():
    return Payoff(eta=(1.0, 0.0))


@pytest.fixture
def flat_payoff():
    return Payoff(eta=(0.0, 0.0))
