import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from contractive_mpc.contraction import ContractionSpec  # noqa: E402
from contractive_mpc.model import (  # noqa: E402
    DoubleIntegratorParams,
    NonholonomicParams,
    make_nonholonomic,
    make_tightened_double_integrator,
)
from contractive_mpc.objective import nonholonomic_cost  # noqa: E402


@pytest.fixture
def params():
    return NonholonomicParams(rho=4.0, b=10.0, mu=0.05)


@pytest.fixture
def nh(params):
    return make_nonholonomic(params)


@pytest.fixture
def di():
    return make_tightened_double_integrator(DoubleIntegratorParams(tau=0.1, u_bar=1.0, r_bar=1.0))


@pytest.fixture
def spec3():
    return ContractionSpec(gamma=0.95, horizon=3)


@pytest.fixture
def l1(params):
    return nonholonomic_cost("L1", params)


@pytest.fixture
def l2(params):
    return nonholonomic_cost("L2", params)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
