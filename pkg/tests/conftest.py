import numpy as np
import pytest

from hybridlv.models import ConstantVol, HullWhiteParams, HybridModel, HyperbolicVol

SET1 = dict(s0=1.0, a=0.5, sigma2=0.04, theta=0.02, r0=0.02, sigma1=0.2, rho=0.4, maturity=1.0)
SET2 = dict(s0=1.0, a=0.5, sigma2=0.04, theta=0.02, r0=0.02, sigma1=0.2, rho=-0.4, maturity=2.0)
HYP = dict(s0=1.0, a=0.5, sigma2=0.04, theta=0.0375, r0=0.0375, nu=0.2, beta=0.5, maturity=1.0)


def _bshw_model(params):
    rate = HullWhiteParams(a=params["a"], sigma2=params["sigma2"],
                           theta=params["theta"], r0=params["r0"])
    return HybridModel(s0=params["s0"], rate=rate,
                       vol=ConstantVol(params["sigma1"]), rho=params["rho"])


@pytest.fixture(scope="session")
def set1_model():
    return _bshw_model(SET1)


@pytest.fixture(scope="session")
def set2_model():
    return _bshw_model(SET2)


@pytest.fixture(scope="session")
def hyperbolic_model():
    rate = HullWhiteParams(a=HYP["a"], sigma2=HYP["sigma2"], theta=HYP["theta"], r0=HYP["r0"])
    return HybridModel(s0=HYP["s0"], rate=rate,
                       vol=HyperbolicVol(nu=HYP["nu"], beta=HYP["beta"]), rho=-0.3)


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)
