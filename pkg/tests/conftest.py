import numpy as np
import pytest

from saemreg.model import ModelParams, default_kappa0, scenario, simulate
from saemreg.splines import make_basis


@pytest.fixture(scope="session")
def shape1():
    return scenario("shape1")


@pytest.fixture(scope="session")
def tiny():
    """One curve, ten points, cubic shape basis of size 4 and a quadratic warp basis of size 3."""
    basis_f = make_basis(4)
    basis_h = make_basis(3, order=3)
    params = ModelParams(
        alpha=np.array([0.0, -20.0, -40.0, 0.0]),
        sigma2=4.0,
        Sigma=np.diag([4.0, 0.01]),
        tau=10.0,
        kappa0=default_kappa0(basis_h),
    )
    dataset, effects = simulate(params, basis_f, basis_h, 1, 10, seed=3)
    return params, basis_f, basis_h, dataset, effects
