import numpy as np
import pytest

from cohortfx.glm import DesignMatrix


@pytest.fixture
def rng():
    return np.random.default_rng(20240612)


def random_logistic_instance(seed, n=200, p=5, coef_scale=0.8):
    """Well-conditioned random logistic data for solver checks."""
    r = np.random.default_rng(seed)
    X = r.normal(size=(n, p))
    beta = r.normal(size=p) * coef_scale
    intercept = r.normal() * 0.5
    prob = 1.0 / (1.0 + np.exp(-(intercept + X @ beta)))
    y = (r.random(n) < prob).astype(float)
    # avoid degenerate all-one-class draws
    if y.min() == y.max():
        return random_logistic_instance(seed + 104729, n=n, p=p, coef_scale=coef_scale)
    return DesignMatrix(X, [f"x{j}" for j in range(p)]), y


def random_linear_instance(seed, n=150, p=6, sparsity=None, noise=1.0):
    r = np.random.default_rng(seed)
    X = r.normal(size=(n, p))
    beta = r.normal(size=p)
    if sparsity is not None:
        beta[sparsity:] = 0.0
    y = 0.7 + X @ beta + r.normal(size=n) * noise
    return DesignMatrix(X, [f"x{j}" for j in range(p)]), y, beta
