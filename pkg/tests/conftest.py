import numpy as np
import pytest
from hypothesis import strategies as st
from scipy.special import ndtr

from gmmtools import GaussianMixture

# Fixed 6-component inputs for the convolution and product experiments.
X6 = GaussianMixture(
    [0.10, 0.20, 0.15, 0.25, 0.20, 0.10],
    np.array([9.0, 9.6, 10.1, 10.5, 11.2, 12.0])[:, None],
    np.array([0.04, 0.06, 0.03, 0.08, 0.05, 0.09])[:, None, None],
)
Y6 = GaussianMixture(
    [0.25, 0.15, 0.10, 0.20, 0.20, 0.10],
    np.array([4.0, 4.5, 4.8, 5.3, 5.9, 6.4])[:, None],
    np.array([0.02, 0.03, 0.05, 0.02, 0.04, 0.03])[:, None, None],
)


def random_mixture(rng, d, k, spread=2.0, min_var=0.05, max_var=1.5):
    """Random valid mixture with covariance eigenvalues in [min_var, max_var]."""
    w = rng.dirichlet(np.ones(k))
    m = rng.uniform(-spread, spread, size=(k, d))
    covs = np.empty((k, d, d))
    for i in range(k):
        q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        ev = rng.uniform(min_var, max_var, size=d)
        covs[i] = (q * ev) @ q.T
    return GaussianMixture(w, m, covs)


@st.composite
def mixtures(draw, dims=(1, 2, 3), max_k=4):
    d = draw(st.sampled_from(dims))
    k = draw(st.integers(1, max_k))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_mixture(np.random.default_rng(seed), d, k)


def cdf_1d(g, x):
    sd = np.sqrt(g.covariances[:, 0, 0])
    return ndtr((np.asarray(x)[..., None] - g.means[:, 0]) / sd) @ g.weights


def grid_1d(g, half_width=12.0, n=6001):
    sd = np.sqrt(g.covariances[:, 0, 0])
    return np.linspace((g.means[:, 0] - half_width * sd).min(), (g.means[:, 0] + half_width * sd).max(), n)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
