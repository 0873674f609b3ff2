import numpy as np
import pytest

from dmdlik import rng
from dmdlik.dfm import StateSpaceModel


def loadings(M: int, N: int, seed: int) -> np.ndarray:
    return rng.generator(seed, rng.LOADINGS).standard_normal((M, N))


def two_factor_model(M: int, seed: int = 0, sigma_v: float = 1.0) -> StateSpaceModel:
    return StateSpaceModel(np.diag([0.9, 0.5]), np.eye(2), loadings(M, 2, seed), sigma_v)


def random_stable_model(gen: np.random.Generator, N: int, M: int, sigma_v: float = 1.0, radius: float = 0.9):
    A = gen.standard_normal((N, N))
    A *= radius * gen.uniform(0.2, 1.0) / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-12)
    C = gen.standard_normal((N, N))
    G = gen.standard_normal((M, N))
    return StateSpaceModel(A, C, G, sigma_v)


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
