import numpy as np
import pytest

from admm_mpc.admm import kkt_factor
from admm_mpc.augmented import InitRule, UpdateRule, build_augmented
from admm_mpc.fixtures import ITERATIONS, RHOS, double_integrator
from admm_mpc.invariant_sets import pstar_set, terminal_set

UPDATES = (UpdateRule.SHIFT_LQR, UpdateRule.SHIFT_ZERO, UpdateRule.COPY)
COMBOS = [(u, float(r), M) for u in UPDATES for r in RHOS for M in ITERATIONS]

# acceptance lines reported at the end of the run
_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def problem():
    return double_integrator()


@pytest.fixture(scope="session")
def factors(problem):
    return {float(r): kkt_factor(problem.qp, r) for r in RHOS}


@pytest.fixture(scope="session")
def model_for(problem, factors):
    cache = {}

    def get(update, rho, M, init=InitRule.NAIVE):
        key = (UpdateRule(update), float(rho), int(M), InitRule(init))
        if key not in cache:
            cache[key] = build_augmented(problem.system, problem.qp, factors[float(rho)], M,
                                         key[0], key[3], problem.lqr)
        return cache[key]

    return get


@pytest.fixture(scope="session")
def pstar_for(problem, model_for):
    cache = {}

    def get(update, rho, M):
        key = (UpdateRule(update), float(rho), int(M))
        if key not in cache:
            cache[key] = pstar_set(model_for(*key), problem.X)
        return cache[key]

    return get


@pytest.fixture(scope="session")
def T(problem):
    return terminal_set(problem.system, problem.lqr, problem.X, problem.U)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def record_acceptance(number, passed, detail):
    _ACCEPTANCE[number] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
