import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from admm_mpc.admm import (
    AdmmState,
    admm_run,
    admm_step,
    contraction_measure,
    gain_sequence,
    iterations_to_accuracy,
    kkt_factor,
    project_box,
    solve_to_convergence,
)
from admm_mpc.fixtures import FIGURE_X0, double_integrator
from admm_mpc.mpc_core import BoxSet
from admm_mpc.numerics import numerical_rank

PROBLEM = double_integrator()


def _kkt_oracle_step(qp, rho, z, mu, x):
    """One ADMM iteration through a direct solve of the full KKT system."""
    q, p = qp.q, qp.p
    K = np.block([[qp.H + rho * np.eye(q), qp.G.T], [qp.G, np.zeros((p, p))]])
    y = np.linalg.solve(K, np.concatenate([rho * z - mu, qp.F @ x]))[:q]
    z_new = np.clip(y + mu / rho, qp.bounds.lower, qp.bounds.upper)
    return z_new, mu + rho * (y - z_new)


@pytest.mark.parametrize("rho", [1.0, 10.0, 100.0])
def test_kkt_factor_blocks(rho):
    qp = PROBLEM.qp
    f = kkt_factor(qp, rho)
    Hr = qp.H + rho * np.eye(qp.q)
    np.testing.assert_allclose(Hr @ f.E11 + qp.G.T @ f.E12.T, np.eye(qp.q), atol=1e-12)
    np.testing.assert_allclose(qp.G @ f.E11, 0.0, atol=1e-12)
    np.testing.assert_allclose(qp.G @ f.E12, np.eye(qp.p), atol=1e-12)
    # explicit Schur-complement formula
    Hi = np.linalg.inv(Hr)
    Sc = qp.G @ Hi @ qp.G.T
    E11 = Hi - Hi @ qp.G.T @ np.linalg.solve(Sc, qp.G @ Hi)
    np.testing.assert_allclose(f.E11, E11, atol=1e-12)
    np.testing.assert_allclose(f.E11, f.E11.T, atol=0)
    assert numerical_rank(f.E11) == qp.q - qp.p
    assert np.linalg.eigvalsh(f.mu_gain)[0] > 0


def test_project_box():
    b = BoxSet([-1.0, -2.0], [1.0, 2.0])
    np.testing.assert_array_equal(project_box([3.0, -5.0], b), [1.0, -2.0])
    np.testing.assert_array_equal(project_box([0.5, 0.0], b), [0.5, 0.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([1.0, 10.0, 100.0]))
def test_step_matches_kkt_oracle(seed, rho):
    qp = PROBLEM.qp
    f = kkt_factor(qp, rho)
    r = np.random.default_rng(seed)
    z = r.uniform(-3, 3, qp.q)
    mu = r.uniform(-3, 3, qp.q)
    x = r.uniform(-25, 25, 2)
    got = admm_step(AdmmState(z, mu), x, f, qp.bounds)
    z_ref, mu_ref = _kkt_oracle_step(qp, rho, z, mu, x)
    assert np.max(np.abs(got.z - z_ref)) <= 1e-10 * max(1.0, np.max(np.abs(z_ref)))
    assert np.max(np.abs(got.mu - mu_ref)) <= 1e-10 * max(1.0, np.max(np.abs(mu_ref)))


def test_run_equals_repeated_steps(factors):
    f = factors[10.0]
    bounds = PROBLEM.qp.bounds
    s = AdmmState.zeros(15)
    for _ in range(7):
        s = admm_step(s, FIGURE_X0, f, bounds)
    final, hist = admm_run(FIGURE_X0, AdmmState.zeros(15), 7, f, bounds, history=True)
    np.testing.assert_array_equal(final.z, s.z)
    assert len(hist) == 8


def test_gain_recurrence(factors):
    f = factors[10.0]
    gs = gain_sequence(f, 10)
    n, q = 2, 15
    Cx = np.hstack([np.eye(n), np.zeros((n, 2 * q))])
    for j in range(2, 11):
        # K_j = rho E11 K_{j-1} + E12 F C_x  (mu_{j-1} = 0 in the linear regime)
        np.testing.assert_allclose(gs[j], f.rho * f.E11 @ gs[j - 1] + f.E12F @ Cx, atol=1e-12)
    with pytest.raises(IndexError):
        gs[0]
    assert gs.stacked.shape == (150, 32)


@pytest.mark.parametrize("rho", [1.0, 10.0, 100.0])
def test_linear_regime_iterates_follow_gains(rho):
    """Small states keep every iterate inside the box, so z_j = K_j xa and mu_j = 0."""
    f = kkt_factor(PROBLEM.qp, rho)
    gs = gain_sequence(f, 10)
    r = np.random.default_rng(3)
    for _ in range(10):
        x = r.uniform(-0.05, 0.05, 2)
        z0 = r.uniform(-0.05, 0.05, 15)
        xa = np.concatenate([x, z0, np.zeros(15)])
        _, hist = admm_run(x, AdmmState(z0, np.zeros(15)), 10, f, PROBLEM.qp.bounds, history=True)
        for j in range(1, 11):
            np.testing.assert_allclose(hist[j].z, gs[j] @ xa, atol=1e-12)
            np.testing.assert_allclose(hist[j].mu, 0.0, atol=1e-12)


def test_contraction_is_monotone(factors):
    qp = PROBLEM.qp
    for rho, f in factors.items():
        z_s, mu_s = solve_to_convergence(f, qp.bounds, FIGURE_X0)
        _, hist = admm_run(FIGURE_X0, AdmmState.zeros(15), 300, f, qp.bounds, history=True)
        v = [contraction_measure(s, z_s, mu_s, rho) for s in hist]
        assert all(b <= a + 1e-9 * max(1.0, v[0]) for a, b in zip(v, v[1:]))


def test_fixed_point(factors):
    qp = PROBLEM.qp
    f = factors[10.0]
    z, mu = solve_to_convergence(f, qp.bounds, FIGURE_X0)
    s = admm_step(AdmmState(z, mu), FIGURE_X0, f, qp.bounds)
    np.testing.assert_allclose(s.z, z, atol=1e-9)
    np.testing.assert_allclose(s.mu, mu, atol=1e-8)
    # the optimizer and multiplier do not depend on the penalty parameter
    for rho in (1.0, 100.0):
        z2, mu2 = solve_to_convergence(factors[rho], qp.bounds, FIGURE_X0)
        np.testing.assert_allclose(z2, z, atol=1e-8)
        np.testing.assert_allclose(mu2, mu, atol=1e-6)


def test_small_rho_first_gain_is_lqr():
    f = kkt_factor(PROBLEM.qp, 1e-6)
    # one iteration from zero with rho -> 0 is the unconstrained optimizer
    np.testing.assert_allclose((f.E12F)[:1], PROBLEM.lqr.K, atol=1e-3)


def test_iterations_to_accuracy(factors):
    qp = PROBLEM.qp
    f = factors[10.0]
    z, mu = solve_to_convergence(f, qp.bounds, FIGURE_X0)
    j, _ = iterations_to_accuracy(FIGURE_X0, AdmmState(z, mu), f, qp.bounds, z)
    assert j == 0
    j, s = iterations_to_accuracy(FIGURE_X0, AdmmState.zeros(15), f, qp.bounds, z)
    assert j > 0
    assert np.sum((s.z - z) ** 2) <= 1e-4
    with pytest.raises(ValueError):
        iterations_to_accuracy(FIGURE_X0, AdmmState.zeros(15), f, qp.bounds, z, eps=0.0)


def test_kkt_factor_rejects_bad_rho():
    with pytest.raises(ValueError):
        kkt_factor(PROBLEM.qp, 0.0)
