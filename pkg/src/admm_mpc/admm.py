"""Two-step ADMM iterations on the uncondensed MPC QP.

With ``E = [[H + rho I, G'], [G, 0]]^-1`` precomputed, one iteration is

    zeta   = E11 (rho z - mu) + E12 F x + mu / rho
    z+     = clip(zeta, z_lo, z_hi)
    mu+    = rho (zeta - z+)

which is the classical y/z/mu scheme with the copy variable ``y`` eliminated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mpc_core import BoxSet, CondensedQp
from .numerics import ConvergenceError, numerical_rank

__all__ = [
    "AdmmParams",
    "KktFactor",
    "AdmmState",
    "GainSequence",
    "kkt_factor",
    "project_box",
    "admm_step",
    "admm_run",
    "gain_sequence",
    "iterations_to_accuracy",
    "solve_to_convergence",
    "contraction_measure",
]


@dataclass(frozen=True)
class AdmmParams:
    rho: float
    M: int

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError("M must be an integer >= 1")


@dataclass(frozen=True)
class KktFactor:
    E11: np.ndarray
    E12: np.ndarray
    F: np.ndarray
    rho: float

    @property
    def q(self) -> int:
        return self.E11.shape[0]

    @property
    def E12F(self) -> np.ndarray:
        return self.E12 @ self.F

    @property
    def mu_gain(self) -> np.ndarray:
        """The block ``(1/rho) I - E11`` acting on the multiplier."""
        return np.eye(self.q) / self.rho - self.E11


def kkt_factor(qp: CondensedQp, rho: float) -> KktFactor:
    """Blocks ``E11``, ``E12`` of the inverse KKT matrix via a Schur complement."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    H, G = qp.H, qp.G
    q, p = qp.q, qp.p
    if numerical_rank(G) < p:
        raise np.linalg.LinAlgError("G does not have full row rank")
    Hr = H + rho * np.eye(q)
    W = np.linalg.solve(Hr, np.eye(q))
    WGt = W @ G.T
    schur = G @ WGt
    E12 = np.linalg.solve(schur, WGt.T).T
    E11 = W - E12 @ WGt.T
    E11 = 0.5 * (E11 + E11.T)

    res1 = np.max(np.abs(Hr @ E11 + G.T @ E12.T - np.eye(q)))
    res2 = np.max(np.abs(G @ E11))
    if max(res1, res2) > 1e-9 * max(1.0, np.abs(E11).max() * np.abs(Hr).max()):
        raise np.linalg.LinAlgError("KKT matrix is numerically singular")
    return KktFactor(E11, E12, qp.F.copy(), float(rho))


def project_box(v, bounds: BoxSet) -> np.ndarray:
    return np.minimum(np.maximum(v, bounds.lower), bounds.upper)


@dataclass(frozen=True)
class AdmmState:
    z: np.ndarray
    mu: np.ndarray

    @classmethod
    def zeros(cls, q: int) -> "AdmmState":
        return cls(np.zeros(q), np.zeros(q))


def _iterate(factor: KktFactor, lo, hi, c, z, mu):
    rho = factor.rho
    zeta = factor.E11 @ (rho * z - mu) + c + mu / rho
    z_new = np.minimum(np.maximum(zeta, lo), hi)
    return z_new, rho * (zeta - z_new)


def admm_step(state: AdmmState, x, factor: KktFactor, bounds: BoxSet) -> AdmmState:
    c = factor.E12 @ (factor.F @ np.asarray(x, float))
    z, mu = _iterate(factor, bounds.lower, bounds.upper, c, state.z, state.mu)
    return AdmmState(z, mu)


def admm_run(x, init: AdmmState, M: int, factor: KktFactor, bounds: BoxSet,
             history: bool = False):
    """Run ``M`` iterations from ``init``.

    Returns the final state, or ``(final, [init, s1, ..., sM])`` when
    ``history`` is set.
    """
    c = factor.E12 @ (factor.F @ np.asarray(x, float))
    lo, hi = bounds.lower, bounds.upper
    z, mu = init.z, init.mu
    states = [init] if history else None
    for _ in range(M):
        z, mu = _iterate(factor, lo, hi, c, z, mu)
        if history:
            states.append(AdmmState(z, mu))
    final = AdmmState(z, mu)
    return (final, states) if history else final


@dataclass(frozen=True)
class GainSequence:
    """Linear-regime gains ``K_j`` mapping ``(x, z0, mu0)`` to ``z_j``."""

    gains: tuple

    def __len__(self):
        return len(self.gains)

    def __getitem__(self, j: int) -> np.ndarray:
        # 1-based, matching the iteration counter
        if j < 1:
            raise IndexError("gain indices start at 1")
        return self.gains[j - 1]

    @property
    def stacked(self) -> np.ndarray:
        return np.vstack(self.gains)


def gain_sequence(factor: KktFactor, M: int) -> GainSequence:
    """Closed-form gains ``K_j = [sum_{i<j} (rho E11)^i E12 F, (rho E11)^j, (rho E11)^(j-1) ((1/rho) I - E11)]``."""
    if M < 1:
        raise ValueError("M must be >= 1")
    rE = factor.rho * factor.E11
    E12F = factor.E12F
    q = factor.q
    power = np.eye(q)  # (rho E11)^(j-1)
    acc = np.zeros_like(E12F)  # sum_{i<j-1} (rho E11)^i E12 F
    gains = []
    for _ in range(M):
        acc = acc + power @ E12F
        gains.append(np.hstack([acc, power @ rE, power @ factor.mu_gain]))
        power = power @ rE
    return GainSequence(tuple(gains))


def contraction_measure(state: AdmmState, z_star, mu_star, rho: float) -> float:
    """``rho |z - z*|^2 + |mu - mu*|^2 / rho``, non-increasing along ADMM."""
    dz = state.z - z_star
    dm = state.mu - mu_star
    return float(rho * dz @ dz + dm @ dm / rho)


def solve_to_convergence(factor: KktFactor, bounds: BoxSet, x, tol: float = 1e-11,
                         max_iter: int = 10**6, init: AdmmState | None = None):
    """Iterate until both the step in ``z`` and the ``y - z`` residual are below ``tol``."""
    q = factor.q
    c = factor.E12 @ (factor.F @ np.asarray(x, float))
    lo, hi = bounds.lower, bounds.upper
    rho = factor.rho
    if init is None:
        z, mu = np.zeros(q), np.zeros(q)
    else:
        z, mu = init.z, init.mu
    for _ in range(max_iter):
        z_new, mu_new = _iterate(factor, lo, hi, c, z, mu)
        step = np.max(np.abs(z_new - z))
        resid = np.max(np.abs(mu_new - mu)) / rho
        z, mu = z_new, mu_new
        if max(step, resid) <= tol:
            return z, mu
    raise ConvergenceError(f"ADMM did not reach tolerance {tol} in {max_iter} iterations")


def iterations_to_accuracy(x, init: AdmmState, factor: KktFactor, bounds: BoxSet,
                           z_star, eps: float = 1e-4, max_iter: int = 10**6):
    """First ``j`` with ``|z_j - z*|_2^2 <= eps``, and the state at that point."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    c = factor.E12 @ (factor.F @ np.asarray(x, float))
    lo, hi = bounds.lower, bounds.upper
    z, mu = init.z, init.mu
    for j in range(max_iter + 1):
        d = z - z_star
        if d @ d <= eps:
            return j, AdmmState(z, mu)
        z, mu = _iterate(factor, lo, hi, c, z, mu)
    raise ConvergenceError(f"accuracy {eps} not reached within {max_iter} iterations")
