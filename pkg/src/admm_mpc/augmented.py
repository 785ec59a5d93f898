"""Closed loop of real-time ADMM MPC as an augmented system.

The augmented state is ``xa = (x, z0, mu0)`` with dimension ``r = n + 2q``.
Each sampling instant runs ``M`` ADMM iterations from ``(z0, mu0)``, applies
the first input of ``z_M`` and warm-starts the next instant with
``(D_z z_M, D_mu mu_M)``.  Around the origin this is the linear map ``S_M``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .admm import GainSequence, KktFactor, _iterate, gain_sequence
from .mpc_core import CondensedQp, LinearSystem, LqrSolution, MpcSpec
from .numerics import eigenvalues

__all__ = [
    "UpdateRule",
    "InitRule",
    "AugmentedModel",
    "Trajectory",
    "update_matrices",
    "init_matrix",
    "build_augmented",
    "closed_loop_step",
    "simulate",
    "explicit_s_matrix",
    "zero_eigenvalue_bound",
    "count_zero_eigenvalues",
    "observability_submatrix",
    "unboundedness_witness",
    "write_trajectory_csv",
]


class UpdateRule(str, Enum):
    COPY = "copy"
    SHIFT_ZERO = "shift-zero"
    SHIFT_LQR = "shift-LQR"


class InitRule(str, Enum):
    NAIVE = "naive"
    ZERO = "zero"
    LQR = "LQR"


def _coerce(enum_cls, value):
    if isinstance(value, enum_cls):
        return value
    for member in enum_cls:
        if str(value).lower().replace("_", "-") == member.value.lower():
            return member
    raise ValueError(f"unknown {enum_cls.__name__}: {value!r}")


def update_matrices(rule, system: LinearSystem, lqr: LqrSolution, N: int):
    """Warm-start matrices ``(D_z, D_mu)`` for the given update rule."""
    rule = _coerce(UpdateRule, rule)
    n, m = system.n, system.m
    q = N * (n + m)
    if rule is UpdateRule.COPY:
        return np.eye(q), np.eye(q)

    # drop the first (u, x) pair and append one predicted step
    keep = q - n - m
    D_z = np.zeros((q, q))
    D_z[:keep, n + m :] = np.eye(keep)
    last_x = slice(q - n, q)
    if rule is UpdateRule.SHIFT_ZERO:
        D_z[keep + m :, last_x] = system.A
    else:
        D_z[keep : keep + m, last_x] = lqr.K
        D_z[keep + m :, last_x] = lqr.S_cl

    D_mu = np.zeros((q, q))
    D_mu[:keep, n + m :] = np.eye(keep)
    return D_z, D_mu


def init_matrix(rule, system: LinearSystem, lqr: LqrSolution, N: int) -> np.ndarray:
    """``D_0`` such that the first warm start is ``z0 = D_0 x0`` (``mu0`` is zero)."""
    rule = _coerce(InitRule, rule)
    n, m = system.n, system.m
    s = n + m
    D0 = np.zeros((N * s, n))
    if rule is InitRule.NAIVE:
        return D0
    T = system.A if rule is InitRule.ZERO else lqr.S_cl
    power = np.eye(n)  # T^k
    for k in range(N):
        if rule is InitRule.LQR:
            D0[k * s : k * s + m] = lqr.K @ power
        power = T @ power
        D0[k * s + m : (k + 1) * s] = power
    return D0


@dataclass(frozen=True)
class AugmentedModel:
    system: LinearSystem
    qp: CondensedQp
    factor: KktFactor
    M: int
    D_z: np.ndarray
    D_mu: np.ndarray
    D_0: np.ndarray
    gains: GainSequence
    A_aug: np.ndarray
    B_aug: np.ndarray
    S_M: np.ndarray
    C_M: np.ndarray
    C_u: np.ndarray
    C_x: np.ndarray
    C_z: np.ndarray
    C_mu: np.ndarray

    @property
    def n(self) -> int:
        return self.system.n

    @property
    def q(self) -> int:
        return self.qp.q

    @property
    def r(self) -> int:
        return self.n + 2 * self.q

    @property
    def rho(self) -> float:
        return self.factor.rho

    def split(self, xa):
        n, q = self.n, self.q
        return xa[:n], xa[n : n + q], xa[n + q :]

    def initial_state(self, x0) -> np.ndarray:
        """``(x0, D_0 x0, 0)``."""
        x0 = np.asarray(x0, float).ravel()
        return np.concatenate([x0, self.D_0 @ x0, np.zeros(self.q)])

    def output_bounds(self, X):
        """Bounds on ``C_M xa``: ``X x Z x Z^M``."""
        zb = self.qp.bounds
        lo = np.concatenate([X.lower, zb.lower] + [zb.lower] * self.M)
        hi = np.concatenate([X.upper, zb.upper] + [zb.upper] * self.M)
        return lo, hi


def build_augmented(system: LinearSystem, qp: CondensedQp, factor: KktFactor, M: int,
                    updates, init="naive", lqr: LqrSolution | None = None) -> AugmentedModel:
    """Assemble the augmented model.

    ``updates`` is an :class:`UpdateRule` (or its name) or an explicit pair
    ``(D_z, D_mu)``; ``init`` is an :class:`InitRule` or an explicit ``D_0``.
    """
    n, m, q, N = system.n, system.m, qp.q, qp.N
    if isinstance(updates, (tuple, list)) and len(updates) == 2 and not isinstance(updates, str):
        D_z, D_mu = (np.asarray(d, float) for d in updates)
    else:
        if lqr is None:
            raise ValueError("an LQR solution is required for named update rules")
        D_z, D_mu = update_matrices(updates, system, lqr, N)
    if isinstance(init, np.ndarray):
        D_0 = init
    else:
        if lqr is None and _coerce(InitRule, init) is not InitRule.NAIVE:
            raise ValueError("an LQR solution is required for this init rule")
        D_0 = init_matrix(init, system, lqr, N)
    if D_z.shape != (q, q) or D_mu.shape != (q, q) or D_0.shape != (q, n):
        raise ValueError("update/initialization matrices have wrong shapes")

    r = n + 2 * q
    C_u = np.hstack([np.eye(m), np.zeros((m, q - m))])
    C_x = np.hstack([np.eye(n), np.zeros((n, 2 * q))])
    C_z = np.hstack([np.zeros((q, n)), np.eye(q), np.zeros((q, q))])
    C_mu = np.hstack([np.zeros((q, n + q)), np.eye(q)])

    A_aug = np.zeros((r, r))
    A_aug[:n, :n] = system.A
    B_aug = np.zeros((r, 2 * q))
    B_aug[:n, :q] = system.B @ C_u
    B_aug[n : n + q, :q] = D_z
    B_aug[n + q :, q:] = D_mu

    gains = gain_sequence(factor, M)
    S_M = A_aug + B_aug @ np.vstack([gains[M], np.zeros((q, r))])
    C_M = np.vstack([C_x, C_z, gains.stacked])
    return AugmentedModel(system, qp, factor, M, D_z, D_mu, D_0, gains,
                          A_aug, B_aug, S_M, C_M, C_u, C_x, C_z, C_mu)


def explicit_s_matrix(model: AugmentedModel) -> np.ndarray:
    """``S_M`` assembled block row by block row from powers of ``rho E11``."""
    f = model.factor
    n, q, M = model.n, model.q, model.M
    rE = f.rho * f.E11
    geo = sum(np.linalg.matrix_power(rE, i) for i in range(M)) @ f.E12F
    pM = np.linalg.matrix_power(rE, M)
    pM1 = np.linalg.matrix_power(rE, M - 1) @ f.mu_gain
    BCu = model.system.B @ model.C_u
    top = np.hstack([model.system.A + BCu @ geo, BCu @ pM, BCu @ pM1])
    mid = np.hstack([model.D_z @ geo, model.D_z @ pM, model.D_z @ pM1])
    return np.vstack([top, mid, np.zeros((q, n + 2 * q))])


def zero_eigenvalue_bound(N: int, n: int, m: int) -> int:
    """Guaranteed number of zero eigenvalues of ``S_M``: ``(2N - 1) n + N m``."""
    return (2 * N - 1) * n + N * m


def count_zero_eigenvalues(S, tol: float = 1e-7) -> int:
    """Eigenvalues of ``S`` with modulus ``<= tol``.

    The trailing zero rows of ``S_M`` are deflated exactly before the
    eigenvalue solve; a defective zero eigenvalue otherwise splits into
    a cluster of radius ``eps**(1/k)``.
    """
    S = np.asarray(S, float)
    zero_rows = np.all(S == 0.0, axis=1)
    # permute zero rows to the bottom; the matching columns then only feed
    # the deflated block, so the spectrum is eig(S[keep, keep]) plus zeros
    keep = ~zero_rows
    count = int(np.sum(zero_rows))
    if np.any(keep):
        count += eigenvalues(S[np.ix_(keep, keep)]).count_below(tol)
    return count


def observability_submatrix(model: AugmentedModel) -> np.ndarray:
    """Square block-triangular matrix ``[C_x; C_z; K_1]`` (full rank iff observable part holds)."""
    return np.vstack([model.C_x, model.C_z, model.gains[1]])


def unboundedness_witness(model: AugmentedModel, z) -> np.ndarray:
    """Augmented state ``(0, z, -rho ((1/rho) I - E11)^-1 E11 z)`` that ``S_M`` and all ``K_j`` annihilate."""
    f = model.factor
    z = np.asarray(z, float)
    mu = -f.rho * np.linalg.solve(f.mu_gain, f.E11 @ z)
    return np.concatenate([np.zeros(model.n), z, mu])


def _step(model: AugmentedModel, xa):
    n, q = model.n, model.q
    x, z, mu = xa[:n], xa[n : n + q], xa[n + q :]
    f = model.factor
    c = f.E12 @ (f.F @ x)
    lo, hi = model.qp.bounds.lower, model.qp.bounds.upper
    for _ in range(model.M):
        z, mu = _iterate(f, lo, hi, c, z, mu)
    u = model.C_u @ z
    x_next = model.system.A @ x + model.system.B @ u
    return np.concatenate([x_next, model.D_z @ z, model.D_mu @ mu]), u, z, mu


def closed_loop_step(model: AugmentedModel, xa) -> np.ndarray:
    return _step(model, np.asarray(xa, float))[0]


@dataclass
class Trajectory:
    states: np.ndarray   # (K+1, r) augmented states
    inputs: np.ndarray   # (K, m)
    costs: np.ndarray    # (K,) stage costs l(x(k), u(k))
    z_norms: np.ndarray
    mu_norms: np.ndarray
    stopped: bool        # predicate fired before the step cap

    @property
    def steps(self) -> int:
        return len(self.inputs)


def simulate(model: AugmentedModel, xa0, max_steps: int, stop=None,
             spec: MpcSpec | None = None) -> Trajectory:
    """Iterate the closed loop until ``stop(k, xa)`` holds or ``max_steps`` steps ran.

    Stage costs need ``spec`` (for ``Q`` and ``R``); otherwise they are NaN.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    xa = np.asarray(xa0, float).copy()
    states, inputs, costs, zn, mn = [xa], [], [], [], []
    stopped = False
    n = model.n
    for k in range(max_steps + 1):
        if stop is not None and stop(k, xa):
            stopped = True
            break
        if k == max_steps:
            break
        x = xa[:n]
        xa, u, z, mu = _step(model, xa)
        inputs.append(u)
        costs.append(float(x @ spec.Q @ x + u @ spec.R @ u) if spec is not None else np.nan)
        zn.append(float(np.linalg.norm(z)))
        mn.append(float(np.linalg.norm(mu)))
        states.append(xa)
    m = model.system.m
    return Trajectory(np.array(states), np.array(inputs).reshape(-1, m), np.array(costs),
                      np.array(zn), np.array(mn), stopped)


def write_trajectory_csv(path, traj: Trajectory, n: int) -> None:
    """Rows ``k, x..., u..., |z|, |mu|, stage cost`` (last row carries the final state only)."""
    m = traj.inputs.shape[1]
    header = ["k"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
    header += ["z_norm", "mu_norm", "stage_cost"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k, xa in enumerate(traj.states):
            row = [k] + [format(float(v), ".17g") for v in xa[:n]]
            if k < traj.steps:
                row += [format(float(v), ".17g") for v in traj.inputs[k]]
                row += [format(float(v), ".17g") for v in
                        (traj.z_norms[k], traj.mu_norms[k], traj.costs[k])]
            else:
                row += [""] * (m + 3)
            w.writerow(row)
