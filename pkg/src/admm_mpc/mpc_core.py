"""Linear MPC problem data and the uncondensed QP used by the ADMM solver.

The decision vector is ordered ``z = (u(0), x(1), u(1), x(2), ..., u(N-1), x(N))``
and the QP reads ``min 0.5 z'Hz + x'Qx  s.t.  Gz = Fx,  z_lo <= z <= z_hi``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import dare_solve, lp_maximize, spectral_radius

__all__ = [
    "LinearSystem",
    "BoxSet",
    "MpcSpec",
    "CondensedQp",
    "LqrSolution",
    "MpcProblem",
    "make_spec",
    "lqr_gain",
    "build_qp",
    "ocp_feasible",
    "solve_qp_reference",
    "stage_cost",
    "terminal_cost",
]


def _vec(v):
    return np.atleast_1d(np.asarray(v, dtype=float)).ravel()


@dataclass(frozen=True)
class LinearSystem:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim < 2:
            B = B.reshape(-1, 1)
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise ValueError(f"inconsistent shapes A{A.shape}, B{B.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class BoxSet:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo, hi = _vec(self.lower), _vec(self.upper)
        if lo.shape != hi.shape:
            raise ValueError("lower and upper bounds differ in length")
        if not (np.all(lo < 0) and np.all(hi > 0)):
            raise ValueError("box must contain the origin in its interior")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def symmetric(cls, bound) -> "BoxSet":
        b = _vec(bound)
        return cls(-b, b)

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, v, tol: float = 0.0) -> bool:
        v = _vec(v)
        return bool(np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol))


@dataclass(frozen=True)
class MpcSpec:
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    N: int

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("horizon N must be at least 1")
        for name in ("Q", "R", "P"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), float)))
        if np.linalg.eigvalsh(self.R)[0] <= 0:
            raise ValueError("R must be positive definite")
        if np.linalg.eigvalsh(0.5 * (self.Q + self.Q.T))[0] < -1e-12 * max(1.0, np.abs(self.Q).max()):
            raise ValueError("Q must be positive semidefinite")


def make_spec(system: LinearSystem, Q, R, N: int) -> MpcSpec:
    """Build an :class:`MpcSpec` with ``P`` the DARE solution."""
    Q = np.atleast_2d(np.asarray(Q, float))
    R = np.atleast_2d(np.asarray(R, float))
    P = dare_solve(system.A, system.B, Q, R)
    return MpcSpec(Q, R, P, int(N))


@dataclass(frozen=True)
class LqrSolution:
    K: np.ndarray
    S_cl: np.ndarray


def lqr_gain(system: LinearSystem, spec: MpcSpec) -> LqrSolution:
    """LQR gain ``K = -(R + B'PB)^-1 B'PA`` for the DARE weight in ``spec``."""
    A, B, P = system.A, system.B, spec.P
    W = spec.R + B.T @ P @ B
    if np.linalg.cond(W) > 1e14:
        raise ValueError("R + B'PB is singular")
    K = -np.linalg.solve(W, B.T @ P @ A)
    S_cl = A + B @ K
    rad = spectral_radius(S_cl)
    if rad >= 1.0 - 1e-9:
        raise ValueError(f"(A, B) not stabilizable: LQR closed loop has radius {rad:.6g}")
    return LqrSolution(K, S_cl)


@dataclass(frozen=True)
class CondensedQp:
    H: np.ndarray
    G: np.ndarray
    F: np.ndarray
    bounds: BoxSet
    Q: np.ndarray
    n: int
    m: int
    N: int

    @property
    def p(self) -> int:
        return self.N * self.n

    @property
    def q(self) -> int:
        return self.N * (self.n + self.m)

    def cost(self, z, x) -> float:
        z, x = _vec(z), _vec(x)
        return float(0.5 * z @ self.H @ z + x @ self.Q @ x)

    def unstack(self, z):
        """Split ``z`` into input rows ``(N, m)`` and state rows ``(N, n)``."""
        blocks = _vec(z).reshape(self.N, self.n + self.m)
        return blocks[:, : self.m], blocks[:, self.m :]

    def stack(self, inputs, states) -> np.ndarray:
        inputs = np.asarray(inputs, float).reshape(self.N, self.m)
        states = np.asarray(states, float).reshape(self.N, self.n)
        return np.hstack([inputs, states]).ravel()


def build_qp(system: LinearSystem, X: BoxSet, U: BoxSet, spec: MpcSpec) -> CondensedQp:
    n, m, N = system.n, system.m, spec.N
    if X.dim != n or U.dim != m:
        raise ValueError("constraint boxes do not match system dimensions")
    if spec.Q.shape != (n, n) or spec.R.shape != (m, m) or spec.P.shape != (n, n):
        raise ValueError("weights do not match system dimensions")
    A, B = system.A, system.B
    s = n + m
    p, q = N * n, N * s

    G = np.zeros((p, q))
    for k in range(N):
        rows = slice(k * n, (k + 1) * n)
        G[rows, k * s : k * s + m] = -B
        G[rows, k * s + m : (k + 1) * s] = np.eye(n)
        if k > 0:
            G[rows, (k - 1) * s + m : k * s] = -A
    F = np.zeros((p, n))
    F[:n] = A

    # 0.5 z'Hz must reproduce the stage costs, hence the factor 2.
    blocks = []
    for k in range(N):
        blocks += [2 * spec.R, 2 * (spec.P if k == N - 1 else spec.Q)]
    H = np.zeros((q, q))
    i = 0
    for blk in blocks:
        d = blk.shape[0]
        H[i : i + d, i : i + d] = blk
        i += d

    lower = np.tile(np.concatenate([U.lower, X.lower]), N)
    upper = np.tile(np.concatenate([U.upper, X.upper]), N)
    return CondensedQp(H, G, F, BoxSet(lower, upper), spec.Q.copy(), n, m, N)


def ocp_feasible(qp: CondensedQp, X: BoxSet, x) -> bool:
    """Phase-1 LP: is there a box-feasible ``z`` with ``Gz = Fx``?"""
    x = _vec(x)
    if not X.contains(x):
        return False
    p, q = qp.p, qp.q
    # variables (z, s+, s-), rows: G z + s+ - s- = F x, bounds on z, s >= 0
    C = np.vstack(
        [
            np.hstack([qp.G, np.eye(p), -np.eye(p)]),
            np.hstack([np.eye(q), np.zeros((q, 2 * p))]),
            np.hstack([np.zeros((2 * p, q)), np.eye(2 * p)]),
        ]
    )
    rhs = qp.F @ x
    lo = np.concatenate([rhs, qp.bounds.lower, np.zeros(2 * p)])
    hi = np.concatenate([rhs, qp.bounds.upper, np.full(2 * p, np.inf)])
    obj = np.concatenate([np.zeros(q), -np.ones(2 * p)])
    res = lp_maximize(obj, C, lo, hi)
    return res.optimal and -res.value <= 1e-9


def solve_qp_reference(qp: CondensedQp, x, tol: float = 1e-11, rho: float = 10.0,
                       max_iter: int = 10**6, X: BoxSet | None = None):
    """Solve the QP at state ``x`` by running ADMM to convergence.

    Returns ``(z, mu, V)`` where ``mu`` is the box multiplier of the ADMM
    fixed point and ``V`` the optimal MPC cost.
    """
    from .admm import kkt_factor, solve_to_convergence

    x = _vec(x)
    if X is not None and not ocp_feasible(qp, X, x):
        raise ValueError(f"OCP infeasible at x = {x}")
    factor = kkt_factor(qp, rho)
    z, mu = solve_to_convergence(factor, qp.bounds, x, tol=tol, max_iter=max_iter)
    return z, mu, qp.cost(z, x)


def stage_cost(x, u, spec: MpcSpec) -> float:
    x, u = _vec(x), _vec(u)
    return float(x @ spec.Q @ x + u @ spec.R @ u)


def terminal_cost(x, spec: MpcSpec) -> float:
    x = _vec(x)
    return float(x @ spec.P @ x)


@dataclass(frozen=True)
class MpcProblem:
    """Everything that defines one MPC instance, with derived data cached."""

    system: LinearSystem
    X: BoxSet
    U: BoxSet
    spec: MpcSpec
    lqr: LqrSolution = field(init=False)
    qp: CondensedQp = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "lqr", lqr_gain(self.system, self.spec))
        object.__setattr__(self, "qp", build_qp(self.system, self.X, self.U, self.spec))

    @classmethod
    def from_data(cls, A, B, x_max, u_max, Q, R, N, x_min=None, u_min=None) -> "MpcProblem":
        system = LinearSystem(A, B)
        x_max, u_max = _vec(x_max), _vec(u_max)
        X = BoxSet(-x_max if x_min is None else x_min, x_max)
        U = BoxSet(-u_max if u_min is None else u_min, u_max)
        return cls(system, X, U, make_spec(system, Q, R, N))

    @property
    def n(self) -> int:
        return self.system.n

    @property
    def m(self) -> int:
        return self.system.m

    @property
    def N(self) -> int:
        return self.spec.N
