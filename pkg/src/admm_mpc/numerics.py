"""Dense numerical kernels shared by the rest of the package.

Eigenvalues, numerical rank, small linear programs, and the discrete
Riccati / Lyapunov solvers used for terminal weights and cost-to-go.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

__all__ = [
    "ConvergenceError",
    "Spectrum",
    "LpResult",
    "eigenvalues",
    "numerical_rank",
    "lp_maximize",
    "dare_solve",
    "dlyap_solve",
    "is_positive_definite",
]


class ConvergenceError(RuntimeError):
    """An iterative method hit its iteration cap."""


def _as_matrix(m, name="matrix"):
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.ndim != 2 or m.size == 0:
        raise ValueError(f"{name} must be a non-empty 2-D array")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def _as_square(m, name="matrix"):
    m = _as_matrix(m, name)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    return m


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    spectral_radius: float

    def count_below(self, tol: float) -> int:
        """Number of eigenvalues with modulus <= tol."""
        return int(np.sum(np.abs(self.eigenvalues) <= tol))


def eigenvalues(m) -> Spectrum:
    """All eigenvalues of a square matrix (LAPACK Hessenberg + shifted QR)."""
    m = _as_square(m)
    try:
        lam = np.linalg.eigvals(m)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"eigenvalue iteration failed: {exc}") from exc
    return Spectrum(lam, float(np.max(np.abs(lam))))


def spectral_radius(m) -> float:
    return eigenvalues(m).spectral_radius


def numerical_rank(m, tol: float | None = None) -> int:
    """Count singular values above ``tol`` times the largest one.

    The default relative tolerance is ``max(rows, cols) * eps``.
    """
    m = _as_matrix(m)
    if tol is not None and tol <= 0:
        raise ValueError("tol must be positive")
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    if tol is None:
        tol = max(m.shape) * np.finfo(float).eps
    return int(np.sum(s > tol * s[0]))


@dataclass(frozen=True)
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    value: float | None = None
    argument: np.ndarray | None = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def lp_maximize(objective, C, lo, hi) -> LpResult:
    """Maximize ``objective @ x`` subject to ``lo <= C @ x <= hi``.

    Entries of ``lo``/``hi`` may be infinite; equal entries give equality rows.
    The variables themselves are free.
    """
    c = np.asarray(objective, dtype=float).ravel()
    C = np.atleast_2d(np.asarray(C, dtype=float))
    lo = np.asarray(lo, dtype=float).ravel()
    hi = np.asarray(hi, dtype=float).ravel()
    d = c.size
    if C.size == 0:
        C = np.zeros((0, d))
    if C.shape[1] != d or lo.size != C.shape[0] or hi.size != C.shape[0]:
        raise ValueError(
            f"dimension mismatch: objective {d}, constraints {C.shape}, "
            f"bounds {lo.size}/{hi.size}"
        )
    if np.any(lo > hi):
        return LpResult("infeasible")

    eq = lo == hi
    up = ~eq & np.isfinite(hi)
    dn = ~eq & np.isfinite(lo)
    A_ub = np.vstack([C[up], -C[dn]])
    b_ub = np.concatenate([hi[up], -lo[dn]])
    kwargs = {}
    if A_ub.shape[0]:
        kwargs.update(A_ub=A_ub, b_ub=b_ub)
    if np.any(eq):
        kwargs.update(A_eq=C[eq], b_eq=lo[eq])
    res = linprog(-c, bounds=[(None, None)] * d, method="highs", **kwargs)
    if res.status == 0:
        x = np.asarray(res.x)
        return LpResult("optimal", float(c @ x), x)
    if res.status == 2:
        return LpResult("infeasible")
    if res.status == 3:
        return LpResult("unbounded")
    # HiGHS occasionally reports "infeasible or unbounded"; disambiguate
    # with a zero-objective feasibility solve.
    feas = linprog(np.zeros(d), bounds=[(None, None)] * d, method="highs", **kwargs)
    if feas.status == 2:
        return LpResult("infeasible")
    if feas.status == 0 and res.status in (3, 4):
        return LpResult("unbounded")
    raise ConvergenceError(f"LP solver failed: {res.message}")


def dare_solve(A, B, Q, R, tol: float = 1e-13, max_iter: int = 10**6) -> np.ndarray:
    """Stabilizing solution of the discrete algebraic Riccati equation.

    Fixed-point Riccati recursion started from ``P = Q``; stops once the
    relative change drops below ``tol``.
    """
    A = _as_square(A, "A")
    B = _as_matrix(B, "B")
    if B.shape[0] != A.shape[0]:
        B = B.T
    Q = _as_square(Q, "Q")
    R = _as_square(R, "R")
    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        with np.errstate(over="ignore", invalid="ignore"):
            P_new = A.T @ (P - BtP.T @ np.linalg.solve(R + BtP @ B, BtP)) @ A + Q
        P_new = 0.5 * (P_new + P_new.T)
        if not np.all(np.isfinite(P_new)) or np.max(np.abs(P_new)) > 1e150:
            raise ConvergenceError("Riccati recursion diverged; (A, B) is not stabilizable")
        change = np.max(np.abs(P_new - P))
        P = P_new
        if change <= tol * max(1.0, np.max(np.abs(P))):
            return P
    raise ConvergenceError("Riccati recursion did not converge")


def dlyap_solve(S, Q, tol: float = 1e-13, max_iter: int = 200) -> np.ndarray:
    """Solve ``P = Q + S.T @ P @ S`` for Schur-stable ``S`` by doubling.

    ``Q`` only needs to be positive semidefinite.
    """
    S = _as_square(S, "S")
    Q = _as_square(Q, "Q")
    if Q.shape != S.shape:
        raise ValueError("S and Q must have equal shapes")
    if spectral_radius(S) >= 1.0:
        raise ValueError("S is not Schur stable")
    P = 0.5 * (Q + Q.T)
    Mk = S.copy()
    for _ in range(max_iter):
        update = Mk.T @ P @ Mk
        P = P + update
        Mk = Mk @ Mk
        if np.max(np.abs(update)) <= tol * max(1.0, np.max(np.abs(P))):
            return 0.5 * (P + P.T)
    raise ConvergenceError("Lyapunov doubling did not converge")


def is_positive_definite(m, sym_tol: float = 1e-9) -> bool:
    m = _as_square(m)
    scale = max(np.linalg.norm(m, 2), np.finfo(float).tiny)
    if np.max(np.abs(m - m.T)) > sym_tol * scale:
        raise ValueError("matrix is not symmetric")
    lam_min = np.linalg.eigvalsh(0.5 * (m + m.T))[0]
    return bool(lam_min > 1e-12 * scale)
