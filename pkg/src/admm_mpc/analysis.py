"""Closed-loop performance analysis and the parametrization benchmark.

Compares real-time ADMM MPC against fully converged MPC on sampled initial
states: convergence into the invariant linear regime, infinite-horizon cost
ratios, invariant-set slice areas and the iteration counts plain ADMM would
need to reach a fixed accuracy.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .admm import AdmmState, KktFactor, iterations_to_accuracy, kkt_factor, solve_to_convergence
from .augmented import (
    AugmentedModel,
    InitRule,
    UpdateRule,
    build_augmented,
    init_matrix,
    simulate,
    update_matrices,
)
from .invariant_sets import AdmissibleSet, pstar_set, polygon_area, slice_2d, terminal_set
from .mpc_core import BoxSet, CondensedQp, MpcProblem, MpcSpec, ocp_feasible, stage_cost, terminal_cost
from .numerics import ConvergenceError, dlyap_solve

log = logging.getLogger(__name__)

__all__ = [
    "CostToGo",
    "TrajectoryVerdict",
    "MpcTrajectory",
    "BenchConfig",
    "BenchRow",
    "cost_to_go",
    "sample_feasible_states",
    "classify_trajectory",
    "mpc_trajectory",
    "performance_ratio",
    "mstar_study",
    "run_benchmark",
    "table_lines",
]


@dataclass(frozen=True)
class CostToGo:
    Q_bold: np.ndarray
    P_bold: np.ndarray

    def __call__(self, xa) -> float:
        xa = np.asarray(xa, float)
        return float(xa @ self.P_bold @ xa)


def cost_to_go(model: AugmentedModel, spec: MpcSpec) -> CostToGo:
    """Quadratic cost-to-go of the linear regime via a discrete Lyapunov equation."""
    CuK = model.C_u @ model.gains[model.M]
    Qb = model.C_x.T @ spec.Q @ model.C_x + CuK.T @ spec.R @ CuK
    Qb = 0.5 * (Qb + Qb.T)
    return CostToGo(Qb, dlyap_solve(model.S_M, Qb))


def sample_feasible_states(qp: CondensedQp, X: BoxSet, count: int, seed: int,
                           max_draws: int = 10**6) -> np.ndarray:
    """Uniform rejection sampling over ``X`` keeping states with a feasible OCP."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    draws = 0
    while len(out) < count:
        if draws >= max_draws:
            raise RuntimeError(
                f"only {len(out)} feasible states in {draws} draws; check the problem data"
            )
        x = rng.uniform(X.lower, X.upper)
        draws += 1
        if ocp_feasible(qp, X, x):
            out.append(x)
    return np.array(out)


@dataclass(frozen=True)
class TrajectoryVerdict:
    converged: bool
    k_star: int | None
    total_cost: float | None
    state_violation: bool


def classify_trajectory(model: AugmentedModel, pstar: AdmissibleSet, ctg: CostToGo, x0,
                        spec: MpcSpec, X: BoxSet, limit: int = 50) -> TrajectoryVerdict:
    """Run the real-time closed loop from ``(x0, D_0 x0, 0)`` until it enters ``pstar``."""
    if limit < 1:
        raise ValueError("limit must be >= 1")
    traj = simulate(model, model.initial_state(x0), limit, stop=lambda k, xa: pstar.contains(xa),
                    spec=spec)
    n = model.n
    xs = traj.states[:, :n]
    violation = not all(X.contains(x, tol=1e-9) for x in xs)
    if not traj.stopped:
        return TrajectoryVerdict(False, None, None, violation)
    k_star = traj.steps
    total = float(np.sum(traj.costs)) + ctg(traj.states[-1])
    return TrajectoryVerdict(True, k_star, total, violation)


@dataclass
class MpcTrajectory:
    k_inf: int
    total_cost: float
    states: np.ndarray             # x(0..k_inf)
    z_star: list = field(repr=False)   # optimizer at each state in ``states``
    mu_star: list = field(repr=False)


def mpc_trajectory(problem: MpcProblem, T: AdmissibleSet, x0, step_cap: int = 200,
                   rho: float = 10.0, factor: KktFactor | None = None) -> MpcTrajectory:
    """Classical MPC (QP solved to convergence) from ``x0`` until the state enters ``T``.

    The optimizer at the entry state is solved as well so the trajectory can
    drive warm-start studies.
    """
    if factor is None:
        factor = kkt_factor(problem.qp, rho)
    A, B, m = problem.system.A, problem.system.B, problem.m
    bounds = problem.qp.bounds
    x = np.asarray(x0, float).ravel()
    states, zs, mus = [], [], []
    cost = 0.0
    init = None
    for k in range(step_cap + 1):
        z, mu = solve_to_convergence(factor, bounds, x, init=init)
        states.append(x)
        zs.append(z)
        mus.append(mu)
        if T.contains(x):
            return MpcTrajectory(k, cost + terminal_cost(x, problem.spec), np.array(states), zs, mus)
        if k == step_cap:
            break
        u = z[:m]
        cost += stage_cost(x, u, problem.spec)
        x = A @ x + B @ u
        init = AdmmState(z, mu)
    raise ConvergenceError(f"classical MPC did not reach the terminal set in {step_cap} steps")


def performance_ratio(verdicts, baselines) -> float | None:
    """Mean of ``V_mpc / V_admm`` over converged trajectories, ``None`` if there are none."""
    ratios = [b.total_cost / v.total_cost if v.total_cost > 0 else 1.0
              for v, b in zip(verdicts, baselines) if v.converged]
    if not ratios:
        return None
    return float(np.mean(ratios))


def mstar_study(problem: MpcProblem, factor: KktFactor, update_rule, init_rule, baselines,
                eps: float = 1e-4, warm: str = "stopped") -> float:
    """Mean iterations plain ADMM needs for ``|z - z*|^2 <= eps`` along MPC trajectories.

    ``warm="stopped"`` carries the iterate at which the accuracy was reached
    into the next QP; ``warm="exact"`` uses the exact optimizer instead.
    """
    if warm not in ("stopped", "exact"):
        raise ValueError("warm must be 'stopped' or 'exact'")
    D_z, D_mu = update_matrices(update_rule, problem.system, problem.lqr, problem.N)
    D_0 = init_matrix(init_rule, problem.system, problem.lqr, problem.N)
    bounds = problem.qp.bounds
    q = problem.qp.q
    counts = []
    for traj in baselines:
        state = AdmmState(D_0 @ traj.states[0], np.zeros(q))
        for x, z_star, mu_star in zip(traj.states, traj.z_star, traj.mu_star):
            j, stopped = iterations_to_accuracy(x, state, factor, bounds, z_star, eps)
            counts.append(j)
            if warm == "exact":
                stopped = AdmmState(z_star, mu_star)
            state = AdmmState(D_z @ stopped.z, D_mu @ stopped.mu)
    return float(np.mean(counts))


# Table ordering: updates, then initialization, then rho (descending)
TABLE_UPDATES = (UpdateRule.SHIFT_LQR, UpdateRule.SHIFT_ZERO, UpdateRule.COPY)
TABLE_INITS = (InitRule.LQR, InitRule.ZERO, InitRule.NAIVE)


def table_lines(updates=TABLE_UPDATES, inits=TABLE_INITS, rhos=(100.0, 10.0, 1.0)):
    """``(line, update, init, rho)`` in table order, lines numbered from 1."""
    out = []
    for u in updates:
        for i in inits:
            for r in rhos:
                out.append((len(out) + 1, u, i, float(r)))
    return out


@dataclass
class BenchConfig:
    problem: MpcProblem
    rhos: tuple = (100.0, 10.0, 1.0)
    Ms: tuple = (1, 5, 10)
    updates: tuple = TABLE_UPDATES
    inits: tuple = TABLE_INITS
    samples: int = 500
    seed: int = 0
    step_limit: int = 50
    mpc_step_cap: int = 200
    eps: float = 1e-4
    k_cap: int = 500
    threads: int = 1
    mstar: bool = True
    warm: str = "stopped"


@dataclass
class BenchRow:
    line: int
    update_rule: str
    init_rule: str
    rho: float
    M: int
    vol_ratio: float | None = None
    cnvg_ratio: float | None = None
    perf_ratio: float | None = None
    cnvg_no_violation: float | None = None
    m_star: float | None = None
    k_bar: int | None = None
    error: str | None = None


@dataclass
class BenchResult:
    rows: list
    samples: np.ndarray
    baselines: list
    terminal: AdmissibleSet
    verdicts: dict = field(default_factory=dict)
    sets: dict = field(default_factory=dict)     # (update, rho, M) -> P*_M
    models: dict = field(default_factory=dict)   # (update, rho, M) -> AugmentedModel


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def run_benchmark(cfg: BenchConfig, progress=None) -> BenchResult:
    """Evaluate every (update, init, rho, M) cell on a common set of sampled states."""
    pr = cfg.problem
    if pr.n != 2:
        log.warning("slice volumes need n = 2; vol column will be empty")
    T = terminal_set(pr.system, pr.lqr, pr.X, pr.U, cfg.k_cap)
    area_T = polygon_area(slice_2d(T)) if pr.n == 2 else None
    samples = sample_feasible_states(pr.qp, pr.X, cfg.samples, cfg.seed)
    ref = kkt_factor(pr.qp, 10.0)
    baselines = _map(lambda x: mpc_trajectory(pr, T, x, cfg.mpc_step_cap, factor=ref),
                     samples, cfg.threads)
    lines = table_lines(cfg.updates, cfg.inits, cfg.rhos)
    verdicts, sets, models = {}, {}, {}
    factors = {r: kkt_factor(pr.qp, r) for r in cfg.rhos}
    D0 = {i: init_matrix(i, pr.system, pr.lqr, pr.N) for i in cfg.inits}

    def cell_group(key):
        # one P*_M per (update, rho, M); inits only change the slice and x_aug(0)
        upd, rho, M = key
        out = {}
        try:
            model = build_augmented(pr.system, pr.qp, factors[rho], M, upd, InitRule.NAIVE, pr.lqr)
            ps = pstar_set(model, pr.X, cfg.k_cap)
            ctg = cost_to_go(model, pr.spec)
            sets[key] = ps
            models[key] = model
        except Exception as exc:  # report and keep the sweep going
            log.warning("parametrization %s failed: %s", key, exc)
            for init in cfg.inits:
                out[init] = ({"error": f"{type(exc).__name__}: {exc}"}, None)
            return key, out
        for init in cfg.inits:
            try:
                m_init = build_augmented(pr.system, pr.qp, factors[rho], M,
                                         (model.D_z, model.D_mu), D0[init])
                vs = [classify_trajectory(m_init, ps, ctg, x0, pr.spec, pr.X, cfg.step_limit)
                      for x0 in samples]
                vals = {
                    "vol_ratio": polygon_area(slice_2d(ps, D0[init])) / area_T if area_T else None,
                    "cnvg_ratio": float(np.mean([v.converged for v in vs])),
                    "cnvg_no_violation": float(np.mean([v.converged and not v.state_violation
                                                         for v in vs])),
                    "perf_ratio": performance_ratio(vs, baselines),
                    "k_bar": ps.k_bar,
                }
                out[init] = (vals, vs)
            except Exception as exc:
                log.warning("cell %s/%s failed: %s", key, init, exc)
                out[init] = ({"error": f"{type(exc).__name__}: {exc}"}, None)
        if progress:
            progress(key)
        return key, out

    keys = [(u, r, M) for u in cfg.updates for r in cfg.rhos for M in cfg.Ms]
    results = dict(_map(cell_group, keys, cfg.threads))

    mstars = {}
    if cfg.mstar:
        def one(key):
            upd, init, rho = key
            try:
                return key, mstar_study(pr, factors[rho], upd, init, baselines, cfg.eps, cfg.warm)
            except Exception as exc:
                log.warning("M* study %s failed: %s", key, exc)
                return key, None
        mstars = dict(_map(one, [(u, i, r) for _, u, i, r in lines], cfg.threads))

    out_rows = []
    for line, upd, init, rho in lines:
        for M in cfg.Ms:
            vals, vs = results[(upd, rho, M)][init]
            row = BenchRow(line, upd.value, init.value, rho, M, m_star=mstars.get((upd, init, rho)))
            for k, v in vals.items():
                setattr(row, k, v)
            out_rows.append(row)
            verdicts[(upd.value, init.value, rho, M)] = vs
    return BenchResult(out_rows, samples, baselines, T, verdicts, sets, models)
