"""Command-line entry point: ``admm-mpc {stability,sets,bench,simulate,mstar}``.

Exit codes: 0 success, 1 analysis negative (e.g. an unstable S_M),
2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .admm import kkt_factor
from .analysis import (
    BenchConfig,
    classify_trajectory,
    cost_to_go,
    mpc_trajectory,
    mstar_study,
    run_benchmark,
    sample_feasible_states,
    table_lines,
)
from .augmented import (
    InitRule,
    UpdateRule,
    _coerce,
    build_augmented,
    count_zero_eigenvalues,
    init_matrix,
    observability_submatrix,
    simulate,
    write_trajectory_csv,
    zero_eigenvalue_bound,
)
from .fixtures import DOUBLE_INTEGRATOR
from .invariant_sets import (
    pstar_set,
    polygon_area,
    slice_2d,
    terminal_set,
    write_polygon_csv,
)
from .mpc_core import MpcProblem, ocp_feasible
from .numerics import ConvergenceError, eigenvalues, is_positive_definite, numerical_rank

log = logging.getLogger("admm_mpc")

EXIT_OK, EXIT_NEGATIVE, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


def fmt(v) -> str:
    """17 significant digits: exact round trip for doubles."""
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


@dataclass
class RunConfig:
    problem: dict = field(default_factory=lambda: dict(DOUBLE_INTEGRATOR))
    rho: list = field(default_factory=lambda: [100.0, 10.0, 1.0])
    M: list = field(default_factory=lambda: [1, 5, 10])
    updates: list = field(default_factory=lambda: [u.value for u in
                                                   (UpdateRule.SHIFT_LQR, UpdateRule.SHIFT_ZERO,
                                                    UpdateRule.COPY)])
    inits: list = field(default_factory=lambda: [i.value for i in
                                                 (InitRule.LQR, InitRule.ZERO, InitRule.NAIVE)])
    samples: int = 500
    seed: int = 0
    step_limit: int = 50
    mpc_step_cap: int = 200
    eps: float = 1e-4
    k_cap: int = 500
    threads: int = 1
    warm: str = "stopped"
    grid_points: int = 101
    # optional explicit warm-start matrices: a number means that multiple of I
    override: dict = field(default_factory=dict)
    simulate: dict = field(default_factory=dict)

    def validate(self):
        for u in self.updates:
            _coerce(UpdateRule, u)
        for i in self.inits:
            _coerce(InitRule, i)
        if any(r <= 0 for r in self.rho):
            raise ValueError("rho values must be positive")
        if any(int(m) != m or m < 1 for m in self.M):
            raise ValueError("M values must be integers >= 1")
        if int(self.problem.get("N", 0)) < 1:
            raise ValueError("horizon N must be >= 1")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.warm not in ("stopped", "exact"):
            raise ValueError("warm must be 'stopped' or 'exact'")
        unknown = set(self.override) - {"D_z", "D_mu"}
        if unknown:
            raise ValueError(f"unknown override keys: {sorted(unknown)}")
        return self

    def build_problem(self) -> MpcProblem:
        p = self.problem
        return MpcProblem.from_data(p["A"], p["B"], p["x_max"], p["u_max"], p["Q"], p["R"],
                                    int(p["N"]), x_min=p.get("x_min"), u_min=p.get("u_min"))


def load_config(path=None, **overrides) -> RunConfig:
    data = {}
    if path is not None:
        with open(path) as fh:
            data = json.load(fh)
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    cfg = RunConfig(**data)
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    return cfg.validate()


def _override_matrices(cfg: RunConfig, q: int):
    if not cfg.override:
        return None

    def mat(v, default):
        if v is None:
            return default
        if np.isscalar(v):
            return float(v) * np.eye(q)
        return np.asarray(v, float)

    return mat(cfg.override.get("D_z"), np.eye(q)), mat(cfg.override.get("D_mu"), np.eye(q))


def _updates(cfg, q):
    ov = _override_matrices(cfg, q)
    if ov is not None:
        return [("override", ov)]
    return [(_coerce(UpdateRule, u).value, _coerce(UpdateRule, u)) for u in cfg.updates]


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, int, np.floating, np.integer))
                        and not isinstance(v, bool) else v for v in row])


def cmd_stability(cfg: RunConfig, out: Path) -> int:
    pr = cfg.build_problem()
    n, m, N, q = pr.n, pr.m, pr.N, pr.qp.q
    bound = zero_eigenvalue_bound(N, n, m)
    records = []
    all_stable = True
    print(f"{'update':>10} {'rho':>7} {'M':>3} {'radius':>10} {'zeros':>6} {'bound':>6} "
          f"{'rankE11':>8} {'pd':>4} {'obs':>5}  stable")
    for rho in cfg.rho:
        f = kkt_factor(pr.qp, rho)
        rank_e11 = numerical_rank(f.E11)
        pd = is_positive_definite(f.mu_gain)
        for M in cfg.M:
            for name, upd in _updates(cfg, q):
                model = build_augmented(pr.system, pr.qp, f, int(M), upd, InitRule.NAIVE, pr.lqr)
                radius = eigenvalues(model.S_M).spectral_radius
                zeros = count_zero_eigenvalues(model.S_M)
                obs = numerical_rank(observability_submatrix(model))
                stable = radius < 1.0
                all_stable &= stable
                records.append(dict(update=name, rho=rho, M=int(M), spectral_radius=radius,
                                    zero_eigenvalues=zeros, zero_bound=bound,
                                    rank_E11=rank_e11, rank_E11_expected=N * m,
                                    mu_gain_pd=pd, observability_rank=obs, r=model.r,
                                    stable=stable))
                print(f"{name:>10} {rho:>7g} {int(M):>3} {radius:>10.6f} {zeros:>6} {bound:>6} "
                      f"{rank_e11:>4}/{N * m:<3} {'yes' if pd else 'no':>4} {obs:>5}  "
                      f"{'yes' if stable else 'NO'}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps({"stability": records}, indent=2))
    print(f"zero-eigenvalue bound (2N-1)n+Nm = {bound}")
    print("all stable" if all_stable else "unstable parametrization found")
    return EXIT_OK if all_stable else EXIT_NEGATIVE


def cmd_sets(cfg: RunConfig, out: Path) -> int:
    pr = cfg.build_problem()
    if pr.n != 2:
        raise ValueError("the sets command needs a two-dimensional state")
    sets_dir = out / "sets"
    sets_dir.mkdir(parents=True, exist_ok=True)
    T = terminal_set(pr.system, pr.lqr, pr.X, pr.U, cfg.k_cap)
    poly_T = slice_2d(T)
    area_T = polygon_area(poly_T)
    write_polygon_csv(sets_dir / "T.csv", poly_T)
    (sets_dir / "T.json").write_text(T.to_json())
    report = {"T": {"k_bar": T.k_bar, "area": area_T}, "slices": []}
    print(f"T: k_bar={T.k_bar} area={area_T:.6g}")
    for rho in cfg.rho:
        f = kkt_factor(pr.qp, rho)
        for M in cfg.M:
            for name, upd in _updates(cfg, pr.qp.q):
                model = build_augmented(pr.system, pr.qp, f, int(M), upd, InitRule.NAIVE, pr.lqr)
                ps = pstar_set(model, pr.X, cfg.k_cap)
                tag = f"{name}_rho{rho:g}_M{int(M)}"
                (sets_dir / f"pstar_{tag}.json").write_text(ps.to_json())
                for init in cfg.inits:
                    init = _coerce(InitRule, init)
                    poly = slice_2d(ps, init_matrix(init, pr.system, pr.lqr, pr.N))
                    write_polygon_csv(sets_dir / f"slice_{tag}_{init.value}.csv", poly)
                    area = polygon_area(poly)
                    report["slices"].append(dict(update=name, init=init.value, rho=rho, M=int(M),
                                                 k_bar=ps.k_bar, area=area, ratio=area / area_T))
                    print(f"{name:>10} {init.value:>6} rho={rho:<5g} M={int(M):<3} "
                          f"k_bar={ps.k_bar:<3} ratio={area / area_T:.2f}")
    # gridded feasibility map of the OCP
    g = cfg.grid_points
    x1 = np.linspace(pr.X.lower[0], pr.X.upper[0], g)
    x2 = np.linspace(pr.X.lower[1], pr.X.upper[1], g)
    rows = [(a, b, int(ocp_feasible(pr.qp, pr.X, [a, b]))) for a in x1 for b in x2]
    _write_csv(sets_dir / "feasible_grid.csv", ["x1", "x2", "feasible"], rows)
    (out / "report.json").write_text(json.dumps(report, indent=2))
    return EXIT_OK


def write_bench_csv(path: Path, rows) -> None:
    header = ["line", "updates", "init", "rho", "M", "vol", "cnvg", "perf",
              "cnvg_no_violation", "mstar", "k_bar", "error"]
    _write_csv(path, header, [
        (r.line, r.update_rule, r.init_rule, r.rho, r.M, r.vol_ratio, r.cnvg_ratio,
         r.perf_ratio, r.cnvg_no_violation, r.m_star, r.k_bar, r.error or "")
        for r in rows
    ])


def write_table_csv(path: Path, rows, Ms) -> None:
    """Wide layout, one line per (updates, init, rho), values rounded to 2 decimals."""
    by_line = {}
    for r in rows:
        by_line.setdefault((r.line, r.update_rule, r.init_rule, r.rho), {})[r.M] = r

    def r2(v):
        return "" if v is None else f"{v:.2f}"

    header = ["line", "updates", "init", "rho"]
    for M in Ms:
        header += [f"vol_M{M}", f"cnvg_M{M}", f"perf_M{M}"]
    header.append("mstar")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for key in sorted(by_line):
            cells = by_line[key]
            row = [key[0], key[1], key[2], f"{key[3]:g}"]
            for M in Ms:
                c = cells.get(M)
                row += [r2(c.vol_ratio), r2(c.cnvg_ratio), r2(c.perf_ratio)] if c else ["", "", ""]
            ms = next(iter(cells.values())).m_star
            row.append("" if ms is None else f"{ms:.1f}")
            w.writerow(row)


def read_bench_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_bench(cfg: RunConfig, out: Path) -> int:
    pr = cfg.build_problem()
    bc = BenchConfig(pr, rhos=tuple(cfg.rho), Ms=tuple(int(M) for M in cfg.M),
                     updates=tuple(_coerce(UpdateRule, u) for u in cfg.updates),
                     inits=tuple(_coerce(InitRule, i) for i in cfg.inits),
                     samples=cfg.samples, seed=cfg.seed, step_limit=cfg.step_limit,
                     mpc_step_cap=cfg.mpc_step_cap, eps=cfg.eps, k_cap=cfg.k_cap,
                     threads=cfg.threads, warm=cfg.warm)
    res = run_benchmark(bc, progress=lambda key: log.info("done %s", key))
    out.mkdir(parents=True, exist_ok=True)
    write_bench_csv(out / "results.csv", res.rows)
    write_table_csv(out / "table2.csv", res.rows, bc.Ms)
    report = {
        "samples": [[float(v) for v in x] for x in res.samples],
        "mpc": [{"k_inf": b.k_inf, "cost": b.total_cost} for b in res.baselines],
        "rows": [asdict(r) for r in res.rows],
    }
    (out / "report.json").write_text(json.dumps(report, indent=2))
    for r in res.rows:
        print(f"{r.line:>2} {r.update_rule:>10} {r.init_rule:>5} {r.rho:>5g} M={r.M:<2} "
              f"vol={fmt2(r.vol_ratio)} cnvg={fmt2(r.cnvg_ratio)} perf={fmt2(r.perf_ratio)} "
              f"M*={'' if r.m_star is None else f'{r.m_star:.1f}'}"
              + (f"  ERROR {r.error}" if r.error else ""))
    return EXIT_OK


def fmt2(v):
    return "  -  " if v is None else f"{v:.2f}"


def cmd_simulate(cfg: RunConfig, out: Path, x0=None) -> int:
    pr = cfg.build_problem()
    sim = dict(cfg.simulate)
    x0 = np.asarray(x0 if x0 is not None else sim.get("x0", [0.0] * pr.n), float)
    if x0.size != pr.n:
        raise ValueError(f"x0 must have {pr.n} entries")
    if not ocp_feasible(pr.qp, pr.X, x0):
        raise ValueError(f"x0 = {x0.tolist()} is not feasible for the MPC problem")
    rho = float(sim.get("rho", 100.0))
    M = int(sim.get("M", 5))
    steps = int(sim.get("steps", cfg.step_limit))
    init = _coerce(InitRule, sim.get("init", "zero"))
    f = kkt_factor(pr.qp, rho)
    ov = _override_matrices(cfg, pr.qp.q)
    upd = ov if ov is not None else _coerce(UpdateRule, sim.get("update", "shift-zero"))
    model = build_augmented(pr.system, pr.qp, f, M, upd, init, pr.lqr)
    ps = pstar_set(model, pr.X, cfg.k_cap)
    T = terminal_set(pr.system, pr.lqr, pr.X, pr.U, cfg.k_cap)
    traj = simulate(model, model.initial_state(x0), steps,
                    stop=lambda k, xa: ps.contains(xa), spec=pr.spec)
    base = mpc_trajectory(pr, T, x0, cfg.mpc_step_cap)
    traj_dir = out / "traj"
    traj_dir.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(traj_dir / "admm.csv", traj, pr.n)
    rows = []
    for k, x in enumerate(base.states):
        u = base.z_star[k][: pr.m] if k < base.k_inf else [None] * pr.m
        rows.append([k, *x, *u])
    _write_csv(traj_dir / "mpc.csv", ["k"] + [f"x{i + 1}" for i in range(pr.n)]
               + [f"u{i + 1}" for i in range(pr.m)], rows)
    ctg = cost_to_go(model, pr.spec)
    verdict = classify_trajectory(model, ps, ctg, x0, pr.spec, pr.X, steps)
    report = {"x0": x0.tolist(), "admm": asdict(verdict),
              "mpc": {"k_inf": base.k_inf, "cost": base.total_cost}}
    (out / "report.json").write_text(json.dumps(report, indent=2))
    print(f"ADMM: converged={verdict.converged} k*={verdict.k_star} cost={verdict.total_cost}")
    print(f"MPC:  k_inf={base.k_inf} cost={base.total_cost}")
    return EXIT_OK


def cmd_mstar(cfg: RunConfig, out: Path) -> int:
    pr = cfg.build_problem()
    T = terminal_set(pr.system, pr.lqr, pr.X, pr.U, cfg.k_cap)
    xs = sample_feasible_states(pr.qp, pr.X, cfg.samples, cfg.seed)
    ref = kkt_factor(pr.qp, 10.0)
    baselines = [mpc_trajectory(pr, T, x, cfg.mpc_step_cap, factor=ref) for x in xs]
    factors = {r: kkt_factor(pr.qp, r) for r in cfg.rho}
    rows = []
    lines = table_lines(tuple(_coerce(UpdateRule, u) for u in cfg.updates),
                        tuple(_coerce(InitRule, i) for i in cfg.inits), tuple(cfg.rho))
    for line, upd, init, rho in lines:
        ms = mstar_study(pr, factors[rho], upd, init, baselines, cfg.eps, cfg.warm)
        rows.append((line, upd.value, init.value, rho, ms))
        print(f"{line:>2} {upd.value:>10} {init.value:>5} rho={rho:<5g} M*={ms:.1f}")
    _write_csv(out / "mstar.csv", ["line", "updates", "init", "rho", "mstar"], rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="admm-mpc", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--seed", type=int, help="sampling seed")
    common.add_argument("--samples", type=int, help="number of sampled initial states")
    common.add_argument("--threads", type=int, help="worker threads for the sweep")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("stability", parents=[common], help="Schur stability of S_M over the grid")
    sub.add_parser("sets", parents=[common], help="terminal set, P*_M slices, feasible region")
    sub.add_parser("bench", parents=[common], help="full parametrization benchmark")
    p_sim = sub.add_parser("simulate", parents=[common], help="ADMM and classical MPC trajectories")
    p_sim.add_argument("--x0", type=float, nargs="+", help="initial state")
    sub.add_parser("mstar", parents=[common], help="iterations needed by plain ADMM")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, samples=args.samples, threads=args.threads)
    except (OSError, ValueError, TypeError, KeyError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INPUT
    handlers = {"stability": cmd_stability, "sets": cmd_sets, "bench": cmd_bench,
                "mstar": cmd_mstar}
    try:
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out, args.x0)
        return handlers[args.command](cfg, args.out)
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConvergenceError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
