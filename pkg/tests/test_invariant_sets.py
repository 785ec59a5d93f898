import numpy as np
import pytest

from admm_mpc.augmented import InitRule, UpdateRule, closed_loop_step, init_matrix
from admm_mpc.invariant_sets import (
    AdmissibleSet,
    OutputAdmissibleSpec,
    Polygon2D,
    contains,
    linear_regime_set,
    max_admissible_set,
    polygon_area,
    read_polygon_csv,
    sample_in_set,
    slice_2d,
    write_polygon_csv,
)

CHEAP = [(UpdateRule.SHIFT_LQR, 10.0, 1), (UpdateRule.SHIFT_ZERO, 1.0, 5), (UpdateRule.COPY, 10.0, 5)]


def test_zero_dynamics_gives_output_box():
    spec = OutputAdmissibleSpec(np.zeros((2, 2)), np.eye(2), [-1, -2], [1, 2])
    s = max_admissible_set(spec)
    assert s.k_bar == 0
    assert s.contains([0.99, -1.99]) and not s.contains([1.01, 0.0])
    assert polygon_area(slice_2d(s)) == pytest.approx(8.0)


def test_scalar_contraction():
    s = max_admissible_set(OutputAdmissibleSpec([[0.5]], [[1.0]], [-1.0], [1.0]))
    assert s.k_bar == 0
    assert s.contains([1.0]) and not s.contains([1.001])


def test_shift_register_needs_one_extra_layer():
    # x1 sees x2 one step later
    spec = OutputAdmissibleSpec([[0.0, 1.0], [0.0, 0.0]], [[1.0, 0.0]], [-1.0], [1.0])
    s = max_admissible_set(spec)
    assert s.k_bar == 1
    assert s.contains([0.5, -0.9]) and not s.contains([0.5, 1.1])
    assert polygon_area(slice_2d(s)) == pytest.approx(4.0)


def test_spec_validation():
    with pytest.raises(ValueError):
        OutputAdmissibleSpec([[1.5]], [[1.0]], [-1.0], [1.0])
    with pytest.raises(ValueError):
        OutputAdmissibleSpec([[0.5]], [[1.0]], [0.5], [1.0])
    with pytest.raises(ValueError):
        OutputAdmissibleSpec([[0.5]], [[1.0, 1.0]], [-1.0], [1.0])


def _terminal_oracle(problem, x, steps=200):
    S, K = problem.lqr.S_cl, problem.lqr.K
    for _ in range(steps):
        if not (problem.X.contains(x, 1e-12) and problem.U.contains(K @ x, 1e-12)):
            return False
        x = S @ x
    return True


def test_terminal_set_matches_simulation(problem, T):
    assert T.k_bar == 1
    xs = np.linspace(-25, 25, 61) + 0.0137
    vs = np.linspace(-5, 5, 41) + 0.0071
    agree = [T.contains(np.array([a, b]), tol=0.0) == _terminal_oracle(problem, np.array([a, b]))
             for a in xs for b in vs]
    assert all(agree)
    assert contains(T, [0.0, 0.0])


def test_terminal_slice_area(T):
    assert polygon_area(slice_2d(T)) == pytest.approx(10.5177, abs=1e-3)


def test_area_matches_monte_carlo(T):
    poly = slice_2d(T)
    lo, hi = poly.vertices.min(axis=0), poly.vertices.max(axis=0)
    pts = np.random.default_rng(7).uniform(lo, hi, (10**6, 2))
    frac = T.contains_many(pts, tol=0.0).mean()
    mc = frac * np.prod(hi - lo)
    assert abs(mc - polygon_area(poly)) <= 0.01 * polygon_area(poly)


@pytest.mark.parametrize("update,rho,M", CHEAP)
def test_pstar_is_invariant(model_for, pstar_for, update, rho, M):
    model, ps = model_for(update, rho, M), pstar_for(update, rho, M)
    pts = sample_in_set(ps, 1000, np.random.default_rng(1))
    assert ps.contains_many(pts).all()
    nxt = pts @ model.S_M.T
    assert ps.contains_many(nxt).all()
    # inside the set the real-time loop equals the linear map
    for xa in pts[:50]:
        np.testing.assert_allclose(closed_loop_step(model, xa), model.S_M @ xa, atol=1e-9)


@pytest.mark.parametrize("update,rho,M", CHEAP)
def test_pstar_inside_linear_regime(model_for, pstar_for, update, rho, M):
    model, ps = model_for(update, rho, M), pstar_for(update, rho, M)
    pts = sample_in_set(ps, 500, np.random.default_rng(2))
    assert linear_regime_set(model).contains_many(pts).all()


def test_witness_is_outside_pstar(model_for, pstar_for):
    from admm_mpc.augmented import unboundedness_witness

    model = model_for(UpdateRule.SHIFT_LQR, 10.0, 1)
    ps = pstar_for(UpdateRule.SHIFT_LQR, 10.0, 1)
    w = unboundedness_witness(model, np.full(15, 30.0))
    # the linear gains ignore it, but the warm start itself leaves the box
    assert not ps.contains(w)


def test_redetermination_is_idempotent(model_for, pstar_for):
    model = model_for(UpdateRule.SHIFT_LQR, 10.0, 1)
    ps = pstar_for(UpdateRule.SHIFT_LQR, 10.0, 1)
    again = max_admissible_set(OutputAdmissibleSpec(model.S_M, ps.A, ps.lo, ps.hi))
    assert again.k_bar == 0


def test_layers_shrink_the_set(problem, T):
    from admm_mpc.invariant_sets import terminal_set

    one = slice_2d(terminal_set(problem.system, problem.lqr, problem.X, problem.U, k_cap=500))
    C = np.vstack([np.eye(2), problem.lqr.K])
    zero_layer = AdmissibleSet(C, np.r_[problem.X.lower, problem.U.lower],
                               np.r_[problem.X.upper, problem.U.upper], 0)
    assert polygon_area(one) <= polygon_area(slice_2d(zero_layer)) + 1e-12


def test_slice_inside_state_box(problem, pstar_for):
    ps = pstar_for(UpdateRule.SHIFT_ZERO, 1.0, 5)
    D0 = init_matrix(InitRule.ZERO, problem.system, problem.lqr, 5)
    poly = slice_2d(ps, D0)
    assert not poly.empty
    assert np.all(np.abs(poly.vertices) <= problem.X.upper + 1e-9)


def test_unit_box_slice():
    s = AdmissibleSet(np.eye(2), -np.ones(2), np.ones(2), 0)
    poly = slice_2d(s)
    assert len(poly.vertices) == 4
    assert polygon_area(poly) == pytest.approx(4.0)


def test_polygon_area_examples():
    assert polygon_area(Polygon2D(np.array([[0, 0], [1, 0], [0, 1]]))) == pytest.approx(0.5)
    assert polygon_area(Polygon2D(np.zeros((2, 2)))) == 0.0
    assert Polygon2D(np.zeros((0, 2))).empty


def test_unbounded_slice_raises():
    with pytest.raises(ValueError):
        slice_2d(AdmissibleSet(np.array([[1.0, 0.0]]), [-1.0], [1.0], 0))


def test_json_and_csv_round_trip(T, tmp_path):
    back = AdmissibleSet.from_json(T.to_json())
    np.testing.assert_array_equal(back.A, T.A)
    np.testing.assert_array_equal(back.hi, T.hi)
    assert back.k_bar == T.k_bar
    poly = slice_2d(T)
    write_polygon_csv(tmp_path / "p.csv", poly)
    np.testing.assert_array_equal(read_polygon_csv(tmp_path / "p.csv").vertices, poly.vertices)


def test_sample_in_set_stays_inside(T):
    pts = sample_in_set(T, 200, np.random.default_rng(0))
    assert T.contains_many(pts).all()
