"""Supervisor tests: constraint assembly, condensing oracle, certification."""
import numpy as np
import pytest

from safedrive import qp
from safedrive.paths import ReferencePath
from safedrive.supervisor import (INACTIVE_BOUND, MpcConfig, ObstacleSpec,
                                  Supervisor, SupervisorState,
                                  _CondensedTemplate,
                                  build_horizon_constraints, condense,
                                  default_config)
from safedrive.vehicle import (DEG, DiscreteLTI, ErrorState, PlantState,
                               RateInput, build_continuous_model,
                               default_params, discretize_exact)


def sparse_horizon_qp(model, q_weight, r_weight, x0, refs, constraints):
    """Independent sparse formulation keeping all states as variables.

    Variables are stacked ``[x_1 .. x_N, u_0 .. u_(N-1)]`` with the dynamics
    as equality constraints; used as the oracle against :func:`condense`.
    """
    a, b, e = model.a_mat, model.b_mat, model.e_mat
    nx, nu = a.shape[0], b.shape[1]
    refs = np.asarray(refs, dtype=float).reshape(-1, e.shape[1])
    n = refs.shape[0]
    nv = nx * n + nu * n

    q_bar = np.kron(np.eye(n), np.asarray(q_weight, dtype=float))
    r_bar = np.kron(np.eye(n), np.asarray(r_weight, dtype=float))
    hessian = np.zeros((nv, nv))
    hessian[:nx * n, :nx * n] = 2.0 * q_bar
    hessian[nx * n:, nx * n:] = 2.0 * r_bar

    a_eq = np.zeros((nx * n, nv))
    b_eq = np.zeros(nx * n)
    for i in range(n):
        ri = slice(i * nx, (i + 1) * nx)
        a_eq[ri, i * nx:(i + 1) * nx] = -np.eye(nx)
        if i > 0:
            a_eq[ri, (i - 1) * nx:i * nx] = a
        else:
            b_eq[ri] -= a @ np.asarray(x0, dtype=float)
        a_eq[ri, nx * n + i * nu:nx * n + (i + 1) * nu] = b
        b_eq[ri] -= e @ refs[i]

    if constraints is None:
        g = np.zeros((0, nv))
        h = np.zeros(0)
    else:
        gx, hx = constraints.g_state, constraints.h_state
        gu, hu = constraints.g_input, constraints.h_input
        g = np.zeros((n * (gx.shape[0] + gu.shape[0]), nv))
        h = np.zeros(g.shape[0])
        row = 0
        for i in range(n):
            g[row:row + gx.shape[0], i * nx:(i + 1) * nx] = gx
            h[row:row + gx.shape[0]] = hx[i]
            row += gx.shape[0]
        for i in range(n):
            g[row:row + gu.shape[0],
              nx * n + i * nu:nx * n + (i + 1) * nu] = gu
            h[row:row + gu.shape[0]] = hu
            row += gu.shape[0]
    return qp.QpProblem(hessian, np.zeros(nv), g, h, a_eq=a_eq, b_eq=b_eq)


def random_small_system(rng, nx=3, nu=2, nr=1):
    a = rng.standard_normal((nx, nx)) * 0.4
    a += np.eye(nx) * 0.5
    b = rng.standard_normal((nx, nu))
    e = rng.standard_normal((nx, nr)) * 0.2
    return DiscreteLTI(a, b, e, 0.1)


class _BoxPoly:
    def __init__(self, nx, nu, n, bound=4.0, u_bound=2.0):
        self.g_state = np.vstack([np.eye(nx), -np.eye(nx)])
        self.h_state = np.full((n, 2 * nx), bound)
        self.g_input = np.vstack([np.eye(nu), -np.eye(nu)])
        self.h_input = np.full(2 * nu, u_bound)


def test_obstacle_rows_activate_only_in_window():
    cfg = default_config()
    obs = ObstacleSpec(118.0, 122.0, 2.0, side=1)
    poly = build_horizon_constraints(obs, 100.0, 2.0, 0.5, cfg, 10.0)
    # all predicted stations 101..110 are before the obstacle
    assert np.all(poly.h_state[:, 0] == INACTIVE_BOUND)

    poly = build_horizon_constraints(obs, 116.0, 2.0, 0.5, cfg, 10.0)
    h_bar = -(2.0 / 2.0 + 2.0 / 2.0 + 0.5)
    active = poly.h_state[:, 0] != INACTIVE_BOUND
    assert np.any(active)
    assert np.all(poly.h_state[active, 0] == pytest.approx(h_bar))
    # predicted stations 117..126: the window opens at 118
    assert not active[0]
    assert active[1]


def test_obstacle_bound_tightens_with_margin():
    cfg = default_config()
    obs = ObstacleSpec(118.0, 122.0, 2.0, side=1)
    loose = build_horizon_constraints(obs, 117.0, 2.0, 0.0, cfg, 10.0)
    tight = build_horizon_constraints(obs, 117.0, 2.0, 1.0, cfg, 10.0)
    act = loose.h_state[:, 0] != INACTIVE_BOUND
    assert np.all(tight.h_state[act, 0] == loose.h_state[act, 0] - 1.0)


def test_obstacle_side_flips_constraint_normal():
    cfg = default_config()
    left = build_horizon_constraints(ObstacleSpec(118.0, 122.0, 2.0, side=-1),
                                     117.0, 2.0, 0.0, cfg, 10.0)
    right = build_horizon_constraints(ObstacleSpec(118.0, 122.0, 2.0, side=1),
                                      117.0, 2.0, 0.0, cfg, 10.0)
    assert left.g_state[0, 0] == -1.0
    assert right.g_state[0, 0] == 1.0


def test_negative_margin_rejected():
    cfg = default_config()
    with pytest.raises(ValueError):
        build_horizon_constraints(None, 0.0, 2.0, -0.1, cfg, 10.0)


def test_condense_single_step_analytic():
    # x1 = x0 + u, cost x1^2 + u^2, x0 = 1: minimizing (1+u)^2 + u^2
    # gives u = -1/2
    model = DiscreteLTI(np.eye(1), np.eye(1), np.zeros((1, 1)), 0.1)
    problem = condense(model, np.eye(1), np.eye(1), [1.0], np.zeros((1, 1)),
                       None)
    out = qp.solve(problem)
    assert isinstance(out, qp.Feasible)
    assert out.z_star[0] == pytest.approx(-0.5, abs=1e-9)
    assert out.objective == pytest.approx(0.5, abs=1e-9)


def test_condensed_matches_sparse_oracle(rng):
    for _ in range(100):
        model = random_small_system(rng)
        n = int(rng.integers(2, 5))
        x0 = rng.standard_normal(3)
        refs = rng.standard_normal((n, 1)) * 0.5
        q_w = np.diag(rng.uniform(0.5, 3.0, 3))
        r_w = np.diag(rng.uniform(0.5, 3.0, 2))
        poly = _BoxPoly(3, 2, n)
        dense = condense(model, q_w, r_w, x0, refs, poly)
        sparse = sparse_horizon_qp(model, q_w, r_w, x0, refs, poly)
        out_d = qp.solve(dense)
        out_s = qp.solve(sparse)
        assert isinstance(out_d, qp.Feasible) and isinstance(out_s, qp.Feasible)
        assert out_d.objective == pytest.approx(out_s.objective, abs=1e-6)
        nu, nx = 2, 3
        u_sparse = out_s.z_star[nx * n:]
        np.testing.assert_allclose(out_d.z_star, u_sparse, atol=1e-5)


def test_template_reproduces_condense(rng):
    params = default_params(10.0)
    model = discretize_exact(build_continuous_model(params), 0.1)
    cfg = default_config()
    obs = ObstacleSpec(118.0, 122.0, 2.0)
    poly = build_horizon_constraints(obs, 116.0, params.veh_width, 0.5, cfg,
                                     10.0)
    template = _CondensedTemplate(model, cfg.q_weight, cfg.r_weight,
                                  poly.g_state, poly.g_input, poly.h_input,
                                  cfg.horizon)
    for _ in range(5):
        x0 = rng.standard_normal(8) * 0.3
        refs = rng.standard_normal((cfg.horizon, 2)) * 0.05
        a = template.problem(x0, refs, poly.h_state)
        b = condense(model, cfg.q_weight, cfg.r_weight, x0, refs, poly)
        np.testing.assert_allclose(a.hessian, b.hessian, atol=1e-10)
        np.testing.assert_allclose(a.linear_cost, b.linear_cost, atol=1e-10)
        np.testing.assert_allclose(a.g_ineq, b.g_ineq, atol=1e-10)
        np.testing.assert_allclose(a.h_ineq, b.h_ineq, atol=1e-10)
        assert a.constant == pytest.approx(b.constant, abs=1e-10)


def _make_supervisor(margin=0.5, backup_margin=0.0, obstacle=True):
    params = default_params(10.0)
    model = discretize_exact(build_continuous_model(params), 0.1)
    cfg = default_config()
    path = ReferencePath.straight(300.0, 10.0)
    obs = ObstacleSpec(118.0, 122.0, 2.0) if obstacle else None
    return Supervisor(model, cfg, params, path, obs, margin,
                      backup_margin=backup_margin), params


def _nominal_plant(x=50.0):
    return PlantState(x=x, y=0.0, yaw=0.0, vx=10.0, vy=0.0, yaw_rate=0.0,
                      delta=0.0, accel=0.0)


def test_certify_feasible_far_from_obstacle_stores_backup():
    sup, _ = _make_supervisor()
    state = SupervisorState(margin=sup.margin)
    verdict, outcome = sup.certify(RateInput(0.0, 0.0), _nominal_plant(),
                                   state, ref_station=51.0)
    assert isinstance(outcome, qp.Feasible)
    assert state.backup_input is not None
    assert verdict.backup == state.backup_input


def test_certify_detects_unavoidable_obstacle():
    # starting 8 m before the obstacle centered on it, no lateral plan exists
    sup, _ = _make_supervisor(margin=0.5)
    state = SupervisorState(margin=sup.margin)
    plant = _nominal_plant(x=110.0)
    verdict, outcome = sup.certify(RateInput(0.0, 0.0), plant,
                                   state, ref_station=111.0)
    assert isinstance(outcome, qp.Infeasible)
    # with no stored backup the fallback is braking
    assert verdict.fallback.accel_dot < 0.0


def test_certify_refuses_to_run_after_detection():
    sup, _ = _make_supervisor()
    state = SupervisorState(event_detected=True)
    with pytest.raises(RuntimeError):
        sup.certify(RateInput(0.0, 0.0), _nominal_plant(), state, 51.0)


def test_backup_control_avoids_and_respects_boxes():
    sup, params = _make_supervisor(margin=3.0, backup_margin=0.3)
    plant = _nominal_plant(x=95.0)
    u, unsafe, outcome = sup.backup_control(plant, 95.0)
    assert not unsafe
    cfg = sup.config
    assert cfg.ddelta_limits[0] - 1e-9 <= u.delta_dot <= cfg.ddelta_limits[1] + 1e-9
    assert cfg.daccel_limits[0] - 1e-9 <= u.accel_dot <= cfg.daccel_limits[1] + 1e-9


def test_detection_step_is_monotone_in_margin():
    # larger margins can only pull the first infeasibility earlier
    steps = []
    for margin in (0.0, 0.5, 1.5):
        sup, params = _make_supervisor(margin=margin)
        state = SupervisorState(margin=margin)
        plant = _nominal_plant(x=80.0)
        station = 80.0
        detected_at = None
        from safedrive.supervisor import DetectionEvent
        from safedrive.vehicle import plant_step
        for k in range(40):
            verdict, _ = sup.certify(RateInput(0.0, 0.0), plant, state,
                                     station + 1.0)
            if isinstance(verdict, DetectionEvent):
                detected_at = k
                break
            plant = plant_step(plant, RateInput(0.0, 0.0), 0.1, params)
            station += 1.0
        assert detected_at is not None
        steps.append(detected_at)
    assert steps[0] >= steps[1] >= steps[2]


def test_solve_horizon_warm_start_consistency():
    sup, _ = _make_supervisor()
    err = ErrorState(0.2, 0.0, 0.01, 0.0, 0.0, 0.0, 0.0, 0.0)
    cold = sup.solve_horizon(err, 50.0, 0.5)
    warm1 = sup.solve_horizon(err, 50.0, 0.5, warm_key="certify")
    warm2 = sup.solve_horizon(err, 50.0, 0.5, warm_key="certify")
    assert isinstance(cold, qp.Feasible)
    assert warm1.objective == pytest.approx(cold.objective, abs=1e-7)
    assert warm2.objective == pytest.approx(cold.objective, abs=1e-7)


def test_mpc_config_validation():
    with pytest.raises(ValueError):
        MpcConfig(q_weight=np.eye(8), r_weight=np.zeros((2, 2)))
    with pytest.raises(ValueError):
        MpcConfig(q_weight=-np.eye(8), r_weight=np.eye(2))
    with pytest.raises(ValueError):
        default_config(horizon=0)
    with pytest.raises(ValueError):
        ObstacleSpec(5.0, 4.0, 2.0)
