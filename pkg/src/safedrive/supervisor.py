"""Supervisory MPC: horizon constraint assembly, condensing, certification.

The supervisor certifies the operating controller's input by predicting one
nonlinear step ahead and checking feasibility of a margined horizon QP; QP
infeasibility is the detection signal, at which point the stored backup
input bridges one sample and a backup MPC (same horizon problem, zero
margin, current measured state) takes over.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import qp
from .paths import ReferencePath
from .vehicle import (DEG, N_INPUTS, N_STATES, DiscreteLTI, ErrorState,
                      PlantState, RateInput, VehicleParams, plant_step,
                      to_error_state)

# row 1 of the state polytope is deactivated outside obstacle steps
INACTIVE_BOUND = 1e6


@dataclass(frozen=True)
class MpcConfig:
    q_weight: np.ndarray            # 8x8, PSD
    r_weight: np.ndarray            # 2x2, PD
    horizon: int = 10
    ts: float = 0.1
    delta_limits: tuple = (-34.0 * DEG, 34.0 * DEG)
    accel_limits: tuple = (-6.0, 2.0)
    ddelta_limits: tuple = (-30.0 * DEG, 30.0 * DEG)   # rad/s
    daccel_limits: tuple = (-30.0, 30.0)               # m/s^3

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        q = np.asarray(self.q_weight, dtype=float)
        r = np.asarray(self.r_weight, dtype=float)
        if np.min(np.linalg.eigvalsh(0.5 * (q + q.T))) < -1e-12:
            raise ValueError("q_weight must be PSD")
        if np.min(np.linalg.eigvalsh(0.5 * (r + r.T))) <= 0.0:
            raise ValueError("r_weight must be PD")


def default_config(horizon: int = 10, ts: float = 0.1) -> MpcConfig:
    return MpcConfig(q_weight=np.diag([1.0, 1.0, 200.0, 1.0, 1.0, 1.0, 1.0, 1.0]),
                     r_weight=np.eye(2), horizon=horizon, ts=ts)


@dataclass(frozen=True)
class ObstacleSpec:
    s_start: float
    s_end: float
    width: float
    side: int = 1  # +1: pass on the right (e_y <= h_bar < 0); -1: pass left

    def __post_init__(self):
        if not self.s_start < self.s_end:
            raise ValueError("s_start must be < s_end")
        if not self.width > 0.0:
            raise ValueError("width must be positive")
        if self.side not in (1, -1):
            raise ValueError("side must be +1 or -1")


@dataclass(frozen=True)
class PolytopeSpec:
    """Per-horizon-step state polytope plus the static input polytope."""

    g_state: np.ndarray   # 5 x 8
    h_state: np.ndarray   # N x 5
    g_input: np.ndarray   # 4 x 2
    h_input: np.ndarray   # 4


@dataclass
class SupervisorState:
    event_detected: bool = False
    backup_input: RateInput | None = None
    margin: float = 0.0


@dataclass(frozen=True)
class Certified:
    backup: RateInput


@dataclass(frozen=True)
class DetectionEvent:
    fallback: RateInput


SafetyVerdict = Certified | DetectionEvent


def build_horizon_constraints(obstacle: ObstacleSpec | None,
                              current_station: float, veh_width: float,
                              margin: float, config: MpcConfig,
                              v_x: float) -> PolytopeSpec:
    """Assemble the per-step state polytopes over the horizon.

    Obstacle presence is predicted with constant-speed station propagation;
    only steps whose predicted station window overlaps the (padded)
    obstacle interval carry the lateral half-plane constraint.
    """
    if margin < 0.0:
        raise ValueError("margin must be >= 0")
    n = config.horizon
    side = obstacle.side if obstacle is not None else 1
    g_state = np.zeros((5, N_STATES))
    g_state[0, 0] = side
    g_state[1, 6] = 1.0
    g_state[2, 6] = -1.0
    g_state[3, 7] = 1.0
    g_state[4, 7] = -1.0

    dmin, dmax = config.delta_limits
    amin, amax = config.accel_limits
    box = np.array([dmax, -dmin, amax, -amin])
    h_state = np.empty((n, 5))
    h_state[:, 0] = INACTIVE_BOUND
    h_state[:, 1:] = box

    if obstacle is not None:
        lookahead_pad = veh_width
        clearance_pad = 0.5 * v_x * config.ts
        h_bar = -obstacle.width / 2.0 - veh_width / 2.0 - margin
        for i in range(n):
            s_i = current_station + v_x * config.ts * (i + 1)
            if s_i >= obstacle.s_start and \
                    s_i - lookahead_pad <= obstacle.s_end + clearance_pad:
                h_state[i, 0] = h_bar

    g_input = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    ddmin, ddmax = config.ddelta_limits
    damin, damax = config.daccel_limits
    h_input = np.array([ddmax, -ddmin, damax, -damin])
    return PolytopeSpec(g_state, h_state, g_input, h_input)


def condense(model: DiscreteLTI, q_weight, r_weight, x0, refs,
             constraints: PolytopeSpec | None) -> qp.QpProblem:
    """Eliminate states to obtain a dense QP in the stacked input sequence.

    The cost is ``sum_{i=1..N} x_i' Q x_i + u_{i-1}' R u_{i-1}`` with the
    linear predictor ``x_{i+1} = A x_i + B u_i + E r_i``. Dimension-generic
    so surrogate systems can be condensed in tests.
    """
    a, b, e = model.a_mat, model.b_mat, model.e_mat
    nx = a.shape[0]
    nu = b.shape[1]
    x0 = np.asarray(x0, dtype=float).ravel()
    refs = np.asarray(refs, dtype=float).reshape(-1, e.shape[1])
    n = refs.shape[0]

    # powers of A
    pows = [np.eye(nx)]
    for _ in range(n):
        pows.append(a @ pows[-1])

    s_mat = np.zeros((nx * n, nu * n))
    free = np.zeros(nx * n)   # M x0 + T r, the input-free response
    for i in range(1, n + 1):
        ri = slice((i - 1) * nx, i * nx)
        free[ri] = pows[i] @ x0
        for j in range(i):
            s_mat[ri, j * nu:(j + 1) * nu] = pows[i - 1 - j] @ b
            free[ri] += pows[i - 1 - j] @ (e @ refs[j])

    q_bar = np.kron(np.eye(n), np.asarray(q_weight, dtype=float))
    r_bar = np.kron(np.eye(n), np.asarray(r_weight, dtype=float))

    hessian = 2.0 * (s_mat.T @ q_bar @ s_mat + r_bar)
    hessian = 0.5 * (hessian + hessian.T)
    linear = 2.0 * (s_mat.T @ (q_bar @ free))
    constant = float(free @ q_bar @ free)

    if constraints is None:
        g = np.zeros((0, nu * n))
        h = np.zeros(0)
    else:
        gx, hx = constraints.g_state, constraints.h_state
        gu, hu = constraints.g_input, constraints.h_input
        g_rows = []
        h_rows = []
        for i in range(1, n + 1):
            ri = slice((i - 1) * nx, i * nx)
            g_rows.append(gx @ s_mat[ri])
            h_rows.append(hx[i - 1] - gx @ free[ri])
        gu_blk = np.kron(np.eye(n), gu)
        g = np.vstack(g_rows + [gu_blk])
        h = np.concatenate(h_rows + [np.tile(hu, n)])
    return qp.QpProblem(hessian, linear, g, h, constant=constant)


class _CondensedTemplate:
    """State-independent pieces of the condensed horizon QP.

    The Hessian and constraint normals never change between solves; only the
    input-free response (driven by the initial state and the feedforward
    references) moves the linear cost and the constraint offsets.
    """

    def __init__(self, model: DiscreteLTI, q_weight, r_weight,
                 g_state: np.ndarray, g_input: np.ndarray,
                 h_input: np.ndarray, horizon: int):
        a, b, e = model.a_mat, model.b_mat, model.e_mat
        nx, nu, nr = a.shape[0], b.shape[1], e.shape[1]
        n = horizon
        pows = [np.eye(nx)]
        for _ in range(n):
            pows.append(a @ pows[-1])
        s_mat = np.zeros((nx * n, nu * n))
        m_mat = np.zeros((nx * n, nx))
        t_mat = np.zeros((nx * n, nr * n))
        for i in range(1, n + 1):
            ri = slice((i - 1) * nx, i * nx)
            m_mat[ri] = pows[i]
            for j in range(i):
                s_mat[ri, j * nu:(j + 1) * nu] = pows[i - 1 - j] @ b
                t_mat[ri, j * nr:(j + 1) * nr] = pows[i - 1 - j] @ e
        q_bar = np.kron(np.eye(n), np.asarray(q_weight, dtype=float))
        r_bar = np.kron(np.eye(n), np.asarray(r_weight, dtype=float))
        hessian = 2.0 * (s_mat.T @ q_bar @ s_mat + r_bar)
        self.hessian = 0.5 * (hessian + hessian.T)
        self.sq = 2.0 * (s_mat.T @ q_bar)
        self.q_bar = q_bar
        self.m_mat = m_mat
        self.t_mat = t_mat
        gx_blk = np.kron(np.eye(n), g_state)
        self.gx_blk = gx_blk
        self.g = np.vstack([gx_blk @ s_mat, np.kron(np.eye(n), g_input)])
        self.h_input_flat = np.tile(np.asarray(h_input, dtype=float), n)

    def problem(self, x0: np.ndarray, refs: np.ndarray,
                h_state: np.ndarray) -> qp.QpProblem:
        free = self.m_mat @ x0 + self.t_mat @ refs.ravel()
        linear = self.sq @ free
        constant = float(free @ self.q_bar @ free)
        h = np.concatenate([h_state.ravel() - self.gx_blk @ free,
                            self.h_input_flat])
        return qp.QpProblem(self.hessian, linear, self.g, h, constant=constant)


class Supervisor:
    """Owns the prediction model and scenario geometry for certification."""

    def __init__(self, model: DiscreteLTI, config: MpcConfig,
                 params: VehicleParams, path: ReferencePath,
                 obstacle: ObstacleSpec | None, margin: float,
                 backup_margin: float = 0.0,
                 settings: qp.QpSettings = qp.QpSettings()):
        self.model = model
        self.config = config
        self.params = params
        self.path = path
        self.obstacle = obstacle
        self.margin = margin
        # residual margin kept by the recovery controller so that plans do
        # not ride the obstacle boundary exactly; absorbs one-step mismatch
        self.backup_margin = backup_margin
        self.settings = settings
        self._warm = {}   # per-purpose (z, y) pairs reused across steps
        self._template = None

    def _refs(self, station: float) -> np.ndarray:
        """Feedforward (desired yaw rate, reference accel) per horizon step."""
        cfg = self.config
        v = self.params.v_x
        refs = np.zeros((cfg.horizon, N_INPUTS))
        s_max = self.path.length
        for i in range(cfg.horizon):
            s_i = min(station + v * cfg.ts * (i + 1), s_max)
            refs[i, 0] = v * self.path.curvature_at(s_i)
        return refs

    def solve_horizon(self, err0: ErrorState, station: float,
                      margin: float, warm_key: str | None = None
                      ) -> qp.QpOutcome:
        cfg = self.config
        poly = build_horizon_constraints(self.obstacle, station,
                                         self.params.veh_width, margin, cfg,
                                         self.params.v_x)
        if self._template is None:
            self._template = _CondensedTemplate(
                self.model, cfg.q_weight, cfg.r_weight, poly.g_state,
                poly.g_input, poly.h_input, cfg.horizon)
        problem = self._template.problem(err0.as_array(),
                                         self._refs(station), poly.h_state)
        outcome = qp.solve(problem, self.settings,
                           warm=self._warm.get(warm_key))
        if warm_key is not None and isinstance(outcome, qp.Feasible):
            dual = outcome.dual_ineq
            if outcome.dual_eq is not None:
                dual = np.concatenate([outcome.dual_eq, dual])
            self._warm[warm_key] = (outcome.z_star, dual)
        return outcome

    def braking_fallback(self, plant: PlantState) -> RateInput:
        cfg = self.config
        want = (cfg.accel_limits[0] - plant.accel) / cfg.ts
        return RateInput(0.0, float(np.clip(want, *cfg.daccel_limits)))

    def certify(self, u_op: RateInput, plant: PlantState,
                state: SupervisorState, ref_station: float,
                ref_speed: float | None = None):
        """Safety-certify the operating input.

        Returns ``(verdict, outcome)``; mutates ``state.backup_input`` on a
        feasible certification. ``ref_station`` must already be advanced to
        the one-step-ahead reference position.
        """
        if state.event_detected:
            raise RuntimeError("certify called after a detection event")
        cfg = self.config
        predicted = plant_step(plant, u_op, cfg.ts, self.params,
                               delta_limits=cfg.delta_limits,
                               accel_limits=cfg.accel_limits)
        err = to_error_state(predicted, self.path, ref_station, ref_speed)
        station = ref_station + err.e_x
        outcome = self.solve_horizon(err, station, state.margin, "certify")
        if isinstance(outcome, qp.Feasible):
            backup = RateInput(float(outcome.z_star[0]), float(outcome.z_star[1]))
            state.backup_input = backup
            return Certified(backup), outcome
        # Infeasible, or MaxIter treated conservatively as a detection
        fallback = state.backup_input
        if fallback is None:
            fallback = self.braking_fallback(plant)
        return DetectionEvent(fallback), outcome

    def backup_control(self, plant: PlantState, ref_station: float,
                       ref_speed: float | None = None):
        """Post-takeover control from the current measured state.

        Solves with the small residual ``backup_margin`` only. Returns
        ``(rate input, safety_event_flag, outcome)``; the flag marks
        infeasibility of the recovery problem (braking fallback).
        """
        err = to_error_state(plant, self.path, ref_station, ref_speed)
        station = ref_station + err.e_x
        outcome = self.solve_horizon(err, station, self.backup_margin,
                                     "backup")
        if isinstance(outcome, qp.Feasible):
            u = RateInput(float(outcome.z_star[0]), float(outcome.z_star[1]))
            return u, False, outcome
        return self.braking_fallback(plant), True, outcome
