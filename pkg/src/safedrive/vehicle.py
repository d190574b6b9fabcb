"""Vehicle models.

Continuous lateral/longitudinal error dynamics about a reference path, the
rate-input augmentation, exact zero-order-hold discretization, and the
nonlinear 3-DOF dual-track plant used as simulation ground truth.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import expm

from .paths import ReferencePath

N_STATES = 8
N_INPUTS = 2

DEG = np.pi / 180.0

DEFAULT_DELTA_LIMITS = (-34.0 * DEG, 34.0 * DEG)
DEFAULT_ACCEL_LIMITS = (-6.0, 2.0)

MIN_VALID_SPEED = 0.1  # m/s, below this the error model loses validity


class PlantValidityError(RuntimeError):
    """The nonlinear plant left its validity envelope (e.g. vx too low)."""


@dataclass(frozen=True)
class VehicleParams:
    """Physical vehicle parameters (cornering stiffnesses per axle side)."""

    c_alpha_f: float  # N/rad
    c_alpha_r: float  # N/rad
    l_f: float        # m
    l_r: float        # m
    i_z: float        # kg m^2
    mass: float       # kg
    v_x: float        # m/s, nominal longitudinal speed
    track_width: float = 1.6  # m, plant only
    veh_width: float = 2.0    # m

    def __post_init__(self):
        for name in ("c_alpha_f", "c_alpha_r", "l_f", "l_r", "i_z", "mass",
                     "v_x", "track_width", "veh_width"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def wheelbase(self) -> float:
        return self.l_f + self.l_r


def default_params(v_x: float = 10.0) -> VehicleParams:
    """Mid-size passenger-car parameter set used throughout the scenarios."""
    return VehicleParams(c_alpha_f=153e3, c_alpha_r=191e3, l_f=1.3, l_r=1.7,
                         i_z=5250.0, mass=2500.0, v_x=v_x)


@dataclass(frozen=True)
class ErrorState:
    """Path-error state: [e_y, e_y_dot, e_psi, e_psi_dot, e_x, e_x_dot, delta, accel].

    ``e_y > 0`` means the CoG is left of the centerline.
    """

    e_y: float
    e_y_dot: float
    e_psi: float
    e_psi_dot: float
    e_x: float
    e_x_dot: float
    delta: float
    accel: float

    def as_array(self) -> np.ndarray:
        return np.array([self.e_y, self.e_y_dot, self.e_psi, self.e_psi_dot,
                         self.e_x, self.e_x_dot, self.delta, self.accel])

    @classmethod
    def from_array(cls, arr) -> "ErrorState":
        return cls(*(float(v) for v in np.asarray(arr).reshape(N_STATES)))


@dataclass(frozen=True)
class RateInput:
    """Rate control input: steering rate (rad/s) and jerk (m/s^3)."""

    delta_dot: float
    accel_dot: float

    def as_array(self) -> np.ndarray:
        return np.array([self.delta_dot, self.accel_dot])


@dataclass(frozen=True)
class ReferenceInput:
    """Feedforward terms: desired yaw rate of the road and reference accel."""

    psi_dot_des: float
    a_ref: float

    def as_array(self) -> np.ndarray:
        return np.array([self.psi_dot_des, self.a_ref])


@dataclass(frozen=True)
class ContinuousLTI:
    a_mat: np.ndarray  # 8x8
    b_mat: np.ndarray  # 8x2
    e_mat: np.ndarray  # 8x2


@dataclass(frozen=True)
class DiscreteLTI:
    a_mat: np.ndarray
    b_mat: np.ndarray
    e_mat: np.ndarray
    ts: float

    def step(self, x, u, u_ref) -> np.ndarray:
        return self.a_mat @ x + self.b_mat @ u + self.e_mat @ u_ref


def _error_coefficients(p: VehicleParams):
    """Row coefficients of the lateral error model.

    Standard symmetric forms (per-axle stiffness 2*C): a, b, c enter the
    e_y_dot row, d, e, f the e_psi_dot row; g, h multiply the desired yaw
    rate feedforward.
    """
    caf, car = p.c_alpha_f, p.c_alpha_r
    m, iz, vx = p.mass, p.i_z, p.v_x
    lf, lr = p.l_f, p.l_r
    a = -(2 * caf + 2 * car) / (m * vx)
    b = (2 * caf + 2 * car) / m
    c = -(2 * caf * lf - 2 * car * lr) / (m * vx)
    d = -(2 * caf * lf - 2 * car * lr) / (iz * vx)
    e = (2 * caf * lf - 2 * car * lr) / iz
    f = -(2 * caf * lf ** 2 + 2 * car * lr ** 2) / (iz * vx)
    g = -(2 * caf * lf - 2 * car * lr) / (m * vx) - vx
    h = -(2 * caf * lf ** 2 + 2 * car * lr ** 2) / (iz * vx)
    return a, b, c, d, e, f, g, h


def build_continuous_model(params: VehicleParams) -> ContinuousLTI:
    """Continuous error dynamics augmented with actuator integrators.

    States 0..5 are the path errors, states 6..7 the actuators (delta, a);
    inputs are the actuator rates.
    """
    if not params.v_x > 0.0:
        raise ValueError("v_x must be strictly positive")
    a, b, c, d, e, f, g, h = _error_coefficients(params)
    a1 = np.zeros((6, 6))
    a1[0, 1] = 1.0
    a1[1, 1], a1[1, 2], a1[1, 3] = a, b, c
    a1[2, 3] = 1.0
    a1[3, 1], a1[3, 2], a1[3, 3] = d, e, f
    a1[4, 5] = 1.0
    b1 = np.zeros((6, 2))
    b1[1, 0] = 2 * params.c_alpha_f / params.mass
    b1[3, 0] = 2 * params.c_alpha_f * params.l_f / params.i_z
    b1[5, 1] = 1.0
    e1 = np.zeros((6, 2))
    e1[1, 0] = g
    e1[3, 0] = h
    e1[5, 1] = -1.0

    a_c = np.zeros((N_STATES, N_STATES))
    a_c[:6, :6] = a1
    a_c[:6, 6:] = b1
    b_c = np.zeros((N_STATES, N_INPUTS))
    b_c[6:, :] = np.eye(2)
    e_c = np.zeros((N_STATES, N_INPUTS))
    e_c[:6, :] = e1
    return ContinuousLTI(a_c, b_c, e_c)


def discretize_exact(model: ContinuousLTI, ts: float) -> DiscreteLTI:
    """Exact zero-order-hold discretization via one augmented matrix exponential."""
    if not ts > 0.0:
        raise ValueError("ts must be strictly positive")
    n = model.a_mat.shape[0]
    forced = np.hstack([model.b_mat, model.e_mat])
    m = forced.shape[1]
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = model.a_mat
    aug[:n, n:] = forced
    phi = expm(aug * ts)
    a_d = phi[:n, :n]
    b_d = phi[:n, n:n + model.b_mat.shape[1]]
    e_d = phi[:n, n + model.b_mat.shape[1]:]
    return DiscreteLTI(a_d, b_d, e_d, ts)


@dataclass(frozen=True)
class PlantState:
    """Nonlinear plant state in global coordinates (body-frame velocities)."""

    x: float
    y: float
    yaw: float
    vx: float
    vy: float
    yaw_rate: float
    delta: float
    accel: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.yaw, self.vx, self.vy,
                         self.yaw_rate, self.delta, self.accel])

    @classmethod
    def from_array(cls, arr) -> "PlantState":
        return cls(*(float(v) for v in np.asarray(arr).reshape(8)))


def _plant_derivative(state, d_delta, d_accel, p: VehicleParams,
                      delta_limits, accel_limits):
    """Time derivative of the batched plant state (..., 8).

    3-DOF dual-track rigid body: linear tire forces per wheel, no load
    transfer; commanded acceleration acts as a net longitudinal force.
    """
    yaw = state[..., 2]
    vx = state[..., 3]
    vy = state[..., 4]
    r = state[..., 5]
    delta = state[..., 6]
    accel = state[..., 7]

    half_track = p.track_width / 2.0
    wheels = (
        (p.l_f, half_track, p.c_alpha_f, True),
        (p.l_f, -half_track, p.c_alpha_f, True),
        (-p.l_r, half_track, p.c_alpha_r, False),
        (-p.l_r, -half_track, p.c_alpha_r, False),
    )
    fx = np.zeros_like(vx)
    fy = np.zeros_like(vx)
    mz = np.zeros_like(vx)
    for px, py, c_alpha, steered in wheels:
        vwx = vx - py * r
        vwy = vy + px * r
        steer = delta if steered else 0.0
        slip = steer - np.arctan2(vwy, vwx)
        f_lat = c_alpha * slip
        fxw = -f_lat * np.sin(steer)
        fyw = f_lat * np.cos(steer)
        fx = fx + fxw
        fy = fy + fyw
        mz = mz + px * fyw - py * fxw

    dvx = accel + vy * r + fx / p.mass
    dvy = -vx * r + fy / p.mass
    dr = mz / p.i_z

    # actuator rates stop at their clamps
    dmin, dmax = delta_limits
    amin, amax = accel_limits
    ddelta = np.where((delta >= dmax) & (d_delta > 0), 0.0, d_delta)
    ddelta = np.where((delta <= dmin) & (d_delta < 0), 0.0, ddelta)
    daccel = np.where((accel >= amax) & (d_accel > 0), 0.0, d_accel)
    daccel = np.where((accel <= amin) & (d_accel < 0), 0.0, daccel)

    out = np.empty_like(state)
    out[..., 0] = vx * np.cos(yaw) - vy * np.sin(yaw)
    out[..., 1] = vx * np.sin(yaw) + vy * np.cos(yaw)
    out[..., 2] = r
    out[..., 3] = dvx
    out[..., 4] = dvy
    out[..., 5] = dr
    out[..., 6] = ddelta
    out[..., 7] = daccel
    return out


def plant_step_array(states, rates, ts: float, params: VehicleParams,
                     substeps: int = 10,
                     delta_limits=DEFAULT_DELTA_LIMITS,
                     accel_limits=DEFAULT_ACCEL_LIMITS) -> np.ndarray:
    """RK4-integrate a batch of plant states (..., 8) over one sample time."""
    arr = np.array(states, dtype=float, copy=True)
    rates = np.asarray(rates, dtype=float)
    d_delta = rates[..., 0]
    d_accel = rates[..., 1]
    arr[..., 6] = np.clip(arr[..., 6], *delta_limits)
    arr[..., 7] = np.clip(arr[..., 7], *accel_limits)
    h = ts / substeps
    for _ in range(substeps):
        k1 = _plant_derivative(arr, d_delta, d_accel, params, delta_limits, accel_limits)
        k2 = _plant_derivative(arr + 0.5 * h * k1, d_delta, d_accel, params,
                               delta_limits, accel_limits)
        k3 = _plant_derivative(arr + 0.5 * h * k2, d_delta, d_accel, params,
                               delta_limits, accel_limits)
        k4 = _plant_derivative(arr + h * k3, d_delta, d_accel, params,
                               delta_limits, accel_limits)
        arr = arr + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        arr[..., 6] = np.clip(arr[..., 6], *delta_limits)
        arr[..., 7] = np.clip(arr[..., 7], *accel_limits)
    return arr


def plant_step(state: PlantState, rate: RateInput, ts: float,
               params: VehicleParams, substeps: int = 10,
               delta_limits=DEFAULT_DELTA_LIMITS,
               accel_limits=DEFAULT_ACCEL_LIMITS) -> PlantState:
    """Advance the nonlinear plant by one sample time under a rate input."""
    if state.vx <= MIN_VALID_SPEED:
        raise PlantValidityError(f"vx = {state.vx} m/s below validity limit")
    arr = plant_step_array(state.as_array(), rate.as_array(), ts, params,
                           substeps, delta_limits, accel_limits)
    nxt = PlantState.from_array(arr)
    if nxt.vx <= MIN_VALID_SPEED:
        raise PlantValidityError(f"vx = {nxt.vx} m/s below validity limit")
    return nxt


def to_error_state(state: PlantState, path: ReferencePath,
                   ref_station: float | None = None,
                   ref_speed: float | None = None) -> ErrorState:
    """Convert a global plant pose into path-error coordinates.

    ``ref_station`` is where the (virtual) reference vehicle currently is;
    if omitted, the longitudinal error is zero by definition.
    """
    station, e_y, heading = path.project(state.x, state.y)
    e_psi = _wrap_angle(state.yaw - heading)

    # global velocity, then split along the path tangent/normal
    c, s = np.cos(state.yaw), np.sin(state.yaw)
    vgx = state.vx * c - state.vy * s
    vgy = state.vx * s + state.vy * c
    ch, sh = np.cos(heading), np.sin(heading)
    v_tan = vgx * ch + vgy * sh
    v_norm = -vgx * sh + vgy * ch

    kappa = path.curvature_at(station)
    denom = 1.0 - kappa * e_y
    s_dot = v_tan / denom if abs(denom) > 1e-9 else v_tan

    v_ref = path.speed if ref_speed is None else ref_speed
    s_ref = station if ref_station is None else ref_station
    return ErrorState(
        e_y=float(e_y),
        e_y_dot=float(v_norm),
        e_psi=float(e_psi),
        e_psi_dot=float(state.yaw_rate - kappa * s_dot),
        e_x=float(station - s_ref),
        e_x_dot=float(s_dot - v_ref),
        delta=state.delta,
        accel=state.accel,
    )


def pose_from_error_state(err: ErrorState, path: ReferencePath,
                          ref_station: float,
                          ref_speed: float | None = None) -> PlantState:
    """Inverse of :func:`to_error_state` (exact on straight paths)."""
    station = ref_station + err.e_x
    px, py = path.point_at(station)
    heading = path.heading_at(station)
    kappa = path.curvature_at(station)
    nx, ny = path.normal_at(station)
    x = px + err.e_y * nx
    y = py + err.e_y * ny
    yaw = heading + err.e_psi

    v_ref = path.speed if ref_speed is None else ref_speed
    s_dot = v_ref + err.e_x_dot
    v_tan = s_dot * (1.0 - kappa * err.e_y)
    v_norm = err.e_y_dot
    ch, sh = np.cos(heading), np.sin(heading)
    vgx = v_tan * ch - v_norm * sh
    vgy = v_tan * sh + v_norm * ch
    c, s = np.cos(yaw), np.sin(yaw)
    vx = vgx * c + vgy * s
    vy = -vgx * s + vgy * c
    return PlantState(x=float(x), y=float(y), yaw=float(yaw), vx=float(vx),
                      vy=float(vy),
                      yaw_rate=float(err.e_psi_dot + kappa * s_dot),
                      delta=err.delta, accel=err.accel)


def _wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = (angle + np.pi) % (2 * np.pi) - np.pi
    if wrapped == -np.pi:
        wrapped = np.pi
    return float(wrapped)
