"""Offline estimation of the predictor/plant mismatch set and lateral margin.

Grids initial error states and rate inputs, rolls both the linear predictor
and the nonlinear plant forward over the certification horizon, and collects
the per-step state differences. The lateral margin is the largest absolute
lateral component over all collected differences; for an axis-aligned
projection this equals projecting the convex hull of the sample cloud, so no
hull is ever built.

Initial states are gridded over the envelope the certified closed loop
actually occupies (near-nominal tracking), while the held rate inputs cover
their full admissible boxes; the rollout then explores the tube of states a
stored avoidance plan can traverse, which is where the prediction error
accumulates.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .paths import ReferencePath
from .vehicle import (DEG, N_STATES, DiscreteLTI, ErrorState, RateInput,
                      ReferenceInput, VehicleParams, plant_step_array,
                      pose_from_error_state, to_error_state)

STATE_DIM_NAMES = ("e_y", "e_y_dot", "e_psi", "e_psi_dot", "e_x", "e_x_dot",
                   "delta", "accel")
INPUT_DIM_NAMES = ("delta_dot", "accel_dot")
DIM_NAMES = STATE_DIM_NAMES + INPUT_DIM_NAMES

MAX_SAMPLES = 100_000

# rollout length; matches the certification horizon
PREDICTION_STEPS = 10

# actuator boxes the rollout saturates at (rates are held, positions clamp)
DELTA_BOX = (-34.0 * DEG, 34.0 * DEG)
ACCEL_BOX = (-6.0, 2.0)

# steering excursions beyond the handling-limit lateral acceleration are not
# representative of any plan the controllers can execute, so the rollout
# saturates steering at the angle that reaches this level (kinematic
# steady state), or at the actuator box if that is tighter
LAT_ACCEL_CAP = 12.3

# samples whose plant speed falls below this stop accumulating; the error
# frame degenerates at standstill
MIN_ROLLOUT_SPEED = 1.0


class EstimationError(RuntimeError):
    """No usable mismatch samples could be produced."""


@dataclass(frozen=True)
class GridSpec:
    """Per-dimension bounds and point counts over states and inputs.

    Dimensions with ``points = 1`` are inert and pinned to the midpoint;
    absolute position dims (e_y, e_x) are inert by default because the
    dynamics are translation invariant along a straight reference.
    """

    bounds: dict = field(default_factory=dict)   # name -> (lo, hi)
    points: dict = field(default_factory=dict)   # name -> count >= 1

    def __post_init__(self):
        for name in self.bounds:
            if name not in DIM_NAMES:
                raise ValueError(f"unknown dimension {name!r}")
        for name, n in self.points.items():
            if name not in DIM_NAMES:
                raise ValueError(f"unknown dimension {name!r}")
            if n < 1:
                raise ValueError("point counts must be >= 1")

    def axis(self, name: str) -> np.ndarray:
        lo, hi = self.bounds.get(name, (0.0, 0.0))
        n = self.points.get(name, 1)
        if n == 1:
            return np.array([0.5 * (lo + hi)])
        return np.linspace(lo, hi, n)


def default_grid(points: int = 5) -> GridSpec:
    """Default grid: near-nominal initial states, full rate-input boxes."""
    bounds = {
        "e_y_dot": (-1.0, 1.0),
        "e_psi": (-0.1, 0.1),
        "e_psi_dot": (-0.2, 0.2),
        "e_x_dot": (-1.0, 1.0),
        "delta": (-5.0 * DEG, 5.0 * DEG),
        "accel": (-2.0, 2.0),
        "delta_dot": (-30.0 * DEG, 30.0 * DEG),
        "accel_dot": (-30.0, 30.0),
    }
    counts = {name: points for name in bounds}
    return GridSpec(bounds=bounds, points=counts)


@dataclass(frozen=True)
class MismatchSample:
    w_bar: np.ndarray  # 8-vector, nonlinear minus linear one-step states


@dataclass
class DisturbanceSet:
    samples: np.ndarray           # n x 8
    intervals: np.ndarray         # 8 x 2, per-axis [min, max]
    skipped: int = 0

    @classmethod
    def from_samples(cls, samples: np.ndarray, skipped: int = 0):
        samples = np.atleast_2d(samples)
        intervals = np.stack([samples.min(axis=0), samples.max(axis=0)], axis=1)
        return cls(samples, intervals, skipped)


def _mismatch_batch(states: np.ndarray, inputs: np.ndarray,
                    model: DiscreteLTI, params: VehicleParams,
                    path: ReferencePath, plant_fn=None) -> np.ndarray:
    """Vectorized one-step mismatch for error states (n, 8), inputs (n, 2)."""
    n = states.shape[0]
    ref_station = 0.5 * path.length
    poses = np.empty((n, 8))
    for i in range(n):
        err = ErrorState.from_array(states[i])
        poses[i] = pose_from_error_state(err, path, ref_station).as_array()
    if plant_fn is None:
        advanced = plant_step_array(poses, inputs, model.ts, params,
                                    delta_limits=(-1e9, 1e9),
                                    accel_limits=(-1e9, 1e9))
    else:
        advanced = plant_fn(poses, inputs)
    ref_next = ref_station + params.v_x * model.ts
    nonlinear = np.empty_like(states)
    for i in range(n):
        plant = _plant_from_array(advanced[i])
        nonlinear[i] = to_error_state(plant, path, ref_next).as_array()
    refs = np.zeros(2)
    linear = states @ model.a_mat.T + inputs @ model.b_mat.T + model.e_mat @ refs
    return nonlinear - linear


def _plant_from_array(arr):
    from .vehicle import PlantState
    return PlantState.from_array(arr)


def one_step_mismatch(x0: ErrorState, u: RateInput, refs: ReferenceInput,
                      model: DiscreteLTI, params: VehicleParams,
                      plant_fn=None) -> MismatchSample:
    """One-step (nonlinear minus linear) state difference for a single point.

    The pose realizing ``x0`` is constructed on a straight reference path;
    ``refs`` must therefore be zero. Raises for extreme heading errors the
    pose construction cannot realize.
    """
    if abs(x0.e_psi) > np.pi / 2:
        raise ValueError("pose construction invalid for |e_psi| > pi/2")
    if np.any(refs.as_array() != 0.0):
        raise ValueError("straight-reference mismatch requires zero refs")
    path = _straight_path(params)
    w = _mismatch_batch(x0.as_array()[None, :], u.as_array()[None, :], model,
                        params, path, plant_fn)
    return MismatchSample(w[0])


def _straight_path(params: VehicleParams) -> ReferencePath:
    length = max(4.0 * params.v_x, 60.0)
    return ReferencePath.straight(length, params.v_x)


def _poses_from_errors(states: np.ndarray, ref_station: float,
                       v_ref: float) -> np.ndarray:
    """Error states (n, 8) to world poses on a straight +x reference."""
    e_y, e_yd, e_psi, e_psid, e_x, e_xd, delta, accel = states.T
    wx = e_xd + v_ref          # world-frame velocity components
    wy = e_yd
    c, s = np.cos(e_psi), np.sin(e_psi)
    poses = np.empty_like(states)
    poses[:, 0] = ref_station + e_x
    poses[:, 1] = e_y
    poses[:, 2] = e_psi
    poses[:, 3] = wx * c + wy * s      # body vx
    poses[:, 4] = -wx * s + wy * c     # body vy
    poses[:, 5] = e_psid
    poses[:, 6] = delta
    poses[:, 7] = accel
    return poses


def _errors_from_poses(poses: np.ndarray, ref_station: float,
                       v_ref: float) -> np.ndarray:
    """World poses to error states on a straight +x reference."""
    x, y, yaw, vx, vy, yaw_rate, delta, accel = poses.T
    c, s = np.cos(yaw), np.sin(yaw)
    errors = np.empty_like(poses)
    errors[:, 0] = y
    errors[:, 1] = vx * s + vy * c
    errors[:, 2] = np.mod(yaw + np.pi, 2.0 * np.pi) - np.pi
    errors[:, 3] = yaw_rate
    errors[:, 4] = x - ref_station
    errors[:, 5] = vx * c - vy * s - v_ref
    errors[:, 6] = delta
    errors[:, 7] = accel
    return errors


def rollout_mismatch(states: np.ndarray, inputs: np.ndarray,
                     model: DiscreteLTI, params: VehicleParams,
                     n_steps: int = PREDICTION_STEPS,
                     plant_fn=None) -> np.ndarray:
    """Per-step (nonlinear minus linear) differences over a held-rate rollout.

    ``states`` (n, 8) are initial error states on a straight reference and
    ``inputs`` (n, 2) are rate inputs held for the whole rollout, saturated
    jointly for both models when an actuator box is reached. Returns the
    stacked differences of every surviving (sample, step) pair, shape
    (m, 8) with m <= n * n_steps.
    """
    n = states.shape[0]
    v_ref = params.v_x
    ts = model.ts
    delta_cap = min(DELTA_BOX[1],
                    LAT_ACCEL_CAP * params.wheelbase / v_ref ** 2)
    delta_box = (-delta_cap, delta_cap)
    poses = _poses_from_errors(states, 0.0, v_ref)
    linear = states.copy()
    cur_delta = states[:, 6].copy()
    cur_accel = states[:, 7].copy()
    alive = np.ones(n, dtype=bool)
    collected = []
    ref = 0.0
    for step in range(n_steps):
        # shared effective rates: neither model drives outside the boxes
        next_delta = np.clip(cur_delta + inputs[:, 0] * ts, *delta_box)
        next_accel = np.clip(cur_accel + inputs[:, 1] * ts, *ACCEL_BOX)
        eff = np.column_stack(((next_delta - cur_delta) / ts,
                               (next_accel - cur_accel) / ts))
        if plant_fn is None:
            poses[alive] = plant_step_array(poses[alive], eff[alive], ts,
                                            params, delta_limits=delta_box,
                                            accel_limits=ACCEL_BOX)
        else:
            poses[alive] = plant_fn(poses[alive], eff[alive])
        linear = linear @ model.a_mat.T + eff @ model.b_mat.T
        cur_delta, cur_accel = next_delta, next_accel
        ref += v_ref * ts
        alive &= poses[:, 3] >= MIN_ROLLOUT_SPEED
        if not np.any(alive):
            break
        diffs = _errors_from_poses(poses[alive], ref, v_ref) - linear[alive]
        collected.append(diffs)
    if not collected:
        raise EstimationError("no rollout samples survived")
    return np.concatenate(collected, axis=0)


def estimate_delta(grid: GridSpec, model: DiscreteLTI, params: VehicleParams,
                   seed: int = 0, max_samples: int = MAX_SAMPLES,
                   plant_fn=None, n_steps: int = PREDICTION_STEPS):
    """Estimate the lateral margin from the gridded mismatch set.

    Returns ``(delta, DisturbanceSet)`` with ``delta`` the maximum absolute
    lateral component over all per-step differences of all (possibly
    subsampled) grid rollouts.
    """
    axes = [grid.axis(name) for name in DIM_NAMES]
    counts = np.array([len(ax) for ax in axes])
    total = int(np.prod(counts))
    if total == 0:
        raise EstimationError("empty grid")

    if total > max_samples:
        rng = np.random.default_rng(seed)
        flat = np.sort(rng.choice(total, size=max_samples, replace=False))
    else:
        flat = np.arange(total)
    idx = np.array(np.unravel_index(flat, counts)).T
    points = np.empty((len(flat), len(DIM_NAMES)))
    for d, ax in enumerate(axes):
        points[:, d] = ax[idx[:, d]]

    keep = np.abs(points[:, 2]) <= np.pi / 2  # pose construction limit
    skipped = int(np.sum(~keep))
    points = points[keep]
    if points.shape[0] == 0:
        raise EstimationError("all grid points skipped")

    samples = rollout_mismatch(points[:, :N_STATES], points[:, N_STATES:],
                               model, params, n_steps=n_steps,
                               plant_fn=plant_fn)
    dist = DisturbanceSet.from_samples(samples, skipped)
    delta = float(np.max(np.abs(samples[:, 0])))
    return delta, dist


def write_report(path, delta: float, dist: DisturbanceSet, grid: GridSpec):
    """Flat key-value report that round-trips through :func:`read_report`."""
    lines = [f"delta = {delta!r}",
             f"sample_count = {dist.samples.shape[0]}",
             f"skipped = {dist.skipped}"]
    for d, name in enumerate(DIM_NAMES):
        lo, hi = grid.bounds.get(name, (0.0, 0.0))
        lines.append(f"grid_{name} = {lo!r} {hi!r} {grid.points.get(name, 1)}")
    for d, name in enumerate(DIM_NAMES[:N_STATES]):
        lo, hi = dist.intervals[d]
        lines.append(f"proj_{name} = {float(lo)!r} {float(hi)!r}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_report(path):
    """Parse a margin report into (delta, intervals dict, grid dict, extras)."""
    delta = None
    intervals = {}
    grid = {}
    extras = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            key = key.strip()
            parts = value.split()
            if key == "delta":
                delta = float(parts[0])
            elif key in ("sample_count", "skipped"):
                extras[key] = int(parts[0])
            elif key.startswith("proj_"):
                intervals[key[5:]] = (float(parts[0]), float(parts[1]))
            elif key.startswith("grid_"):
                grid[key[5:]] = (float(parts[0]), float(parts[1]),
                                 int(parts[2]))
            else:
                raise ValueError(f"unknown report key {key!r}")
    if delta is None:
        raise ValueError("report missing delta")
    return delta, intervals, grid, extras
