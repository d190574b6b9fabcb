"""Closed-loop scenario execution, counterfactual rollouts, sweep metrics."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from . import qp
from .mismatch import default_grid, estimate_delta
from .paths import PathExtentError, ReferencePath
from .pursuit import PursuitConfig, pursuit_control
from .supervisor import (Certified, DetectionEvent, MpcConfig, ObstacleSpec,
                         Supervisor, SupervisorState, default_config)
from .vehicle import (PlantState, PlantValidityError, RateInput, VehicleParams,
                      build_continuous_model, default_params, discretize_exact,
                      plant_step, to_error_state)

SWEEP_OMEGAS = (0.008, 0.009, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06)
SWEEP_SPEEDS = (5.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0)

# grid resolution used when a margin has to be estimated on the fly
MARGIN_GRID_POINTS = 3

# the margin is a design constant estimated once at the nominal speed and
# applied unchanged in every scenario
DESIGN_SPEED = 10.0

PPC_MODES = ("blind", "late", "early")


class ConfigError(ValueError):
    """Malformed scenario configuration."""


@dataclass(frozen=True)
class ScenarioConfig:
    amplitude: float = 5.0
    omega: float = 0.02
    offset: float = 3.0
    v_x: float = 10.0
    obstacle_start: float = 118.0
    obstacle_end: float = 122.0
    obstacle_width: float = 2.0
    obstacle_side: int = 1
    ppc_path_mode: str = "blind"     # blind | late:<station> | early
    duration: float = 25.0
    delta: float | None = None       # margin override (m)
    seed: int = 0

    def __post_init__(self):
        if not self.duration > 0.0:
            raise ConfigError("duration must be positive")
        if not self.omega > 0.0:
            raise ConfigError("omega must be positive")
        mode = self.ppc_path_mode.split(":")[0]
        if mode not in PPC_MODES:
            raise ConfigError(f"unknown ppc_path_mode {self.ppc_path_mode!r}")

    @property
    def obstacle(self) -> ObstacleSpec:
        return ObstacleSpec(self.obstacle_start, self.obstacle_end,
                            self.obstacle_width, self.obstacle_side)

    @property
    def late_start_station(self) -> float | None:
        mode, _, arg = self.ppc_path_mode.partition(":")
        if mode != "late":
            return None
        return float(arg) if arg else self.obstacle_start - 12.0


_CONFIG_FIELDS = {f: t for f, t in (
    ("amplitude", float), ("omega", float), ("offset", float), ("v_x", float),
    ("obstacle_start", float), ("obstacle_end", float),
    ("obstacle_width", float), ("obstacle_side", int),
    ("ppc_path_mode", str), ("duration", float), ("delta", float),
    ("seed", int))}


def parse_scenario(text: str) -> ScenarioConfig:
    """Parse the flat ``key = value`` scenario format; unknown keys rejected."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not value:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in _CONFIG_FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _CONFIG_FIELDS[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}")
    return ScenarioConfig(**values)


def format_scenario(cfg: ScenarioConfig) -> str:
    lines = []
    for name in _CONFIG_FIELDS:
        value = getattr(cfg, name)
        if value is None:
            continue
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"


def load_scenario(path) -> ScenarioConfig:
    with open(path) as f:
        return parse_scenario(f.read())


@dataclass(frozen=True)
class StepRecord:
    k: int
    t: float
    x: float
    y: float
    yaw: float
    vx: float
    e_y: float
    e_psi: float
    delta_deg: float
    accel: float
    u_op_ddelta: float
    u_op_daccel: float
    applied_ddelta: float
    applied_daccel: float
    verdict: str        # certified | detection | backup | safety_event
    qp_status: str      # feasible | infeasible | maxiter | none
    qp_iters: int
    objective: float
    station: float


@dataclass
class SimulationLog:
    records: list = field(default_factory=list)
    takeover_step: int | None = None
    takeover_station: float | None = None
    min_clearance: float = np.inf
    collision: bool = False
    safety_event: bool = False
    stopped: bool = False
    aborted: bool = False


@dataclass
class Metrics:
    omega: float
    v_x: float
    d_mpc: float | None
    d_opt: float | None
    lead_samples: int | None
    detection_error: str     # none | type1 | type2
    min_clearance: float
    collision: bool


def build_road_path(cfg: ScenarioConfig) -> ReferencePath:
    length_x = cfg.v_x * cfg.duration + cfg.v_x * 2.0 + 20.0
    fn = lambda x: cfg.amplitude * np.sin(cfg.omega * x) + cfg.offset
    return ReferencePath.from_function(fn, length_x, cfg.v_x)


def build_ppc_path(cfg: ScenarioConfig, road: ReferencePath,
                   margin: float) -> ReferencePath:
    """The operating controller's own reference (may include avoidance)."""
    mode = cfg.ppc_path_mode.split(":")[0]
    if mode == "blind":
        return road
    obs = cfg.obstacle
    clearance = obs.width / 2.0 + 1.0 + margin + 0.7
    target = -obs.side * clearance
    if mode == "late":
        start = cfg.late_start_station
        ramp = 12.0
    else:  # early
        start = obs.s_start - 70.0
        ramp = 45.0
    hold_end = obs.s_end + 10.0
    release = 40.0

    def offset(s):
        if s < start:
            return 0.0
        if s < start + ramp:
            return target * 0.5 * (1 - np.cos(np.pi * (s - start) / ramp))
        if s < hold_end:
            return target
        if s < hold_end + release:
            return target * 0.5 * (1 + np.cos(np.pi * (s - hold_end) / release))
        return 0.0

    # lateral offset applied along the road normal, sampled on the road grid
    xs = np.empty_like(road.xs)
    ys = np.empty_like(road.ys)
    for i, s in enumerate(road.stations):
        off = offset(s)
        nx, ny = road.normal_at(s)
        xs[i] = road.xs[i] + off * nx
        ys[i] = road.ys[i] + off * ny
    return ReferencePath(xs, ys, cfg.v_x)


def _initial_plant(road: ReferencePath, v_x: float) -> PlantState:
    x0, y0 = road.point_at(0.0)
    heading = road.heading_at(0.0)
    return PlantState(x=x0, y=y0, yaw=heading, vx=v_x, vy=0.0,
                      yaw_rate=v_x * road.curvature_at(0.0), delta=0.0,
                      accel=0.0)


def _clearance(road: ReferencePath, plant: PlantState, obs: ObstacleSpec,
               veh_width: float) -> float:
    """Signed distance from the vehicle's lateral footprint to the obstacle
    rectangle in road-frame (station, lateral) coordinates; negative means
    overlap (penetration depth)."""
    try:
        station, lateral, _ = road.project(plant.x, plant.y)
    except PathExtentError:
        return np.inf
    gap_s = max(obs.s_start - station, station - obs.s_end, 0.0)
    gap_y = abs(lateral) - (obs.width + veh_width) / 2.0
    if gap_s > 0.0 and gap_y > 0.0:
        return float(np.hypot(gap_s, gap_y))
    if gap_s > 0.0:
        return float(gap_s)
    return float(gap_y)   # may be negative: lateral penetration


_MARGIN_CACHE: dict = {}


def estimated_margin(v_x: float, ts: float = 0.1,
                     grid_points: int = MARGIN_GRID_POINTS) -> float:
    """Estimated lateral margin for a given speed, cached per resolution."""
    key = (round(v_x, 6), round(ts, 6), grid_points)
    if key not in _MARGIN_CACHE:
        params = default_params(v_x)
        model = discretize_exact(build_continuous_model(params), ts)
        delta, _ = estimate_delta(default_grid(grid_points), model, params)
        _MARGIN_CACHE[key] = delta
    return _MARGIN_CACHE[key]


def _margin_for(cfg: ScenarioConfig, margin: float | None) -> float:
    if cfg.delta is not None:
        return cfg.delta
    if margin is not None:
        return margin
    return estimated_margin(DESIGN_SPEED)


def make_supervisor(cfg: ScenarioConfig, road: ReferencePath,
                    params: VehicleParams, mpc: MpcConfig,
                    margin: float) -> Supervisor:
    model = discretize_exact(build_continuous_model(params), mpc.ts)
    return Supervisor(model, mpc, params, road, cfg.obstacle, margin,
                      backup_margin=margin / mpc.horizon)


def run_scenario(cfg: ScenarioConfig, margin: float | None = None,
                 mpc: MpcConfig | None = None) -> SimulationLog:
    """Execute the supervised closed loop for one scenario."""
    params = default_params(cfg.v_x)
    mpc = mpc or default_config()
    road = build_road_path(cfg)
    delta = _margin_for(cfg, margin)
    ppc_path = build_ppc_path(cfg, road, delta)
    sup = make_supervisor(cfg, road, params, mpc, delta)
    ppc_cfg = PursuitConfig(wheelbase=params.wheelbase)

    plant = _initial_plant(road, cfg.v_x)
    sup_state = SupervisorState(margin=delta)
    log = SimulationLog()
    n_steps = int(round(cfg.duration / mpc.ts))
    ref_station = 0.0

    for k in range(n_steps):
        t = k * mpc.ts
        u_op = RateInput(0.0, 0.0)
        qp_status, qp_iters, objective = "none", 0, np.nan
        if not sup_state.event_detected:
            u_op = pursuit_control(plant, ppc_path, ppc_cfg, mpc.ts,
                                   mpc.ddelta_limits, mpc.daccel_limits,
                                   mpc.accel_limits)
            try:
                verdict, outcome = sup.certify(u_op, plant, sup_state,
                                               ref_station + cfg.v_x * mpc.ts)
            except PlantValidityError:
                # the one-step prediction stalls when the operating
                # controller has braked to a halt; that ends the run safely
                if plant.vx <= 0.6:
                    log.stopped = True
                else:
                    log.aborted = True
                break
            except PathExtentError:
                log.aborted = True
                break
            qp_status, qp_iters, objective = _outcome_fields(outcome)
            if isinstance(verdict, Certified):
                applied = u_op
                kind = "certified"
            else:
                applied = verdict.fallback
                kind = "detection"
                sup_state.event_detected = True
                log.takeover_step = k
        else:
            try:
                applied, unsafe, outcome = sup.backup_control(plant, ref_station)
            except PathExtentError:
                log.aborted = True
                break
            qp_status, qp_iters, objective = _outcome_fields(outcome)
            kind = "safety_event" if unsafe else "backup"
            if unsafe:
                log.safety_event = True

        err = to_error_state(plant, road, ref_station)
        station = ref_station + err.e_x
        if log.takeover_step == k:
            log.takeover_station = station
        log.records.append(StepRecord(
            k=k, t=t, x=plant.x, y=plant.y, yaw=plant.yaw, vx=plant.vx,
            e_y=err.e_y, e_psi=err.e_psi,
            delta_deg=float(np.rad2deg(plant.delta)), accel=plant.accel,
            u_op_ddelta=u_op.delta_dot, u_op_daccel=u_op.accel_dot,
            applied_ddelta=applied.delta_dot, applied_daccel=applied.accel_dot,
            verdict=kind, qp_status=qp_status, qp_iters=qp_iters,
            objective=objective, station=station))

        clearance = _clearance(road, plant, cfg.obstacle, params.veh_width)
        log.min_clearance = min(log.min_clearance, clearance)
        try:
            plant = plant_step(plant, applied, mpc.ts, params,
                               delta_limits=mpc.delta_limits,
                               accel_limits=mpc.accel_limits)
        except PlantValidityError:
            # a full stop under fallback braking ends the run safely
            if plant.vx <= 0.6 and applied.accel_dot <= 0.0:
                log.stopped = True
            else:
                log.aborted = True
            break
        ref_station += cfg.v_x * mpc.ts

    log.collision = log.min_clearance < 0.0
    return log


def _outcome_fields(outcome):
    if isinstance(outcome, qp.Feasible):
        return "feasible", outcome.iterations, float(outcome.objective)
    if isinstance(outcome, qp.Infeasible):
        return "infeasible", outcome.iterations, np.nan
    return "maxiter", outcome.iterations, np.nan


def counterfactual_rollout(cfg: ScenarioConfig, margin: float | None = None,
                           mpc: MpcConfig | None = None):
    """Unsupervised PPC rollout with an unmargined shadow supervisor.

    Returns ``(first infeasible step or None, station one step prior or
    None)``.
    """
    params = default_params(cfg.v_x)
    mpc = mpc or default_config()
    road = build_road_path(cfg)
    delta = _margin_for(cfg, margin)
    ppc_path = build_ppc_path(cfg, road, delta)
    sup = make_supervisor(cfg, road, params, mpc, delta)
    ppc_cfg = PursuitConfig(wheelbase=params.wheelbase)

    plant = _initial_plant(road, cfg.v_x)
    shadow = SupervisorState(margin=0.0)
    ref_station = 0.0
    n_steps = int(round(cfg.duration / mpc.ts))
    prev_station = 0.0
    for k in range(n_steps):
        u_op = pursuit_control(plant, ppc_path, ppc_cfg, mpc.ts,
                               mpc.ddelta_limits, mpc.daccel_limits,
                               mpc.accel_limits)
        try:
            verdict, _ = sup.certify(u_op, plant, shadow,
                                     ref_station + cfg.v_x * mpc.ts)
        except (PathExtentError, PlantValidityError):
            return None, None
        err = to_error_state(plant, road, ref_station)
        station = ref_station + err.e_x
        if isinstance(verdict, DetectionEvent):
            return k, prev_station
        prev_station = station
        try:
            plant = plant_step(plant, u_op, mpc.ts, params,
                               delta_limits=mpc.delta_limits,
                               accel_limits=mpc.accel_limits)
        except PlantValidityError:
            return None, None
        ref_station += cfg.v_x * mpc.ts
    return None, None


def scenario_metrics(cfg: ScenarioConfig, margin: float | None = None,
                     mpc: MpcConfig | None = None):
    """Run the supervised loop plus counterfactual; classify the detection."""
    log = run_scenario(cfg, margin, mpc)
    k_inf, d_opt = counterfactual_rollout(cfg, margin, mpc)

    if log.takeover_step is None:
        error = "type2" if (k_inf is not None or log.collision) else "none"
        lead = None
        d_mpc = None
    elif k_inf is None:
        error = "type1"
        lead = None
        d_mpc = log.takeover_station
    else:
        error = "none"
        lead = k_inf - log.takeover_step
        d_mpc = log.takeover_station

    return Metrics(omega=cfg.omega, v_x=cfg.v_x, d_mpc=d_mpc, d_opt=d_opt,
                   lead_samples=lead, detection_error=error,
                   min_clearance=float(log.min_clearance),
                   collision=log.collision), log


def sweep_configs(base: ScenarioConfig | None = None):
    base = base or ScenarioConfig()
    out = []
    for omega, speed in itertools.product(SWEEP_OMEGAS, SWEEP_SPEEDS):
        duration = (base.obstacle_end + 40.0) / speed
        out.append(replace(base, omega=omega, v_x=speed, duration=duration,
                           ppc_path_mode="blind"))
    return out


def run_sweep(base: ScenarioConfig | None = None, margin: float | None = None,
              mpc: MpcConfig | None = None):
    """Full scenario sweep; per-scenario failures are recorded, not raised."""
    results = []
    for cfg in sweep_configs(base):
        try:
            metrics, _ = scenario_metrics(cfg, margin, mpc)
        except Exception as exc:  # keep the sweep going
            metrics = Metrics(omega=cfg.omega, v_x=cfg.v_x, d_mpc=None,
                              d_opt=None, lead_samples=None,
                              detection_error=f"failed:{type(exc).__name__}",
                              min_clearance=np.nan, collision=True)
        results.append(metrics)
    return results



