"""CSV and plot emission for scenario logs and sweep metrics."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .scenario import Metrics, ScenarioConfig, SimulationLog, build_road_path

STEP_COLUMNS = ("k", "t", "x", "y", "yaw", "vx", "e_y", "e_psi", "delta_deg",
                "accel", "u_op_ddelta", "u_op_daccel", "applied_ddelta",
                "applied_daccel", "verdict", "qp_status", "qp_iters",
                "objective")

METRIC_COLUMNS = ("omega", "v_x", "d_mpc", "d_opt", "lead_samples",
                  "detection_error", "min_clearance", "collision")

# deterministic SVG output
matplotlib.rcParams["svg.hashsalt"] = "safedrive"
_SVG_META = {"Date": None}


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if value is None:
        return ""
    if isinstance(value, float):
        if np.isnan(value):
            return "nan"
        return f"{value:.10g}"
    return str(value)


def write_step_csv(log: SimulationLog, path: str):
    with open(path, "w") as f:
        f.write(",".join(STEP_COLUMNS) + "\n")
        for rec in log.records:
            f.write(",".join(_fmt(getattr(rec, c)) for c in STEP_COLUMNS) + "\n")


def write_metrics_csv(metrics: list, path: str):
    with open(path, "w") as f:
        f.write(",".join(METRIC_COLUMNS) + "\n")
        for m in metrics:
            f.write(",".join(_fmt(getattr(m, c)) for c in METRIC_COLUMNS) + "\n")


def plot_trajectory(log: SimulationLog, cfg: ScenarioConfig, ppc_path,
                    path: str):
    """Trajectory over the reference path with the obstacle and takeover mark."""
    road = build_road_path(cfg)
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.plot(ppc_path.xs, ppc_path.ys, "r--", lw=1.2,
            label="operating reference")
    if ppc_path is not road:
        ax.plot(road.xs, road.ys, color="0.6", lw=0.8, label="road centerline")
    xs = [r.x for r in log.records]
    ys = [r.y for r in log.records]
    ax.plot(xs, ys, "b-", lw=1.5, label="vehicle")

    obs = cfg.obstacle
    corners = _obstacle_corners(road, obs)
    ax.fill(corners[:, 0], corners[:, 1], color="k", alpha=0.7,
            label="obstacle")
    if log.takeover_step is not None:
        rec = log.records[log.takeover_step]
        ax.plot(rec.x, rec.y, "ro", ms=8, label="takeover")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(loc="best", fontsize=8)
    ax.set_aspect("equal", adjustable="datalim")
    fig.tight_layout()
    fig.savefig(path, metadata=_SVG_META)
    plt.close(fig)


def _obstacle_corners(road, obs):
    pts = []
    for s, lat in ((obs.s_start, -obs.width / 2), (obs.s_end, -obs.width / 2),
                   (obs.s_end, obs.width / 2), (obs.s_start, obs.width / 2)):
        s = min(s, road.length)
        px, py = road.point_at(s)
        nx, ny = road.normal_at(s)
        pts.append((px + lat * nx, py + lat * ny))
    return np.array(pts)


def plot_histograms(metrics: list, out_dir: str):
    """Distance-gap and lead-sample histograms over a sweep."""
    gaps = [m.d_mpc - m.d_opt for m in metrics
            if m.d_mpc is not None and m.d_opt is not None]
    leads = [m.lead_samples for m in metrics if m.lead_samples is not None]

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(gaps, bins=np.arange(0.0, max(gaps, default=1.0) + 1.0, 0.5),
            edgecolor="k")
    ax.set_xlabel("takeover distance before infeasibility [m]")
    ax.set_ylabel("scenarios")
    fig.tight_layout()
    gap_file = os.path.join(out_dir, "hist_distance_gap.svg")
    fig.savefig(gap_file, metadata=_SVG_META)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    upper = max(leads, default=1) + 1
    ax.hist(leads, bins=np.arange(-0.5, upper + 0.5, 1.0), edgecolor="k")
    ax.set_xlabel("detection lead [samples]")
    ax.set_ylabel("scenarios")
    fig.tight_layout()
    lead_file = os.path.join(out_dir, "hist_lead_samples.svg")
    fig.savefig(lead_file, metadata=_SVG_META)
    plt.close(fig)
    return gap_file, lead_file
