"""Command-line entry point for scenarios, sweeps and margin estimation."""
from __future__ import annotations

import argparse
import os
import sys

from . import outputs
from .mismatch import default_grid, estimate_delta, write_report
from .scenario import (ScenarioConfig, build_ppc_path, build_road_path,
                       counterfactual_rollout, load_scenario, run_sweep,
                       scenario_metrics, _margin_for)
from .vehicle import build_continuous_model, default_params, discretize_exact


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="safedrive",
        description="Supervised obstacle-avoidance simulation toolkit")
    parser.add_argument("--seed", type=int, default=0, help="global RNG seed")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a single scenario")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)

    sweep = sub.add_parser("sweep", help="run the full scenario sweep")
    sweep.add_argument("--out", required=True)
    sweep.add_argument("--delta", type=float, default=None,
                       help="lateral margin override (m)")

    est = sub.add_parser("estimate-delta", help="estimate the lateral margin")
    est.add_argument("--out", required=True)
    est.add_argument("--grid-points", type=int, default=5)

    cf = sub.add_parser("counterfactual",
                        help="report the unmargined infeasibility point")
    cf.add_argument("--config", required=True)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)

    if args.command == "run":
        cfg = load_scenario(args.config)
        cfg = ScenarioConfig(**{**cfg.__dict__, "seed": args.seed}) \
            if cfg.seed != args.seed else cfg
        os.makedirs(args.out, exist_ok=True)
        metrics, log = scenario_metrics(cfg)
        outputs.write_step_csv(log, os.path.join(args.out, "steps.csv"))
        outputs.write_metrics_csv([metrics],
                                  os.path.join(args.out, "metrics.csv"))
        road = build_road_path(cfg)
        ppc = build_ppc_path(cfg, road, _margin_for(cfg, None))
        outputs.plot_trajectory(log, cfg,  ppc,
                                os.path.join(args.out, "trajectory.svg"))
        print(f"takeover_step = {log.takeover_step}")
        print(f"min_clearance = {log.min_clearance:.3f}")
        print(f"collision = {log.collision}")
        return 0

    if args.command == "sweep":
        os.makedirs(args.out, exist_ok=True)
        metrics = run_sweep(margin=args.delta)
        outputs.write_metrics_csv(metrics,
                                  os.path.join(args.out, "sweep_metrics.csv"))
        outputs.plot_histograms(metrics, args.out)
        errors = sum(m.detection_error not in ("none",) for m in metrics)
        collisions = sum(m.collision for m in metrics)
        print(f"scenarios = {len(metrics)}")
        print(f"detection_errors = {errors}")
        print(f"collisions = {collisions}")
        return 0

    if args.command == "estimate-delta":
        params = default_params()
        model = discretize_exact(build_continuous_model(params), 0.1)
        grid = default_grid(args.grid_points)
        delta, dist = estimate_delta(grid, model, params, seed=args.seed)
        write_report(args.out, delta, dist, grid)
        print(f"delta = {delta:.6f}")
        print(f"samples = {dist.samples.shape[0]}")
        return 0

    if args.command == "counterfactual":
        cfg = load_scenario(args.config)
        step, station = counterfactual_rollout(cfg)
        if step is None:
            print("no safety event within duration")
        else:
            print(f"infeasibility_step = {step}")
            print(f"d_opt = {station:.3f}")
        return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())
