"""Command-line interface.

Subcommands: ``synth`` generates a scenario, ``train`` fits the affinity
model from labeled features, ``solve`` tracks a detection file, ``eval``
scores trajectories against ground truth, and ``trace`` compares the solver
variants on one instance.  Log verbosity comes from ``FUSETRACK_LOG`` or
``--log-level``; any error exits nonzero with a message.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import fields, replace
from typing import get_type_hints

from . import synth
from .affinity import AffinityConfig, Correspondences, load_model, load_priors, save_model, save_priors
from .graph import read_instance
from .hierarchy import solve_hierarchical
from .metrics import evaluate_metrics, read_trajectories, write_trajectories
from .oracles import exact_partition_solver
from .pipeline import (
    PipelineConfig,
    load_detections,
    track,
    train_model_from_features,
    write_detections,
    write_feature_samples,
)
from .solver import SolverConfig, solve_fw, solve_with_schedule

logger = logging.getLogger("fusetrack")

EXACT_TRACE_LIMIT = 16


def _add_solver_flags(parser: argparse.ArgumentParser) -> None:
    defaults = SolverConfig()
    group = parser.add_argument_group("solver")
    group.add_argument("--max-iterations", type=int, default=defaults.max_iterations)
    group.add_argument("--gap-tolerance", type=float, default=defaults.gap_tolerance)
    group.add_argument("--max-labels", type=int, default=defaults.max_labels)
    group.add_argument(
        "--lambda-halvings-max", type=int, default=defaults.lambda_halvings_max
    )
    group.add_argument(
        "--short-run-threshold", type=int, default=defaults.short_run_threshold
    )
    group.add_argument(
        "--no-away-steps", action="store_true", help="disable away steps"
    )
    group.add_argument(
        "--active-set-drop-tolerance",
        type=float,
        default=defaults.active_set_drop_tolerance,
    )
    group.add_argument("--exact-threshold", type=int, default=defaults.exact_threshold)
    group.add_argument(
        "--hierarchy-max-iterations",
        type=int,
        default=defaults.hierarchy_max_iterations,
    )
    group.add_argument(
        "--reconsider-positive-unary",
        action="store_true",
        help="re-enter rejected nodes with positive unary cost during correction",
    )


def _solver_config(args: argparse.Namespace) -> SolverConfig:
    return SolverConfig(
        max_iterations=args.max_iterations,
        gap_tolerance=args.gap_tolerance,
        max_labels=args.max_labels,
        lambda_halvings_max=args.lambda_halvings_max,
        short_run_threshold=args.short_run_threshold,
        away_steps=not args.no_away_steps,
        active_set_drop_tolerance=args.active_set_drop_tolerance,
        exact_threshold=args.exact_threshold,
        hierarchy_max_iterations=args.hierarchy_max_iterations,
        reconsider_positive_unary=args.reconsider_positive_unary,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fusetrack",
        description="multi-detector tracking via graph labeling",
    )
    parser.add_argument(
        "--log-level",
        default=None,
        help="logging level (overrides the FUSETRACK_LOG environment variable)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic scenario")
    p_synth.add_argument("--seed", type=int, required=True)
    p_synth.add_argument("--output-dir", required=True)
    p_synth.add_argument(
        "--features",
        action="store_true",
        help="also write labeled training features",
    )
    param_types = get_type_hints(synth.ScenarioParams)
    for fld in fields(synth.ScenarioParams):
        flag = "--" + fld.name.replace("_", "-")
        p_synth.add_argument(flag, type=param_types[fld.name], default=None)

    p_train = sub.add_parser("train", help="fit the affinity model")
    p_train.add_argument("--features", required=True)
    p_train.add_argument("--output", required=True)

    p_solve = sub.add_parser("solve", help="track a detection file")
    p_solve.add_argument("--detections", required=True)
    p_solve.add_argument("--correspondences", required=True)
    p_solve.add_argument("--model", required=True)
    p_solve.add_argument("--priors", required=True)
    p_solve.add_argument("--output", required=True)
    p_solve.add_argument(
        "--body-only", action="store_true", help="drop head detections from the input"
    )
    p_solve.add_argument("--window", type=int, default=AffinityConfig().temporal_window)
    p_solve.add_argument(
        "--repulsion", type=float, default=AffinityConfig().same_detector_repulsion
    )
    p_solve.add_argument(
        "--batch-cap", type=int, default=PipelineConfig().max_batch_nodes
    )
    p_solve.add_argument("--score-scale", type=float, default=1.0)
    p_solve.add_argument("--score-offset", type=float, default=0.0)
    _add_solver_flags(p_solve)

    p_eval = sub.add_parser("eval", help="score trajectories against ground truth")
    p_eval.add_argument("--trajectories", required=True)
    p_eval.add_argument("--ground-truth", required=True)
    p_eval.add_argument("--output", required=True)
    p_eval.add_argument("--iou", type=float, default=0.5)

    p_trace = sub.add_parser(
        "trace", help="compare solver variants on one instance"
    )
    source = p_trace.add_mutually_exclusive_group(required=True)
    source.add_argument("--instance", help="instance file to load")
    source.add_argument("--synth-seed", type=int, help="generate a random instance")
    p_trace.add_argument("--synth-nodes", type=int, default=60)
    p_trace.add_argument("--synth-frames", type=int, default=10)
    p_trace.add_argument("--synth-window", type=int, default=9)
    p_trace.add_argument("--synth-density", type=float, default=0.7)
    p_trace.add_argument("--output", required=True)
    _add_solver_flags(p_trace)

    return parser


def _cmd_synth(args: argparse.Namespace) -> int:
    overrides = {}
    for fld in fields(synth.ScenarioParams):
        value = getattr(args, fld.name)
        if value is not None:
            overrides[fld.name] = value
    params = replace(synth.ScenarioParams(), **overrides)
    scenario = synth.synthesize_scenario(args.seed, params)
    os.makedirs(args.output_dir, exist_ok=True)
    write_detections(scenario.detections, os.path.join(args.output_dir, "detections.csv"))
    scenario.correspondences.save(os.path.join(args.output_dir, "correspondences.csv"))
    write_trajectories(scenario.ground_truth, os.path.join(args.output_dir, "gt.csv"))
    priors = synth.scenario_priors(scenario)
    save_priors(priors, os.path.join(args.output_dir, "priors.txt"))
    if args.features:
        samples = synth.scenario_training_samples(scenario, priors)
        write_feature_samples(samples, os.path.join(args.output_dir, "features.csv"))
    logger.info(
        "scenario seed %d: %d detections, %d correspondence rows",
        args.seed,
        len(scenario.detections),
        len(scenario.correspondences),
    )
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    model = train_model_from_features(args.features)
    save_model(model, args.output)
    logger.info("model written to %s", args.output)
    return 0


def _cmd_solve(args: argparse.Namespace) -> int:
    detections = load_detections(args.detections, args.score_scale, args.score_offset)
    if args.body_only:
        detections = synth.body_only(detections)
    correspondences = Correspondences.load(args.correspondences)
    model = load_model(args.model)
    priors = load_priors(args.priors)
    config = PipelineConfig(
        solver=_solver_config(args),
        affinity=AffinityConfig(
            temporal_window=args.window, same_detector_repulsion=args.repulsion
        ),
        max_batch_nodes=args.batch_cap,
        score_scale=args.score_scale,
        score_offset=args.score_offset,
    )
    result = track(detections, correspondences, model, priors, config)
    write_trajectories(result.trajectories, args.output)
    logger.info(
        "%d trajectories over %d batches (%d pairs lacked correspondences)",
        len(result.trajectories),
        len(result.batches),
        result.missing_correspondences,
    )
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    hypotheses = read_trajectories(args.trajectories)
    ground_truth = read_trajectories(args.ground_truth)
    metrics = evaluate_metrics(ground_truth, hypotheses, args.iou)
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write(
            "mota,false_positives,false_negatives,id_switches,"
            "mostly_tracked,mostly_lost,ground_truth_count\n"
        )
        fh.write(
            f"{metrics.mota!r},{metrics.false_positives},{metrics.false_negatives},"
            f"{metrics.id_switches},{metrics.mostly_tracked},{metrics.mostly_lost},"
            f"{metrics.ground_truth_count}\n"
        )
    print(
        f"MOTA {metrics.mota:.4f}  FP {metrics.false_positives}  "
        f"FN {metrics.false_negatives}  IDS {metrics.id_switches}  "
        f"MT {metrics.mostly_tracked}  ML {metrics.mostly_lost}"
    )
    return 0


def _cmd_trace(args: argparse.Namespace) -> int:
    if args.instance:
        graph = read_instance(args.instance)
    else:
        graph = synth.random_cost_instance(
            args.synth_seed,
            args.synth_nodes,
            frames=args.synth_frames,
            window=args.synth_window,
            density=args.synth_density,
        )
    config = _solver_config(args)

    rows: list[tuple[str, float, float, float, float]] = []
    plain = solve_fw(graph, config, lambda_reg=0.0)
    rows.extend(("fw", s.seconds, s.best_objective, s.gap, s.lambda_reg) for s in plain.trace)

    schedule_start = time.perf_counter()
    schedule = solve_with_schedule(graph, config)
    schedule_elapsed = time.perf_counter() - schedule_start
    rows.extend(
        ("fw_lambda", s.seconds, s.best_objective, s.gap, s.lambda_reg)
        for s in schedule.trace
    )

    refined = solve_hierarchical(graph, schedule.best_binary, config)
    rows.append(
        ("fw_lambda_h", schedule_elapsed, schedule.best_objective, 0.0, 0.0)
    )
    for record in refined.iterations:
        rows.append(
            ("fw_lambda_h", schedule_elapsed + record.seconds, record.objective, 0.0, 0.0)
        )

    summary = {
        "fw": plain.best_objective,
        "fw_lambda": schedule.best_objective,
        "fw_lambda_h": graph.objective_of(refined.labeling),
    }
    if graph.n <= EXACT_TRACE_LIMIT:
        exact_start = time.perf_counter()
        exact = exact_partition_solver(graph, config.max_labels)
        rows.append(
            ("exact", time.perf_counter() - exact_start, exact.objective, 0.0, 0.0)
        )
        summary["exact"] = exact.objective

    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write("solver,wall_seconds,best_objective,gap,lambda\n")
        for solver, seconds, objective, gap, lam in rows:
            fh.write(f"{solver},{seconds!r},{objective!r},{gap!r},{lam!r}\n")
    for solver, objective in summary.items():
        print(f"{solver:12s} {objective:.6f}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "solve": _cmd_solve,
    "eval": _cmd_eval,
    "trace": _cmd_trace,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level_name = args.log_level or os.environ.get("FUSETRACK_LOG", "WARNING")
    logging.basicConfig(
        level=getattr(logging, str(level_name).upper(), logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
