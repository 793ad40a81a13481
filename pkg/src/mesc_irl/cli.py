"""``mesc-irl`` command-line entry point.

Exit codes: 0 success, 2 usage or validation error, 3 grid generation
failure, 4 learner divergence, 5 one or more experiment runs failed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .experiments import (
    CSV_FIELDS,
    GenerationError,
    RandomGridParams,
    SweepConfig,
    TransferConfig,
    grid_truth,
    load_bundled_grid,
    random_constrained_grid,
    run_sweep,
    run_transfer,
    sample_demonstrations,
    summarize,
    with_weights,
)
from .learner import LearnConfig, LearnerDivergence, mesc_irl
from .maxent import soft_backward
from .mdp import InvalidSpecError, build_gridworld, feature_label, validate_trajectory
from .metrics import (
    false_positive_rate_hard,
    false_positive_rate_soft,
    kl_to_demos,
    mean_reward,
)
from .probability import DegenerateScaleError, binarize, constraint_report

log = logging.getLogger("mesc_irl")

EXIT_OK, EXIT_USAGE, EXIT_GENERATION, EXIT_DIVERGENCE, EXIT_RUNS = 0, 2, 3, 4, 5
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


def _read(path: str) -> str:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p.read_text(encoding="utf-8")


def _write(path: str, text: str) -> None:
    p = Path(path)
    if p.parent != Path("."):
        p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)


def _load_json(path: str):
    try:
        return json.loads(_read(path))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from exc


def _load_grid(args):
    spec = load_bundled_grid() if args.grid == "fig1" else io.grid_spec_from_dict(_load_json(args.grid))
    if getattr(args, "deterministic", False):
        spec = dataclasses.replace(spec, action_failure_prob=0.0)
    if getattr(args, "horizon", None) is not None:
        spec = dataclasses.replace(spec, horizon=args.horizon)
    spec.validate()
    return spec


def _load_demos(path, mdp):
    demos = io.demos_from_jsonl(_read(path))
    if not demos:
        raise UsageError(f"{path}: no demonstrations")
    for i, tau in enumerate(demos):
        try:
            validate_trajectory(mdp, tau)
        except ValueError as exc:
            raise UsageError(f"{path}: demo {i}: {exc}") from exc
    return demos


def _learn_config(args, base: LearnConfig | None = None) -> LearnConfig:
    cfg = base or LearnConfig()
    over = {}
    if args.epochs is not None:
        over["epochs"] = args.epochs
    if args.learning_rate is not None:
        over["learning_rate"] = args.learning_rate
    if args.l2 is not None:
        over["l2_penalty"] = args.l2
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    return dataclasses.replace(cfg, **over) if over else cfg


def cmd_gen_grid(args) -> int:
    if args.fig1:
        spec = load_bundled_grid()
        if args.deterministic:
            spec = dataclasses.replace(spec, action_failure_prob=0.0)
        if args.horizon is not None:
            spec = dataclasses.replace(spec, horizon=args.horizon)
        spec.validate()
        _, truth = grid_truth(spec)
    else:
        params = RandomGridParams(
            width=args.width,
            height=args.height,
            n_blue=args.n_blue,
            n_green=args.n_green,
            n_constrained_states=args.n_constrained,
            constraint_cost=args.constraint_cost,
            min_start_goal_distance=args.min_distance,
            action_failure_prob=0.0 if args.deterministic else args.failure_prob,
            seed=args.seed,
            horizon=50 if args.horizon is None else args.horizon,
        )
        spec, truth = random_constrained_grid(params)
    _write(args.out, io.grid_spec_to_json(spec))
    _write(args.truth_out, io.dumps(io.ground_truth_to_dict(truth)))
    return EXIT_OK


def cmd_sample_demos(args) -> int:
    spec = _load_grid(args)
    mdp, truth = grid_truth(spec)
    demos = sample_demonstrations(with_weights(mdp, truth.true_weights(mdp)), args.n, args.seed)
    _write(args.out, io.demos_to_jsonl(demos))
    return EXIT_OK


def cmd_learn(args) -> int:
    spec = _load_grid(args)
    mdp = build_gridworld(spec)
    demos = _load_demos(args.demos, mdp)
    cfg = _learn_config(args)
    if args.init:
        init = io.learn_result_from_dict(_load_json(args.init)).residual_weights
        cfg = dataclasses.replace(cfg, init_residual=init)
    result = mesc_irl(mdp, demos, cfg)
    report = constraint_report(mdp, result.residual_weights)
    labels = [feature_label(spec, i) for i in range(mdp.num_features)]
    _write(args.out, io.dumps(io.learn_result_to_dict(result, cfg)))
    _write(args.report_out, io.dumps(io.report_to_dict(report, labels)))
    grad = result.gradient_norm_trace[-1] if result.gradient_norm_trace else float("nan")
    print(f"final_log_likelihood {result.final_log_likelihood:.6f}")
    print(f"gradient_norm {grad:.6f}")
    return EXIT_OK


def cmd_report(args) -> int:
    spec = _load_grid(args)
    mdp = build_gridworld(spec)
    result = io.learn_result_from_dict(_load_json(args.result))
    if result.residual_weights.shape != (mdp.num_features,):
        raise UsageError("result does not match the grid's feature dimension")
    report = constraint_report(mdp, result.residual_weights)
    labels = [feature_label(spec, i) for i in range(mdp.num_features)]
    doc = io.report_to_dict(report, labels, transitions=args.transitions)
    flagged = sorted(binarize(report, args.zeta_threshold))
    doc["zeta_threshold"] = args.zeta_threshold
    doc["flagged_features"] = [labels[i] for _, i in flagged]
    if args.out:
        _write(args.out, io.dumps(doc))
    for _, i in flagged:
        print(f"{labels[i]}\t{report.feature_zeta[i]:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    spec = _load_grid(args)
    mdp, truth = grid_truth(spec)
    demos = _load_demos(args.demos, mdp)
    result = io.learn_result_from_dict(_load_json(args.result))
    if result.residual_weights.shape != (mdp.num_features,):
        raise UsageError("result does not match the grid's feature dimension")
    report = constraint_report(mdp, result.residual_weights)
    policy = soft_backward(mdp, mdp.nominal_weights - result.residual_weights)
    predicted = binarize(report, args.zeta_threshold)
    doc = {
        "zeta_threshold": args.zeta_threshold,
        "chi": args.chi,
        "fp_hard": false_positive_rate_hard(predicted, truth),
        "fp_soft": false_positive_rate_soft(report, truth, args.chi),
        "kl": kl_to_demos(mdp, policy, demos),
        "mean_reward": mean_reward(mdp, policy, truth.true_weights(mdp), args.episodes, args.seed),
    }
    text = io.dumps(doc)
    if args.out:
        _write(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


def _finish_rows(args, rows) -> int:
    _write(args.out, io.write_csv(rows, CSV_FIELDS))
    failed = sorted({r["run_id"] for r in rows if r["error"]})
    summary = {"rows": len(rows), "failed_runs": failed, "points": summarize(rows)}
    _write(args.summary, io.dumps(summary))
    if failed:
        log.error("%d run(s) failed: %s", len(failed), ", ".join(failed))
        return EXIT_RUNS
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.config:
        doc = _load_json(args.config)
        config = io.sweep_config_from_dict(doc, Path(args.config).parent)
    else:
        config = SweepConfig(grid=load_bundled_grid())
    over = {"learn_config": _learn_config(args, config.learn_config), "record_timing": args.timing}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.deterministic:
        over["deterministic"] = True
    ev = config.eval_config
    if args.zeta_threshold is not None:
        ev = dataclasses.replace(ev, zeta_thresholds=list(args.zeta_threshold))
    if args.chi is not None:
        ev = dataclasses.replace(ev, chis=list(args.chi))
    over["eval_config"] = ev
    if args.horizon is not None:
        if config.grid is not None:
            over["grid"] = dataclasses.replace(config.grid, horizon=args.horizon)
        else:
            over["grid_params"] = dataclasses.replace(config.grid_params, horizon=args.horizon)
    config = dataclasses.replace(config, **over)
    return _finish_rows(args, run_sweep(config, workers=args.workers))


def cmd_transfer(args) -> int:
    config = io.transfer_config_from_dict(_load_json(args.config)) if args.config else TransferConfig()
    over = {"learn_config": _learn_config(args, config.learn_config), "record_timing": args.timing}
    if args.seed is not None:
        over["seed"] = args.seed
    gp = config.grid_params
    if args.deterministic:
        gp = dataclasses.replace(gp, action_failure_prob=0.0)
    if args.horizon is not None:
        gp = dataclasses.replace(gp, horizon=args.horizon)
    over["grid_params"] = gp
    if args.n_grids is not None:
        over["n_grids"] = args.n_grids
    config = dataclasses.replace(config, **over)
    return _finish_rows(args, run_transfer(config, workers=args.workers))


def _probability(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in [0, 1]")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"{text} must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mesc-irl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    world = argparse.ArgumentParser(add_help=False)
    world.add_argument("--deterministic", action="store_true", help="set action failure probability to 0")
    world.add_argument("--horizon", type=_positive_int)

    learning = argparse.ArgumentParser(add_help=False)
    learning.add_argument("--epochs", type=_positive_int)
    learning.add_argument("--learning-rate", type=float)
    learning.add_argument("--l2", type=float)

    grid_in = argparse.ArgumentParser(add_help=False)
    grid_in.add_argument("--grid", required=True, help='grid JSON file, or "fig1" for the bundled grid')

    experiment = argparse.ArgumentParser(add_help=False)
    experiment.add_argument("--config", help="config JSON file (defaults are used when omitted)")
    experiment.add_argument("--seed", type=int)
    experiment.add_argument("--workers", type=_positive_int, default=1)
    experiment.add_argument("--timing", action="store_true", help="fill wall_time_ms (breaks byte-identical output)")
    experiment.add_argument("--out", default="results.csv")
    experiment.add_argument("--summary", default="summary.json")

    p = sub.add_parser("gen-grid", parents=[world], help="sample a random constrained grid")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fig1", action="store_true", help="write the bundled example grid instead")
    p.add_argument("--width", type=_positive_int, default=9)
    p.add_argument("--height", type=_positive_int, default=9)
    p.add_argument("--n-blue", type=int, default=6)
    p.add_argument("--n-green", type=int, default=6)
    p.add_argument("--n-constrained", type=int, default=6)
    p.add_argument("--constraint-cost", type=float, default=-50.0)
    p.add_argument("--min-distance", type=int, default=8)
    p.add_argument("--failure-prob", type=_probability, default=0.1)
    p.add_argument("--out", default="grid.json")
    p.add_argument("--truth-out", default="truth.json")
    p.set_defaults(func=cmd_gen_grid)

    p = sub.add_parser("sample-demos", parents=[grid_in, world], help="roll out demos in the constrained world")
    p.add_argument("--n", type=_positive_int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="demos.jsonl")
    p.set_defaults(func=cmd_sample_demos)

    p = sub.add_parser("learn", parents=[grid_in, world, learning], help="learn residual penalties")
    p.add_argument("--demos", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--init", help="learn result JSON whose residual weights seed the run")
    p.add_argument("--out", default="result.json")
    p.add_argument("--report-out", default="report.json")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("report", parents=[grid_in, world], help="constraint probabilities of a learn result")
    p.add_argument("--result", required=True)
    p.add_argument("--zeta-threshold", type=float, default=0.6)
    p.add_argument("--transitions", action="store_true", help="also list per-transition probabilities")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("eval", parents=[grid_in, world], help="score a learn result against the grid's ground truth")
    p.add_argument("--result", required=True)
    p.add_argument("--demos", required=True)
    p.add_argument("--zeta-threshold", type=float, default=0.6)
    p.add_argument("--chi", type=_probability, default=0.2)
    p.add_argument("--episodes", type=_positive_int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[experiment, world, learning], help="demo-count sweep")
    p.add_argument("--zeta-threshold", type=float, nargs="+")
    p.add_argument("--chi", type=_probability, nargs="+")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("transfer", parents=[experiment, world, learning], help="transfer vs cold-start study")
    p.add_argument("--n-grids", type=_positive_int)
    p.set_defaults(func=cmd_transfer)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("MESC_LOG", "error").lower()
    if level not in LOG_LEVELS:
        raise UsageError(f"MESC_LOG must be one of {', '.join(LOG_LEVELS)}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _setup_logging()
        with np.errstate(over="ignore"):
            return args.func(args)
    except GenerationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GENERATION
    except LearnerDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (UsageError, io.SchemaError, InvalidSpecError, DegenerateScaleError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
