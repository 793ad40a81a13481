"""Experiment protocols: random constrained grids, demo-count sweeps, transfer."""

from __future__ import annotations

import dataclasses
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .learner import LearnConfig, mesc_irl
from .maxent import rollout, soft_backward
from .mdp import (
    ACTION_NAMES,
    COLORS,
    GridSpec,
    InvalidSpecError,
    TabularMdp,
    build_gridworld,
    constraint_weight_vector,
    reachable_from,
)
from .metrics import (
    EvalConfig,
    GroundTruth,
    false_positive_rate_hard,
    false_positive_rate_soft,
    ground_truth,
    hard_constraint_weights,
    kl_to_demos,
    mean_reward,
)
from .probability import binarize, constraint_report

log = logging.getLogger(__name__)

CSV_FIELDS = (
    "run_id",
    "grid_seed",
    "demo_count",
    "epoch",
    "mode",
    "threshold",
    "fp_hard",
    "fp_soft",
    "kl",
    "mean_reward",
    "wall_time_ms",
    "error",
)


class GenerationError(RuntimeError):
    """No admissible random grid was found within the retry budget."""


@dataclass
class RandomGridParams:
    width: int = 9
    height: int = 9
    n_blue: int = 6
    n_green: int = 6
    n_constrained_states: int = 6
    constraint_cost: float = -50.0
    min_start_goal_distance: int = 8
    action_failure_prob: float = 0.1
    seed: int = 0
    # feature-level costs shared by every grid drawn with these params
    color_costs: dict[str, float] = field(default_factory=dict)
    action_costs: dict[str, float] = field(default_factory=dict)
    horizon: int = 50
    max_attempts: int = 100

    def __post_init__(self):
        free = self.width * self.height - 2
        if self.n_blue < 0 or self.n_green < 0 or self.n_constrained_states < 0:
            raise ValueError("counts must be nonnegative")
        if self.n_blue + self.n_green > free or self.n_constrained_states > free:
            raise ValueError("too many colored or constrained cells for the grid")
        if self.constraint_cost > 0:
            raise ValueError("constraint_cost must be nonpositive")
        if any(c not in COLORS for c in self.color_costs):
            raise ValueError("unknown color in color_costs")
        if any(a not in ACTION_NAMES for a in self.action_costs):
            raise ValueError("unknown action in action_costs")


def grid_truth(spec: GridSpec, mdp: TabularMdp | None = None) -> tuple[TabularMdp, GroundTruth]:
    mdp = build_gridworld(spec) if mdp is None else mdp
    return mdp, ground_truth(mdp, constraint_weight_vector(spec))


def random_constrained_grid(params: RandomGridParams) -> tuple[GridSpec, GroundTruth]:
    """Sample a grid with :func:`random_grid_spec` and compute its ground truth."""
    spec = random_grid_spec(params)
    return spec, grid_truth(spec)[1]


def random_grid_spec(params: RandomGridParams) -> GridSpec:
    """Sample start/goal, colors and constrained cells deterministically from ``params.seed``."""
    rng = np.random.default_rng(params.seed)
    w, h = params.width, params.height
    cells = np.arange(w * h)
    for attempt in range(params.max_attempts):
        start = int(rng.integers(w * h))
        r0, c0 = divmod(start, w)
        rows, cols = np.divmod(cells, w)
        far = cells[np.maximum(np.abs(rows - r0), np.abs(cols - c0)) >= params.min_start_goal_distance]
        if far.size == 0:
            continue
        goal = int(rng.choice(far))
        rest = cells[(cells != start) & (cells != goal)]
        colored = rng.choice(rest, size=params.n_blue + params.n_green, replace=False)
        colors = {int(s): "blue" for s in colored[: params.n_blue]}
        colors.update({int(s): "green" for s in colored[params.n_blue :]})
        constrained = rng.choice(rest, size=params.n_constrained_states, replace=False)
        spec = GridSpec(
            width=w,
            height=h,
            start=[(start, 1.0)],
            goal=goal,
            colors=dict(sorted(colors.items())),
            constrained_states={int(s): params.constraint_cost for s in sorted(constrained)},
            constrained_actions=dict(params.action_costs),
            constrained_colors=dict(params.color_costs),
            action_failure_prob=params.action_failure_prob,
            horizon=params.horizon,
        )
        # the goal must stay reachable without entering any penalised cell
        blocked = set(spec.constrained_states)
        blocked |= {s for s, c in colors.items() if c in params.color_costs}
        if goal not in reachable_from(spec, [start], blocked=blocked):
            log.debug("grid seed %d attempt %d severed; retrying", params.seed, attempt)
            continue
        return spec
    raise GenerationError(
        f"no admissible grid after {params.max_attempts} attempts (seed {params.seed})"
    )


def with_weights(mdp: TabularMdp, weights: np.ndarray) -> TabularMdp:
    return dataclasses.replace(mdp, nominal_weights=np.array(weights, dtype=float))


def sample_demonstrations(mdp_true: TabularMdp, n: int, seed: int):
    """Roll out the soft-optimal policy of ``mdp_true`` (under its own weights)."""
    policy = soft_backward(mdp_true, mdp_true.nominal_weights)
    return rollout(mdp_true, policy, n, np.random.default_rng(seed))


def load_bundled_grid(name: str = "fig1_grid.json") -> GridSpec:
    from .io import grid_spec_from_json

    text = resources.files("mesc_irl").joinpath("data", name).read_text(encoding="utf-8")
    return grid_spec_from_json(text)


@dataclass
class SweepConfig:
    demo_counts: list[int] = field(default_factory=lambda: [1, 2, 5, 10, 20, 50, 100])
    n_repeats: int = 10
    demos_per_set: int = 100
    learn_config: LearnConfig = field(default_factory=LearnConfig)
    eval_config: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    # either a fixed grid or random grids drawn per repeat
    grid: GridSpec | None = None
    grid_params: RandomGridParams | None = None
    deterministic: bool = False
    record_timing: bool = False

    def __post_init__(self):
        if not self.demo_counts:
            raise ValueError("demo_counts must be nonempty")
        if any(m < 1 for m in self.demo_counts) or self.n_repeats < 1 or self.demos_per_set < 1:
            raise ValueError("all counts must be positive")
        if max(self.demo_counts) > self.demos_per_set:
            raise ValueError("demo counts cannot exceed demos_per_set")
        if (self.grid is None) == (self.grid_params is None):
            raise ValueError("give exactly one of grid or grid_params")


def transfer_grid_params() -> RandomGridParams:
    """Random grids whose color and action costs are shared across layouts.

    Without shared costs there is nothing to transfer: state constraints are
    redrawn for every grid.
    """
    return RandomGridParams(color_costs={"blue": -50.0, "green": -20.0}, action_costs={"SW": -20.0})


def convergence_epoch(epochs, kls, tol: float = 0.05):
    """First checkpoint whose KL is within ``tol`` (relative) of the final KL."""
    final = kls[-1]
    for e, k in zip(epochs, kls):
        if k <= final + tol * abs(final):
            return e
    return epochs[-1]


@dataclass
class TransferConfig:
    n_grids: int = 50
    demos_per_grid: int = 50
    epochs_grid: list[int] = field(default_factory=lambda: list(range(0, 301, 5)))
    learn_config: LearnConfig = field(default_factory=LearnConfig)
    grid_params: RandomGridParams = field(default_factory=transfer_grid_params)
    reward_episodes: int = 200
    seed: int = 0
    record_timing: bool = False

    def __post_init__(self):
        if self.n_grids < 1 or self.demos_per_grid < 1:
            raise ValueError("all counts must be positive")
        if not self.epochs_grid or any(e < 0 for e in self.epochs_grid):
            raise ValueError("epochs_grid must be a nonempty list of nonnegative epochs")


def _seeds(master: int, n: int) -> list[tuple[int, int]]:
    """(grid_seed, demo_seed) per repeat, derived from the master seed."""
    out = []
    for child in np.random.SeedSequence(master).spawn(n):
        a, b = child.generate_state(2)
        out.append((int(a), int(b)))
    return out


def _row(**kw) -> dict:
    row = {k: "" for k in CSV_FIELDS}
    row.update(kw)
    return row


def _sweep_repeat(config: SweepConfig, repeat: int, grid_seed: int, demo_seed: int) -> list[dict]:
    run_id = f"r{repeat:03d}"
    try:
        if config.grid is not None:
            spec = config.grid
            grid_seed = ""
        else:
            spec, _ = random_constrained_grid(dataclasses.replace(config.grid_params, seed=grid_seed))
        if config.deterministic:
            spec = dataclasses.replace(spec, action_failure_prob=0.0)
        mdp, truth = grid_truth(spec)
        true_w = truth.true_weights(mdp)
        demos = sample_demonstrations(with_weights(mdp, true_w), config.demos_per_set, demo_seed)
    except Exception as exc:  # recorded per run, never fatal to the sweep
        log.error("run %s setup failed: %s", run_id, exc)
        return [_row(run_id=run_id, grid_seed=grid_seed, error=f"{type(exc).__name__}: {exc}")]

    ev = config.eval_config
    reference = demos[: ev.kl_sample_count] if ev.kl_sample_count else demos
    rows = []
    for m in config.demo_counts:
        t0 = time.perf_counter()
        base = dict(run_id=run_id, grid_seed=grid_seed, demo_count=m, epoch=config.learn_config.epochs)
        try:
            result = mesc_irl(mdp, demos[:m], config.learn_config)
            report = constraint_report(mdp, result.residual_weights)
            soft_policy = soft_backward(mdp, result.constrained_weights)
            soft_kl = kl_to_demos(mdp, soft_policy, reference)
            soft_reward = mean_reward(mdp, soft_policy, true_w, ev.reward_episodes, demo_seed)
            out = []
            for z in ev.zeta_thresholds:
                predicted = binarize(report, z, level="feature")
                hard_policy = soft_backward(mdp, hard_constraint_weights(mdp, predicted, ev.hard_penalty))
                out.append(
                    _row(
                        **base,
                        mode="hard",
                        threshold=z,
                        fp_hard=false_positive_rate_hard(predicted, truth),
                        kl=kl_to_demos(mdp, hard_policy, reference),
                        mean_reward=mean_reward(mdp, hard_policy, true_w, ev.reward_episodes, demo_seed),
                    )
                )
            for chi in ev.chis:
                out.append(
                    _row(
                        **base,
                        mode="soft",
                        threshold=chi,
                        fp_soft=false_positive_rate_soft(report, truth, chi, level=ev.level),
                        kl=soft_kl,
                        mean_reward=soft_reward,
                    )
                )
        except Exception as exc:
            log.error("run %s m=%d failed: %s", run_id, m, exc)
            out = [_row(**base, error=f"{type(exc).__name__}: {exc}")]
        if config.record_timing:
            ms = round((time.perf_counter() - t0) * 1000.0, 3)
            for r in out:
                r["wall_time_ms"] = ms
        rows.extend(out)
    return rows


def _sort_key(row: dict):
    mode_order = {"hard": 0, "soft": 1, "transfer": 2, "cold": 3, "": 4}
    th = row["threshold"]
    return (
        row["run_id"],
        row["demo_count"] if row["demo_count"] != "" else -1,
        mode_order.get(row["mode"], 5),
        row["epoch"] if row["epoch"] != "" else -1,
        th if th != "" else -1.0,
    )


def _fan_out(fn, jobs, workers: int) -> list[dict]:
    rows: list[dict] = []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(fn, *zip(*jobs)):
                rows.extend(part)
    else:
        for job in jobs:
            rows.extend(fn(*job))
    return sorted(rows, key=_sort_key)


def run_sweep(config: SweepConfig, workers: int = 1) -> list[dict]:
    """One CSV row per (repeat, demo count, threshold); canonical ordering."""
    seeds = _seeds(config.seed, config.n_repeats)
    jobs = [(config, r, gs, ds) for r, (gs, ds) in enumerate(seeds)]
    return _fan_out(_sweep_repeat, jobs, workers)


def _transfer_pair(config: TransferConfig, pair: int, seeds: tuple[int, int, int, int]) -> list[dict]:
    base_seed, target_seed, base_demo_seed, target_demo_seed = seeds
    run_id = f"g{pair:03d}"
    rows = []
    try:
        base_spec, _ = random_constrained_grid(dataclasses.replace(config.grid_params, seed=base_seed))
        target_spec, _ = random_constrained_grid(dataclasses.replace(config.grid_params, seed=target_seed))
        base_mdp, base_truth = grid_truth(base_spec)
        mdp, truth = grid_truth(target_spec)
        base_demos = sample_demonstrations(
            with_weights(base_mdp, base_truth.true_weights(base_mdp)), config.demos_per_grid, base_demo_seed
        )
        true_w = truth.true_weights(mdp)
        demos = sample_demonstrations(with_weights(mdp, true_w), config.demos_per_grid, target_demo_seed)
        base_result = mesc_irl(base_mdp, base_demos, config.learn_config)
    except Exception as exc:
        log.error("pair %s setup failed: %s", run_id, exc)
        return [_row(run_id=run_id, grid_seed=target_seed, error=f"{type(exc).__name__}: {exc}")]

    epochs = max(max(config.epochs_grid), 1)
    for mode, init in (("transfer", base_result.residual_weights), ("cold", None)):
        t0 = time.perf_counter()
        cfg = dataclasses.replace(config.learn_config, epochs=epochs, init_residual=init)
        try:
            result = mesc_irl(mdp, demos, cfg, checkpoints=config.epochs_grid)
        except Exception as exc:
            log.error("pair %s mode %s failed: %s", run_id, mode, exc)
            rows.append(_row(run_id=run_id, grid_seed=target_seed, mode=mode, error=f"{type(exc).__name__}: {exc}"))
            continue
        for epoch in sorted(set(config.epochs_grid)):
            policy = soft_backward(mdp, mdp.nominal_weights - result.snapshots[epoch])
            report = constraint_report(mdp, result.snapshots[epoch])
            rows.append(
                _row(
                    run_id=run_id,
                    grid_seed=target_seed,
                    demo_count=config.demos_per_grid,
                    epoch=epoch,
                    mode=mode,
                    fp_soft=false_positive_rate_soft(report, truth, 0.2),
                    kl=kl_to_demos(mdp, policy, demos),
                    mean_reward=mean_reward(mdp, policy, true_w, config.reward_episodes, target_demo_seed),
                    wall_time_ms=round((time.perf_counter() - t0) * 1000.0, 3) if config.record_timing else "",
                )
            )
    return rows


def run_transfer(config: TransferConfig, workers: int = 1) -> list[dict]:
    """Transfer vs cold-start learning on ``n_grids`` (base, target) grid pairs."""
    ss = np.random.SeedSequence(config.seed).spawn(config.n_grids)
    jobs = [(config, i, tuple(int(x) for x in child.generate_state(4))) for i, child in enumerate(ss)]
    return _fan_out(_transfer_pair, jobs, workers)


def summarize(rows: list[dict]) -> list[dict]:
    """Mean and population std of each metric per (mode, threshold, demo_count, epoch)."""
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        if row["error"]:
            continue
        key = (row["mode"], row["threshold"], row["demo_count"], row["epoch"])
        groups.setdefault(key, []).append(row)
    out = []
    for key in sorted(groups, key=lambda k: tuple((v if v != "" else -1) if i else v for i, v in enumerate(k))):
        mode, threshold, demo_count, epoch = key
        entry = dict(mode=mode, threshold=threshold, demo_count=demo_count, epoch=epoch, n=len(groups[key]))
        for metric in ("fp_hard", "fp_soft", "kl", "mean_reward"):
            vals = [r[metric] for r in groups[key] if r[metric] != ""]
            if vals:
                entry[f"{metric}_mean"] = float(np.mean(vals))
                entry[f"{metric}_std"] = float(np.std(vals))
        out.append(entry)
    return out
