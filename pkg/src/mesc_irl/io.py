"""JSON / JSON-lines / CSV readers and writers.

Writers are deterministic: identical inputs always produce identical bytes.
"""

from __future__ import annotations

import csv
import dataclasses
import io as _io
import json
from pathlib import Path
from typing import Any

import numpy as np

from .learner import LearnConfig, LearnResult
from .mdp import GridSpec, InvalidSpecError, Trajectory
from .metrics import EvalConfig, GroundTruth
from .probability import ConstraintReport

GRID_FIELDS = (
    "width",
    "height",
    "start",
    "goal",
    "colors",
    "constrained_states",
    "constrained_actions",
    "constrained_colors",
    "action_failure_prob",
    "horizon",
    "discount",
    "goal_bonus",
)
GRID_REQUIRED = ("width", "height", "start", "goal")


class SchemaError(ValueError):
    """A document does not match the expected schema."""


def _clean(obj):
    # JSON has no inf/nan; they are written as null
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def _floats(a) -> list[float]:
    return [float(x) for x in np.asarray(a, dtype=float).ravel()]


def _reject_unknown(doc: dict, allowed, what: str) -> None:
    if not isinstance(doc, dict):
        raise SchemaError(f"{what} must be a JSON object")
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise SchemaError(f"unknown {what} field(s): {', '.join(unknown)}")


def grid_spec_to_dict(spec: GridSpec) -> dict:
    return {
        "width": spec.width,
        "height": spec.height,
        "start": [[int(s), float(p)] for s, p in spec.start],
        "goal": spec.goal,
        "colors": {str(s): c for s, c in sorted(spec.colors.items())},
        "constrained_states": {str(s): float(c) for s, c in sorted(spec.constrained_states.items())},
        "constrained_actions": {a: float(c) for a, c in sorted(spec.constrained_actions.items())},
        "constrained_colors": {a: float(c) for a, c in sorted(spec.constrained_colors.items())},
        "action_failure_prob": float(spec.action_failure_prob),
        "horizon": spec.horizon,
        "discount": float(spec.discount),
        "goal_bonus": float(spec.goal_bonus),
    }


def grid_spec_from_dict(doc: dict) -> GridSpec:
    _reject_unknown(doc, GRID_FIELDS, "grid")
    missing = [k for k in GRID_REQUIRED if k not in doc]
    if missing:
        raise SchemaError(f"grid is missing field(s): {', '.join(missing)}")
    try:
        kw = dict(
            width=int(doc["width"]),
            height=int(doc["height"]),
            start=[(int(s), float(p)) for s, p in doc["start"]],
            goal=int(doc["goal"]),
            colors={int(s): str(c) for s, c in doc.get("colors", {}).items()},
            constrained_states={int(s): float(c) for s, c in doc.get("constrained_states", {}).items()},
            constrained_actions={str(a): float(c) for a, c in doc.get("constrained_actions", {}).items()},
            constrained_colors={str(a): float(c) for a, c in doc.get("constrained_colors", {}).items()},
        )
        for key, cast in (("action_failure_prob", float), ("horizon", int), ("discount", float), ("goal_bonus", float)):
            if key in doc:
                kw[key] = cast(doc[key])
    except (TypeError, ValueError, AttributeError) as exc:
        raise SchemaError(f"malformed grid document: {exc}") from exc
    spec = GridSpec(**kw)
    try:
        spec.validate()
    except InvalidSpecError as exc:
        raise SchemaError(str(exc)) from exc
    return spec


def grid_spec_to_json(spec: GridSpec) -> str:
    return dumps(grid_spec_to_dict(spec))


def grid_spec_from_json(text: str) -> GridSpec:
    return grid_spec_from_dict(json.loads(text))


def ground_truth_to_dict(truth: GroundTruth) -> dict:
    return {
        "feature_costs": _floats(truth.feature_costs),
        "feature_zeta": _floats(truth.feature_zeta),
        "constrained_features": [item[1] for item in sorted(truth.constrained_items("feature"))],
        "sigma_nominal": truth.scale.sigma_nominal,
        "sigma_constrained": truth.scale.sigma_constrained,
        "sigma_pooled": truth.scale.sigma_pooled,
    }


def feature_costs_from_dict(doc: dict) -> np.ndarray:
    _reject_unknown(
        doc,
        ("feature_costs", "feature_zeta", "constrained_features", "sigma_nominal", "sigma_constrained", "sigma_pooled"),
        "ground truth",
    )
    if "feature_costs" not in doc:
        raise SchemaError("ground truth is missing feature_costs")
    return np.asarray(doc["feature_costs"], dtype=float)


def demos_to_jsonl(demos) -> str:
    return "".join(json.dumps([list(t) for t in tau.transitions]) + "\n" for tau in demos)


def demos_from_jsonl(text: str) -> list[Trajectory]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            steps = json.loads(line)
            if not isinstance(steps, list) or any(
                not isinstance(t, list) or len(t) != 3 or not all(isinstance(x, int) for x in t) for t in steps
            ):
                raise ValueError("expected an array of [s, a, s'] integer triples")
        except ValueError as exc:
            raise SchemaError(f"demo line {lineno}: {exc}") from exc
        out.append(Trajectory(tuple(tuple(t) for t in steps)))
    return out


def learn_result_to_dict(result: LearnResult, config: LearnConfig | None = None) -> dict:
    doc = {
        "residual_weights": _floats(result.residual_weights),
        "nominal_weights": _floats(result.nominal_weights),
        "constrained_weights": _floats(result.constrained_weights),
        "log_likelihood_trace": _floats(result.log_likelihood_trace),
        "gradient_norm_trace": _floats(result.gradient_norm_trace),
        "final_log_likelihood": float(result.final_log_likelihood),
    }
    if config is not None:
        doc["config"] = {
            "learning_rate": config.learning_rate,
            "epochs": config.epochs,
            "l2_penalty": config.l2_penalty,
            "seed": config.seed,
            "gradient": config.gradient,
        }
    return doc


def learn_result_from_dict(doc: dict) -> LearnResult:
    _reject_unknown(
        doc,
        (
            "residual_weights",
            "nominal_weights",
            "constrained_weights",
            "log_likelihood_trace",
            "gradient_norm_trace",
            "final_log_likelihood",
            "config",
        ),
        "learn result",
    )
    try:
        return LearnResult(
            residual_weights=np.asarray(doc["residual_weights"], dtype=float),
            nominal_weights=np.asarray(doc["nominal_weights"], dtype=float),
            log_likelihood_trace=list(doc.get("log_likelihood_trace", [])),
            gradient_norm_trace=list(doc.get("gradient_norm_trace", [])),
            final_log_likelihood=float(doc.get("final_log_likelihood", float("nan"))),
        )
    except KeyError as exc:
        raise SchemaError(f"learn result is missing {exc}") from exc


def report_to_dict(report: ConstraintReport, labels: list[str] | None = None, transitions: bool = False) -> dict:
    doc = {
        "feature_zeta": _floats(report.feature_zeta),
        "residual_weights": _floats(report.residual_weights),
        "sigma_nominal": report.scale.sigma_nominal,
        "sigma_constrained": report.scale.sigma_constrained,
        "sigma_pooled": report.scale.sigma_pooled,
    }
    if labels is not None:
        doc["feature_labels"] = labels
    if transitions:
        feasible = np.argwhere(~np.isnan(report.transition_zeta))
        doc["transition_zeta"] = [
            [int(s), int(a), int(s2), float(report.transition_zeta[s, a, s2])] for s, a, s2 in feasible
        ]
    return doc


def write_csv(rows: list[dict], fields) -> str:
    buf = _io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row.get(k, "")) for k in fields})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def learn_config_from_dict(doc: dict) -> LearnConfig:
    _reject_unknown(doc, ("learning_rate", "epochs", "l2_penalty", "seed", "gradient"), "learn_config")
    return LearnConfig(**doc)


def eval_config_from_dict(doc: dict) -> EvalConfig:
    _reject_unknown(
        doc, ("zeta_thresholds", "chis", "kl_sample_count", "reward_episodes", "hard_penalty", "level"), "eval_config"
    )
    return EvalConfig(**doc)


def random_grid_params_from_dict(doc: dict):
    from .experiments import RandomGridParams

    _reject_unknown(doc, [f.name for f in dataclasses.fields(RandomGridParams)], "grid_params")
    return RandomGridParams(**doc)


def _resolve_grid(value, base_dir: Path) -> GridSpec:
    from .experiments import load_bundled_grid

    if isinstance(value, dict):
        return grid_spec_from_dict(value)
    if value == "fig1":
        return load_bundled_grid()
    path = Path(value)
    if not path.is_absolute():
        path = base_dir / path
    return grid_spec_from_json(path.read_text(encoding="utf-8"))


def sweep_config_from_dict(doc: dict, base_dir: Path | str = "."):
    """Parse a sweep config; ``grid`` may be an inline spec, a path, or ``"fig1"``."""
    from .experiments import SweepConfig

    allowed = (
        "demo_counts",
        "n_repeats",
        "demos_per_set",
        "learn_config",
        "eval_config",
        "seed",
        "grid",
        "grid_params",
        "deterministic",
    )
    _reject_unknown(doc, allowed, "sweep config")
    kw = {k: v for k, v in doc.items() if k not in ("learn_config", "eval_config", "grid", "grid_params")}
    if "learn_config" in doc:
        kw["learn_config"] = learn_config_from_dict(doc["learn_config"])
    if "eval_config" in doc:
        kw["eval_config"] = eval_config_from_dict(doc["eval_config"])
    if doc.get("grid") is not None:
        kw["grid"] = _resolve_grid(doc["grid"], Path(base_dir))
    if doc.get("grid_params") is not None:
        kw["grid_params"] = random_grid_params_from_dict(doc["grid_params"])
    try:
        return SweepConfig(**kw)
    except TypeError as exc:
        raise SchemaError(str(exc)) from exc


def transfer_config_from_dict(doc: dict):
    from .experiments import TransferConfig

    allowed = ("n_grids", "demos_per_grid", "epochs_grid", "learn_config", "grid_params", "reward_episodes", "seed")
    _reject_unknown(doc, allowed, "transfer config")
    kw = {k: v for k, v in doc.items() if k not in ("learn_config", "grid_params")}
    if "learn_config" in doc:
        kw["learn_config"] = learn_config_from_dict(doc["learn_config"])
    if "grid_params" in doc:
        kw["grid_params"] = random_grid_params_from_dict(doc["grid_params"])
    try:
        return TransferConfig(**kw)
    except TypeError as exc:
        raise SchemaError(str(exc)) from exc
