"""Turning learned penalties into constraint probabilities."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.special import expit

from .mdp import TabularMdp


class DegenerateScaleError(ValueError):
    """Pooled reward spread is zero, so probabilities are undefined."""


@dataclass(frozen=True)
class PenaltyScale:
    sigma_nominal: float
    sigma_constrained: float

    @property
    def sigma_pooled(self) -> float:
        return math.sqrt((self.sigma_nominal**2 + self.sigma_constrained**2) / 2.0)


def feasible_rewards(mdp: TabularMdp, w: np.ndarray) -> np.ndarray:
    """Rewards of every feasible transition, unweighted."""
    return mdp.reward_table(w)[mdp.feasible]


def pooled_std(mdp: TabularMdp, nominal: np.ndarray, constrained: np.ndarray) -> PenaltyScale:
    """Population std of nominal and constrained rewards over feasible transitions."""
    scale = PenaltyScale(
        sigma_nominal=float(np.std(feasible_rewards(mdp, nominal))),
        sigma_constrained=float(np.std(feasible_rewards(mdp, constrained))),
    )
    if not scale.sigma_pooled > 0:
        raise DegenerateScaleError("all transition rewards are equal; pooled std is zero")
    return scale


def _check(scale: PenaltyScale) -> float:
    sp = scale.sigma_pooled
    if not sp > 0:
        raise DegenerateScaleError("pooled std must be positive")
    return sp


def transition_constraint_prob(residual_reward, scale: PenaltyScale):
    """sigmoid((r - sigma_pooled) / sigma_pooled); vectorised over ``residual_reward``."""
    sp = _check(scale)
    out = expit((np.asarray(residual_reward, dtype=float) - sp) / sp)
    return float(out) if out.ndim == 0 else out


def feature_constraint_prob(
    residual: np.ndarray, feature_index_set: Iterable[int] | int, scale: PenaltyScale
) -> float:
    """Constraint probability of a feature value; a set of indices uses their summed weight."""
    idx = [feature_index_set] if isinstance(feature_index_set, (int, np.integer)) else list(feature_index_set)
    if not idx:
        raise ValueError("feature_index_set must be nonempty")
    return transition_constraint_prob(float(np.sum(np.asarray(residual)[idx])), scale)


@dataclass(frozen=True, eq=False)
class ConstraintReport:
    """Per-feature and per-transition constraint probabilities.

    Transition arrays are |S|x|A|x|S|; entries of infeasible transitions
    are NaN.
    """

    residual_weights: np.ndarray
    feature_zeta: np.ndarray
    transition_zeta: np.ndarray
    residual_rewards: np.ndarray
    scale: PenaltyScale


def constraint_report(mdp: TabularMdp, residual: np.ndarray, nominal: np.ndarray | None = None) -> ConstraintReport:
    residual = np.asarray(residual, dtype=float)
    nominal = mdp.nominal_weights if nominal is None else nominal
    scale = pooled_std(mdp, nominal, nominal - residual)
    rr = mdp.reward_table(residual).copy()
    rr[~mdp.feasible] = np.nan
    return ConstraintReport(
        residual_weights=residual,
        feature_zeta=transition_constraint_prob(residual, scale),
        transition_zeta=transition_constraint_prob(rr, scale),
        residual_rewards=rr,
        scale=scale,
    )


def binarize(report: ConstraintReport, zeta_threshold: float, level: str = "feature") -> set[tuple]:
    """Items whose constraint probability is at least ``zeta_threshold``.

    Items are ``("feature", i)`` or ``("transition", s, a, s')``; ``level``
    is ``"feature"``, ``"transition"`` or ``"both"``.
    """
    if not 0.0 < zeta_threshold < 1.0:
        raise ValueError("zeta_threshold must lie in (0, 1)")
    if level not in ("feature", "transition", "both"):
        raise ValueError(f"unknown level {level!r}")
    out: set[tuple] = set()
    if level in ("feature", "both"):
        out |= {("feature", int(i)) for i in np.flatnonzero(report.feature_zeta >= zeta_threshold)}
    if level in ("transition", "both"):
        with np.errstate(invalid="ignore"):
            hits = np.argwhere(report.transition_zeta >= zeta_threshold)
        out |= {("transition", int(s), int(a), int(s2)) for s, a, s2 in hits}
    return out
