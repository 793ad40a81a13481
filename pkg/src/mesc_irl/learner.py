"""Gradient ascent on the residual (penalty) weights."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .maxent import (
    DemoCounts,
    demo_counts,
    demo_log_likelihood,
    forward_visitation,
    log_likelihood_weight_gradient,
    model_feature_expectation,
    soft_backward,
)
from .mdp import DemoSet, TabularMdp

log = logging.getLogger(__name__)


class LearnerDivergence(RuntimeError):
    """The log-likelihood or the weights became non-finite."""


@dataclass
class LearnConfig:
    learning_rate: float = 0.25
    epochs: int = 300
    init_residual: np.ndarray | None = None
    l2_penalty: float = 0.02
    seed: int = 0
    # "exact": gradient of the causal log-likelihood actually being reported.
    # "feature_matching": empirical minus visitation-weighted features; the
    # two agree under deterministic dynamics.
    gradient: str = "exact"

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.l2_penalty < 0:
            raise ValueError("l2_penalty must be nonnegative")
        if self.gradient not in ("exact", "feature_matching"):
            raise ValueError(f"unknown gradient mode {self.gradient!r}")


@dataclass
class LearnResult:
    residual_weights: np.ndarray
    nominal_weights: np.ndarray
    log_likelihood_trace: list[float]
    gradient_norm_trace: list[float]
    final_log_likelihood: float
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def constrained_weights(self) -> np.ndarray:
        return self.nominal_weights - self.residual_weights


def constrained_weights(mdp: TabularMdp, residual: np.ndarray) -> np.ndarray:
    return mdp.nominal_weights - residual


def _gradient(mdp, counts: DemoCounts, residual, mode, reduction):
    policy = soft_backward(mdp, constrained_weights(mdp, residual))
    if mode == "exact":
        # d/d(residual) = -d/d(constrained weights)
        g = -log_likelihood_weight_gradient(mdp, policy, counts)
        if reduction == "mean":
            g = g / counts.n_demos
    else:
        model = model_feature_expectation(mdp, forward_visitation(mdp, policy))
        g = model - counts.empirical_features
        if reduction == "sum":
            g = g * counts.n_demos
    return g, policy


def likelihood_gradient(
    mdp: TabularMdp,
    demos: DemoSet,
    residual: np.ndarray,
    reduction: str = "mean",
    mode: str = "exact",
) -> np.ndarray:
    """Gradient of the demo log-likelihood with respect to the residual weights.

    ``reduction="sum"`` differentiates the summed log-likelihood,
    ``"mean"`` the per-demo average.
    """
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    counts = demo_counts(mdp, demos)
    g, _ = _gradient(mdp, counts, np.asarray(residual, dtype=float), mode, reduction)
    return g


def feature_matching_gradient(mdp: TabularMdp, demos: DemoSet, residual: np.ndarray) -> np.ndarray:
    """Model visitation-weighted features minus empirical features."""
    return likelihood_gradient(mdp, demos, residual, mode="feature_matching")


def mesc_irl(
    mdp: TabularMdp,
    demos: DemoSet,
    config: LearnConfig | None = None,
    checkpoints: Iterable[int] = (),
) -> LearnResult:
    """Learn residual penalty weights that maximise the demo likelihood.

    ``checkpoints`` lists epochs (0 = before any update) whose residual
    weights are kept in ``LearnResult.snapshots``.
    """
    config = config or LearnConfig()
    counts = demo_counts(mdp, demos)
    k = mdp.num_features
    if config.init_residual is None:
        residual = np.zeros(k)
    else:
        residual = np.array(config.init_residual, dtype=float)
        if residual.shape != (k,):
            raise ValueError(f"init_residual has shape {residual.shape}, expected ({k},)")
    wanted = set(checkpoints)
    snapshots = {}
    ll_trace, gn_trace = [], []
    for epoch in range(config.epochs):
        if epoch in wanted:
            snapshots[epoch] = residual.copy()
        g, policy = _gradient(mdp, counts, residual, config.gradient, "mean")
        ll = demo_log_likelihood(mdp, policy, counts)
        if not np.isfinite(ll) or not np.all(np.isfinite(g)):
            raise LearnerDivergence(
                f"non-finite log-likelihood at epoch {epoch} "
                f"(learning_rate={config.learning_rate}); try a smaller step"
            )
        ll_trace.append(ll)
        gn_trace.append(float(np.linalg.norm(g)))
        if config.learning_rate != 0:
            residual = residual + config.learning_rate * (g - config.l2_penalty * residual)
        log.debug("epoch %d ll=%.6f |g|=%.6f", epoch, ll, gn_trace[-1])
    if config.epochs in wanted:
        snapshots[config.epochs] = residual.copy()
    final_ll = demo_log_likelihood(mdp, soft_backward(mdp, constrained_weights(mdp, residual)), counts)
    if not np.isfinite(final_ll) or not np.all(np.isfinite(residual)):
        raise LearnerDivergence("learning diverged on the final update; try a smaller step")
    return LearnResult(
        residual_weights=residual,
        nominal_weights=np.array(mdp.nominal_weights),
        log_likelihood_trace=ll_trace,
        gradient_norm_trace=gn_trace,
        final_log_likelihood=final_ll,
        snapshots=snapshots,
    )
