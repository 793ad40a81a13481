import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mesc_irl.experiments import grid_truth, sample_demonstrations, with_weights
from mesc_irl.learner import mesc_irl
from mesc_irl.mdp import GridSpec, build_gridworld, color_index
from mesc_irl.probability import (
    DegenerateScaleError,
    PenaltyScale,
    binarize,
    constraint_report,
    feature_constraint_prob,
    pooled_std,
    transition_constraint_prob,
)


def test_formula_fixed_points():
    scale = PenaltyScale(3.0, 4.0)
    sp = math.sqrt(12.5)
    assert scale.sigma_pooled == pytest.approx(sp, abs=1e-12)
    assert PenaltyScale(2.5, 2.5).sigma_pooled == pytest.approx(2.5)
    assert transition_constraint_prob(0.0, scale) == pytest.approx(1 / (1 + math.e), abs=1e-12)
    assert transition_constraint_prob(sp, scale) == 0.5
    assert transition_constraint_prob(2 * sp, scale) == pytest.approx(0.7310585786, abs=1e-9)


def test_feature_prob_single_and_set():
    scale = PenaltyScale(1.0, 1.0)
    w = np.array([0.0, 1.0, 0.5, 0.5])
    assert feature_constraint_prob(w, 0, scale) == pytest.approx(1 / (1 + math.e))
    assert feature_constraint_prob(w, 1, scale) == 0.5
    assert feature_constraint_prob(w, [2, 3], scale) == 0.5
    with pytest.raises(ValueError):
        feature_constraint_prob(w, [], scale)


def test_sigma_nominal_matches_enumeration():
    mdp = build_gridworld(GridSpec())
    w = mdp.nominal_weights
    rewards = []
    for s in range(mdp.num_states):
        for a in range(mdp.num_actions):
            for s2 in range(mdp.num_states):
                if mdp.available[s, a] and mdp.transition[s, a, s2] > 0:
                    rewards.append(float(mdp.phi(s, a, s2) @ w))
    mean = sum(rewards) / len(rewards)
    sd = math.sqrt(sum((r - mean) ** 2 for r in rewards) / len(rewards))
    scale = pooled_std(mdp, w, w)
    assert scale.sigma_nominal == pytest.approx(sd, abs=1e-12)
    assert scale.sigma_pooled == pytest.approx(sd, abs=1e-12)


def test_degenerate_scale():
    mdp = build_gridworld(GridSpec(width=3, height=3, goal=8))
    z = np.zeros(mdp.num_features)
    with pytest.raises(DegenerateScaleError):
        pooled_std(mdp, z, z)
    with pytest.raises(DegenerateScaleError):
        transition_constraint_prob(0.0, PenaltyScale(0.0, 0.0))


@settings(max_examples=40, deadline=None)
@given(c=st.floats(0.01, 100.0), seed=st.integers(0, 2**16))
def test_zeta_invariant_under_rescaling(c, seed):
    mdp = build_gridworld(GridSpec(width=3, height=3, goal=8, colors={4: "blue"}))
    rng = np.random.default_rng(seed)
    residual = rng.normal(size=mdp.num_features)
    a = constraint_report(mdp, residual)
    b = constraint_report(mdp, c * residual, nominal=c * mdp.nominal_weights)
    assert np.max(np.abs(a.feature_zeta - b.feature_zeta)) < 1e-10
    assert np.nanmax(np.abs(a.transition_zeta - b.transition_zeta)) < 1e-10


def test_report_nan_on_infeasible_and_binarize():
    mdp = build_gridworld(GridSpec(width=3, height=3, goal=8))
    residual = np.zeros(mdp.num_features)
    residual[4] = 20.0
    rep = constraint_report(mdp, residual)
    assert np.isnan(rep.transition_zeta[0, 0, 0])
    assert binarize(rep, 0.6) == {("feature", 4)}
    trans = binarize(rep, 0.6, level="transition")
    assert trans and all(item[3] == 4 for item in trans)
    assert binarize(rep, 0.6, level="both") == trans | {("feature", 4)}
    with pytest.raises(ValueError):
        binarize(rep, 1.0)


def test_learned_color_penalty_is_probable():
    spec = GridSpec(
        start=[(72, 1.0)],
        goal=8,
        colors={s: "blue" for s in (30, 31, 39, 40, 41, 49, 50)},
        constrained_colors={"blue": -50.0},
    )
    mdp, truth = grid_truth(spec)
    demos = sample_demonstrations(with_weights(mdp, truth.true_weights(mdp)), 100, 0)
    rep = constraint_report(mdp, mesc_irl(mdp, demos).residual_weights)
    assert rep.feature_zeta[color_index(spec, "blue")] >= 0.6
    assert rep.feature_zeta[color_index(spec, "none")] < 0.5
