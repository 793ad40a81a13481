"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (the lines are printed even
without ``-s``).
"""

import dataclasses
import json
import math
import time

import numpy as np
import pytest

from conftest import enumerated_visitation, tiny_spec
from mesc_irl.cli import main
from mesc_irl.experiments import (
    RandomGridParams,
    SweepConfig,
    TransferConfig,
    convergence_epoch,
    grid_truth,
    load_bundled_grid,
    run_sweep,
    run_transfer,
    sample_demonstrations,
    summarize,
    with_weights,
)
from mesc_irl.learner import likelihood_gradient, mesc_irl
from mesc_irl.maxent import demo_counts, demo_log_likelihood, forward_visitation, model_feature_expectation, soft_backward
from mesc_irl.mdp import build_gridworld
from mesc_irl.metrics import EvalConfig
from mesc_irl.probability import PenaltyScale, constraint_report, transition_constraint_prob


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail

    return emit


def _summary_index(rows):
    return {(p["mode"], p["threshold"], p["demo_count"], p["epoch"]): p for p in summarize(rows)}


def test_criterion_1_gradient_matches_finite_differences(five_grid, verdict):
    t0 = time.perf_counter()
    worst = 0.0
    ok = True
    for eps in (0.0, 0.1):
        spec = dataclasses.replace(five_grid, action_failure_prob=eps)
        mdp, truth = grid_truth(spec)
        demos = sample_demonstrations(with_weights(mdp, truth.true_weights(mdp)), 20, 0)
        counts = demo_counts(mdp, demos)
        residual = np.random.default_rng(7).normal(scale=0.5, size=mdp.num_features)

        def ll(r):
            return demo_log_likelihood(mdp, soft_backward(mdp, mdp.nominal_weights - r), counts)

        g = likelihood_gradient(mdp, demos, residual, reduction="sum")
        h = 1e-5
        for i in range(mdp.num_features):
            e = np.zeros(mdp.num_features)
            e[i] = h
            fd = (ll(residual + e) - ll(residual - e)) / (2 * h)
            err = abs(g[i] - fd)
            worst = max(worst, err / max(abs(fd), 1e-8 / 1e-4))
            ok &= err <= 1e-4 * abs(fd) + 1e-8
    elapsed = time.perf_counter() - t0
    verdict(1, ok and elapsed < 10, f"worst relative error {worst:.2e}, {elapsed:.1f}s")


def test_criterion_2_visitation_matches_enumeration(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for eps, horizon in ((0.0, 6), (0.1, 4), (0.2, 3)):
        mdp = build_gridworld(tiny_spec(eps=eps, horizon=horizon))
        w = mdp.nominal_weights + np.random.default_rng(horizon).normal(size=mdp.num_features)
        pol = soft_backward(mdp, w)
        d, feats, _ = enumerated_visitation(mdp, pol, horizon)
        vis = forward_visitation(mdp, pol)
        worst = max(worst, np.max(np.abs(vis.d - d)), np.max(np.abs(model_feature_expectation(mdp, vis) - feats)))
    elapsed = time.perf_counter() - t0
    verdict(2, worst <= 1e-8 and elapsed < 5, f"max abs error {worst:.2e}, {elapsed:.1f}s")


def test_criterion_3_probability_formula(verdict):
    scale = PenaltyScale(3.0, 4.0)
    sp = scale.sigma_pooled
    z0 = transition_constraint_prob(0.0, scale)
    checks = {
        "zeta(0)": abs(z0 - 0.268941) <= 1e-6,
        "zeta(sigma)": transition_constraint_prob(sp, scale) == 0.5,
        "pooled(3,4)": abs(sp - math.sqrt(12.5)) <= 1e-12,
    }
    mdp = build_gridworld(load_bundled_grid())
    residual = np.random.default_rng(0).normal(scale=5.0, size=mdp.num_features)
    base = constraint_report(mdp, residual)
    drift = 0.0
    for c in (0.001, 0.37, 12.0, 1e4):
        other = constraint_report(mdp, c * residual, nominal=c * mdp.nominal_weights)
        drift = max(drift, np.max(np.abs(other.feature_zeta - base.feature_zeta)),
                    np.nanmax(np.abs(other.transition_zeta - base.transition_zeta)))
    checks["rescaling"] = drift <= 1e-10
    failed = [k for k, v in checks.items() if not v]
    verdict(3, not failed, f"zeta(0)={z0:.6f}, rescaling drift {drift:.1e}, failed={failed}")


@pytest.fixture(scope="module")
def fig1_sweep():
    t0 = time.perf_counter()
    cfg = SweepConfig(demo_counts=[1, 20, 100], n_repeats=10, grid=load_bundled_grid(), deterministic=True)
    rows = run_sweep(cfg)
    return rows, time.perf_counter() - t0


def test_criterion_4_hard_constraint_recovery(fig1_sweep, verdict):
    rows, elapsed = fig1_sweep
    s = _summary_index(rows)
    epochs = rows[0]["epoch"]
    one, hundred = s[("hard", 0.6, 1, epochs)], s[("hard", 0.6, 100, epochs)]
    errors = sum(1 for r in rows if r["error"])
    ok = (
        errors == 0
        and hundred["fp_hard_mean"] <= 0.05
        and hundred["fp_hard_mean"] < one["fp_hard_mean"]
        and hundred["kl_mean"] < one["kl_mean"]
        and elapsed < 600
    )
    verdict(
        4,
        ok,
        f"fp_hard {one['fp_hard_mean']:.3f} -> {hundred['fp_hard_mean']:.3f}, "
        f"KL {one['kl_mean']:.2f} -> {hundred['kl_mean']:.2f}, {elapsed:.0f}s",
    )


def test_criterion_5_soft_recovery_on_random_grids(verdict):
    t0 = time.perf_counter()
    cfg = SweepConfig(
        demo_counts=[1, 100],
        n_repeats=10,
        grid_params=RandomGridParams(),
        eval_config=EvalConfig(zeta_thresholds=[0.6], chis=[0.2]),
    )
    rows = run_sweep(cfg)
    elapsed = time.perf_counter() - t0
    s = _summary_index(rows)
    epochs = rows[0]["epoch"]
    one, hundred = s[("soft", 0.2, 1, epochs)], s[("soft", 0.2, 100, epochs)]
    errors = sum(1 for r in rows if r["error"])
    ok = (
        errors == 0
        and hundred["fp_soft_mean"] <= 0.05
        and hundred["fp_soft_mean"] < one["fp_soft_mean"]
        and hundred["kl_mean"] < one["kl_mean"]
        and elapsed < 1200
    )
    verdict(
        5,
        ok,
        f"fp_soft {one['fp_soft_mean']:.3f} -> {hundred['fp_soft_mean']:.3f}, "
        f"KL {one['kl_mean']:.2f} -> {hundred['kl_mean']:.2f}, {elapsed:.0f}s",
    )


def test_criterion_6_threshold_ordering(fig1_sweep, verdict):
    rows, _ = fig1_sweep
    s = _summary_index(rows)
    epochs = rows[0]["epoch"]
    z6, z7 = s[("hard", 0.6, 20, epochs)], s[("hard", 0.7, 20, epochs)]
    ok = z7["fp_hard_mean"] <= z6["fp_hard_mean"] and z7["kl_mean"] >= z6["kl_mean"]
    verdict(
        6,
        ok,
        f"fp_hard 0.6={z6['fp_hard_mean']:.3f} 0.7={z7['fp_hard_mean']:.3f}, "
        f"KL 0.6={z6['kl_mean']:.2f} 0.7={z7['kl_mean']:.2f}",
    )


def test_criterion_7_transfer_beats_cold_start(verdict):
    t0 = time.perf_counter()
    cfg = TransferConfig()
    rows = run_transfer(cfg)
    elapsed = time.perf_counter() - t0
    s = _summary_index(rows)
    grid = sorted(set(cfg.epochs_grid))
    kl = {m: [s[(m, "", cfg.demos_per_grid, e)]["kl_mean"] for e in grid] for m in ("transfer", "cold")}
    ordered = all(t <= c for t, c in zip(kl["transfer"], kl["cold"]))
    conv_t, conv_c = convergence_epoch(grid, kl["transfer"]), convergence_epoch(grid, kl["cold"])
    # guard against negative transfer on the final model
    final_ok = kl["transfer"][-1] <= 1.05 * kl["cold"][-1]
    errors = sum(1 for r in rows if r["error"])
    ok = errors == 0 and ordered and conv_t < conv_c and final_ok and elapsed < 3600
    verdict(
        7,
        ok,
        f"KL ordered at all {len(grid)} checkpoints: {ordered}; epochs to 5% of final "
        f"transfer={conv_t} cold={conv_c}; final KL {kl['transfer'][-1]:.3f} vs {kl['cold'][-1]:.3f}, {elapsed:.0f}s",
    )


def _cli_outputs(tmp, tag):
    d = tmp / tag
    d.mkdir()
    sweep = {"demo_counts": [1, 2], "n_repeats": 2, "demos_per_set": 2, "grid": "fig1", "learn_config": {"epochs": 5}}
    transfer = {"n_grids": 2, "demos_per_grid": 3, "epochs_grid": [0, 2, 4], "learn_config": {"epochs": 4},
                "reward_episodes": 10}
    (d / "sweep.json").write_text(json.dumps(sweep))
    (d / "transfer.json").write_text(json.dumps(transfer))
    p = str(d)
    calls = [
        ["gen-grid", "--seed", "7", "--out", f"{p}/grid.json", "--truth-out", f"{p}/truth.json"],
        ["sample-demos", "--grid", f"{p}/grid.json", "--n", "20", "--seed", "3", "--out", f"{p}/demos.jsonl"],
        ["learn", "--grid", f"{p}/grid.json", "--demos", f"{p}/demos.jsonl", "--epochs", "10", "--seed", "1",
         "--out", f"{p}/result.json", "--report-out", f"{p}/report.json"],
        ["report", "--grid", f"{p}/grid.json", "--result", f"{p}/result.json", "--transitions",
         "--out", f"{p}/report2.json"],
        ["eval", "--grid", f"{p}/grid.json", "--result", f"{p}/result.json", "--demos", f"{p}/demos.jsonl",
         "--seed", "5", "--out", f"{p}/eval.json"],
        ["sweep", "--config", f"{p}/sweep.json", "--seed", "2", "--out", f"{p}/sweep.csv",
         "--summary", f"{p}/sweep_summary.json"],
        ["transfer", "--config", f"{p}/transfer.json", "--seed", "2", "--workers", "2", "--out", f"{p}/transfer.csv",
         "--summary", f"{p}/transfer_summary.json"],
    ]
    codes = [main(c) for c in calls]
    files = sorted(f.name for f in d.iterdir())
    return codes, {name: (d / name).read_bytes() for name in files}


def test_criterion_8_cli_reproducibility(tmp_path, verdict, capsys):
    codes_a, a = _cli_outputs(tmp_path, "a")
    codes_b, b = _cli_outputs(tmp_path, "b")
    differing = [k for k in a if a[k] != b.get(k)]
    ok = codes_a == codes_b == [0] * 7 and not differing and a.keys() == b.keys()
    verdict(8, ok, f"{len(a)} output files across 7 subcommands, differing={differing}, exit codes={codes_a}")


def test_criterion_9_no_phantom_constraints(verdict):
    nominal = dataclasses.replace(load_bundled_grid(), constrained_states={})
    worst = []
    for eps in (0.1, 0.0):
        mdp = build_gridworld(dataclasses.replace(nominal, action_failure_prob=eps))
        for seed in range(5):
            demos = sample_demonstrations(mdp, 100, seed)
            report = constraint_report(mdp, mesc_irl(mdp, demos).residual_weights)
            worst.append(float(report.feature_zeta.max()))
    verdict(9, max(worst) < 0.5, f"max feature zeta over 5 seeds x 2 noise levels {max(worst):.3f}")
