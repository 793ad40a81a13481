"""Maximum causal entropy soft dynamic programming over a finite horizon."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .mdp import DemoSet, TabularMdp, Trajectory, trajectory_features


@dataclass(frozen=True, eq=False)
class SoftPolicy:
    """Time-indexed soft-optimal policy.

    ``pi`` and ``soft_q`` are T x |S| x |A| (``soft_q`` is -inf on
    unavailable actions); ``soft_v`` is (T+1) x |S| with a zero final row.
    """

    pi: np.ndarray
    soft_q: np.ndarray
    soft_v: np.ndarray

    @property
    def horizon(self) -> int:
        return self.pi.shape[0]

    @property
    def log_pi(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return self.soft_q - self.soft_v[:-1, :, None]


@dataclass(frozen=True, eq=False)
class VisitationTable:
    """Expected transition counts ``d`` (|S|x|A|x|S|) and state occupancy ``rho`` ((T+1) x |S|)."""

    d: np.ndarray
    rho: np.ndarray


def soft_backward(mdp: TabularMdp, w: np.ndarray, horizon: int | None = None) -> SoftPolicy:
    """Soft Bellman backup from the end of the horizon to t = 0 under rewards ``w . phi``."""
    T = mdp.horizon if horizon is None else horizon
    if T < 1:
        raise ValueError("horizon must be at least 1")
    P = mdp.transition
    S, A, _ = P.shape
    expected_r = np.einsum("ijk,ijk->ij", P, mdp.reward_table(w))
    P2 = P.reshape(S * A, S)
    gamma = mdp.discount

    q = np.empty((T, S, A))
    v = np.zeros((T + 1, S))
    for t in range(T - 1, -1, -1):
        qt = expected_r + gamma * (P2 @ v[t + 1]).reshape(S, A)
        qt[~mdp.available] = -np.inf
        q[t] = qt
        v[t] = logsumexp(qt, axis=1)
    with np.errstate(invalid="ignore"):
        pi = np.exp(q - v[:-1, :, None])
    pi[:, ~mdp.available] = 0.0
    return SoftPolicy(pi=pi, soft_q=q, soft_v=v)


def forward_visitation(
    mdp: TabularMdp, policy: SoftPolicy, horizon: int | None = None
) -> VisitationTable:
    T = policy.horizon if horizon is None else horizon
    if T > policy.horizon:
        raise ValueError("policy is shorter than the requested horizon")
    P = mdp.transition
    S, A, _ = P.shape
    rho = np.zeros((T + 1, S))
    rho[0] = mdp.start
    sa = np.zeros((S, A))
    for t in range(T):
        sa_t = rho[t][:, None] * policy.pi[t]
        sa += sa_t
        rho[t + 1] = sa_t.reshape(-1) @ P.reshape(S * A, S)
    d = sa[:, :, None] * P
    return VisitationTable(d=d, rho=rho)


def model_feature_expectation(mdp: TabularMdp, visitation: VisitationTable) -> np.ndarray:
    return mdp.features.T @ visitation.d.reshape(-1)


def trajectory_log_prob(mdp: TabularMdp, policy: SoftPolicy, tau: Trajectory) -> float:
    """Causal log-probability sum_t [log pi_t(a_t|s_t) + log P(s_{t+1}|s_t,a_t)].

    Steps after a trajectory ends at an absorbing state have probability one,
    so they add nothing. Infeasible steps give ``-inf``.
    """
    if len(tau) > policy.horizon:
        return -np.inf
    total = 0.0
    for t, (s, a, s2) in enumerate(tau):
        p_act = policy.pi[t, s, a]
        p_dyn = mdp.transition[s, a, s2]
        if p_act <= 0 or p_dyn <= 0:
            return -np.inf
        total += policy.soft_q[t, s, a] - policy.soft_v[t, s] + np.log(p_dyn)
    return float(total)


def empirical_feature_expectation(mdp: TabularMdp, demos: DemoSet) -> np.ndarray:
    if len(demos) == 0:
        raise ValueError("demonstration set is empty")
    return sum(trajectory_features(mdp, tau) for tau in demos) / len(demos)


@dataclass(frozen=True, eq=False)
class DemoCounts:
    """Per-timestep counts of a demo set, precomputed once per learning run.

    ``sa[t, s, a]`` counts demos taking ``a`` in ``s`` at step ``t``;
    ``states[t, s]`` counts demos in ``s`` at step ``t`` (only for steps
    that exist). ``steps`` holds flat (t, s, a, s') columns.
    """

    n_demos: int
    sa: np.ndarray
    states: np.ndarray
    steps: np.ndarray
    empirical_features: np.ndarray


def demo_counts(mdp: TabularMdp, demos: DemoSet, horizon: int | None = None) -> DemoCounts:
    if len(demos) == 0:
        raise ValueError("demonstration set is empty")
    T = mdp.horizon if horizon is None else horizon
    S, A = mdp.num_states, mdp.num_actions
    sa = np.zeros((T, S, A))
    steps = []
    for tau in demos:
        if len(tau) > T:
            raise ValueError(f"trajectory length {len(tau)} exceeds horizon {T}")
        for t, (s, a, s2) in enumerate(tau):
            sa[t, s, a] += 1
            steps.append((t, s, a, s2))
    steps = np.array(steps, dtype=np.int64).reshape(-1, 4)
    return DemoCounts(
        n_demos=len(demos),
        sa=sa,
        states=sa.sum(axis=2),
        steps=steps,
        empirical_features=empirical_feature_expectation(mdp, demos),
    )


def demo_log_likelihood(mdp: TabularMdp, policy: SoftPolicy, counts: DemoCounts) -> float:
    """Summed causal log-likelihood of a demo set (vectorised ``trajectory_log_prob``)."""
    if counts.steps.size == 0:
        return 0.0
    t, s, a, s2 = counts.steps.T
    p_act = policy.pi[t, s, a]
    p_dyn = mdp.transition[s, a, s2]
    if np.any(p_act <= 0) or np.any(p_dyn <= 0):
        return -np.inf
    return float(np.sum(policy.soft_q[t, s, a] - policy.soft_v[t, s] + np.log(p_dyn)))


def log_likelihood_weight_gradient(
    mdp: TabularMdp, policy: SoftPolicy, counts: DemoCounts
) -> np.ndarray:
    """Exact gradient of the summed causal log-likelihood w.r.t. the reward weights.

    Each demo step contributes dQ_t(s_t, a_t) - dV_t(s_t). Both derivatives
    are linear in future expected features, so the net coefficients are
    pushed forward through the policy and dynamics in a single pass and
    contracted with the feature matrix at the end.

    Under deterministic dynamics and a single start state this equals
    ``n * (empirical - model)`` feature expectations.
    """
    P = mdp.transition
    S, A, _ = P.shape
    T = policy.horizon
    P2 = P.reshape(S * A, S)
    gamma = mdp.discount
    coeff_v = np.zeros(S)
    weights_sa = np.zeros((S, A))
    for t in range(T):
        mu = coeff_v - counts.states[t]
        kappa = counts.sa[t] + mu[:, None] * policy.pi[t]
        weights_sa += kappa
        coeff_v = gamma * (kappa.reshape(-1) @ P2)
    # gamma discounting of later steps is carried by coeff_v; the immediate
    # feature weight of each (s, a) is its expected next-transition mass
    w_trans = weights_sa[:, :, None] * P
    return mdp.features.T @ w_trans.reshape(-1)


def _sample_rows(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw of one index per row of ``probs``."""
    cdf = np.cumsum(probs, axis=1)
    # round-off must never select a trailing zero-probability index
    width = probs.shape[1]
    last = width - 1 - np.argmax(probs[:, ::-1] > 0, axis=1)
    cdf[np.arange(width)[None, :] >= last[:, None]] = np.inf
    return (u[:, None] >= cdf).sum(axis=1)


def rollout(
    mdp: TabularMdp, policy: SoftPolicy, n: int, rng: np.random.Generator
) -> list[Trajectory]:
    """Sample ``n`` trajectories, stopping at an absorbing state or the horizon."""
    if n < 1:
        raise ValueError("need at least one rollout")
    absorbing = mdp.absorbing if mdp.absorbing is not None else np.zeros(mdp.num_states, bool)
    states = _sample_rows(np.broadcast_to(mdp.start, (n, mdp.num_states)), rng.random(n))
    steps: list[list[tuple[int, int, int]]] = [[] for _ in range(n)]
    live = ~absorbing[states]
    for t in range(policy.horizon):
        idx = np.flatnonzero(live)
        if idx.size == 0:
            break
        s = states[idx]
        a = _sample_rows(policy.pi[t, s], rng.random(idx.size))
        s2 = _sample_rows(mdp.transition[s, a], rng.random(idx.size))
        for i, si, ai, s2i in zip(idx.tolist(), s.tolist(), a.tolist(), s2.tolist()):
            steps[i].append((si, ai, s2i))
        states[idx] = s2
        live[idx] = ~absorbing[s2]
    return [Trajectory(tuple(tr)) for tr in steps]
