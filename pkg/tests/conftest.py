import numpy as np
import pytest

from mesc_irl.mdp import GridSpec, build_gridworld


def tiny_spec(eps=0.1, horizon=4, **kw):
    base = dict(
        width=3,
        height=3,
        start=[(0, 1.0)],
        goal=8,
        colors={4: "blue", 2: "green"},
        constrained_states={4: -5.0},
        action_failure_prob=eps,
        horizon=horizon,
    )
    base.update(kw)
    return GridSpec(**base)


def enumerate_paths(mdp, policy, horizon):
    """Every (trajectory, probability) pair of length ``horizon`` with positive mass."""
    out = []
    succ = {
        (s, a): [(int(s2), float(mdp.transition[s, a, s2])) for s2 in np.flatnonzero(mdp.transition[s, a] > 0)]
        for s in range(mdp.num_states)
        for a in range(mdp.num_actions)
    }
    acts = [[[(int(a), float(policy.pi[t, s, a])) for a in np.flatnonzero(policy.pi[t, s] > 0)]
             for s in range(mdp.num_states)] for t in range(horizon)]

    def walk(t, s, path, p):
        if t == horizon:
            out.append((tuple(path), p))
            return
        for a, pa in acts[t][s]:
            for s2, ps in succ[s, a]:
                path.append((s, a, s2))
                walk(t + 1, s2, path, p * pa * ps)
                path.pop()

    for s0 in np.flatnonzero(mdp.start > 0):
        walk(0, int(s0), [], float(mdp.start[s0]))
    return out


def enumerated_visitation(mdp, policy, horizon):
    """Transition visitation and feature expectation by brute-force path enumeration."""
    dense = mdp.features.toarray()
    S, A = mdp.num_states, mdp.num_actions
    d = np.zeros_like(mdp.transition)
    feats = np.zeros(mdp.num_features)
    total = 0.0
    for path, p in enumerate_paths(mdp, policy, horizon):
        total += p
        for s, a, s2 in path:
            d[s, a, s2] += p
            feats += p * dense[(s * A + a) * S + s2]
    return d, feats, total


@pytest.fixture
def tiny_noisy():
    return build_gridworld(tiny_spec(eps=0.1))


@pytest.fixture
def tiny_det():
    return build_gridworld(tiny_spec(eps=0.0))


@pytest.fixture(scope="session")
def five_grid():
    spec = GridSpec(
        width=5,
        height=5,
        start=[(20, 1.0)],
        goal=4,
        colors={7: "blue", 12: "green", 17: "blue"},
        constrained_states={12: -20.0, 8: -20.0},
        constrained_colors={"blue": -5.0},
        action_failure_prob=0.1,
        horizon=12,
    )
    return spec
