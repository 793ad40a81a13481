"""Tabular finite-horizon MDPs and the 8-connected gridworld."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

# (d_row, d_col); cardinal moves first.
ACTIONS: tuple[tuple[int, int], ...] = (
    (-1, 0),
    (0, 1),
    (1, 0),
    (0, -1),
    (-1, 1),
    (1, 1),
    (1, -1),
    (-1, -1),
)
ACTION_NAMES: tuple[str, ...] = ("N", "E", "S", "W", "NE", "SE", "SW", "NW")
COLORS: tuple[str, ...] = ("none", "blue", "green")

CARDINAL_COST = -4.0
DIAGONAL_COST = -4.0 * math.sqrt(2.0)

PROB_TOL = 1e-12


class InvalidSpecError(ValueError):
    """Raised when a grid description cannot produce a valid MDP."""


@dataclass
class GridSpec:
    width: int = 9
    height: int = 9
    start: list[tuple[int, float]] = field(default_factory=lambda: [(0, 1.0)])
    goal: int = 80
    colors: dict[int, str] = field(default_factory=dict)
    constrained_states: dict[int, float] = field(default_factory=dict)
    constrained_actions: dict[str, float] = field(default_factory=dict)
    constrained_colors: dict[str, float] = field(default_factory=dict)
    action_failure_prob: float = 0.1
    horizon: int = 50
    discount: float = 1.0
    goal_bonus: float = 10.0

    @property
    def num_states(self) -> int:
        return self.width * self.height

    def cell(self, s: int) -> tuple[int, int]:
        return divmod(s, self.width)

    def state(self, row: int, col: int) -> int:
        return row * self.width + col

    def validate(self) -> None:
        if self.width < 1 or self.height < 1:
            raise InvalidSpecError("grid dimensions must be positive")
        n = self.num_states
        if not 0 <= self.goal < n:
            raise InvalidSpecError(f"goal {self.goal} outside grid of {n} states")
        if not self.start:
            raise InvalidSpecError("start distribution is empty")
        total = 0.0
        for s, p in self.start:
            if not 0 <= s < n:
                raise InvalidSpecError(f"start state {s} outside grid")
            if p < 0:
                raise InvalidSpecError("negative start probability")
            total += p
        if abs(total - 1.0) > PROB_TOL:
            raise InvalidSpecError(f"start probabilities sum to {total}, not 1")
        for s, c in self.colors.items():
            if not 0 <= s < n:
                raise InvalidSpecError(f"colored state {s} outside grid")
            if c not in COLORS:
                raise InvalidSpecError(f"unknown color {c!r}")
        for s in self.constrained_states:
            if not 0 <= s < n:
                raise InvalidSpecError(f"constrained state {s} outside grid")
        for a in self.constrained_actions:
            if a not in ACTION_NAMES:
                raise InvalidSpecError(f"unknown action {a!r}")
        for c in self.constrained_colors:
            if c not in COLORS:
                raise InvalidSpecError(f"unknown color {c!r}")
        costs = (
            list(self.constrained_states.values())
            + list(self.constrained_actions.values())
            + list(self.constrained_colors.values())
        )
        if any(c > 0 for c in costs):
            raise InvalidSpecError("constraint costs must be nonpositive")
        if not 0.0 <= self.action_failure_prob <= 1.0:
            raise InvalidSpecError("action_failure_prob must lie in [0, 1]")
        if self.horizon < 1:
            raise InvalidSpecError("horizon must be positive")
        if not 0.0 <= self.discount <= 1.0:
            raise InvalidSpecError("discount must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP with explicit dynamics and transition features.

    ``transition`` is |S|x|A|x|S|; rows of unavailable actions are zero.
    ``features`` is a sparse (|S|*|A|*|S|) x k matrix, row index
    ``(s * A + a) * S + s'``. Absorbing states have a single self-loop
    action with an all-zero feature row, so they accrue no reward.
    """

    transition: np.ndarray
    available: np.ndarray
    features: sparse.csr_matrix
    nominal_weights: np.ndarray
    start: np.ndarray
    horizon: int = 50
    discount: float = 1.0
    absorbing: np.ndarray | None = None
    grid: GridSpec | None = None

    def __post_init__(self):
        for arr in (self.transition, self.available, self.nominal_weights, self.start):
            arr.setflags(write=False)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def feasible(self) -> np.ndarray:
        """Boolean |S|x|A|x|S| mask of transitions with positive probability."""
        return (self.transition > 0) & self.available[:, :, None]

    def row(self, s: int, a: int, s2: int) -> int:
        return (s * self.num_actions + a) * self.num_states + s2

    def phi(self, s: int, a: int, s2: int) -> np.ndarray:
        return self.features[self.row(s, a, s2)].toarray().ravel()

    def reward_table(self, w: np.ndarray) -> np.ndarray:
        """Rewards ``w . phi(s, a, s')`` for every transition as |S|x|A|x|S|."""
        w = np.asarray(w, dtype=float)
        if w.shape != (self.num_features,):
            raise ValueError(f"weight vector has shape {w.shape}, expected ({self.num_features},)")
        return (self.features @ w).reshape(self.transition.shape)

    def check(self) -> None:
        """Validate the probability invariants; raises ``InvalidSpecError``."""
        P = self.transition
        if np.any(P < 0) or np.any(P > 1):
            raise InvalidSpecError("transition probabilities outside [0, 1]")
        sums = P.sum(axis=2)
        bad = self.available & (np.abs(sums - 1.0) > PROB_TOL)
        if bad.any():
            s, a = np.argwhere(bad)[0]
            raise InvalidSpecError(f"P(.|{s},{a}) sums to {sums[s, a]}")
        if np.any(~self.available & (sums > 0)):
            raise InvalidSpecError("unavailable action has outgoing probability")
        if not self.available.any(axis=1).all():
            raise InvalidSpecError("every state needs at least one available action")
        if abs(self.start.sum() - 1.0) > PROB_TOL:
            raise InvalidSpecError("start distribution does not sum to 1")


def feature_dim(spec: GridSpec) -> int:
    return spec.num_states + len(ACTIONS) + len(COLORS)


def state_index(spec: GridSpec, s: int) -> int:
    return s


def action_index(spec: GridSpec, a: int) -> int:
    return spec.num_states + a


def color_index(spec: GridSpec, color: str) -> int:
    return spec.num_states + len(ACTIONS) + COLORS.index(color)


def feature_label(spec: GridSpec, i: int) -> str:
    n = spec.num_states
    if i < n:
        r, c = spec.cell(i)
        return f"state({r},{c})"
    if i < n + len(ACTIONS):
        return f"action({ACTION_NAMES[i - n]})"
    return f"color({COLORS[i - n - len(ACTIONS)]})"


def nominal_weight_vector(spec: GridSpec) -> np.ndarray:
    """Action costs on the action indicators; the goal bonus on the goal's state indicator."""
    w = np.zeros(feature_dim(spec))
    for a in range(len(ACTIONS)):
        w[action_index(spec, a)] = CARDINAL_COST if a < 4 else DIAGONAL_COST
    w[state_index(spec, spec.goal)] = spec.goal_bonus
    return w


def constraint_weight_vector(spec: GridSpec) -> np.ndarray:
    """Ground-truth constraint costs (nonpositive) in feature space."""
    w = np.zeros(feature_dim(spec))
    for s, cost in spec.constrained_states.items():
        w[state_index(spec, s)] += cost
    for name, cost in spec.constrained_actions.items():
        w[action_index(spec, ACTION_NAMES.index(name))] += cost
    for color, cost in spec.constrained_colors.items():
        w[color_index(spec, color)] += cost
    return w


def _moves(spec: GridSpec, s: int) -> list[tuple[int, int]]:
    """(action, next_state) pairs for on-grid moves from ``s``."""
    r, c = spec.cell(s)
    out = []
    for a, (dr, dc) in enumerate(ACTIONS):
        r2, c2 = r + dr, c + dc
        if 0 <= r2 < spec.height and 0 <= c2 < spec.width:
            out.append((a, spec.state(r2, c2)))
    return out


def reachable_from(spec: GridSpec, sources: Iterable[int], blocked: Iterable[int] = ()) -> set[int]:
    blocked = set(blocked)
    seen = {s for s in sources if s not in blocked}
    queue = deque(seen)
    while queue:
        s = queue.popleft()
        if s == spec.goal:
            continue
        for _, s2 in _moves(spec, s):
            if s2 not in seen and s2 not in blocked:
                seen.add(s2)
                queue.append(s2)
    return seen


def build_gridworld(spec: GridSpec) -> TabularMdp:
    """Build the nominal gridworld MDP described by ``spec``.

    With probability ``1 - action_failure_prob`` the intended move is
    executed; otherwise a move drawn uniformly from the legal moves of the
    state is executed instead. Features are one-hot over the destination
    state, the intended action and the destination's color.
    """
    spec.validate()
    n, A = spec.num_states, len(ACTIONS)
    k = feature_dim(spec)
    starts = [s for s, p in spec.start if p > 0]
    if spec.goal not in reachable_from(spec, starts):
        raise InvalidSpecError("goal is unreachable from every start state")

    P = np.zeros((n, A, n))
    available = np.zeros((n, A), dtype=bool)
    rows, cols = [], []
    color_col = [color_index(spec, spec.colors.get(s, "none")) for s in range(n)]
    eps = spec.action_failure_prob
    for s in range(n):
        if s == spec.goal:
            available[s, 0] = True
            P[s, 0, s] = 1.0
            continue
        moves = _moves(spec, s)
        for a, s2 in moves:
            available[s, a] = True
            P[s, a, s2] += 1.0 - eps
            for _, s3 in moves:
                P[s, a, s3] += eps / len(moves)
        for a, _ in moves:
            for s2 in np.flatnonzero(P[s, a]):
                r = (s * A + a) * n + s2
                rows += [r, r, r]
                cols += [state_index(spec, s2), action_index(spec, a), color_col[s2]]
    # exact zeros for vanished branches (eps = 0 or 1)
    P[P < 1e-15] = 0.0
    features = sparse.csr_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(n * A * n, k)
    )
    # drop feature rows whose transition has zero probability
    mask = sparse.diags((P.reshape(-1) > 0).astype(float))
    features = sparse.csr_matrix(mask @ features)
    features.eliminate_zeros()

    start = np.zeros(n)
    for s, p in spec.start:
        start[s] += p
    absorbing = np.zeros(n, dtype=bool)
    absorbing[spec.goal] = True
    mdp = TabularMdp(
        transition=P,
        available=available,
        features=features,
        nominal_weights=nominal_weight_vector(spec),
        start=start,
        horizon=spec.horizon,
        discount=spec.discount,
        absorbing=absorbing,
        grid=spec,
    )
    mdp.check()
    return mdp


def reward(mdp: TabularMdp, w: np.ndarray, s: int, a: int, s2: int) -> float:
    """``w . phi(s, a, s')`` for a feasible transition."""
    if not mdp.available[s, a] or mdp.transition[s, a, s2] <= 0:
        raise ValueError(f"transition ({s}, {a}, {s2}) is infeasible")
    return float(mdp.phi(s, a, s2) @ np.asarray(w, dtype=float))


@dataclass(frozen=True)
class Trajectory:
    transitions: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "transitions", tuple(tuple(int(x) for x in t) for t in self.transitions)
        )

    def __len__(self) -> int:
        return len(self.transitions)

    def __iter__(self):
        return iter(self.transitions)

    @property
    def states(self) -> list[int]:
        if not self.transitions:
            return []
        return [t[0] for t in self.transitions] + [self.transitions[-1][2]]


DemoSet = Sequence[Trajectory]


def validate_trajectory(mdp: TabularMdp, tau: Trajectory) -> None:
    if len(tau) > mdp.horizon:
        raise ValueError(f"trajectory length {len(tau)} exceeds horizon {mdp.horizon}")
    prev = None
    for i, (s, a, s2) in enumerate(tau):
        if prev is not None and s != prev:
            raise ValueError(f"step {i} starts at {s} but previous step ended at {prev}")
        if not (0 <= s < mdp.num_states and 0 <= a < mdp.num_actions and 0 <= s2 < mdp.num_states):
            raise ValueError(f"step {i} indices out of range")
        if not mdp.available[s, a]:
            raise ValueError(f"action {a} unavailable in state {s}")
        if mdp.transition[s, a, s2] <= 0:
            raise ValueError(f"transition ({s}, {a}, {s2}) has zero probability")
        prev = s2


def trajectory_features(mdp: TabularMdp, tau: Trajectory) -> np.ndarray:
    out = np.zeros(mdp.num_features)
    if len(tau):
        rows = [mdp.row(s, a, s2) for s, a, s2 in tau]
        out += np.asarray(mdp.features[rows].sum(axis=0)).ravel()
    return out
