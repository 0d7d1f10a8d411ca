"""Environment constructors: the lower-bound game family, the 3x3 gridworld and random games."""

import itertools
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from game_core import MarkovGame, PolicyPair, StagePolicy
from matrix_nash import mix_equilibria, nash_gap, zero_sum_value_iteration

logger = logging.getLogger("mailbench.envs")

# lower-bound game state and action indices
S1, S2, S3 = 0, 1, 2
A1, A2 = 0, 1
B1, B2 = 0, 1

SIMPLIFIED_S3_PAYOFF = np.array([[1.0, 1.0], [0.0, -12.0]])

Cell = Tuple[int, int]

ACTION_NAMES = ("left", "right", "up", "down")
MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0))


@dataclass(frozen=True, eq=False)
class GameInstance:
    """A game together with its expert equilibrium and a per-stage state distribution."""

    game: MarkovGame
    experts: PolicyPair
    rho: np.ndarray


def perturbed_payoff(delta: float) -> np.ndarray:
    return np.array([[1.0 + delta, -1.0], [-1.0, 1.0]])


def _lower_bound_rho(rho_s3: float) -> np.ndarray:
    if not 0.0 <= rho_s3 <= 1.0:
        raise ValueError(f"rho_s3 must lie in [0, 1], got {rho_s3}")
    rho = np.zeros((2, 3))
    rho[0, S1] = 1.0
    rho[1, S2] = 1.0 - rho_s3
    rho[1, S3] = rho_s3
    return rho


def _lower_bound_game(payoff: np.ndarray) -> MarkovGame:
    H, S = 2, 3
    P = np.zeros((H, S, 2, 2, S))
    for h in range(H):
        for s in (S2, S3):
            P[h, s, :, :, s] = 1.0
        if h == 0:
            P[h, S1, :, B1, S2] = 1.0
            P[h, S1, :, B2, S3] = 1.0
        else:
            P[h, S1, :, :, S1] = 1.0
    R = np.zeros((H, S, 2, 2))
    R[:, S3] = payoff
    d0 = np.zeros(S)
    d0[S1] = 1.0
    return MarkovGame(P, d0, R, r_max=max(1.0, float(np.max(np.abs(payoff)))))


def _lower_bound_experts(mu_s3: Sequence[float], nu_s3: Sequence[float]) -> PolicyPair:
    mu = np.full((2, 3, 2), 0.5)
    nu = np.full((2, 3, 2), 0.5)
    mu[:, S3] = mu_s3
    nu[:, S3] = nu_s3
    nu[:, S1] = (1.0, 0.0)
    return PolicyPair(StagePolicy(mu), StagePolicy(nu))


def make_lower_bound_game(delta: float, rho_s3: float = 0.5) -> GameInstance:
    """Three-state, two-stage game where player 2 alone decides whether s3 is reached.

    s1 -> s2 under b1 and s1 -> s3 under b2; s3 hosts the perturbed matching-pennies
    payoff [[1+delta, -1], [-1, 1]]. Experts are uniform at s1/s2 for player 1, play b1
    at s1 for player 2 and the perturbed matching-pennies equilibrium at s3.
    """
    if delta < 0:
        raise ValueError(f"delta must be non-negative, got {delta}")
    p = 1.0 / (2.0 + delta / 2.0)
    game = _lower_bound_game(perturbed_payoff(delta))
    experts = _lower_bound_experts((p, 1.0 - p), (p, 1.0 - p))
    return GameInstance(game, experts, _lower_bound_rho(rho_s3))


def make_lower_bound_simplified(rho_s3: float = 0.5) -> GameInstance:
    """Lower-bound game with the pure s3 payoff [[1, 1], [0, -12]] (value 1 at s3).

    Player 2 is indifferent at s3 against a1, so its expert plays uniformly there.
    """
    game = _lower_bound_game(SIMPLIFIED_S3_PAYOFF)
    experts = _lower_bound_experts((1.0, 0.0), (0.5, 0.5))
    return GameInstance(game, experts, _lower_bound_rho(rho_s3))


@dataclass(frozen=True)
class GridworldSpec:
    side: int = 3
    goal: Cell = (0, 2)
    start: Tuple[Cell, Cell] = ((1, 0), (2, 1))
    horizon: int = 8
    collision_rule: str = "stay"

    def __post_init__(self):
        if self.side < 2:
            raise ValueError(f"side must be at least 2, got {self.side}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.collision_rule != "stay":
            raise ValueError(f"unsupported collision rule {self.collision_rule!r}")
        c1, c2 = self.start
        if c1 == c2:
            raise ValueError("start cells must be distinct")
        for cell in (c1, c2, self.goal):
            if not all(0 <= x < self.side for x in cell):
                raise ValueError(f"cell {cell} lies outside the {self.side}x{self.side} grid")
        if self.goal in (c1, c2):
            raise ValueError("agents cannot start on the goal")

    def distance_to_goal(self, cell: Cell) -> int:
        return abs(cell[0] - self.goal[0]) + abs(cell[1] - self.goal[1])


class GridCodec:
    """Joint-position codec: index = lexicographic rank of ((r1, c1), (r2, c2)) over distinct
    cell pairs; the absorbing terminal state takes the last index."""

    def __init__(self, side: int):
        cells = [(r, c) for r in range(side) for c in range(side)]
        self.pairs: List[Tuple[Cell, Cell]] = [(a, b) for a, b in itertools.product(cells, cells) if a != b]
        self._index: Dict[Tuple[Cell, Cell], int] = {pair: i for i, pair in enumerate(self.pairs)}
        self.n_live = len(self.pairs)
        self.terminal = self.n_live
        self.n_states = self.n_live + 1

    def encode(self, cell_1: Cell, cell_2: Cell) -> int:
        try:
            return self._index[(tuple(cell_1), tuple(cell_2))]
        except KeyError:
            raise ValueError(f"invalid joint position {(cell_1, cell_2)}") from None

    def decode(self, index: int) -> Optional[Tuple[Cell, Cell]]:
        """Return the joint position, or None for the terminal state."""
        if index == self.terminal:
            return None
        return self.pairs[index]


def _step(cell: Cell, action: int, side: int) -> Cell:
    dr, dc = MOVES[action]
    r, c = cell[0] + dr, cell[1] + dc
    if 0 <= r < side and 0 <= c < side:
        return r, c
    return cell


def make_gridworld(spec: GridworldSpec = GridworldSpec()) -> Tuple[MarkovGame, GridCodec]:
    """Two agents race to the goal cell; reaching it first pays +1 (player 1) or -1.

    Moves into a wall or into the other agent's current cell leave the mover in place;
    two agents targeting the same free cell both stay. Entering the goal ends the episode
    in an absorbing zero-reward terminal state.
    """
    codec = GridCodec(spec.side)
    H, S, n_act = spec.horizon, codec.n_states, len(MOVES)
    P_stage = np.zeros((S, n_act, n_act, S))
    R_stage = np.zeros((S, n_act, n_act))
    P_stage[codec.terminal, :, :, codec.terminal] = 1.0
    for s, (c1, c2) in enumerate(codec.pairs):
        if spec.goal in (c1, c2):
            # never reached: entering the goal moves to the terminal state
            P_stage[s, :, :, codec.terminal] = 1.0
            continue
        for a, b in itertools.product(range(n_act), range(n_act)):
            t1, t2 = _step(c1, a, spec.side), _step(c2, b, spec.side)
            if t1 == c2:
                t1 = c1
            if t2 == c1:
                t2 = c2
            if t1 == t2:
                t1, t2 = c1, c2
            if t1 == spec.goal:
                P_stage[s, a, b, codec.terminal] = 1.0
                R_stage[s, a, b] = 1.0
            elif t2 == spec.goal:
                P_stage[s, a, b, codec.terminal] = 1.0
                R_stage[s, a, b] = -1.0
            else:
                P_stage[s, a, b, codec.encode(t1, t2)] = 1.0
    P = np.broadcast_to(P_stage, (H,) + P_stage.shape)
    R = np.broadcast_to(R_stage, (H,) + R_stage.shape)
    d0 = np.zeros(S)
    d0[codec.encode(*spec.start)] = 1.0
    return MarkovGame(P, d0, R, r_max=1.0), codec


def gridworld_experts(game: MarkovGame, mixed: bool = False,
                      priorities: Optional[Sequence[Sequence[int]]] = None,
                      tol: float = 1e-6) -> PolicyPair:
    """Value-iteration expert pair for the gridworld.

    With `mixed`, value iteration is rerun under several action-priority orders; the
    distinct equilibria found are mixed uniformly per state and the mixture is checked
    with nash_gap.
    """
    base = zero_sum_value_iteration(game).pair
    if not mixed:
        return base
    if priorities is None:
        priorities = [(0, 1, 2, 3), (3, 2, 1, 0), (2, 1, 0, 3), (1, 2, 3, 0)]
    found: List[PolicyPair] = []
    for order in priorities:
        pair = zero_sum_value_iteration(game, row_priority=order, col_priority=order).pair
        if nash_gap(game, pair) > tol:
            logger.warning("discarding value-iteration pair for priority %s: not an equilibrium", order)
            continue
        if not any(np.array_equal(pair.mu.probs, p.mu.probs) and np.array_equal(pair.nu.probs, p.nu.probs)
                   for p in found):
            found.append(pair)
    if not found:
        return base
    mixture = mix_equilibria(found, np.full(len(found), 1.0 / len(found)))
    gap = nash_gap(game, mixture)
    if gap > tol:
        logger.warning("mixed expert has nash gap %.3e; falling back to the pure equilibrium", gap)
        return base
    logger.info("mixed gridworld expert from %d distinct equilibria", len(found))
    return mixture


def make_random_game(n_states: int, n_actions_p1: int, n_actions_p2: int, horizon: int,
                     seed: int) -> MarkovGame:
    """Dirichlet(1) transitions, uniform[-1, 1] rewards and a Dirichlet(1) initial distribution."""
    if min(n_states, n_actions_p1, n_actions_p2, horizon) < 1:
        raise ValueError("all dimensions must be at least 1")
    rng = np.random.default_rng(seed)
    shape = (horizon, n_states, n_actions_p1, n_actions_p2)
    P = rng.dirichlet(np.ones(n_states), size=shape)
    R = rng.uniform(-1.0, 1.0, size=shape)
    d0 = rng.dirichlet(np.ones(n_states))
    return MarkovGame(P, d0, R, r_max=1.0)


def random_pair(game: MarkovGame, rng: np.random.Generator) -> PolicyPair:
    H, S = game.horizon, game.n_states
    mu = rng.dirichlet(np.ones(game.n_actions_p1), size=(H, S))
    nu = rng.dirichlet(np.ones(game.n_actions_p2), size=(H, S))
    return PolicyPair(StagePolicy(mu), StagePolicy(nu))
