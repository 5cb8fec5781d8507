"""Stochastic flag-collection mazes compiled to flat MDPs.

Map alphabet: ``#`` wall, ``.`` free, ``S`` start, ``F`` flag, ``G`` goal,
``T`` trap.  The agent moves up/down/left/right; the intended move happens
with probability ``success_prob`` and the rest slips evenly to the two
perpendicular directions.  Blocked moves leave the agent in place.

Landing on a flag picks it up.  Landing on a trap pays ``trap_reward``.
Landing on a goal while holding at least one flag pays ``flag_reward`` per
flag held; from that state every action leads back to the start with no
flags.  A state is (cell, flags-held bitmask); only states reachable from the
start are kept, ordered by (flags, row-major cell index).
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from .mdp import Mdp

WALL, FREE, START, FLAG, GOAL, TRAP = "#", ".", "S", "F", "G", "T"
ALPHABET = {WALL, FREE, START, FLAG, GOAL, TRAP}
UP, DOWN, LEFT, RIGHT = range(4)
ACTION_NAMES = ("up", "down", "left", "right")
_DELTAS = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}
_PERPENDICULAR = {UP: (LEFT, RIGHT), DOWN: (LEFT, RIGHT), LEFT: (UP, DOWN), RIGHT: (UP, DOWN)}
SHIPPED_MAPS = ("trap", "maze", "maze2")


class MapParseError(ValueError):
    pass


@dataclass(frozen=True)
class MazeMap:
    rows: tuple[str, ...]

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.rows), len(self.rows[0])

    def cells(self, kind: str) -> list[tuple[int, int]]:
        return [(i, j) for i, row in enumerate(self.rows) for j, ch in enumerate(row) if ch == kind]

    @property
    def start(self) -> tuple[int, int]:
        return self.cells(START)[0]

    @property
    def goals(self) -> list[tuple[int, int]]:
        return self.cells(GOAL)

    @property
    def flags(self) -> list[tuple[int, int]]:
        return self.cells(FLAG)

    @property
    def traps(self) -> list[tuple[int, int]]:
        return self.cells(TRAP)

    def is_open(self, cell: tuple[int, int]) -> bool:
        i, j = cell
        h, w = self.shape
        return 0 <= i < h and 0 <= j < w and self.rows[i][j] != WALL

    def __str__(self) -> str:
        return "\n".join(self.rows)


def parse_map(text: str) -> MazeMap:
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    while lines and not lines[0].strip():
        lines.pop(0)
    if not lines:
        raise MapParseError("empty map")
    lines = [line.rstrip() for line in lines]
    starts, goals = [], []
    for i, line in enumerate(lines):
        for j, ch in enumerate(line):
            if ch not in ALPHABET:
                raise MapParseError(f"line {i + 1}, column {j + 1}: unknown character {ch!r}")
            if ch == START:
                starts.append((i, j))
            elif ch == GOAL:
                goals.append((i, j))
    if len(starts) != 1:
        where = ", ".join(f"line {i + 1} column {j + 1}" for i, j in starts)
        raise MapParseError(f"expected exactly one start, found {len(starts)}" + (f" ({where})" if where else ""))
    if not goals:
        raise MapParseError("map has no goal")
    width = max(len(line) for line in lines)
    return MazeMap(tuple(line.ljust(width, WALL) for line in lines))


def load_map(name_or_path: str | Path) -> MazeMap:
    """Parse a shipped layout by name (``trap``, ``maze``, ``maze2``) or a map file path."""
    if str(name_or_path) in SHIPPED_MAPS:
        text = resources.files("bayesvpi").joinpath("maps", f"{name_or_path}.map").read_text()
    else:
        text = Path(name_or_path).read_text(encoding="utf-8")
    return parse_map(text)


@dataclass(frozen=True)
class EnvConfig:
    success_prob: float = 0.9
    trap_reward: float = -10.0
    flag_reward: float = 1.0
    discount: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.success_prob <= 1.0:
            raise ValueError("success_prob must lie in (0, 1]")


@dataclass(frozen=True)
class EnvState:
    cell: tuple[int, int]
    flags: int = 0


class Maze:
    """A map plus dynamics; compiles lazily to a flat :class:`Mdp`."""

    num_actions = 4

    def __init__(self, maze_map: MazeMap, cfg: EnvConfig | None = None):
        self.map = maze_map
        self.cfg = cfg or EnvConfig()
        self._flag_bit = {cell: 1 << n for n, cell in enumerate(maze_map.flags)}
        self._all_flags = (1 << len(maze_map.flags)) - 1
        self._traps = set(maze_map.traps)
        self._goals = set(maze_map.goals)
        self.reward_support = self._declared_rewards()
        self.states = self._enumerate()
        self.index = {st: n for n, st in enumerate(self.states)}

    def _declared_rewards(self) -> np.ndarray:
        values = {0.0}
        if self._traps:
            values.add(float(self.cfg.trap_reward))
        for n in range(1, len(self._flag_bit) + 1):
            values.add(float(self.cfg.flag_reward) * n)
        return np.array(sorted(values))

    @property
    def start_state(self) -> int:
        return self.index[EnvState(self.map.start, 0)]

    @property
    def num_states(self) -> int:
        return len(self.states)

    def _move(self, cell, direction):
        di, dj = _DELTAS[direction]
        target = (cell[0] + di, cell[1] + dj)
        return target if self.map.is_open(target) else cell

    def is_reset_state(self, st: EnvState) -> bool:
        return st.cell in self._goals and st.flags != 0

    def outcomes(self, st: EnvState, action: int) -> list[tuple[float, EnvState, float]]:
        """(probability, next state, reward) triples with positive probability."""
        if self.is_reset_state(st):
            return [(1.0, EnvState(self.map.start, 0), 0.0)]
        p = self.cfg.success_prob
        moves = [(p, action)] + [((1.0 - p) / 2.0, d) for d in _PERPENDICULAR[action]]
        out = []
        for prob, direction in moves:
            if prob <= 0:
                continue
            cell = self._move(st.cell, direction)
            flags = st.flags | self._flag_bit.get(cell, 0)
            reward = 0.0
            if cell in self._traps:
                reward = float(self.cfg.trap_reward)
            elif cell in self._goals and flags:
                reward = float(self.cfg.flag_reward) * bin(flags).count("1")
            out.append((prob, EnvState(cell, flags), reward))
        return out

    def _enumerate(self) -> list[EnvState]:
        start = EnvState(self.map.start, 0)
        seen = {start}
        queue = deque([start])
        while queue:
            st = queue.popleft()
            for a in range(self.num_actions):
                for _, nxt, _ in self.outcomes(st, a):
                    if nxt not in seen:
                        seen.add(nxt)
                        queue.append(nxt)
        width = self.map.shape[1]
        return sorted(seen, key=lambda st: (st.flags, st.cell[0] * width + st.cell[1]))

    @cached_property
    def _tables(self):
        S, A = self.num_states, self.num_actions
        support = {float(r): j for j, r in enumerate(self.reward_support)}
        trans = np.zeros((S, A, S))
        rdist = np.zeros((S, A, self.reward_support.size))
        reward_of = np.full((S, S), np.nan)
        for s, st in enumerate(self.states):
            for a in range(A):
                for prob, nxt, reward in self.outcomes(st, a):
                    t = self.index[nxt]
                    trans[s, a, t] += prob
                    rdist[s, a, support[reward]] += prob
                    reward_of[s, t] = reward
        return trans, rdist, reward_of

    @cached_property
    def mdp(self) -> Mdp:
        trans, rdist, _ = self._tables
        return Mdp(trans, rdist, self.reward_support, self.cfg.discount)

    @cached_property
    def _cumulative(self) -> np.ndarray:
        cum = np.cumsum(self._tables[0], axis=-1)
        cum[..., -1] = 1.0
        return cum

    def reward(self, s: int, t: int) -> float:
        return float(self._tables[2][s, t])

    def step(self, s: int, a: int, rng: np.random.Generator) -> tuple[int, float]:
        """Sample (next state, reward) from the compiled dynamics."""
        t = int(np.searchsorted(self._cumulative[s, a], rng.random(), side="right"))
        return t, self.reward(s, t)

    def states_at(self, kind: str) -> list[int]:
        cells = set(self.map.cells(kind))
        return [n for n, st in enumerate(self.states) if st.cell in cells]

    def flags_held(self, s: int) -> int:
        return bin(self.states[s].flags).count("1")


def compile_to_mdp(maze_map: MazeMap, cfg: EnvConfig | None = None) -> Mdp:
    return Maze(maze_map, cfg).mdp


def env_step(maze: Maze, s: int, a: int, rng: np.random.Generator) -> tuple[int, float]:
    return maze.step(s, a, rng)


def first_delivery_flags(maze: Maze, policy, max_iters: int = 100_000, tol: float = 1e-12) -> np.ndarray:
    """P(the first delivery from the start carries n flags) for n = 0..#flags.

    Entry 0 is the probability of never delivering.  ``policy`` maps each
    state to an action.
    """
    policy = np.asarray(policy, dtype=np.int64)
    S = maze.num_states
    trans = maze.mdp.transition[np.arange(S), policy]
    absorbing = np.array([maze.is_reset_state(st) for st in maze.states])
    n_flags = len(maze.map.flags)
    # hit[s, n]: probability of first reaching a delivery with n flags
    target = np.zeros((S, n_flags + 1))
    for s in np.nonzero(absorbing)[0]:
        target[s, maze.flags_held(s)] = 1.0
    hit = target.copy()
    for _ in range(max_iters):
        nxt = np.where(absorbing[:, None], target, trans @ hit)
        if np.max(np.abs(nxt - hit)) < tol:
            hit = nxt
            break
        hit = nxt
    out = hit[maze.start_state].copy()
    out[0] = max(0.0, 1.0 - out[1:].sum())
    return out
