"""Finite discounted MDPs, Bellman backups, value iteration and prioritized sweeping.

Q-functions are plain ``(num_states, num_actions)`` float arrays.  The solvers
accept arrays with extra leading batch dimensions so that a whole set of
sampled MDPs can be solved in one pass; the :class:`Mdp`-level functions are
thin wrappers around those batched kernels.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import IO, Iterable, NamedTuple

import numpy as np

PROB_TOL = 1e-9
DEFAULT_TOLERANCE = 1e-6
DEFAULT_MAX_ITERS = 10_000
DEFAULT_SWEEP_BUDGET = 10
DEFAULT_PRIORITY_THRESHOLD = 1e-4


@dataclass(frozen=True, eq=False)
class Mdp:
    """A finite MDP with a finite reward support.

    transition[s, a, t] is p_T(s -a-> t); reward_dist[s, a, j] is the
    probability of receiving reward_support[j] after executing a at s.
    """

    transition: np.ndarray
    reward_dist: np.ndarray
    reward_support: np.ndarray
    discount: float

    def __post_init__(self):
        transition = np.asarray(self.transition, dtype=float)
        reward_dist = np.asarray(self.reward_dist, dtype=float)
        support = np.asarray(self.reward_support, dtype=float)
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "reward_dist", reward_dist)
        object.__setattr__(self, "reward_support", support)
        object.__setattr__(self, "discount", float(self.discount))

        if transition.ndim != 3 or transition.shape[0] != transition.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {transition.shape}")
        S, A, _ = transition.shape
        if S < 1 or A < 1:
            raise ValueError("need at least one state and one action")
        if support.ndim != 1 or support.size < 1:
            raise ValueError("reward_support must be a non-empty vector")
        if reward_dist.shape != (S, A, support.size):
            raise ValueError(
                f"reward_dist must have shape {(S, A, support.size)}, got {reward_dist.shape}"
            )
        if np.any(np.diff(support) <= 0):
            raise ValueError("reward_support must be strictly increasing")
        for name, arr in (("transition", transition), ("reward_dist", reward_dist)):
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has negative or non-finite entries")
            if np.max(np.abs(arr.sum(axis=-1) - 1.0)) > PROB_TOL:
                raise ValueError(f"{name} rows must sum to 1")
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @cached_property
    def expected_rewards(self) -> np.ndarray:
        """(S, A) array of E[r | s, a]."""
        return self.reward_dist @ self.reward_support

    @property
    def value_bounds(self) -> tuple[float, float]:
        """Bounds r_min/(1-gamma), r_max/(1-gamma) on any Q-value."""
        scale = 1.0 / (1.0 - self.discount)
        return float(self.reward_support[0]) * scale, float(self.reward_support[-1]) * scale

    def with_row(self, s: int, a: int, transition_row, reward_row) -> "Mdp":
        """Copy of this MDP with the (s, a) dynamics replaced."""
        transition = self.transition.copy()
        reward_dist = self.reward_dist.copy()
        transition[s, a] = transition_row
        reward_dist[s, a] = reward_row
        return Mdp(transition, reward_dist, self.reward_support, self.discount)

    def dump(self, fh: IO[str]) -> None:
        """Write the plain-text debug format.

        Header line ``num_states num_actions discount r_1 ... r_R`` followed by
        one line per (s, a): ``s a | p_T(s,a,0) ... | p_R(s,a,0) ...``.
        """
        support = " ".join(repr(float(r)) for r in self.reward_support)
        fh.write(f"{self.num_states} {self.num_actions} {self.discount!r} {support}\n")
        for s in range(self.num_states):
            for a in range(self.num_actions):
                trans = " ".join(repr(float(p)) for p in self.transition[s, a])
                rew = " ".join(repr(float(p)) for p in self.reward_dist[s, a])
                fh.write(f"{s} {a} | {trans} | {rew}\n")

    @classmethod
    def load(cls, fh: IO[str]) -> "Mdp":
        header = fh.readline().split()
        S, A = int(header[0]), int(header[1])
        discount = float(header[2])
        support = np.array([float(x) for x in header[3:]])
        transition = np.zeros((S, A, S))
        reward_dist = np.zeros((S, A, support.size))
        for line in fh:
            if not line.strip():
                continue
            idx, trans, rew = line.split("|")
            s, a = (int(x) for x in idx.split())
            transition[s, a] = [float(x) for x in trans.split()]
            reward_dist[s, a] = [float(x) for x in rew.split()]
        return cls(transition, reward_dist, support, discount)


class Solution(NamedTuple):
    q: np.ndarray
    residual: float
    iterations: int
    converged: bool


class SweepResult(NamedTuple):
    q: np.ndarray
    backups: int


def _check_index(mdp: Mdp, s: int, a: int) -> None:
    if not (0 <= s < mdp.num_states and 0 <= a < mdp.num_actions):
        raise IndexError(f"(s={s}, a={a}) out of range for {mdp.num_states}x{mdp.num_actions} MDP")


def expected_reward(mdp: Mdp, s: int, a: int) -> float:
    _check_index(mdp, s, a)
    return float(mdp.reward_dist[s, a] @ mdp.reward_support)


def greedy_values(q: np.ndarray) -> np.ndarray:
    return q.max(axis=-1)


def greedy_policy(q: np.ndarray) -> np.ndarray:
    """Greedy actions; np.argmax breaks ties toward the lowest action index."""
    return np.argmax(q, axis=-1)


def bellman_backup(mdp: Mdp, q: np.ndarray, s: int, a: int) -> float:
    _check_index(mdp, s, a)
    v = greedy_values(q)
    return float(mdp.expected_rewards[s, a] + mdp.discount * mdp.transition[s, a] @ v)


def bellman_operator(transition: np.ndarray, rewards: np.ndarray, discount: float,
                     q: np.ndarray) -> np.ndarray:
    """Apply the Bellman optimality operator to every (s, a) at once.

    Shapes: transition (..., S, A, S), rewards (..., S, A), q (..., S, A).
    """
    *batch, S, A, _ = transition.shape
    v = q.max(axis=-1)[..., :, None]
    flat = transition.reshape(*batch, S * A, S)
    return rewards + discount * (flat @ v).reshape(*batch, S, A)


def solve_q(transition: np.ndarray, rewards: np.ndarray, discount: float,
            tolerance: float = DEFAULT_TOLERANCE, max_iters: int = DEFAULT_MAX_ITERS,
            q0: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, int]:
    """Synchronous value iteration on a (possibly batched) model.

    Returns (q, residual per batch element, sweeps performed).  Iteration stops
    once every batch element has sup-norm update <= tolerance; the returned q
    then has Bellman residual <= discount * tolerance.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    q = np.zeros(rewards.shape) if q0 is None else np.array(q0, dtype=float)
    residual = np.full(rewards.shape[:-2], np.inf)
    sweeps = 0
    while sweeps < max_iters:
        q_new = bellman_operator(transition, rewards, discount, q)
        residual = np.abs(q_new - q).max(axis=(-2, -1))
        q = q_new
        sweeps += 1
        if np.all(residual <= tolerance):
            break
    return q, residual, sweeps


def value_iteration(mdp: Mdp, tolerance: float = DEFAULT_TOLERANCE,
                    max_iters: int = DEFAULT_MAX_ITERS) -> Solution:
    """Solve ``mdp`` from Q = 0.

    Non-convergence is not an error: the returned residual is the last
    sup-norm update and the caller decides what to do with it.
    """
    q, residual, sweeps = solve_q(mdp.transition, mdp.expected_rewards, mdp.discount,
                                  tolerance, max_iters)
    return Solution(q, float(residual), sweeps, bool(residual <= tolerance))


def sweep_batch(transition: np.ndarray, rewards: np.ndarray, discount: float,
                q: np.ndarray, seeds: np.ndarray, max_backups: int | None,
                priority_threshold: float,
                priority: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Prioritized sweeping over a batch of models.

    transition (k, S, A, S), rewards (k, S, A), q (k, S, A) and a boolean seed
    mask (k, S).  Each model keeps its own priority queue, applied in lockstep.
    Returns the updated copy of q and the number of state backups per model.

    Passing a (k, S) ``priority`` array carries the queue between calls: it
    is updated in place, so work left over when the budget runs out is picked
    up by the next call instead of being dropped.
    """
    q = np.array(q, dtype=float)
    k, S, A = q.shape
    if priority is None:
        priority = np.zeros((k, S))
    priority[seeds] = np.inf
    # largest single-step probability of reaching t from s under any action
    reach = transition.max(axis=2).transpose(0, 2, 1).copy()  # (k, S_to, S_from)
    v = q.max(axis=2)
    backups = np.zeros(k, dtype=int)
    rows = np.arange(k)
    budget = np.inf if max_backups is None else max_backups
    threshold = max(priority_threshold, 0.0)
    step = 0
    while step < budget:
        top = np.argmax(priority, axis=1)
        top_priority = priority[rows, top]
        active = (top_priority > 0) & (top_priority >= threshold)
        if not active.any():
            break
        if active.all():
            m, s = rows, top
        else:
            m, s = rows[active], top[active]
        priority[m, s] = 0.0
        new_row = rewards[m, s] + discount * np.matmul(transition[m, s], v[m, :, None])[..., 0]
        q[m, s] = new_row
        new_v = new_row.max(axis=1)
        delta = np.abs(new_v - v[m, s])
        v[m, s] = new_v
        priority[m] += reach[m, s] * delta[:, None]
        backups[m] += 1
        step += 1
    return q, backups


def prioritized_sweep(mdp: Mdp, q: np.ndarray, seeds: Iterable[int],
                      max_backups: int | None = DEFAULT_SWEEP_BUDGET,
                      priority_threshold: float = DEFAULT_PRIORITY_THRESHOLD) -> SweepResult:
    """Repair ``q`` after the dynamics at ``seeds`` changed.

    Seed states are backed up first.  After a backup of state s changes V(s)
    by delta, each predecessor p gains priority max_a p_T(p -a-> s) * |delta|
    (added to whatever priority it already holds).  Stops when the budget is
    exhausted, the queue is empty, or the top priority drops below the
    threshold.  ``max_backups=None`` means no budget.
    """
    seed_mask = np.zeros((1, mdp.num_states), dtype=bool)
    seed_mask[0, list(seeds)] = True
    out, backups = sweep_batch(mdp.transition[None], mdp.expected_rewards[None], mdp.discount,
                               np.asarray(q, dtype=float)[None], seed_mask, max_backups,
                               priority_threshold)
    return SweepResult(out[0], int(backups[0]))


def policy_evaluation(mdp: Mdp, policy: np.ndarray) -> np.ndarray:
    """Exact state values of a deterministic stationary policy (linear solve)."""
    S = mdp.num_states
    idx = np.arange(S)
    P = mdp.transition[idx, policy]
    r = mdp.expected_rewards[idx, policy]
    return np.linalg.solve(np.eye(S) - mdp.discount * P, r)
