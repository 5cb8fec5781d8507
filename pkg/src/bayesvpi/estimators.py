"""Sample-based Q-value distributions derived from a belief state.

A :class:`QSampleSet` holds k sampled MDPs (stacked into batch arrays), the
Q-function of each, and one importance weight per model.  Four estimators
maintain such distributions across environment steps:

* naive: draw and solve k fresh MDPs (every ``resample_every`` steps);
* importance: keep the solved MDPs, multiply their weights by the likelihood
  ratio of every new experience tuple, and top the set up with fresh models
  once the total weight falls below ``k_min``;
* repair: resample the changed (s, a) row inside every model and let
  prioritized sweeping fix each Q-function;
* local: keep k raw Q-value points per (s, a) and propagate them with sampled
  Bellman backups (:class:`LocalQTable`).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import IO, NamedTuple

import numpy as np

from .belief import BeliefState, Experience
from .mdp import (DEFAULT_MAX_ITERS, DEFAULT_PRIORITY_THRESHOLD, DEFAULT_SWEEP_BUDGET,
                  DEFAULT_TOLERANCE, Mdp, solve_q, sweep_batch)

DEFAULT_K = 20


class DepletedSampleError(RuntimeError):
    """All sample weights are zero; the set must be refreshed before use."""


@dataclass
class Cost:
    """Planner work counters: full solves and individual state backups."""

    solves: int = 0
    backups: int = 0


class WeightedModel(NamedTuple):
    mdp: Mdp
    q: np.ndarray
    weight: float


def _solve(transition, reward_dist, support, discount, cost: Cost, tolerance, max_iters):
    rewards = reward_dist @ support
    q, _, sweeps = solve_q(transition, rewards, discount, tolerance, max_iters)
    k, S = transition.shape[:2]
    cost.solves += k
    cost.backups += k * S * sweeps
    return q


class QSampleSet:
    """k weighted sampled MDPs with their Q-functions."""

    def __init__(self, transition: np.ndarray, reward_dist: np.ndarray, q: np.ndarray,
                 weights: np.ndarray, reward_support: np.ndarray, discount: float,
                 k_min: float | None = None, cost: Cost | None = None,
                 tolerance: float = DEFAULT_TOLERANCE, max_iters: int = DEFAULT_MAX_ITERS):
        self.transition = transition
        self.reward_dist = reward_dist
        self.q = q
        self.weights = np.asarray(weights, dtype=float)
        self.reward_support = np.asarray(reward_support, dtype=float)
        self.discount = float(discount)
        self.k_min = self.k / 4 if k_min is None else float(k_min)
        self.cost = cost if cost is not None else Cost()
        self.tolerance = tolerance
        self.max_iters = max_iters
        # pending sweep work per (model, state), kept between repairs
        self.priority = np.zeros(self.q.shape[:2])

    @property
    def k(self) -> int:
        return self.q.shape[0]

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    @property
    def models(self) -> list[WeightedModel]:
        return [WeightedModel(Mdp(self.transition[i], self.reward_dist[i], self.reward_support,
                                  self.discount), self.q[i], float(self.weights[i]))
                for i in range(self.k)]

    def q_mean(self, s: int, a: int) -> float:
        """Weighted mean of the sampled Q-values at (s, a)."""
        total = self.weights.sum()
        if total <= 0:
            raise DepletedSampleError("all sample weights are zero")
        return float(self.weights @ self.q[:, s, a] / total)

    def q_means(self) -> np.ndarray:
        total = self.weights.sum()
        if total <= 0:
            raise DepletedSampleError("all sample weights are zero")
        return np.tensordot(self.weights, self.q, axes=1) / total

    def action_samples(self, s: int) -> tuple[np.ndarray, np.ndarray]:
        """(A, k) sampled Q-values at s and the (k,) model weights."""
        return self.q[:, s, :].T, self.weights

    def importance_reweight(self, e: Experience, belief_before: BeliefState) -> None:
        """Multiply each weight by Pr(e | M_i) / Pr(e | belief_before).

        ``belief_before`` must not yet include ``e``.  Q-functions are untouched.
        """
        j = belief_before.reward_index(e.r)
        marginal = belief_before.tuple_likelihood(e)
        model_lik = self.transition[:, e.s, e.a, e.t] * self.reward_dist[:, e.s, e.a, j]
        self.weights = self.weights * (model_lik / marginal)

    def refresh_if_depleted(self, belief: BeliefState, rng: np.random.Generator) -> int:
        """Swap the k - k_min lightest models for fresh ones once total weight < k_min.

        Retained models keep their weights; each new model enters with weight 1.
        Returns the number of MDPs solved.
        """
        if self.total_weight >= self.k_min:
            return 0
        n_new = self.k - int(np.ceil(self.k_min))
        n_new = max(n_new, 1)
        replace = np.argsort(self.weights, kind="stable")[:n_new]
        trans, rdist = belief.sample_models(rng, n_new)
        q = _solve(trans, rdist, self.reward_support, self.discount, self.cost,
                   self.tolerance, self.max_iters)
        self.transition[replace] = trans
        self.reward_dist[replace] = rdist
        self.q[replace] = q
        self.weights[replace] = 1.0
        self.priority[replace] = 0.0
        return n_new

    def repair(self, e: Experience, belief_after: BeliefState, rng: np.random.Generator,
               sweep_budget: int | None = DEFAULT_SWEEP_BUDGET,
               priority_threshold: float = DEFAULT_PRIORITY_THRESHOLD,
               carry_priority: bool = True) -> None:
        """Redraw the (e.s, e.a) row of every model and sweep each Q-function.

        ``belief_after`` must already include ``e``; weights are reset to one.
        With ``carry_priority`` the sweep queue survives between repairs, so
        backups cut off by the budget are resumed on later steps.
        """
        trans, rdist = belief_after.sample_rows(e.s, e.a, rng, self.k)
        self.transition[:, e.s, e.a] = trans
        self.reward_dist[:, e.s, e.a] = rdist
        seeds = np.zeros(self.q.shape[:2], dtype=bool)
        seeds[:, e.s] = True
        rewards = self.reward_dist @ self.reward_support
        self.q, backups = sweep_batch(self.transition, rewards, self.discount, self.q, seeds,
                                      sweep_budget, priority_threshold,
                                      self.priority if carry_priority else None)
        self.cost.backups += int(backups.sum())
        self.weights = np.ones(self.k)

    def export(self, fh: IO[str], states=None) -> None:
        """Columnar dump: state, action, sample, value, weight."""
        fh.write("state,action,sample,value,weight\n")
        S, A = self.q.shape[1:]
        for s in range(S) if states is None else states:
            for a in range(A):
                for i in range(self.k):
                    fh.write(f"{s},{a},{i},{self.q[i, s, a]!r},{self.weights[i]!r}\n")


def naive_sample(belief: BeliefState, k: int, rng: np.random.Generator,
                 k_min: float | None = None, cost: Cost | None = None,
                 tolerance: float = DEFAULT_TOLERANCE,
                 max_iters: int = DEFAULT_MAX_ITERS) -> QSampleSet:
    """Draw k MDPs from the belief, solve each by value iteration, weight 1."""
    if k < 1:
        raise ValueError("k must be at least 1")
    cost = cost if cost is not None else Cost()
    trans, rdist = belief.sample_models(rng, k)
    q = _solve(trans, rdist, belief.reward_support, belief.discount, cost, tolerance, max_iters)
    return QSampleSet(trans, rdist, q, np.ones(k), belief.reward_support, belief.discount,
                      k_min=k_min, cost=cost, tolerance=tolerance, max_iters=max_iters)


class LocalQTable:
    """k raw Q-value points per (s, a), updated by sampled Bellman backups.

    Successor values are drawn independently per (s', a') by picking one stored
    point uniformly (``resample="points"``), or a point plus Gaussian kernel
    noise (``resample="kernel"``).
    """

    def __init__(self, num_states: int, num_actions: int, k: int, reward_support, discount: float,
                 resample: str = "points"):
        if resample not in ("points", "kernel"):
            raise ValueError("resample must be 'points' or 'kernel'")
        support = np.asarray(reward_support, dtype=float)
        scale = 1.0 / (1.0 - discount)
        self.low, self.high = float(support.min()) * scale, float(support.max()) * scale
        self.discount = float(discount)
        self.k = int(k)
        self.resample = resample
        self.points = np.full((num_states, num_actions, k), self.high)
        self.priority = np.zeros((num_states, num_actions))
        self.cost = Cost()

    def action_samples(self, s: int) -> tuple[np.ndarray, np.ndarray]:
        return self.points[s], np.ones(self.k)

    def q_mean(self, s: int, a: int) -> float:
        return float(self.points[s, a].mean())

    def _successor_draws(self, rng: np.random.Generator) -> np.ndarray:
        S, A, k = self.points.shape
        idx = rng.integers(0, k, size=(k, S, A))
        drawn = np.take_along_axis(self.points[None], idx[..., None], axis=-1)[..., 0]
        if self.resample == "kernel" and k > 1:
            width = self.points.var(axis=-1, ddof=1) / 2.0  # d/4 of the pairwise rule
            drawn = drawn + rng.standard_normal(drawn.shape) * np.sqrt(width)[None]
            drawn = np.clip(drawn, self.low, self.high)
        return drawn.max(axis=-1)  # (k, S)

    def update(self, belief: BeliefState, s: int, a: int, rng: np.random.Generator) -> float:
        """Replace the (s, a) points with k fresh sampled backups.

        Returns the change size (mean absolute difference between the sorted old
        and new point sets); predecessors gain that change times their
        predictive probability of reaching s.
        """
        trans, rdist = belief.sample_rows(s, a, rng, self.k)
        rewards = rdist @ belief.reward_support
        successor = self._successor_draws(rng)
        new = rewards + self.discount * np.einsum("jt,jt->j", trans, successor)
        new = np.clip(new, self.low, self.high)
        change = float(np.abs(np.sort(new) - np.sort(self.points[s, a])).mean())
        self.points[s, a] = new
        self.priority[s, a] = 0.0
        self.priority += belief.predictive_transition()[:, :, s] * change
        self.cost.backups += 1
        return change

    def sweep(self, belief: BeliefState, rng: np.random.Generator, budget: int,
              threshold: float = DEFAULT_PRIORITY_THRESHOLD) -> int:
        done = 0
        A = self.points.shape[1]
        while done < budget:
            flat = int(np.argmax(self.priority))
            if self.priority.flat[flat] < threshold or self.priority.flat[flat] <= 0:
                break
            self.update(belief, flat // A, flat % A, rng)
            done += 1
        return done


# --------------------------------------------------------------------------
# estimator strategies used by the agents


class Estimator:
    """Common interface: samples per action plus hooks around each belief update."""

    name = "base"

    def __init__(self, k: int = DEFAULT_K):
        self.k = int(k)
        self.cost = Cost()

    def start(self, belief: BeliefState, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def before_update(self, e: Experience, belief: BeliefState) -> None:
        pass

    def after_update(self, e: Experience, belief: BeliefState, rng: np.random.Generator) -> None:
        pass

    def action_samples(self, s: int) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


class _GlobalEstimator(Estimator):
    samples: QSampleSet

    def action_samples(self, s):
        return self.samples.action_samples(s)


class NaiveEstimator(_GlobalEstimator):
    name = "naive"

    def __init__(self, k: int = DEFAULT_K, resample_every: int = 1):
        super().__init__(k)
        self.resample_every = int(resample_every)
        self._since = 0

    def start(self, belief, rng):
        self.samples = naive_sample(belief, self.k, rng, cost=self.cost)
        self._since = 0

    def after_update(self, e, belief, rng):
        self._since += 1
        if self._since >= self.resample_every:
            self.samples = naive_sample(belief, self.k, rng, cost=self.cost)
            self._since = 0


class ImportanceEstimator(_GlobalEstimator):
    name = "importance"

    def __init__(self, k: int = DEFAULT_K, k_min: float | None = None):
        super().__init__(k)
        self.k_min = k / 4 if k_min is None else k_min

    def start(self, belief, rng):
        self.samples = naive_sample(belief, self.k, rng, k_min=self.k_min, cost=self.cost)

    def before_update(self, e, belief):
        self.samples.importance_reweight(e, belief)

    def after_update(self, e, belief, rng):
        self.samples.refresh_if_depleted(belief, rng)


class RepairEstimator(_GlobalEstimator):
    name = "repair"

    def __init__(self, k: int = DEFAULT_K, sweep_budget: int = DEFAULT_SWEEP_BUDGET,
                 priority_threshold: float = DEFAULT_PRIORITY_THRESHOLD,
                 carry_priority: bool = True):
        super().__init__(k)
        self.sweep_budget = sweep_budget
        self.priority_threshold = priority_threshold
        self.carry_priority = carry_priority

    def start(self, belief, rng):
        self.samples = naive_sample(belief, self.k, rng, cost=self.cost)

    def after_update(self, e, belief, rng):
        self.samples.repair(e, belief, rng, self.sweep_budget, self.priority_threshold,
                            self.carry_priority)


class LocalEstimator(Estimator):
    name = "local"

    def __init__(self, k: int = DEFAULT_K, sweep_budget: int = DEFAULT_SWEEP_BUDGET,
                 resample: str = "points"):
        super().__init__(k)
        self.sweep_budget = sweep_budget
        self.resample = resample

    def start(self, belief, rng):
        self.table = LocalQTable(belief.num_states, belief.num_actions, self.k,
                                 belief.reward_support, belief.discount, self.resample)
        self.table.cost = self.cost

    def after_update(self, e, belief, rng):
        self.table.update(belief, e.s, e.a, rng)
        self.table.sweep(belief, rng, max(self.sweep_budget - 1, 0))

    def action_samples(self, s):
        return self.table.action_samples(s)


ESTIMATORS = {cls.name: cls for cls in (NaiveEstimator, ImportanceEstimator, RepairEstimator,
                                        LocalEstimator)}
