"""Learning agents: Bayesian VPI explorers and the T_bored prioritized-sweeping baseline."""
from __future__ import annotations

import numpy as np

from .belief import BeliefState, Experience, PriorConfig
from .estimators import ESTIMATORS, Cost, Estimator
from .mdp import DEFAULT_PRIORITY_THRESHOLD, solve_q, sweep_batch
from .vpi import (SMOOTHERS, action_scores, baseline_tbored_explore, count_model,
                  optimistic_model)


class VPIAgent:
    """Chooses argmax_a E[q_{s,a}] + VPI(s, a) from an estimator's Q samples."""

    def __init__(self, belief: BeliefState, estimator: Estimator, smoother: str,
                 rng: np.random.Generator):
        if smoother not in SMOOTHERS:
            raise ValueError(f"unknown smoother {smoother!r}")
        self.belief = belief
        self.estimator = estimator
        self.smoother = smoother
        self.rng = rng
        estimator.start(belief, rng)

    @property
    def cost(self) -> Cost:
        return self.estimator.cost

    def action_samples(self, s: int):
        return self.estimator.action_samples(s)

    def scores(self, s: int) -> tuple[np.ndarray, np.ndarray]:
        values, weights = self.estimator.action_samples(s)
        return action_scores(values, weights, self.smoother)

    def act(self, s: int) -> int:
        means, bonus = self.scores(s)
        return int(np.argmax(means + bonus))

    def greedy_q(self) -> np.ndarray:
        """Posterior-mean Q estimate for every (s, a)."""
        S = self.belief.num_states
        return np.array([self.scores(s)[0] for s in range(S)])

    def observe(self, e: Experience) -> None:
        self.estimator.before_update(e, self.belief)
        self.belief.update(e)
        self.estimator.after_update(e, self.belief, self.rng)


class TBoredAgent:
    """Prioritized sweeping on the count model, optimistic about under-tried actions.

    Any (s, a) tried fewer than ``t_bored`` times is modelled as leading to an
    absorbing state worth r_max / (1 - gamma).
    """

    def __init__(self, num_states: int, num_actions: int, reward_support, discount: float,
                 t_bored: int, sweep_budget: int | None = 10,
                 priority_threshold: float = DEFAULT_PRIORITY_THRESHOLD,
                 carry_priority: bool = True):
        self.num_states = num_states
        self.num_actions = num_actions
        self.reward_support = np.asarray(reward_support, dtype=float)
        self.discount = discount
        self.t_bored = int(t_bored)
        self.sweep_budget = sweep_budget
        self.priority_threshold = priority_threshold
        self.carry_priority = carry_priority
        self._reward_index = {float(r): j for j, r in enumerate(self.reward_support)}
        self.transition_counts = np.zeros((num_states, num_actions, num_states))
        self.reward_counts = np.zeros((num_states, num_actions, self.reward_support.size))
        self.cost = Cost()
        self.model = self._model()
        q, _, sweeps = solve_q(self.model.transition[None], self.model.expected_rewards[None],
                               discount)
        self.q = q[0]
        self.priority = np.zeros((1, num_states + 1))
        self.cost.solves += 1
        self.cost.backups += sweeps * (num_states + 1)

    @property
    def visit_counts(self) -> np.ndarray:
        return self.transition_counts.sum(axis=-1)

    def _model(self):
        base = count_model(self.transition_counts, self.reward_counts, self.reward_support,
                           self.discount)
        return optimistic_model(base, self.visit_counts, self.t_bored)

    def act(self, s: int) -> int:
        return baseline_tbored_explore(self.model, self.q, self.visit_counts, self.t_bored, s)

    def greedy_q(self) -> np.ndarray:
        return self.q[: self.num_states]

    def observe(self, e: Experience) -> None:
        self.transition_counts[e.s, e.a, e.t] += 1
        self.reward_counts[e.s, e.a, self._reward_index[float(e.r)]] += 1
        self.model = self._model()
        seeds = np.zeros((1, self.num_states + 1), dtype=bool)
        seeds[0, e.s] = True
        q, backups = sweep_batch(self.model.transition[None], self.model.expected_rewards[None],
                                 self.discount, self.q[None], seeds, self.sweep_budget,
                                 self.priority_threshold,
                                 self.priority if self.carry_priority else None)
        self.q = q[0]
        self.cost.backups += int(backups[0])


def make_estimator(name: str, k: int, **options) -> Estimator:
    try:
        cls = ESTIMATORS[name]
    except KeyError:
        raise ValueError(f"unknown estimator {name!r}; expected one of {sorted(ESTIMATORS)}") from None
    return cls(k, **options)


def make_vpi_agent(num_states: int, num_actions: int, reward_support, discount: float,
                   prior: PriorConfig, estimator: Estimator, smoother: str,
                   rng: np.random.Generator) -> VPIAgent:
    belief = BeliefState(num_states, num_actions, reward_support, discount, prior)
    return VPIAgent(belief, estimator, smoother, rng)
