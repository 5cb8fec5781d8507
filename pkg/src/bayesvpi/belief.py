"""Conjugate belief states over discrete MDPs.

Every (state, action) pair carries an independent posterior over its
transition row (Dirichlet or sparse-multinomial) and over its reward
distribution (Dirichlet on a fixed reward support).  Because the product form
survives Bayesian updates, the whole belief is summarised by count arrays plus
the prior configuration.

The sparse-multinomial prior puts a distribution P(S = k) on the number of
feasible outcomes and a symmetric Dirichlet(alpha) on whichever k outcomes are
feasible.  Predictions over the observed outcomes are the Dirichlet ones
scaled by a factor C(D, L); the remaining 1 - C(D, L) is the mass reserved
for outcomes never seen so far.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .mdp import Mdp

TRANSITION_FAMILIES = ("sparse", "dirichlet")


class Experience(NamedTuple):
    s: int
    a: int
    r: float
    t: int


# --------------------------------------------------------------------------
# sampling kernels


def log_gamma_variates(shape: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """log of independent Gamma(shape, 1) draws, -inf where shape == 0.

    Shapes below one use Gamma(a) = Gamma(a + 1) * U**(1/a), evaluated in
    log space so tiny shapes never underflow to an all-zero vector.
    """
    shape = np.asarray(shape, dtype=float)
    out = np.full(shape.shape, -np.inf)
    pos = shape > 0
    a = shape[pos]
    small = a < 1.0
    logs = np.log(rng.gamma(np.where(small, a + 1.0, a)))
    u = 1.0 - rng.random(a.shape)
    logs = np.where(small, logs + np.log(u) / np.where(small, a, 1.0), logs)
    out[pos] = logs
    return out


def _normalize_logs(logs: np.ndarray) -> np.ndarray:
    top = logs.max(axis=-1, keepdims=True)
    w = np.exp(logs - top)
    return w / w.sum(axis=-1, keepdims=True)


def dirichlet_draws(hyper: np.ndarray, rng: np.random.Generator,
                    size: int | tuple | None = None) -> np.ndarray:
    """Dirichlet draws via normalized Gamma variates; zero hyper-parameters give zeros."""
    hyper = np.asarray(hyper, dtype=float)
    if size is not None:
        size = (size,) if np.isscalar(size) else tuple(size)
        hyper = np.broadcast_to(hyper, size + hyper.shape)
    return _normalize_logs(log_gamma_variates(hyper, rng))


def uniform_size_prior(L: int) -> np.ndarray:
    return np.full(L, 1.0 / L)


def geometric_size_prior(L: int, decay: float) -> np.ndarray:
    """P(S = k) proportional to decay**(k - 1), k = 1..L."""
    w = decay ** np.arange(L, dtype=float)
    return w / w.sum()


def log_size_weights(counts: np.ndarray, alpha: float, size_prior: np.ndarray) -> np.ndarray:
    """Unnormalized log m_k for k = 1..L along the last axis (-inf for k < k_obs).

    log m_k = log P(S=k) + log k!/(k - k_obs)! + log Gamma(k alpha) - log Gamma(k alpha + N)
    """
    counts = np.asarray(counts, dtype=float)
    L = counts.shape[-1]
    k = np.arange(1, L + 1, dtype=float)
    k_obs = (counts > 0).sum(axis=-1)[..., None]
    n = counts.sum(axis=-1)[..., None]
    with np.errstate(divide="ignore"):
        log_prior = np.log(np.asarray(size_prior, dtype=float))
    feasible = k >= k_obs
    free = np.where(feasible, k - k_obs, 0.0)
    logm = (log_prior + gammaln(k + 1) - gammaln(free + 1)
            + gammaln(k * alpha) - gammaln(k * alpha + n))
    return np.where(feasible, logm, -np.inf)


def size_posterior_batch(counts: np.ndarray, alpha: float, size_prior: np.ndarray) -> np.ndarray:
    logm = log_size_weights(counts, alpha, size_prior)
    return np.exp(logm - logsumexp(logm, axis=-1, keepdims=True))


def observed_scale_batch(counts: np.ndarray, alpha: float, size_posterior: np.ndarray) -> np.ndarray:
    """C(D, L) = sum_k (k_obs alpha + N)/(k alpha + N) P(S=k | D)."""
    counts = np.asarray(counts, dtype=float)
    L = counts.shape[-1]
    k = np.arange(1, L + 1, dtype=float)
    k_obs = (counts > 0).sum(axis=-1)[..., None]
    n = counts.sum(axis=-1)[..., None]
    ratio = (k_obs * alpha + n) / (k * alpha + n)
    return (ratio * size_posterior).sum(axis=-1)


def sparse_predictive_batch(counts: np.ndarray, alpha: float, size_posterior: np.ndarray) -> np.ndarray:
    """Full predictive vectors; novel mass is split evenly over unseen outcomes."""
    counts = np.asarray(counts, dtype=float)
    L = counts.shape[-1]
    seen = counts > 0
    k_obs = seen.sum(axis=-1, keepdims=True)
    n = counts.sum(axis=-1, keepdims=True)
    scale = observed_scale_batch(counts, alpha, size_posterior)[..., None]
    scale = np.where(k_obs == L, 1.0, scale)
    with np.errstate(invalid="ignore", divide="ignore"):
        observed = np.where(seen, (alpha + counts) / (k_obs * alpha + n), 0.0) * scale
        novel = np.where(k_obs < L, (1.0 - scale) / np.maximum(L - k_obs, 1), 0.0)
    return np.where(seen, observed, novel)


def sparse_draws(counts: np.ndarray, alpha: float, size_posterior: np.ndarray,
                 rng: np.random.Generator, size: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Sample (observed-outcome probabilities, novel mass).

    Draw k from P(S = k | D), then a k-dimensional Dirichlet with hyper-parameters
    alpha + N_i on the observed outcomes and alpha elsewhere, and lump the k - k_obs
    unobserved coordinates together.  The lumped coordinate is drawn directly as
    a Gamma((k - k_obs) alpha) variate, which has the same law (Dirichlet
    aggregation).  The first array is zero at unobserved outcomes.
    """
    counts = np.asarray(counts, dtype=float)
    size_posterior = np.asarray(size_posterior, dtype=float)
    if size is not None:
        counts = np.broadcast_to(counts, (size,) + counts.shape)
        size_posterior = np.broadcast_to(size_posterior, (size,) + size_posterior.shape)
    batch = counts.shape[:-1]
    seen = counts > 0
    k_obs = seen.sum(axis=-1)
    u = rng.random(batch)
    cdf = np.cumsum(size_posterior, axis=-1)
    k = np.minimum((cdf < u[..., None] * cdf[..., -1:]).sum(axis=-1) + 1, counts.shape[-1])
    k = np.maximum(k, k_obs)
    hyper = np.concatenate([np.where(seen, alpha + counts, 0.0),
                            ((k - k_obs) * alpha)[..., None]], axis=-1)
    draw = _normalize_logs(log_gamma_variates(hyper, rng))
    return draw[..., :-1], draw[..., -1]


def spread_novel(observed: np.ndarray, novel: np.ndarray, seen: np.ndarray) -> np.ndarray:
    """Full probability vectors with the novel mass split evenly over unseen outcomes."""
    n_unseen = (~seen).sum(axis=-1, keepdims=True)
    share = np.where(n_unseen > 0, novel[..., None] / np.maximum(n_unseen, 1), 0.0)
    return np.where(seen, observed, share)


# --------------------------------------------------------------------------
# single-variable posteriors


@dataclass(frozen=True, eq=False)
class DirichletPosterior:
    hyper: np.ndarray

    def __post_init__(self):
        hyper = np.asarray(self.hyper, dtype=float)
        if hyper.ndim != 1 or np.any(hyper <= 0):
            raise ValueError("Dirichlet hyper-parameters must be a vector of positive reals")
        object.__setattr__(self, "hyper", hyper)

    def update(self, outcome: int) -> "DirichletPosterior":
        if not 0 <= outcome < self.hyper.size:
            raise IndexError(f"outcome {outcome} out of range for {self.hyper.size} outcomes")
        hyper = self.hyper.copy()
        hyper[outcome] += 1.0
        return DirichletPosterior(hyper)

    def predictive(self) -> np.ndarray:
        return self.hyper / self.hyper.sum()

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        return dirichlet_draws(self.hyper, rng, size)


@dataclass(frozen=True, eq=False)
class SparseMultinomialPosterior:
    """Sparse-multinomial posterior; ``counts`` has one entry per outcome (zeros allowed)."""

    alpha: float
    counts: np.ndarray
    size_prior: np.ndarray | None = None

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=float)
        if counts.ndim != 1 or np.any(counts < 0):
            raise ValueError("counts must be a nonnegative vector")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        L = counts.size
        prior = uniform_size_prior(L) if self.size_prior is None else np.asarray(self.size_prior, float)
        if prior.shape != (L,) or np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-9:
            raise ValueError("size_prior must be a probability vector over k = 1..L")
        k_obs = int((counts > 0).sum())
        if k_obs > 0 and prior[k_obs - 1:].sum() <= 0:
            raise ValueError("size prior gives zero mass to every feasible size")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "size_prior", prior)

    @property
    def universe_size(self) -> int:
        return self.counts.size

    @property
    def k_observed(self) -> int:
        return int((self.counts > 0).sum())

    @property
    def n(self) -> float:
        return float(self.counts.sum())

    def update(self, outcome: int) -> "SparseMultinomialPosterior":
        if not 0 <= outcome < self.universe_size:
            raise IndexError(f"outcome {outcome} out of range for {self.universe_size} outcomes")
        counts = self.counts.copy()
        counts[outcome] += 1.0
        return SparseMultinomialPosterior(self.alpha, counts, self.size_prior)

    def size_posterior(self) -> np.ndarray:
        """P(S = k | D) for k = 1..L (index k - 1); zero below the observed count."""
        if self.n == 0:
            return self.size_prior.copy()
        return size_posterior_batch(self.counts, self.alpha, self.size_prior)

    def observed_scale(self) -> float:
        """C(D, L); one when every outcome has been seen."""
        if self.k_observed == self.universe_size:
            return 1.0
        return float(observed_scale_batch(self.counts, self.alpha, self.size_posterior()))

    def predictive(self) -> tuple[np.ndarray, float]:
        """(probabilities of observed outcomes, zero elsewhere; novel mass)."""
        seen = self.counts > 0
        scale = self.observed_scale()
        if not seen.any():
            return np.zeros(self.universe_size), 1.0
        probs = np.where(seen, (self.alpha + self.counts) / (self.k_observed * self.alpha + self.n), 0.0)
        return probs * scale, 1.0 - scale

    def predictive_vector(self) -> np.ndarray:
        return sparse_predictive_batch(self.counts, self.alpha, self.size_posterior())

    def sample(self, rng: np.random.Generator, size: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        return sparse_draws(self.counts, self.alpha, self.size_posterior(), rng, size)

    def sample_vector(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        observed, novel = self.sample(rng, size)
        return spread_novel(observed, novel, self.counts > 0)


# --------------------------------------------------------------------------
# belief over MDPs


@dataclass(frozen=True)
class PriorConfig:
    """Prior family and hyper-parameters shared by every (s, a) pair.

    ``size_prior=None`` means uniform over k = 1..num_states, unless
    ``size_decay`` is set, which gives P(S = k) proportional to size_decay**(k - 1).  ``reward_alpha``
    may be a scalar or one value per reward support point.
    """

    transition: str = "sparse"
    transition_alpha: float = 1.0
    size_prior: tuple[float, ...] | None = None
    size_decay: float | None = None
    reward_alpha: float | tuple[float, ...] = 1.0

    def __post_init__(self):
        if self.transition not in TRANSITION_FAMILIES:
            raise ValueError(f"transition prior must be one of {TRANSITION_FAMILIES}")
        if self.transition_alpha <= 0:
            raise ValueError("transition_alpha must be positive")
        if np.any(np.asarray(self.reward_alpha, dtype=float) <= 0):
            raise ValueError("reward_alpha must be positive")
        if self.size_decay is not None and not 0.0 < self.size_decay:
            raise ValueError("size_decay must be positive")
        if self.size_prior is not None and self.size_decay is not None:
            raise ValueError("give size_prior or size_decay, not both")
        if self.size_prior is not None:
            object.__setattr__(self, "size_prior", tuple(float(x) for x in self.size_prior))
        if not np.isscalar(self.reward_alpha):
            object.__setattr__(self, "reward_alpha", tuple(float(x) for x in self.reward_alpha))

    @classmethod
    def from_dict(cls, data: dict) -> "PriorConfig":
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("size_prior", "reward_alpha"):
            if isinstance(out[key], tuple):
                out[key] = list(out[key])
        return out


class BeliefState:
    """Per-(s, a) conjugate posteriors held as count arrays.

    Updates mutate in place (single writer); sampling and prediction only read.
    Predictive arrays and size posteriors are cached row by row.
    """

    def __init__(self, num_states: int, num_actions: int, reward_support: Sequence[float],
                 discount: float, prior: PriorConfig | None = None):
        self.num_states = int(num_states)
        self.num_actions = int(num_actions)
        self.reward_support = np.asarray(reward_support, dtype=float)
        self.discount = float(discount)
        self.prior = prior or PriorConfig()
        R = self.reward_support.size
        self._reward_index = {float(r): j for j, r in enumerate(self.reward_support)}
        alpha_r = np.broadcast_to(np.asarray(self.prior.reward_alpha, dtype=float), (R,))
        self.reward_prior = alpha_r.copy()
        if self.prior.size_decay is not None:
            self.size_prior = geometric_size_prior(self.num_states, self.prior.size_decay)
        elif self.prior.size_prior is None:
            self.size_prior = uniform_size_prior(self.num_states)
        else:
            self.size_prior = np.asarray(self.prior.size_prior, dtype=float)
            if self.size_prior.shape != (self.num_states,):
                raise ValueError("size_prior needs one entry per state")
        self.transition_counts = np.zeros((num_states, num_actions, num_states))
        self.reward_counts = np.zeros((num_states, num_actions, R))
        self._refresh_cache()

    # -- bookkeeping -------------------------------------------------------

    @property
    def sparse(self) -> bool:
        return self.prior.transition == "sparse"

    @property
    def visit_counts(self) -> np.ndarray:
        return self.transition_counts.sum(axis=-1)

    def reward_index(self, r: float) -> int:
        try:
            return self._reward_index[float(r)]
        except KeyError:
            raise ValueError(f"reward {r} not in the declared support {self.reward_support.tolist()}") from None

    def _check_experience(self, e: Experience) -> int:
        if not (0 <= e.s < self.num_states and 0 <= e.t < self.num_states):
            raise IndexError(f"state out of range in {e}")
        if not 0 <= e.a < self.num_actions:
            raise IndexError(f"action out of range in {e}")
        return self.reward_index(e.r)

    def _refresh_cache(self) -> None:
        c = self.transition_counts
        if self.sparse:
            alpha = self.prior.transition_alpha
            self._size_post = size_posterior_batch(c, alpha, self.size_prior)
            self._pred_t = sparse_predictive_batch(c, alpha, self._size_post)
        else:
            hyper = c + self.prior.transition_alpha
            self._pred_t = hyper / hyper.sum(axis=-1, keepdims=True)
        hyper_r = self.reward_counts + self.reward_prior
        self._pred_r = hyper_r / hyper_r.sum(axis=-1, keepdims=True)

    def _refresh_row(self, s: int, a: int) -> None:
        c = self.transition_counts[s, a]
        if self.sparse:
            alpha = self.prior.transition_alpha
            self._size_post[s, a] = size_posterior_batch(c, alpha, self.size_prior)
            self._pred_t[s, a] = sparse_predictive_batch(c, alpha, self._size_post[s, a])
        else:
            hyper = c + self.prior.transition_alpha
            self._pred_t[s, a] = hyper / hyper.sum()
        hyper_r = self.reward_counts[s, a] + self.reward_prior
        self._pred_r[s, a] = hyper_r / hyper_r.sum()

    def copy(self) -> "BeliefState":
        other = BeliefState(self.num_states, self.num_actions, self.reward_support,
                            self.discount, self.prior)
        other.transition_counts = self.transition_counts.copy()
        other.reward_counts = self.reward_counts.copy()
        other._refresh_cache()
        return other

    # -- posteriors --------------------------------------------------------

    def transition_posterior(self, s: int, a: int) -> DirichletPosterior | SparseMultinomialPosterior:
        counts = self.transition_counts[s, a]
        if self.sparse:
            return SparseMultinomialPosterior(self.prior.transition_alpha, counts.copy(), self.size_prior)
        return DirichletPosterior(counts + self.prior.transition_alpha)

    def reward_posterior(self, s: int, a: int) -> DirichletPosterior:
        return DirichletPosterior(self.reward_counts[s, a] + self.reward_prior)

    def update(self, e: Experience) -> None:
        j = self._check_experience(e)
        self.transition_counts[e.s, e.a, e.t] += 1.0
        self.reward_counts[e.s, e.a, j] += 1.0
        self._refresh_row(e.s, e.a)

    def updated(self, e: Experience) -> "BeliefState":
        other = self.copy()
        other.update(e)
        return other

    # -- prediction --------------------------------------------------------

    def predictive_transition(self) -> np.ndarray:
        """(S, A, S) posterior-mean transition model (read-only view)."""
        return self._pred_t

    def predictive_reward(self) -> np.ndarray:
        return self._pred_r

    def tuple_likelihood(self, e: Experience) -> float:
        """Marginal probability of observing (t, r) after a at s under this belief."""
        j = self._check_experience(e)
        return float(self._pred_t[e.s, e.a, e.t] * self._pred_r[e.s, e.a, j])

    def mean_mdp(self) -> Mdp:
        return Mdp(self._pred_t, self._pred_r, self.reward_support, self.discount)

    # -- sampling ----------------------------------------------------------

    def _sample_transitions(self, counts, size_post, rng, size):
        if self.sparse:
            observed, novel = sparse_draws(counts, self.prior.transition_alpha, size_post, rng, size)
            return spread_novel(observed, novel, np.broadcast_to(counts > 0, observed.shape))
        return dirichlet_draws(counts + self.prior.transition_alpha, rng, size)

    def sample_rows(self, s: int, a: int, rng: np.random.Generator,
                    size: int) -> tuple[np.ndarray, np.ndarray]:
        """``size`` independent draws of the (s, a) transition and reward vectors."""
        size_post = self._size_post[s, a] if self.sparse else None
        trans = self._sample_transitions(self.transition_counts[s, a], size_post, rng, size)
        rewards = dirichlet_draws(self.reward_counts[s, a] + self.reward_prior, rng, size)
        return trans, rewards

    def sample_models(self, rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
        """Batch of complete parameter sets: (size, S, A, S) and (size, S, A, R)."""
        size_post = self._size_post if self.sparse else None
        trans = self._sample_transitions(self.transition_counts, size_post, rng, size)
        rewards = dirichlet_draws(self.reward_counts + self.reward_prior, rng, size)
        return trans, rewards

    def sample_mdp(self, rng: np.random.Generator) -> Mdp:
        trans, rewards = self.sample_models(rng, 1)
        return Mdp(trans[0], rewards[0], self.reward_support, self.discount)

    # -- persistence -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "reward_support": self.reward_support.tolist(),
            "discount": self.discount,
            "prior": self.prior.to_dict(),
            "transition_counts": self.transition_counts.tolist(),
            "reward_counts": self.reward_counts.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BeliefState":
        belief = cls(data["num_states"], data["num_actions"], data["reward_support"],
                     data["discount"], PriorConfig.from_dict(data["prior"]))
        belief.transition_counts = np.array(data["transition_counts"], dtype=float)
        belief.reward_counts = np.array(data["reward_counts"], dtype=float)
        belief._refresh_cache()
        return belief

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "BeliefState":
        return cls.from_dict(json.loads(Path(path).read_text()))
