"""Value of perfect information over Q-value distributions, and action selection.

A Q-value distribution for one (s, a) is either a weighted point set, a single
Gaussian fitted to the points, or an equal-variance Gaussian kernel mixture
centred on the points.  For smoothed distributions the expected gain has a
closed form built from E[(X - c)+] = (m - c) Phi((m - c)/sd) + sd phi((m - c)/sd).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import IO, Protocol, Sequence, Union

import numpy as np
from scipy.special import ndtr

from .mdp import Mdp, greedy_policy

SMOOTHERS = ("none", "gaussian", "kernel")
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class PointSamples:
    values: np.ndarray
    weights: np.ndarray

    @classmethod
    def of(cls, values, weights=None) -> "PointSamples":
        values = np.asarray(values, dtype=float)
        weights = np.ones_like(values) if weights is None else np.asarray(weights, dtype=float)
        if values.shape != weights.shape or values.ndim != 1 or values.size == 0:
            raise ValueError("values and weights must be matching non-empty vectors")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        return cls(values, weights)

    def mean(self) -> float:
        total = self.weights.sum()
        if total <= 0:
            raise ValueError("zero total weight")
        return float(self.weights @ self.values / total)


@dataclass(frozen=True)
class Gaussian:
    loc: float
    variance: float

    def mean(self) -> float:
        return self.loc

    def pdf(self, x):
        sd = np.sqrt(self.variance)
        z = (np.asarray(x, dtype=float) - self.loc) / sd
        return np.exp(-0.5 * z * z) * _INV_SQRT_2PI / sd


@dataclass(frozen=True, eq=False)
class KernelMixture:
    centers: np.ndarray
    weights: np.ndarray  # normalized
    variance: float

    def mean(self) -> float:
        return float(self.weights @ self.centers)

    def total_variance(self) -> float:
        m = self.mean()
        return float(self.weights @ (self.centers - m) ** 2 + self.variance)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        sd = np.sqrt(self.variance)
        z = (x[..., None] - self.centers) / sd
        return (np.exp(-0.5 * z * z) * self.weights).sum(axis=-1) * _INV_SQRT_2PI / sd


QDistribution = Union[PointSamples, Gaussian, KernelMixture]


@dataclass(frozen=True)
class ActionValueSummary:
    means: np.ndarray
    best: int
    second: int | None

    @classmethod
    def from_means(cls, means: Sequence[float]) -> "ActionValueSummary":
        means = np.asarray(means, dtype=float)
        order = np.argsort(-means, kind="stable")  # stable: ties keep lowest index first
        second = int(order[1]) if means.size > 1 else None
        return cls(means, int(order[0]), second)

    @property
    def best_value(self) -> float:
        return float(self.means[self.best])

    @property
    def second_value(self) -> float:
        return float(self.means[self.second]) if self.second is not None else -np.inf


def gain(q_star, summary: ActionValueSummary, a: int):
    """Improvement in decision quality if Q(s, a) were revealed to be q_star.

    Vectorized over q_star.  The inequalities are strict, so the boundaries
    themselves gain nothing.
    """
    x = np.asarray(q_star, dtype=float)
    if a == summary.best:
        out = np.where(x < summary.second_value, summary.second_value - x, 0.0)
    else:
        out = np.where(x > summary.best_value, x - summary.best_value, 0.0)
    return out if out.ndim else float(out)


def vpi_samples(dist: PointSamples, summary: ActionValueSummary, a: int) -> float:
    total = dist.weights.sum()
    if total <= 0:
        raise ValueError("zero total weight")
    return float(dist.weights @ gain(dist.values, summary, a) / total)


def fit_gaussian(values, weights=None) -> Gaussian | PointSamples:
    """Moment-matched Gaussian (weighted population variance); points if no spread."""
    pts = PointSamples.of(values, weights)
    w = pts.weights / pts.weights.sum()
    m = float(w @ pts.values)
    var = float(w @ (pts.values - m) ** 2)
    if not var > 0:
        return pts
    return Gaussian(m, var)


def kernel_width(values, weights=None) -> float:
    """Kernel variance sigma^2 = d / 4, d the mean squared distance between samples.

    With weights, d averages (q_i - q_j)^2 over ordered pairs i != j with weight
    w_i w_j, which reduces to the plain pairwise mean for equal weights.
    """
    q = np.asarray(values, dtype=float)
    w = np.ones_like(q) if weights is None else np.asarray(weights, dtype=float)
    diff2 = (q[:, None] - q[None, :]) ** 2
    pair_w = np.outer(w, w)
    np.fill_diagonal(pair_w, 0.0)
    norm = pair_w.sum()
    d = float((pair_w * diff2).sum() / norm) if norm > 0 else 0.0
    if not d > 0:
        raise ValueError("kernel width undefined: all samples coincide")
    return d / 4.0


def fit_kernel(values, weights=None) -> KernelMixture | PointSamples:
    pts = PointSamples.of(values, weights)
    try:
        width = kernel_width(pts.values, pts.weights)
    except ValueError:
        return pts
    keep = pts.weights > 0
    w = pts.weights[keep] / pts.weights[keep].sum()
    return KernelMixture(pts.values[keep], w, width)


def _expected_excess(m, sd, c):
    """E[(X - c)+] for X ~ N(m, sd^2), elementwise."""
    z = (m - c) / sd
    return (m - c) * ndtr(z) + sd * np.exp(-0.5 * z * z) * _INV_SQRT_2PI


def vpi_closed_form(dist: Gaussian | KernelMixture, summary: ActionValueSummary, a: int) -> float:
    if isinstance(dist, Gaussian):
        means, weights, sd = np.array([dist.loc]), np.array([1.0]), np.sqrt(dist.variance)
    else:
        means, weights, sd = dist.centers, dist.weights, np.sqrt(dist.variance)
    if a == summary.best:
        c = summary.second_value
        if not np.isfinite(c):
            return 0.0
        # E[(c - X)+] = E[(X' - (-c))+] with X' = -X
        parts = _expected_excess(-means, sd, -c)
    else:
        parts = _expected_excess(means, sd, summary.best_value)
    return float(max(weights @ parts, 0.0))


def vpi(dist: QDistribution, summary: ActionValueSummary, a: int) -> float:
    if isinstance(dist, PointSamples):
        return vpi_samples(dist, summary, a)
    return vpi_closed_form(dist, summary, a)


def smooth(values, weights, mode: str) -> QDistribution:
    if mode == "none":
        return PointSamples.of(values, weights)
    if mode == "gaussian":
        return fit_gaussian(values, weights)
    if mode == "kernel":
        return fit_kernel(values, weights)
    raise ValueError(f"unknown smoothing mode {mode!r}; expected one of {SMOOTHERS}")


class QSource(Protocol):
    def action_samples(self, s: int) -> tuple[np.ndarray, np.ndarray]: ...


def action_scores(values: np.ndarray, weights: np.ndarray, mode: str = "kernel"):
    """E[q_a], VPI(a) for a (A, k) sample array; weights (k,) or (A, k)."""
    values = np.asarray(values, dtype=float)
    weights = np.broadcast_to(np.asarray(weights, dtype=float), values.shape)
    dists = [smooth(values[a], weights[a], mode) for a in range(values.shape[0])]
    summary = ActionValueSummary.from_means([d.mean() for d in dists])
    bonus = np.array([vpi(d, summary, a) for a, d in enumerate(dists)])
    return summary.means, bonus


def select_action(s: int, q_source: QSource, mode: str = "kernel") -> int:
    """argmax_a E[q_{s,a}] + VPI(s, a), ties to the lowest index."""
    values, weights = q_source.action_samples(s)
    means, bonus = action_scores(values, weights, mode)
    return int(np.argmax(means + bonus))


def export_distributions(fh: IO[str], q_source: QSource, states: Sequence[int],
                         grid: np.ndarray) -> None:
    """Columnar dump of sample points, fitted Gaussian, kernel width and densities."""
    fh.write("state,action,kind,index,x,value\n")
    grid = np.asarray(grid, dtype=float)
    for s in states:
        values, weights = q_source.action_samples(s)
        weights = np.broadcast_to(weights, values.shape)
        for a in range(values.shape[0]):
            for i, (v, w) in enumerate(zip(values[a], weights[a])):
                fh.write(f"{s},{a},sample,{i},{v!r},{w!r}\n")
            g = fit_gaussian(values[a], weights[a])
            kern = fit_kernel(values[a], weights[a])
            if isinstance(g, Gaussian):
                fh.write(f"{s},{a},gaussian_mean,0,,{g.loc!r}\n")
                fh.write(f"{s},{a},gaussian_var,0,,{g.variance!r}\n")
            if isinstance(kern, KernelMixture):
                fh.write(f"{s},{a},kernel_width,0,,{kern.variance!r}\n")
            for i, x in enumerate(grid):
                if isinstance(g, Gaussian):
                    fh.write(f"{s},{a},gaussian_pdf,{i},{x!r},{float(g.pdf(x))!r}\n")
                if isinstance(kern, KernelMixture):
                    fh.write(f"{s},{a},kernel_pdf,{i},{x!r},{float(kern.pdf(x))!r}\n")


# --------------------------------------------------------------------------
# prioritized-sweeping baseline with T_bored optimism


def count_model(transition_counts: np.ndarray, reward_counts: np.ndarray,
                reward_support, discount: float) -> Mdp:
    """Maximum-likelihood model from counts.

    Pairs never tried become zero-reward self-loops (the reward closest to zero
    stands in when zero is not in the support).
    """
    S, A, _ = transition_counts.shape
    support = np.asarray(reward_support, dtype=float)
    n = transition_counts.sum(axis=-1, keepdims=True)
    trans = np.where(n > 0, transition_counts / np.maximum(n, 1), 0.0)
    rdist = np.where(n > 0, reward_counts / np.maximum(n, 1), 0.0)
    untried = n[..., 0] == 0
    s_idx, a_idx = np.nonzero(untried)
    trans[s_idx, a_idx, s_idx] = 1.0
    rdist[s_idx, a_idx, int(np.argmin(np.abs(support)))] = 1.0
    return Mdp(trans, rdist, support, discount)


def optimistic_model(model: Mdp, visit_counts: np.ndarray, t_bored: int) -> Mdp:
    """Augment ``model`` with an absorbing state paying r_max forever.

    Every (s, a) tried fewer than ``t_bored`` times is redirected there, so its
    value becomes r_max / (1 - gamma).  The extra state has index S.
    """
    S, A = model.num_states, model.num_actions
    R = model.reward_support.size
    trans = np.zeros((S + 1, A, S + 1))
    trans[:S, :, :S] = model.transition
    rdist = np.zeros((S + 1, A, R))
    rdist[:S] = model.reward_dist
    bored = np.asarray(visit_counts) < t_bored
    trans[:S][bored] = 0.0
    trans[:S][bored, S] = 1.0
    rdist[:S][bored] = 0.0
    rdist[:S][bored, R - 1] = 1.0
    trans[S, :, S] = 1.0
    rdist[S, :, R - 1] = 1.0
    return Mdp(trans, rdist, model.reward_support, model.discount)


def baseline_tbored_explore(model_estimate: Mdp, q: np.ndarray, visit_counts: np.ndarray,
                            t_bored: int, s: int) -> int:
    """Greedy action at s, with under-tried actions valued at r_max / (1 - gamma).

    ``q`` is a Q-function for the (optimistic) count model; only row s is read.
    """
    _, high = model_estimate.value_bounds
    row = np.where(np.asarray(visit_counts)[s] < t_bored, high, np.asarray(q)[s, :model_estimate.num_actions])
    return int(greedy_policy(row))
