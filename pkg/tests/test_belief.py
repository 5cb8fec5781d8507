import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bayesvpi.belief import (BeliefState, DirichletPosterior, Experience, PriorConfig,
                             SparseMultinomialPosterior, dirichlet_draws, log_gamma_variates)


# ---------------------------------------------------------------------------
# independent oracle: enumerate every feasible outcome set V explicitly

def _log_marginal(counts, members, alpha):
    """log P(D | V) for a symmetric Dirichlet(alpha) restricted to V."""
    n = sum(counts)
    m = len(members)
    out = math.lgamma(m * alpha) - math.lgamma(m * alpha + n)
    for i in members:
        out += math.lgamma(alpha + counts[i]) - math.lgamma(alpha)
    return out


def subset_oracle(counts, alpha, size_prior):
    """(full predictive vector, P(S = k | D)) by summing over all subsets."""
    L = len(counts)
    seen = [i for i in range(L) if counts[i] > 0]
    n = sum(counts)
    logs, subsets = [], []
    for k in range(max(len(seen), 1), L + 1):
        if size_prior[k - 1] == 0:
            continue
        for V in itertools.combinations(range(L), k):
            if not set(seen) <= set(V):
                continue
            subsets.append(V)
            logs.append(math.log(size_prior[k - 1]) - math.log(math.comb(L, k))
                        + _log_marginal(counts, V, alpha))
    top = max(logs)
    w = [math.exp(x - top) for x in logs]
    z = sum(w)
    pred = [0.0] * L
    size_post = [0.0] * L
    for V, wv in zip(subsets, w):
        p = wv / z
        size_post[len(V) - 1] += p
        for i in V:
            pred[i] += p * (alpha + counts[i]) / (len(V) * alpha + n)
    return np.array(pred), np.array(size_post)


def _exact_scale(counts, alpha, size_prior):
    """C(D, L) for integer alpha and counts in exact rational arithmetic."""
    L = len(counts)
    k_obs = sum(1 for c in counts if c > 0)
    n = sum(counts)
    alpha = Fraction(alpha)

    def rising(x, m):  # Gamma(x + m) / Gamma(x)
        out = Fraction(1)
        for j in range(m):
            out *= x + j
        return out

    weights = {}
    for k in range(max(k_obs, 1), L + 1):
        weights[k] = (Fraction(size_prior[k - 1]) * Fraction(math.factorial(k), math.factorial(k - k_obs))
                      / rising(k * alpha, n))
    z = sum(weights.values())
    return sum((k_obs * alpha + n) / (k * alpha + n) * w / z for k, w in weights.items())


counts_strategy = st.lists(st.integers(0, 6), min_size=2, max_size=6)


class TestDirichletPosterior:
    def test_update_increments_one_entry(self):
        post = DirichletPosterior([2.0, 3.0, 1.0]).update(2)
        np.testing.assert_array_equal(post.hyper, [2.0, 3.0, 2.0])

    def test_update_is_pure(self):
        prior = DirichletPosterior([1.0, 1.0])
        prior.update(0)
        np.testing.assert_array_equal(prior.hyper, [1.0, 1.0])

    def test_predictive_normalizes_hyper(self):
        np.testing.assert_allclose(DirichletPosterior([1.0, 1.0, 1.0]).predictive(), [1 / 3] * 3)

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            DirichletPosterior([1.0, 1.0]).update(2)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            DirichletPosterior([1.0, 0.0])

    def test_sample_moments(self, rng):
        draws = DirichletPosterior([1.0, 1.0]).sample(rng, 100_000)
        assert abs(draws[:, 0].mean() - 0.5) < 0.01
        assert abs(draws[:, 0].var() - 1 / 12) < 0.005

    def test_concentrated_hyper(self, rng):
        draws = DirichletPosterior([1000.0, 1.0]).sample(rng, 2000)
        assert np.mean(draws[:, 0] > 0.9) >= 0.99

    def test_tiny_shapes_stay_normalized(self, rng):
        draws = dirichlet_draws(np.full(5, 1e-4), rng, 1000)
        np.testing.assert_allclose(draws.sum(axis=1), 1.0)
        assert np.all(np.isfinite(draws))

    def test_zero_shape_log_gamma(self, rng):
        out = log_gamma_variates(np.array([0.0, 2.0]), rng)
        assert out[0] == -np.inf and np.isfinite(out[1])


class TestSparseMultinomial:
    def test_hand_case_three_outcomes(self):
        # L = 3, alpha = 1, uniform size prior, one observation of outcome 0
        post = SparseMultinomialPosterior(1.0, [1, 0, 0])
        probs, novel = post.predictive()
        assert probs[0] == pytest.approx(13 / 18, abs=1e-12)
        assert novel == pytest.approx(5 / 18, abs=1e-12)
        assert float(_exact_scale([1, 0, 0], 1, [Fraction(1, 3)] * 3)) == pytest.approx(13 / 18, abs=1e-15)

    def test_size_posterior_hand_case(self):
        # m_k proportional to k!/(k-1)! * Gamma(k)/Gamma(k+1) = 1 -> uniform over k = 1..3
        np.testing.assert_allclose(SparseMultinomialPosterior(1.0, [1, 0, 0]).size_posterior(),
                                   [1 / 3] * 3, atol=1e-12)

    def test_no_data_returns_size_prior(self):
        prior = np.array([0.5, 0.3, 0.2])
        post = SparseMultinomialPosterior(0.5, [0, 0, 0], prior)
        np.testing.assert_allclose(post.size_posterior(), prior)
        probs, novel = post.predictive()
        assert novel == 1.0 and not probs.any()

    def test_all_observed_forces_unit_scale(self):
        post = SparseMultinomialPosterior(1.0, [2, 1, 3])
        assert post.observed_scale() == 1.0
        np.testing.assert_allclose(post.predictive()[0], [3 / 9, 2 / 9, 4 / 9])

    def test_size_prior_at_observed_count(self):
        post = SparseMultinomialPosterior(1.0, [2, 0, 0, 0], [1.0, 0.0, 0.0, 0.0])
        probs, novel = post.predictive()
        assert novel == pytest.approx(0.0, abs=1e-15) and probs[0] == pytest.approx(1.0)

    def test_full_support_prior_reduces_to_dirichlet(self):
        counts = np.array([3.0, 0.0, 1.0, 0.0])
        post = SparseMultinomialPosterior(0.7, counts, [0.0, 0.0, 0.0, 1.0])
        np.testing.assert_allclose(post.predictive_vector(), DirichletPosterior(counts + 0.7).predictive(),
                                   atol=1e-12)

    def test_rejects_infeasible_size_prior(self):
        with pytest.raises(ValueError, match="feasible"):
            SparseMultinomialPosterior(1.0, [1, 1, 0], [1.0, 0.0, 0.0])

    @settings(max_examples=60, deadline=None)
    @given(counts=counts_strategy, alpha=st.floats(0.05, 3.0),
           prior_raw=st.lists(st.floats(0.01, 1.0), min_size=6, max_size=6))
    def test_matches_subset_enumeration(self, counts, alpha, prior_raw):
        L = len(counts)
        prior = np.array(prior_raw[:L]) / sum(prior_raw[:L])
        post = SparseMultinomialPosterior(alpha, counts, prior)
        pred, size_post = subset_oracle(counts, alpha, prior)
        np.testing.assert_allclose(post.predictive_vector(), pred, atol=1e-9)
        if sum(counts):
            np.testing.assert_allclose(post.size_posterior(), size_post, atol=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(counts=counts_strategy, alpha=st.floats(0.05, 3.0))
    def test_predictive_normalized(self, counts, alpha):
        post = SparseMultinomialPosterior(alpha, counts)
        probs, novel = post.predictive()
        assert probs.sum() + novel == pytest.approx(1.0, abs=1e-9)
        assert post.predictive_vector().sum() == pytest.approx(1.0, abs=1e-9)

    def test_exact_rational_cases(self):
        for counts, alpha in [([1, 0, 0], 1), ([2, 1, 0, 0], 1), ([3, 0, 0, 0, 0], 2), ([1, 1, 1, 0], 1)]:
            L = len(counts)
            exact = _exact_scale(counts, alpha, [Fraction(1, L)] * L)
            assert SparseMultinomialPosterior(float(alpha), counts).observed_scale() == \
                pytest.approx(float(exact), abs=1e-12)

    def test_point_mass_size_gives_zero_novel_samples(self, rng):
        post = SparseMultinomialPosterior(1.0, [2, 1, 0, 0], [0.0, 1.0, 0.0, 0.0])
        observed, novel = post.sample(rng, 500)
        assert np.all(novel == 0.0)
        np.testing.assert_allclose(observed.sum(axis=1), 1.0)

    def test_sample_mean_matches_predictive(self, rng):
        post = SparseMultinomialPosterior(1.0, [3, 1, 0, 0, 0])
        observed, novel = post.sample(rng, 100_000)
        probs, mass = post.predictive()
        np.testing.assert_allclose(observed.mean(axis=0), probs, atol=0.01)
        assert abs(novel.mean() - mass) < 0.01
        np.testing.assert_allclose(observed.sum(axis=1) + novel, 1.0)


def small_belief(transition="sparse", reward_alpha=1.0):
    return BeliefState(4, 2, [0.0, 1.0], 0.9, PriorConfig(transition=transition, reward_alpha=reward_alpha))


class TestBeliefState:
    def test_dirichlet_counting(self):
        b = small_belief("dirichlet")
        e = Experience(0, 1, 1.0, 2)
        b.update(e)
        np.testing.assert_array_equal(b.transition_posterior(0, 1).hyper, [1, 1, 2, 1])
        b.update(e)
        np.testing.assert_array_equal(b.transition_posterior(0, 1).hyper, [1, 1, 3, 1])
        np.testing.assert_array_equal(b.reward_posterior(0, 1).hyper, [1, 3])

    def test_updated_leaves_original(self):
        b = small_belief()
        b2 = b.updated(Experience(0, 0, 0.0, 1))
        assert b.visit_counts.sum() == 0 and b2.visit_counts.sum() == 1

    def test_rejects_bad_tuples(self):
        b = small_belief()
        with pytest.raises(ValueError, match="support"):
            b.update(Experience(0, 0, 0.5, 1))
        with pytest.raises(IndexError):
            b.update(Experience(0, 5, 0.0, 1))
        with pytest.raises(IndexError):
            b.update(Experience(0, 0, 0.0, 9))

    def test_parameter_independence(self):
        b = small_belief()
        before_t = b.predictive_transition().copy()
        b.update(Experience(1, 0, 1.0, 3))
        mask = np.ones((4, 2), dtype=bool)
        mask[1, 0] = False
        np.testing.assert_array_equal(b.predictive_transition()[mask], before_t[mask])

    def test_cache_matches_posteriors(self, rng):
        b = small_belief()
        for _ in range(30):
            b.update(Experience(int(rng.integers(4)), int(rng.integers(2)), float(rng.integers(2)),
                                int(rng.integers(4))))
        for s in range(4):
            for a in range(2):
                np.testing.assert_allclose(b.predictive_transition()[s, a],
                                           b.transition_posterior(s, a).predictive_vector(), atol=1e-12)

    @pytest.mark.parametrize("family", ["sparse", "dirichlet"])
    def test_chain_rule_of_marginal_likelihood(self, family):
        b = small_belief(family)
        e1, e2 = Experience(0, 0, 1.0, 2), Experience(0, 0, 0.0, 3)
        seq = b.tuple_likelihood(e1) * b.updated(e1).tuple_likelihood(e2)
        rev = b.tuple_likelihood(e2) * b.updated(e2).tuple_likelihood(e1)
        assert seq == pytest.approx(rev, rel=1e-9)
        if family == "dirichlet":
            # ratio of Dirichlet normalizers: (1*1)/(4*5) for transitions, (1*1)/(2*3) for rewards
            assert seq == pytest.approx((1 / 20) * (1 / 6), rel=1e-9)

    def test_sample_models_valid(self, rng):
        b = small_belief()
        b.update(Experience(0, 0, 1.0, 1))
        trans, rdist = b.sample_models(rng, 7)
        assert trans.shape == (7, 4, 2, 4) and rdist.shape == (7, 4, 2, 2)
        np.testing.assert_allclose(trans.sum(axis=-1), 1.0)
        np.testing.assert_allclose(rdist.sum(axis=-1), 1.0)
        mdp = b.sample_mdp(rng)
        assert mdp.discount == 0.9

    def test_novel_mass_spread_uniformly(self, rng):
        b = small_belief()
        b.update(Experience(0, 0, 1.0, 1))
        trans, _ = b.sample_rows(0, 0, rng, 50)
        unseen = trans[:, [0, 2, 3]]
        np.testing.assert_allclose(unseen, unseen[:, :1].repeat(3, axis=1))

    def test_point_mass_belief_samples_truth(self, rng):
        b = small_belief("dirichlet")
        for _ in range(20000):
            b.transition_counts[0, 0, 1] += 1
        b._refresh_cache()
        trans, _ = b.sample_rows(0, 0, rng, 100)
        assert np.all(trans[:, 1] > 0.99)

    def test_vector_reward_prior(self):
        b = small_belief(reward_alpha=(0.1, 0.3))
        np.testing.assert_allclose(b.predictive_reward()[0, 0], [0.25, 0.75])

    def test_save_load_roundtrip(self, tmp_path, rng):
        b = BeliefState(3, 2, [-1.0, 0.0, 2.0], 0.95,
                        PriorConfig(transition_alpha=0.5, size_prior=(0.5, 0.25, 0.25), reward_alpha=(0.2, 1.0, 0.1)))
        for _ in range(10):
            b.update(Experience(int(rng.integers(3)), int(rng.integers(2)), float(rng.choice([-1.0, 0.0, 2.0])),
                                int(rng.integers(3))))
        path = tmp_path / "belief.json"
        b.save(path)
        back = BeliefState.load(path)
        np.testing.assert_array_equal(back.transition_counts, b.transition_counts)
        np.testing.assert_array_equal(back.reward_counts, b.reward_counts)
        assert back.prior == b.prior and back.discount == b.discount
        np.testing.assert_array_equal(back.predictive_transition(), b.predictive_transition())

    def test_prior_config_validation(self):
        with pytest.raises(ValueError):
            PriorConfig(transition="gaussian")
        with pytest.raises(ValueError):
            PriorConfig(reward_alpha=0.0)
        cfg = PriorConfig(reward_alpha=[0.1, 0.2])
        assert PriorConfig.from_dict(cfg.to_dict()) == cfg
