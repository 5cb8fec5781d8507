import io
import itertools

import numpy as np
import pytest

from bayesvpi.mdp import (Mdp, bellman_backup, expected_reward, greedy_policy, policy_evaluation,
                          prioritized_sweep, solve_q, sweep_batch, value_iteration)

from conftest import random_mdp


def two_state_chain(discount=0.9):
    # state 0 -> 1 deterministically with reward 0; state 1 absorbing with reward 1
    trans = np.array([[[0.0, 1.0]], [[0.0, 1.0]]])
    rdist = np.array([[[1.0, 0.0]], [[0.0, 1.0]]])
    return Mdp(trans, rdist, np.array([0.0, 1.0]), discount)


def enumerate_optimum(mdp):
    """Best deterministic policy by brute force over all A^S policies."""
    best_v, best = None, []
    for pol in itertools.product(range(mdp.num_actions), repeat=mdp.num_states):
        v = policy_evaluation(mdp, np.array(pol))
        if best_v is None or np.all(v >= best_v - 1e-9) and np.any(v > best_v + 1e-9):
            best_v, best = v, [pol]
        elif np.allclose(v, best_v, atol=1e-9):
            best.append(pol)
    return best_v, best


class TestMdpValidation:
    def test_rows_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum to 1"):
            Mdp(np.full((2, 1, 2), 0.4), np.ones((2, 1, 1)), [0.0], 0.9)

    def test_negative_probability(self):
        trans = np.array([[[1.5, -0.5]], [[0.0, 1.0]]])
        with pytest.raises(ValueError, match="negative"):
            Mdp(trans, np.ones((2, 1, 1)), [0.0], 0.9)

    @pytest.mark.parametrize("gamma", [0.0, 1.0, 1.5, -0.1])
    def test_discount_range(self, gamma):
        with pytest.raises(ValueError, match="discount"):
            Mdp(np.ones((1, 1, 1)), np.ones((1, 1, 1)), [0.0], gamma)

    def test_support_sorted(self):
        with pytest.raises(ValueError, match="increasing"):
            Mdp(np.ones((1, 1, 1)), np.full((1, 1, 2), 0.5), [1.0, 0.0], 0.9)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            Mdp(np.ones((1, 1, 1)), np.full((1, 1, 2), 0.5), [0.0], 0.9)

    def test_value_bounds(self):
        mdp = two_state_chain()
        lo, hi = mdp.value_bounds
        assert lo == 0.0 and hi == pytest.approx(10.0)

    def test_expected_reward_and_index_check(self):
        mdp = two_state_chain()
        assert expected_reward(mdp, 1, 0) == 1.0
        with pytest.raises(IndexError):
            expected_reward(mdp, 2, 0)

    def test_dump_load_roundtrip(self, rng):
        mdp = random_mdp(rng, 3, 2)
        buf = io.StringIO()
        mdp.dump(buf)
        buf.seek(0)
        back = Mdp.load(buf)
        np.testing.assert_array_equal(back.transition, mdp.transition)
        np.testing.assert_array_equal(back.reward_dist, mdp.reward_dist)
        np.testing.assert_array_equal(back.reward_support, mdp.reward_support)
        assert back.discount == mdp.discount

    def test_with_row_is_local(self, rng):
        mdp = random_mdp(rng, 3, 2)
        new = mdp.with_row(1, 0, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
        assert new.transition[1, 0, 0] == 1.0
        mask = np.ones((3, 2), dtype=bool)
        mask[1, 0] = False
        np.testing.assert_array_equal(new.transition[mask], mdp.transition[mask])


class TestValueIteration:
    def test_two_state_chain_closed_form(self):
        sol = value_iteration(two_state_chain(0.9), tolerance=1e-10)
        # V(1) = 1/(1-0.9) = 10, V(0) = 0.9 * 10 = 9
        np.testing.assert_allclose(sol.q[:, 0], [9.0, 10.0], atol=1e-8)
        assert sol.converged and sol.residual <= 1e-10

    def test_single_absorbing_state(self):
        mdp = Mdp(np.ones((1, 1, 1)), np.array([[[0.0, 1.0]]]), [0.0, 2.0], 0.5)
        assert value_iteration(mdp).q[0, 0] == pytest.approx(4.0, abs=1e-5)

    def test_iteration_cap_reports_nonconvergence(self):
        sol = value_iteration(two_state_chain(0.99), tolerance=1e-12, max_iters=3)
        assert not sol.converged and sol.iterations == 3

    def test_greedy_policy_ties_lowest_index(self):
        assert list(greedy_policy(np.array([[1.0, 1.0, 0.5], [0.0, 2.0, 2.0]]))) == [0, 1]

    def test_bellman_residual_bound(self, rng):
        mdp = random_mdp(rng, 5, 3)
        sol = value_iteration(mdp, tolerance=1e-8)
        for s in range(5):
            for a in range(3):
                assert abs(bellman_backup(mdp, sol.q, s, a) - sol.q[s, a]) <= 1e-8 + 1e-12

    def test_matches_policy_enumeration(self, rng):
        for _ in range(20):
            mdp = random_mdp(rng, int(rng.integers(1, 5)), int(rng.integers(1, 4)))
            sol = value_iteration(mdp, tolerance=1e-10)
            best_v, best = enumerate_optimum(mdp)
            np.testing.assert_allclose(sol.q.max(axis=1), best_v, atol=1e-7)
            assert tuple(greedy_policy(sol.q)) in best

    def test_batched_solve_agrees_with_single(self, rng):
        mdps = [random_mdp(rng, 4, 2) for _ in range(3)]
        trans = np.stack([m.transition for m in mdps])
        rewards = np.stack([m.expected_rewards for m in mdps])
        q, residual, _ = solve_q(trans, rewards, 0.9, 1e-9)
        for i, m in enumerate(mdps):
            np.testing.assert_allclose(q[i], value_iteration(m, 1e-9).q, atol=1e-8)
        assert np.all(residual <= 1e-9)


class TestPrioritizedSweep:
    def test_unbounded_budget_matches_value_iteration(self, rng):
        for _ in range(10):
            mdp = random_mdp(rng, 6, 3)
            ref = value_iteration(mdp, tolerance=1e-10).q
            res = prioritized_sweep(mdp, np.zeros((6, 3)), range(6), max_backups=None,
                                    priority_threshold=1e-10)
            assert np.max(np.abs(res.q - ref)) < 2e-6

    def test_budget_respected(self, rng):
        mdp = random_mdp(rng, 6, 3)
        res = prioritized_sweep(mdp, np.zeros((6, 3)), [0, 1], max_backups=4)
        assert res.backups <= 4

    def test_converged_q_is_fixed_point(self, rng):
        mdp = random_mdp(rng, 5, 2)
        q = value_iteration(mdp, tolerance=1e-12).q
        res = prioritized_sweep(mdp, q, [2], max_backups=None)
        np.testing.assert_allclose(res.q, q, atol=1e-10)
        assert res.backups == 1  # only the seed changes by less than the threshold

    def test_repairs_after_row_change(self, rng):
        mdp = random_mdp(rng, 6, 2, sparsity=0.6)
        q = value_iteration(mdp, tolerance=1e-10).q
        changed = mdp.with_row(3, 1, np.eye(6)[0], np.array([0.0, 0.0, 1.0]))
        res = prioritized_sweep(changed, q, [3], max_backups=None, priority_threshold=1e-10)
        np.testing.assert_allclose(res.q, value_iteration(changed, tolerance=1e-10).q, atol=2e-6)

    def test_batch_models_are_independent(self, rng):
        mdps = [random_mdp(rng, 4, 2) for _ in range(2)]
        trans = np.stack([m.transition for m in mdps])
        rewards = np.stack([m.expected_rewards for m in mdps])
        seeds = np.array([[True, False, False, False], [False, False, True, False]])
        q, backups = sweep_batch(trans, rewards, 0.9, np.zeros((2, 4, 2)), seeds, 5, 1e-4)
        for i, m in enumerate(mdps):
            single = prioritized_sweep(m, np.zeros((4, 2)), np.nonzero(seeds[i])[0], 5, 1e-4)
            np.testing.assert_allclose(q[i], single.q)
            assert backups[i] == single.backups

    def test_carried_priority_finishes_the_job(self, rng):
        mdp = random_mdp(rng, 8, 2, sparsity=0.5)
        q = value_iteration(mdp, tolerance=1e-10).q
        changed = mdp.with_row(2, 0, np.eye(8)[5], np.array([0.0, 0.0, 1.0]))
        target = value_iteration(changed, tolerance=1e-10).q
        trans, rewards = changed.transition[None], changed.expected_rewards[None]
        seeds = np.zeros((1, 8), dtype=bool)
        seeds[0, 2] = True
        priority = np.zeros((1, 8))
        q_carry, q_drop = q[None], q[None]
        none = np.zeros_like(seeds)
        for i in range(2000):
            q_carry, _ = sweep_batch(trans, rewards, 0.9, q_carry, seeds if i == 0 else none, 1,
                                     1e-12, priority)
            q_drop, _ = sweep_batch(trans, rewards, 0.9, q_drop, seeds if i == 0 else none, 1, 1e-12)
        assert np.max(np.abs(q_carry[0] - target)) < 2e-6
        # without the carried queue, one backup is all that ever happens
        assert np.max(np.abs(q_drop[0] - target)) > 1e-3


def test_policy_evaluation_chain():
    v = policy_evaluation(two_state_chain(0.5), np.array([0, 0]))
    np.testing.assert_allclose(v, [1.0, 2.0])
