"""
Tests for importance weights, the PRM loss, advantages and policy updates.
"""
import math

import numpy as np
from django.test import SimpleTestCase

from apps.core.errors import (
    ConfigValidationError,
    ConfigurationError,
    EmptyDatasetError,
    GroupTooSmallError,
    MissingLogprobError,
)
from apps.mdp.enumeration import iter_states
from apps.mdp.models import Prompt, State, TokenMdp, Trajectory
from apps.oracle.exact import enumerate_distribution, exact_irl_gradient, exact_partition
from apps.policies.models import PolicyParams, RewardParams
from apps.policies.sampling import sample_rollouts
from apps.trainer.losses import (
    advantage_estimates,
    combined_reward,
    effective_sample_size,
    importance_log_weight,
    importance_sampled_gradient,
    normalized_weights,
    policy_gradient,
    policy_update,
    prm_loss,
    prompt_filter,
)
from apps.trainer.models import BatchSplit, TrainConfig


def constant_reward(value, vocab_size=3):
    reward = RewardParams(vocab_size, context_order=0)
    reward.rows[()] = np.full(vocab_size, float(value))
    return reward


def full_reward(mdp, seed, scale=0.5):
    reward = RewardParams(mdp.vocab_size, context_order=16, value_clip=None)
    rng = np.random.default_rng(seed)
    for prompt in mdp.prompts:
        for state in iter_states(mdp, prompt):
            for action in range(mdp.vocab_size):
                reward.set(state, action, rng.normal(scale=scale))
    return reward


class TestImportanceWeights(SimpleTestCase):
    """Test log importance weights."""

    def test_neutral(self):
        """Test that zero reward and certain tokens give log w = 0."""
        traj = Trajectory(0, (1, 2), behavior_logprobs=(0.0, 0.0))
        self.assertEqual(importance_log_weight(RewardParams(3), traj), 0.0)

    def test_arithmetic(self):
        """Test that sum r = 1 and pi(tau) = e^-1 give log w = 2."""
        traj = Trajectory(0, (1,), behavior_logprobs=(-1.0,))
        self.assertAlmostEqual(importance_log_weight(constant_reward(1.0), traj), 2.0)

    def test_clip(self):
        """Test the symmetric log-weight clip."""
        traj = Trajectory(0, (1,), behavior_logprobs=(-50.0,))
        self.assertEqual(importance_log_weight(RewardParams(3), traj, clip=20.0), 20.0)

    def test_missing_logprobs(self):
        """Test that trajectories without behavior log-probabilities are rejected."""
        with self.assertRaises(MissingLogprobError):
            importance_log_weight(RewardParams(3), Trajectory(0, (1,)))

    def test_normalized_weights(self):
        """Test that normalized weights form a probability vector."""
        weights = normalized_weights([-3.0, 0.5, 19.0, -20.0])
        self.assertAlmostEqual(weights.sum(), 1.0, places=12)
        self.assertTrue((weights >= 0).all())
        self.assertEqual(effective_sample_size([1.0, 1.0, 1.0, 1.0]), 4.0)
        self.assertAlmostEqual(effective_sample_size(weights), 1.0, places=6)

    def test_weighted_enumeration_reproduces_partition(self):
        """Test that weighting enumerated sequences by model probability recovers z."""
        mdp = TokenMdp(vocab_size=2, horizon=3, eos=None, prompts=(Prompt(0, ()),))
        reward = full_reward(mdp, seed=1)
        log_z = exact_partition(mdp, reward).log_z
        estimate = 0.0
        for traj, log_p in enumerate_distribution(mdp, reward, mdp.prompts[0]):
            traj = Trajectory(0, traj.actions, behavior_logprobs=[log_p / 3] * 3)
            estimate += math.exp(log_p) * math.exp(importance_log_weight(reward, traj, clip=None))
        self.assertAlmostEqual(estimate, math.exp(log_z), places=10)

    def test_monte_carlo_partition(self):
        """Test that 10^5 uniform samples estimate z within 2%."""
        mdp = TokenMdp(vocab_size=2, horizon=3, eos=None, prompts=(Prompt(0, ()),))
        reward = full_reward(mdp, seed=2)
        rollouts = sample_rollouts(PolicyParams(2), mdp, mdp.prompts[0], 100_000, seed=3)
        log_weights = np.array([importance_log_weight(reward, t, clip=None) for t in rollouts])
        estimate = np.exp(log_weights).mean()
        exact = math.exp(exact_partition(mdp, reward).log_z)
        self.assertLess(abs(estimate - exact) / exact, 0.02)


class TestImportanceSampledGradient(SimpleTestCase):
    """Test the self-normalized gradient estimate with repeated rollouts."""

    def setUp(self):
        self.reward = RewardParams(2, context_order=0)
        self.reward.rows[()] = np.array([0.3, -0.2])
        half = math.log(0.5)
        self.first = Trajectory(0, (0,), behavior_logprobs=(half,))
        self.second = Trajectory(0, (1,), behavior_logprobs=(half,))
        self.expert = [Trajectory(0, (1,))]

    def test_copies_weight_the_estimate(self):
        """Test the estimate, standard errors and ESS for samples (a, a, b) by hand."""
        result = importance_sampled_gradient(
            self.reward, self.expert, [self.first, self.second, self.first]
        )
        total = 2 * math.exp(0.3) + math.exp(-0.2)
        share_a, share_b = 2 * math.exp(0.3) / total, math.exp(-0.2) / total
        self.assertAlmostEqual(result.estimate.get((), 0), -share_a, places=12)
        self.assertAlmostEqual(result.estimate.get((), 1), 1.0 - share_b, places=12)
        spread = share_a**2 / 2 * (1 - share_a) ** 2 + share_b**2 * share_a**2
        self.assertAlmostEqual(result.stderr.get((), 0), math.sqrt(spread), places=12)
        self.assertAlmostEqual(result.ess, 1.0 / (share_a**2 / 2 + share_b**2), places=10)

    def test_order_free(self):
        """Test that the order of the samples does not change the estimate."""
        first = importance_sampled_gradient(
            self.reward, self.expert, [self.first, self.first, self.second]
        )
        second = importance_sampled_gradient(
            self.reward, self.expert, [self.second, self.first, self.first]
        )
        for action in range(2):
            self.assertAlmostEqual(
                first.estimate.get((), action), second.estimate.get((), action), places=14
            )

    def test_missing_prompt(self):
        """Test that an expert prompt without samples is rejected."""
        with self.assertRaises(EmptyDatasetError):
            importance_sampled_gradient(
                self.reward, [Trajectory(5, (1,))], [self.first, self.second]
            )


class TestPrmLoss(SimpleTestCase):
    """Test the self-normalized PRM loss."""

    def setUp(self):
        self.cfg = TrainConfig()

    def test_equal_rewards(self):
        """Test that equal per-token rewards on both sides give L = 0."""
        reward = constant_reward(0.3)
        split = BatchSplit(
            policy_failed=[Trajectory(0, (1, 2), behavior_logprobs=(-1.0, -1.0))],
            expert_pool=[Trajectory(0, (2,))],
        )
        result = prm_loss(reward, split, [1.0], self.cfg)
        self.assertAlmostEqual(result.loss, 0.0, places=12)

    def test_single_pair(self):
        """Test one failed rollout with mean 0.2 against an expert with mean 0.5."""
        reward = RewardParams(3, context_order=0)
        reward.rows[()] = np.array([0.0, 0.2, 0.5])
        split = BatchSplit(
            policy_failed=[Trajectory(0, (1,), behavior_logprobs=(-1.0,))],
            expert_pool=[Trajectory(0, (2,))],
        )
        self.assertAlmostEqual(prm_loss(reward, split, [7.0], self.cfg).loss, -0.3, places=12)

    def test_weighted_pair(self):
        """Test weights (1, 3), failed means (0.0, 0.4) and expert mean 0.1."""
        reward = RewardParams(4, context_order=0)
        reward.rows[()] = np.array([0.0, 0.0, 0.4, 0.1])
        split = BatchSplit(
            policy_failed=[
                Trajectory(0, (1,), behavior_logprobs=(-1.0,)),
                Trajectory(0, (2,), behavior_logprobs=(-1.0,)),
            ],
            expert_pool=[Trajectory(0, (3,))],
        )
        self.assertAlmostEqual(prm_loss(reward, split, [1.0, 3.0], self.cfg).loss, 0.2, places=12)

    def test_uniform_weights_when_disabled(self):
        """Test that importance weights are ignored when switched off."""
        reward = RewardParams(4, context_order=0)
        reward.rows[()] = np.array([0.0, 0.0, 0.4, 0.1])
        split = BatchSplit(
            policy_failed=[
                Trajectory(0, (1,), behavior_logprobs=(-1.0,)),
                Trajectory(0, (2,), behavior_logprobs=(-1.0,)),
            ],
            expert_pool=[Trajectory(0, (3,))],
        )
        cfg = TrainConfig(use_importance_weights=False)
        self.assertAlmostEqual(prm_loss(reward, split, [1.0, 3.0], cfg).loss, 0.1, places=12)

    def test_skip_and_empty_expert(self):
        """Test the skip signal and the empty expert pool error."""
        reward = RewardParams(3)
        only_experts = BatchSplit(expert_pool=[Trajectory(0, (1,))])
        self.assertIsNone(prm_loss(reward, only_experts, [], self.cfg))
        split = BatchSplit(policy_failed=[Trajectory(0, (1,), behavior_logprobs=(-1.0,))])
        with self.assertRaises(ConfigurationError):
            prm_loss(reward, split, [1.0], self.cfg)

    def test_gradient_matches_exact_irl_gradient(self):
        """Test that -grad L with soft-optimal weights and sums equals the exact gradient."""
        mdp = TokenMdp(vocab_size=2, horizon=3, eos=0, prompts=(Prompt(0, (1,)),))
        reward = full_reward(mdp, seed=4)
        expert = [Trajectory(0, (1, 1, 0), prompt=(1,)), Trajectory(0, (1, 0), prompt=(1,))]
        distribution = enumerate_distribution(mdp, reward, mdp.prompts[0])
        failed = [
            Trajectory(0, traj.actions, behavior_logprobs=[-1.0] * len(traj.actions), prompt=(1,))
            for traj, _ in distribution
        ]
        weights = [math.exp(log_p) for _, log_p in distribution]
        cfg = TrainConfig(loss_reward_norm="sum", reward_grad_clip=1e9)
        result = prm_loss(reward, BatchSplit(failed, expert), weights, cfg)
        exact = exact_irl_gradient(mdp, reward, expert)
        keys = sorted(set(result.gradient.rows) | set(exact.rows))
        np.testing.assert_allclose(
            -result.gradient.to_vector(keys), exact.to_vector(keys), rtol=0, atol=1e-8
        )

    def test_gradient_clip(self):
        """Test that the reward gradient norm is clipped."""
        reward = RewardParams(3, context_order=0)
        split = BatchSplit(
            policy_failed=[Trajectory(0, (1,), behavior_logprobs=(-1.0,))],
            expert_pool=[Trajectory(0, (2,))],
        )
        result = prm_loss(reward, split, [1.0], TrainConfig(reward_grad_clip=0.5))
        self.assertAlmostEqual(result.grad_norm, math.sqrt(2))
        self.assertAlmostEqual(result.gradient.norm(), 0.5)


class TestAdvantages(SimpleTestCase):
    """Test RLOO and GRPO advantages."""

    def test_rloo(self):
        """Test leave-one-out baselines."""
        np.testing.assert_allclose(advantage_estimates([1, 0, 0, 0]), [1, -1 / 3, -1 / 3, -1 / 3])
        np.testing.assert_allclose(advantage_estimates([0.7] * 4), [0.0] * 4, atol=1e-15)
        np.testing.assert_allclose(advantage_estimates([2, 0]), [2, -2])

    def test_rloo_sums_to_zero(self):
        """Test that RLOO advantages sum to zero over a group."""
        rng = np.random.default_rng(6)
        for _ in range(20):
            rewards = rng.normal(size=rng.integers(2, 9))
            self.assertAlmostEqual(sum(advantage_estimates(rewards)), 0.0, places=12)

    def test_grpo(self):
        """Test group-normalized advantages with population std."""
        np.testing.assert_allclose(
            advantage_estimates([1, 0, 0, 0], "grpo"),
            [1.732046, -0.577349, -0.577349, -0.577349],
            atol=1e-4,
        )

    def test_group_too_small(self):
        """Test that a single reward cannot form a group."""
        with self.assertRaises(GroupTooSmallError):
            advantage_estimates([1.0])


class TestCombinedReward(SimpleTestCase):
    """Test the outcome/PRM reward mix."""

    def test_default_ratio(self):
        """Test 1 + 0.05 * 0.4 = 1.02."""
        self.assertAlmostEqual(combined_reward(1.0, 0.4, TrainConfig()), 1.02)

    def test_prm_disabled(self):
        """Test that lambda = 0 leaves the outcome only."""
        self.assertEqual(combined_reward(1.0, 0.4, TrainConfig(lambda_prm=0.0)), 1.0)

    def test_larger_ratio(self):
        """Test 0 + 0.1 * -0.5 = -0.05."""
        self.assertAlmostEqual(combined_reward(0.0, -0.5, TrainConfig(lambda_prm=0.1)), -0.05)

    def test_format_penalty(self):
        """Test the format reward on malformed trajectories."""
        cfg = TrainConfig(format_reward=True, lambda_prm=0.0)
        self.assertEqual(combined_reward(0.0, 0.0, cfg, well_formed=False), -1.0)
        self.assertEqual(combined_reward(1.0, 0.0, cfg, well_formed=True), 1.0)

    def test_prm_only(self):
        """Test that outcome_weight = 0 trains on the PRM alone."""
        cfg = TrainConfig(outcome_weight=0.0, lambda_prm=1.0)
        self.assertEqual(combined_reward(1.0, 0.25, cfg), 0.25)


class TestPolicyUpdate(SimpleTestCase):
    """Test the clipped surrogate step."""

    def bandit(self):
        policy = PolicyParams(2, context_order=0)
        rollouts = [
            Trajectory(0, (1,), behavior_logprobs=(math.log(0.5),)),
            Trajectory(0, (0,), behavior_logprobs=(math.log(0.5),)),
        ]
        return policy, rollouts

    def test_bandit_sign(self):
        """Test that A = (1, -1) raises the probability of action 1."""
        policy, rollouts = self.bandit()
        old = policy.freeze()
        before = policy.distribution(State(0, ()))[1]
        policy_update(policy, old, rollouts, [1.0, -1.0], TrainConfig(policy_lr=0.1, lr_scale=1.0))
        self.assertGreater(policy.distribution(State(0, ()))[1], before)

    def test_unit_ratio_is_vanilla_gradient(self):
        """Test that rho = 1 gives the advantage-weighted log-likelihood gradient."""
        policy, rollouts = self.bandit()
        cfg = TrainConfig(entropy_coef=0.0)
        gradient, stats = policy_gradient(policy, policy.freeze(), rollouts, [1.0, -1.0], cfg)
        np.testing.assert_allclose(gradient.get(()), [-0.5, 0.5])
        self.assertAlmostEqual(stats.surrogate, 0.0)

    def test_clipped_branch(self):
        """Test that rho = 1.5 with A > 0 takes the clipped value 1.2 A and no gradient."""
        policy = PolicyParams(2, context_order=0)
        policy.rows[()] = np.array([0.0, math.log(3.0)])
        old = PolicyParams(2, context_order=0)
        old.rows[()] = np.array([0.0, 0.0])
        traj = Trajectory(0, (1,), behavior_logprobs=(math.log(0.5),))
        cfg = TrainConfig(entropy_coef=0.0)
        gradient, stats = policy_gradient(policy, old.freeze(), [traj], [2.0], cfg)
        self.assertAlmostEqual(stats.surrogate, 1.2 * 2.0)
        self.assertEqual(stats.clip_fraction, 1.0)
        self.assertEqual(gradient.norm(), 0.0)

    def test_missing_logprobs(self):
        """Test that rollouts need behavior log-probabilities."""
        policy = PolicyParams(2)
        with self.assertRaises(MissingLogprobError):
            policy_update(policy, policy.freeze(), [Trajectory(0, (1,))], [1.0], TrainConfig())

    def test_entropy_bonus_flattens(self):
        """Test that the entropy term alone moves a peaked policy toward uniform."""
        policy = PolicyParams(2, context_order=0)
        policy.rows[()] = np.array([2.0, 0.0])
        rollouts = [Trajectory(0, (0,), behavior_logprobs=(-0.1,))] * 2
        cfg = TrainConfig(entropy_coef=1.0, policy_lr=0.1, lr_scale=1.0)
        before = policy.distribution(State(0, ()))[0]
        policy_update(policy, policy.freeze(), rollouts, [0.0, 0.0], cfg)
        self.assertLess(policy.distribution(State(0, ()))[0], before)


class TestPromptFilter(SimpleTestCase):
    """Test accuracy-band prompt filtering."""

    def test_band(self):
        """Test that only prompts within [0.2, 0.8] survive, boundaries included."""
        kept = prompt_filter({1: 0.9, 2: 0.1, 3: 0.5, 4: 0.2, 5: 0.8}, TrainConfig())
        self.assertEqual(kept, {3, 4, 5})


class TestTrainConfig(SimpleTestCase):
    """Test config invariants."""

    def test_invalid_values(self):
        """Test that inverted filters and bad clip ratios are rejected."""
        with self.assertRaises(ConfigValidationError):
            TrainConfig(accuracy_filter=(0.8, 0.2))
        with self.assertRaises(ConfigValidationError):
            TrainConfig(clip_ratio=1.5)

    def test_defaults(self):
        """Test the documented defaults."""
        cfg = TrainConfig()
        self.assertEqual((cfg.clip_ratio, cfg.entropy_coef, cfg.n_rollouts), (0.2, 0.001, 4))
        self.assertEqual(cfg.lambda_prm, 0.05)
        self.assertAlmostEqual(cfg.policy_lr / cfg.reward_lr, 5e-7 / 3e-8)
