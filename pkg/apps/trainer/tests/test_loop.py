"""
Tests for the dual reward/policy loop.
"""
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from apps.core.errors import ConfigurationError
from apps.mdp.environment import generate_expert
from apps.mdp.models import Prompt, TokenMdp, Trajectory, TrajectorySource
from apps.policies.checkpoints import load_checkpoint
from apps.trainer.loop import DualLoop, RewardStep, run_repirl
from apps.trainer.models import TrainConfig


def sort_bandit():
    """One prompt whose only correct output is the single token 2."""
    mdp = TokenMdp(
        vocab_size=3, horizon=1, eos=0, prompts=(Prompt(0, (2,)),), task_kind="copy_sort"
    )
    return mdp, generate_expert(mdp, mdp.prompts[0], 1, seed=0)


def small_sort(num_prompts=4):
    prompts = tuple(Prompt(i, (1 + i % 2, 2 - i % 2)) for i in range(num_prompts))
    mdp = TokenMdp(vocab_size=3, horizon=3, eos=0, prompts=prompts, task_kind="copy_sort")
    experts = [t for p in prompts for t in generate_expert(mdp, p, 2, seed=0)]
    return mdp, experts


class TestDualLoop(SimpleTestCase):
    """Test the dual loop end to end."""

    def test_zero_epochs_is_noop(self):
        """Test that zero epochs return the initial parameters and no metrics."""
        mdp, experts = sort_bandit()
        policy, reward, metrics = run_repirl(mdp, experts, TrainConfig(epochs=0))
        self.assertEqual(policy.rows, {})
        self.assertEqual(reward.rows, {})
        self.assertEqual(len(metrics), 0)

    def test_bandit_reaches_full_pass_rate(self):
        """Test that a one-token copy_sort task is solved within 50 iterations."""
        mdp, experts = sort_bandit()
        cfg = TrainConfig(epochs=50, batch_size=1, policy_lr=1.0, lr_scale=1.0, log_interval=0)
        _, _, metrics = run_repirl(mdp, experts, cfg)
        self.assertEqual(len(metrics), 50)
        self.assertEqual(metrics.final_pass_at_1(), 1.0)

    def test_empty_expert_set(self):
        """Test that reward learning without experts is a configuration error."""
        mdp, _ = sort_bandit()
        with self.assertRaises(ConfigurationError):
            run_repirl(mdp, [], TrainConfig(epochs=1))

    def test_outcome_only_step_needs_no_experts(self):
        """Test that the plain reward step runs without a dataset and never updates."""
        mdp, _ = sort_bandit()
        loop = DualLoop(mdp, [], TrainConfig(epochs=2, batch_size=1), RewardStep())
        _, reward, metrics = loop.run()
        self.assertEqual(reward.rows, {})
        self.assertTrue(all(record.reward_skipped for record in metrics))

    def test_frozen_reward(self):
        """Test that freeze_reward leaves the reward table untouched."""
        mdp, experts = small_sort()
        cfg = TrainConfig(epochs=2, batch_size=2, freeze_reward=True, lr_scale=1.0)
        _, reward, metrics = run_repirl(mdp, experts, cfg)
        self.assertEqual(reward.rows, {})
        self.assertTrue(all(record.reward_skipped for record in metrics))

    def test_deterministic_under_seed_and_workers(self):
        """Test that a seed fixes the run regardless of the worker count."""
        mdp, experts = small_sort()
        base = dict(epochs=2, batch_size=2, policy_lr=0.5, reward_lr=0.5, lr_scale=1.0, seed=3)
        first = run_repirl(mdp, experts, TrainConfig(**base))
        second = run_repirl(mdp, experts, TrainConfig(workers=3, **base))
        self.assertEqual(
            [r.outcome_mean for r in first[2]], [r.outcome_mean for r in second[2]]
        )
        self.assertEqual(set(first[0].rows), set(second[0].rows))
        for key, row in first[0].rows.items():
            np.testing.assert_array_equal(row, second[0].rows[key])
        for key, row in first[1].rows.items():
            np.testing.assert_array_equal(row, second[1].rows[key])

    def test_reward_moves_toward_experts(self):
        """Test that a reward step raises the expert token and lowers failed tokens."""
        mdp, experts = sort_bandit()
        cfg = TrainConfig(
            epochs=1, batch_size=1, n_rollouts=8, reward_lr=0.1, policy_lr=1e-9, lr_scale=1.0
        )
        _, reward, metrics = run_repirl(mdp, experts, cfg)
        record = metrics.last()
        self.assertGreater(record.n_failed, 0)
        self.assertFalse(record.reward_skipped)
        row = reward.scores(mdp.root(mdp.prompts[0]))
        self.assertGreater(row[2], 0.0)
        self.assertLess(min(row[0], row[1]), 0.0)

    def test_value_clip_holds(self):
        """Test that learned rewards stay inside the clip box."""
        mdp, experts = small_sort()
        cfg = TrainConfig(
            epochs=3,
            batch_size=4,
            reward_lr=100.0,
            lr_scale=1.0,
            value_clip=0.5,
            reward_grad_clip=1e6,
        )
        _, reward, _ = run_repirl(mdp, experts, cfg)
        for row in reward.rows.values():
            self.assertLessEqual(np.abs(row).max(), 0.5)

    def test_pseudo_expert_buffer(self):
        """Test that promoted rollouts enter a bounded pseudo-expert buffer."""
        mdp, experts = sort_bandit()
        cfg = TrainConfig(
            epochs=20, batch_size=1, pseudo_expert_factor=2, policy_lr=1.0, lr_scale=1.0
        )
        loop = DualLoop(mdp, experts, cfg)
        loop.run()
        self.assertEqual(loop.pseudo_experts.maxlen, 2)
        self.assertTrue(loop.pseudo_experts)
        for traj in loop.pseudo_experts:
            self.assertEqual(traj.source, TrajectorySource.PROMOTED)
            self.assertEqual(traj.outcome, 1.0)

    def test_split_without_promotion(self):
        """Test that correct rollouts are dropped when promotion is off."""
        mdp, experts = sort_bandit()
        loop = DualLoop(mdp, experts, TrainConfig(promote_correct=False))
        correct = Trajectory(0, (2,), behavior_logprobs=(-1.0,), outcome=1.0)
        wrong = Trajectory(0, (1,), behavior_logprobs=(-1.0,), outcome=0.0)
        split = loop.split(mdp.prompts, [[correct, wrong]])
        self.assertEqual(split.policy_failed, [wrong])
        self.assertEqual(split.promoted, [])
        self.assertEqual(len(split.expert_pool), 1)

    def test_prompt_filter_counts(self):
        """Test that a full accuracy band keeps every prompt."""
        mdp, experts = small_sort()
        cfg = TrainConfig(epochs=1, batch_size=4, filter_prompts=True, accuracy_filter=(0.0, 1.0))
        _, _, metrics = run_repirl(mdp, experts, cfg)
        self.assertEqual(metrics.last().n_filtered, 0)

    def test_checkpoints(self):
        """Test that checkpoints are written at the configured interval."""
        mdp, experts = sort_bandit()
        with tempfile.TemporaryDirectory() as tmp:
            cfg = TrainConfig(epochs=4, batch_size=1, checkpoint_interval=2, lr_scale=1.0)
            policy, _, _ = run_repirl(mdp, experts, cfg, output_dir=tmp)
            folder = Path(tmp) / "checkpoints"
            self.assertTrue((folder / "policy-2.ckpt").exists())
            self.assertTrue((folder / "reward-4.ckpt").exists())
            restored = load_checkpoint(folder / "policy-4.ckpt", expected=policy)
            for key, row in policy.rows.items():
                np.testing.assert_array_equal(row, restored.rows[key])
