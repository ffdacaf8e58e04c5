"""
Reward steps that plug the online baselines into the dual loop.
"""
import dataclasses
import logging
from typing import Optional

from apps.baselines.adversarial import gan_discriminator_objective, gan_irl_gradient, sample_mixture
from apps.baselines.data import label_steps
from apps.baselines.losses import mcts_prm_loss, prime_prm_loss
from apps.core.random import derive_seed
from apps.oracle.exact import exact_partition
from apps.trainer.loop import RewardStep

logger = logging.getLogger(__name__)


class PrimeRewardStep(RewardStep):
    """Difference of exponential means, without importance weights."""

    name = "prime"

    def update(self, loop, batch, split, record):
        cfg = loop.cfg
        if cfg.freeze_reward or not split.policy_failed or not split.expert_pool:
            record.reward_skipped = True
            return
        objective = prime_prm_loss(
            loop.reward, split.expert_pool, split.policy_failed, cfg.weight_log_clip
        )
        gradient, norm = objective.gradient.clip_by_norm(cfg.reward_grad_clip)
        loop.reward.apply_gradient(gradient, -cfg.reward_step)
        record.prm_loss = objective.loss
        record.reward_grad_norm = norm


class MathShepherdRewardStep(RewardStep):
    """Cross-entropy fit of the reward to completion-based step labels."""

    name = "mcts_prm"

    def __init__(self, k: int = 8, exact: Optional[bool] = None):
        self.k = k
        self.exact = exact

    def update(self, loop, batch, split, record):
        cfg = loop.cfg
        if cfg.freeze_reward or not split.rollouts:
            record.reward_skipped = True
            return
        labeled = label_steps(
            loop.mdp,
            loop.policy,
            split.rollouts,
            self.k,
            derive_seed(cfg.seed, 5, record.iteration),
            exact=self.exact,
        )
        objective = mcts_prm_loss(loop.reward, labeled)
        gradient, norm = objective.gradient.clip_by_norm(cfg.reward_grad_clip)
        loop.reward.apply_gradient(gradient, -cfg.reward_step)
        record.prm_loss = objective.loss
        record.reward_grad_norm = norm


class GanIrlRewardStep(RewardStep):
    """Discriminator-form gradient with samples from the soft-opt/policy mixture."""

    name = "gan_irl"
    needs_experts = True

    def update(self, loop, batch, split, record):
        cfg = loop.cfg
        if cfg.freeze_reward or not split.expert_pool:
            record.reward_skipped = True
            return
        sub_mdp = dataclasses.replace(loop.mdp, prompts=tuple(batch))
        log_z = exact_partition(sub_mdp, loop.reward).per_prompt
        seed = derive_seed(cfg.seed, 6, record.iteration)
        samples = []
        for prompt in batch:
            samples.extend(
                sample_mixture(
                    sub_mdp, loop.reward, loop.policy, prompt, cfg.n_rollouts, seed, log_z
                )
            )
        gradient = gan_irl_gradient(loop.reward, split.expert_pool, samples, log_z)
        gradient, norm = gradient.clip_by_norm(cfg.reward_grad_clip)
        record.prm_loss = -gan_discriminator_objective(
            loop.reward, loop.policy, split.expert_pool, split.rollouts, log_z
        )
        loop.reward.apply_gradient(gradient, cfg.reward_step)
        record.reward_grad_norm = norm
