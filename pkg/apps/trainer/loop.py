"""
The dual reward/policy loop.

Each iteration samples rollouts for a batch of prompts, verifies them,
splits failed rollouts from the expert side (dataset experts, buffered
pseudo-experts and promoted correct rollouts), updates the reward, scores
the rollouts with the updated reward and takes a clipped policy step on
leave-one-out (or group-normalized) advantages.
"""
import logging
import math
from collections import defaultdict, deque
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from apps.core.errors import ConfigurationError
from apps.core.random import derive_seed, stream
from apps.evaluation.metrics import pass_at_1
from apps.mdp.environment import is_well_formed, label
from apps.mdp.models import Prompt, TokenMdp, Trajectory, TrajectorySource
from apps.policies.checkpoints import save_checkpoint
from apps.policies.models import PolicyParams, RewardParams
from apps.policies.sampling import policy_entropy, sample_rollouts, trajectory_reward
from apps.trainer.losses import (
    advantage_estimates,
    combined_reward,
    effective_sample_size,
    importance_log_weight,
    normalized_weights,
    policy_update,
    prm_loss,
    prompt_filter,
)
from apps.trainer.models import BatchSplit, IterationRecord, RunMetrics, TrainConfig

logger = logging.getLogger(__name__)


def prompt_batches(mdp: TokenMdp, cfg: TrainConfig, epoch: int) -> List[List[Prompt]]:
    """The prompts of ``mdp`` shuffled by (seed, epoch) and cut into batches."""
    order = stream(cfg.seed, 0, epoch).permutation(len(mdp.prompts))
    prompts = [mdp.prompts[int(i)] for i in order]
    size = max(1, cfg.batch_size)
    return [prompts[start : start + size] for start in range(0, len(prompts), size)]


def total_iterations(mdp: TokenMdp, cfg: TrainConfig) -> int:
    return math.ceil(len(mdp.prompts) / max(1, cfg.batch_size)) * cfg.epochs


def should_evaluate(cfg: TrainConfig, iteration: int, total: int) -> bool:
    """Evaluate every ``eval_interval`` iterations and always after the last one."""
    if iteration + 1 == total:
        return True
    return cfg.eval_interval > 0 and (iteration + 1) % cfg.eval_interval == 0


class RewardStep:
    """No reward learning; the policy sees the outcome (and a fixed PRM if any)."""

    name = "none"
    needs_experts = False

    def update(
        self,
        loop: "DualLoop",
        batch: Sequence[Prompt],
        split: BatchSplit,
        record: IterationRecord,
    ):
        record.reward_skipped = True

    def score(self, loop: "DualLoop", traj: Trajectory) -> float:
        """Mean per-token process reward used in the combined reward."""
        return trajectory_reward(loop.reward, traj)[1]


class IrlRewardStep(RewardStep):
    """Importance-weighted maximum-likelihood step on the reward table."""

    name = "irl"
    needs_experts = True

    def update(self, loop, batch, split, record):
        cfg = loop.cfg
        if cfg.freeze_reward:
            record.reward_skipped = True
            return
        if not split.policy_failed:
            logger.warning(
                f"Iteration {record.iteration}: no failed rollouts, reward update skipped"
            )
            record.reward_skipped = True
            return
        if not split.expert_pool:
            raise ConfigurationError(
                f"iteration {record.iteration}: no expert trajectories for the batch prompts"
            )
        log_weights = [
            importance_log_weight(loop.reward, traj, cfg.weight_log_clip)
            for traj in split.policy_failed
        ]
        weights = normalized_weights(log_weights)
        record.ess = (
            effective_sample_size(weights)
            if cfg.use_importance_weights
            else float(len(split.policy_failed))
        )
        result = prm_loss(loop.reward, split, weights, cfg)
        loop.reward.apply_gradient(result.gradient, -cfg.reward_step)
        record.prm_loss = result.loss
        record.reward_grad_norm = result.grad_norm


class DualLoop:
    """Runs the dual loop over ``mdp`` for ``cfg.epochs`` passes over the prompts."""

    def __init__(
        self,
        mdp: TokenMdp,
        experts: Sequence[Trajectory],
        cfg: TrainConfig,
        reward_step: Optional[RewardStep] = None,
        eval_mdp: Optional[TokenMdp] = None,
        policy: Optional[PolicyParams] = None,
        reward: Optional[RewardParams] = None,
        output_dir=None,
    ):
        self.mdp = mdp
        self.cfg = cfg
        self.reward_step = reward_step or IrlRewardStep()
        self.eval_mdp = eval_mdp if eval_mdp is not None and eval_mdp.prompts else mdp
        self.output_dir = Path(output_dir) if output_dir is not None else None
        self.policy = policy if policy is not None else PolicyParams(
            mdp.vocab_size, cfg.context_order, cfg.policy_repr, cfg.table_size
        )
        if reward is None:
            order, representation, size = cfg.reward_shape()
            reward = RewardParams(
                mdp.vocab_size, order, representation, size, value_clip=cfg.value_clip
            )
        self.reward = reward
        self.experts = [mdp.attach(traj) for traj in experts]
        self.experts_by_prompt = defaultdict(list)
        for traj in self.experts:
            self.experts_by_prompt[traj.prompt_id].append(traj)
        capacity = max(1, cfg.pseudo_expert_factor * max(len(self.experts), 1))
        self.pseudo_experts = deque(maxlen=capacity)
        self.metrics = RunMetrics()

    def batches(self, epoch: int) -> List[List[Prompt]]:
        return prompt_batches(self.mdp, self.cfg, epoch)

    def total_iterations(self) -> int:
        return total_iterations(self.mdp, self.cfg)

    def collect(self, batch: Sequence[Prompt], iteration: int) -> List[List[Trajectory]]:
        """Labelled rollouts per prompt, in batch order, for any worker count."""
        seed = derive_seed(self.cfg.seed, 1, iteration)

        def work(prompt):
            rollouts = sample_rollouts(self.policy, self.mdp, prompt, self.cfg.n_rollouts, seed)
            return [label(self.mdp, traj) for traj in rollouts]

        if self.cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.workers) as pool:
                return list(pool.map(work, batch))
        return [work(prompt) for prompt in batch]

    def split(self, batch: Sequence[Prompt], groups: List[List[Trajectory]]) -> BatchSplit:
        batch_ids = {prompt.id for prompt in batch}
        split = BatchSplit()
        for group in groups:
            split.rollouts.extend(group)
            for traj in group:
                if traj.outcome == 1.0:
                    if self.cfg.promote_correct:
                        split.promoted.append(traj.with_source(TrajectorySource.PROMOTED))
                else:
                    split.policy_failed.append(traj)
        for prompt in batch:
            split.expert_pool.extend(self.experts_by_prompt.get(prompt.id, ()))
        split.expert_pool.extend(t for t in self.pseudo_experts if t.prompt_id in batch_ids)
        split.expert_pool.extend(split.promoted)
        return split

    def step(self, batch: Sequence[Prompt], iteration: int, epoch: int) -> IterationRecord:
        cfg = self.cfg
        record = IterationRecord(iteration=iteration, epoch=epoch, lr_scale=cfg.lr_scale)
        old = self.policy.freeze()
        groups = self.collect(batch, iteration)
        rollouts = [traj for group in groups for traj in group]
        split = self.split(batch, groups)
        record.n_failed = len(split.policy_failed)
        record.n_promoted = len(split.promoted)
        record.outcome_mean = float(np.mean([traj.outcome for traj in rollouts]))

        self.reward_step.update(self, batch, split, record)
        if cfg.promote_correct:
            self.pseudo_experts.extend(split.promoted)

        prm_means = {}
        kept_rollouts, kept_advantages = [], []
        accuracy = {}
        advantages_by_prompt = {}
        for prompt, group in zip(batch, groups):
            rewards = []
            for traj in group:
                prm_mean = self.reward_step.score(self, traj)
                prm_means[id(traj)] = prm_mean
                well_formed = is_well_formed(self.mdp, traj) if cfg.format_reward else True
                rewards.append(combined_reward(traj.outcome, prm_mean, cfg, well_formed))
            advantages_by_prompt[prompt.id] = advantage_estimates(rewards, cfg.adv_estimator)
            accuracy[prompt.id] = float(np.mean([traj.outcome for traj in group]))
        retained = prompt_filter(accuracy, cfg) if cfg.filter_prompts else set(accuracy)
        record.n_filtered = len(batch) - len(retained)
        for prompt, group in zip(batch, groups):
            if prompt.id in retained:
                kept_rollouts.extend(group)
                kept_advantages.extend(advantages_by_prompt[prompt.id])
        record.prm_policy_mean = float(np.mean(list(prm_means.values())))
        if split.expert_pool:
            record.prm_expert_mean = float(
                np.mean([self.reward_step.score(self, traj) for traj in split.expert_pool])
            )

        if kept_rollouts:
            for _ in range(max(1, cfg.policy_epochs)):
                _, stats = policy_update(self.policy, old, kept_rollouts, kept_advantages, cfg)
            record.surrogate = stats.surrogate
            record.entropy = stats.entropy
            record.policy_grad_norm = stats.grad_norm
        else:
            logger.warning(f"Iteration {iteration}: prompt filter removed every prompt")
            record.entropy = float(
                np.mean([policy_entropy(self.policy, s) for t in rollouts for s in t.states()])
            )
        return record

    def should_evaluate(self, iteration: int, total: int) -> bool:
        return should_evaluate(self.cfg, iteration, total)

    def checkpoint(self, tag: str):
        if self.output_dir is None:
            return
        folder = self.output_dir / "checkpoints"
        save_checkpoint(self.policy, folder / f"policy-{tag}.ckpt")
        save_checkpoint(self.reward, folder / f"reward-{tag}.ckpt")

    def run(self) -> Tuple[PolicyParams, RewardParams, RunMetrics]:
        cfg = self.cfg
        if cfg.epochs <= 0:
            return self.policy, self.reward, self.metrics
        if self.reward_step.needs_experts and not self.experts:
            raise ConfigurationError("the expert dataset is empty")
        total = self.total_iterations()
        logger.info(
            f"Training {self.reward_step.name} loop: {len(self.mdp.prompts)} prompts, "
            f"{cfg.epochs} epochs, {total} iterations"
        )
        iteration = 0
        for epoch in range(cfg.epochs):
            for batch in self.batches(epoch):
                record = self.step(batch, iteration, epoch)
                if self.should_evaluate(iteration, total):
                    record.pass_at_1 = pass_at_1(self.policy, self.eval_mdp)
                self.metrics.append(record)
                if cfg.log_interval and (iteration + 1) % cfg.log_interval == 0:
                    logger.info(
                        f"iter {iteration + 1}/{total} outcome={record.outcome_mean:.3f} "
                        f"prm_loss={record.prm_loss:.4f} ess={record.ess:.2f} "
                        f"entropy={record.entropy:.3f} pass@1={record.pass_at_1:.3f}"
                    )
                logger.debug(
                    f"iter {iteration}: failed={record.n_failed} promoted={record.n_promoted} "
                    f"skipped={record.reward_skipped}"
                )
                if cfg.checkpoint_interval and (iteration + 1) % cfg.checkpoint_interval == 0:
                    self.checkpoint(str(iteration + 1))
                iteration += 1
        return self.policy, self.reward, self.metrics


def run_repirl(
    mdp: TokenMdp,
    experts: Sequence[Trajectory],
    cfg: TrainConfig,
    eval_mdp: Optional[TokenMdp] = None,
    output_dir=None,
    reward: Optional[RewardParams] = None,
    policy: Optional[PolicyParams] = None,
) -> Tuple[PolicyParams, RewardParams, RunMetrics]:
    """Train a PRM and a policy jointly; returns (policy, reward, metrics)."""
    loop = DualLoop(
        mdp,
        experts,
        cfg,
        IrlRewardStep(),
        eval_mdp=eval_mdp,
        policy=policy,
        reward=reward,
        output_dir=output_dir,
    )
    return loop.run()
