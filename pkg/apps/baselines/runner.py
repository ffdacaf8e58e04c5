"""
Training harness for the baseline methods.

Online methods (prime, mcts_prm, rloo, gan_irl) run the dual loop with their
own reward step. Offline methods (bc, dpo, dqo) fit the policy to fixed data
with the same batching, seeding, evaluation and metrics as the dual loop.
"""
import dataclasses
import logging
import math
from collections import defaultdict
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from apps.baselines.data import annotate_transitions, build_preference_pairs
from apps.baselines.losses import bc_loss, dpo_batch_loss, dqo_reparameterized_loss
from apps.baselines.models import BaselineConfig, BaselineMethod, SoftCritics
from apps.baselines.steps import GanIrlRewardStep, MathShepherdRewardStep, PrimeRewardStep
from apps.core.errors import AnnotationRequiredError, ConfigurationError
from apps.core.random import derive_seed
from apps.evaluation.metrics import pass_at_1
from apps.mdp.models import Prompt, TokenMdp, Trajectory
from apps.policies.checkpoints import save_checkpoint
from apps.policies.models import PolicyParams, RewardParams
from apps.policies.sampling import sample_rollouts
from apps.trainer.loop import (
    DualLoop,
    RewardStep,
    prompt_batches,
    should_evaluate,
    total_iterations,
)
from apps.trainer.models import IterationRecord, RunMetrics, TrainConfig

logger = logging.getLogger(__name__)


class OfflineLoop:
    """Fits the policy to a fixed dataset, one batch of prompts per iteration."""

    name = "offline"

    def __init__(
        self,
        mdp: TokenMdp,
        experts: Sequence[Trajectory],
        cfg: TrainConfig,
        baseline: Optional[BaselineConfig] = None,
        eval_mdp: Optional[TokenMdp] = None,
        policy: Optional[PolicyParams] = None,
        output_dir=None,
    ):
        self.mdp = mdp
        self.cfg = cfg
        self.baseline = baseline or BaselineConfig()
        self.eval_mdp = eval_mdp if eval_mdp is not None and eval_mdp.prompts else mdp
        self.output_dir = Path(output_dir) if output_dir is not None else None
        self.policy = policy if policy is not None else PolicyParams(
            mdp.vocab_size, cfg.context_order, cfg.policy_repr, cfg.table_size
        )
        self.experts = [mdp.attach(traj) for traj in experts]
        self.experts_by_prompt = defaultdict(list)
        for traj in self.experts:
            self.experts_by_prompt[traj.prompt_id].append(traj)
        self.metrics = RunMetrics()

    def prepare(self):
        """Build method-specific data before the first iteration."""

    def update(self, batch: Sequence[Prompt], record: IterationRecord) -> float:
        raise NotImplementedError

    def descend(self, gradient, record: IterationRecord):
        clipped, norm = gradient.clip_by_norm(self.cfg.policy_grad_clip)
        self.policy.apply_gradient(clipped, -self.cfg.policy_step)
        record.policy_grad_norm = norm

    def batch_experts(self, batch: Sequence[Prompt]) -> List[Trajectory]:
        return [traj for prompt in batch for traj in self.experts_by_prompt.get(prompt.id, ())]

    def run(self) -> Tuple[PolicyParams, Optional[RewardParams], RunMetrics]:
        cfg = self.cfg
        if cfg.epochs <= 0:
            return self.policy, None, self.metrics
        if not self.experts:
            raise ConfigurationError("the expert dataset is empty")
        self.prepare()
        total = total_iterations(self.mdp, cfg)
        logger.info(f"Training {self.name}: {len(self.mdp.prompts)} prompts, {total} iterations")
        iteration = 0
        for epoch in range(cfg.epochs):
            for batch in prompt_batches(self.mdp, cfg, epoch):
                record = IterationRecord(
                    iteration=iteration, epoch=epoch, lr_scale=cfg.lr_scale, reward_skipped=True
                )
                record.policy_loss = self.update(batch, record)
                if should_evaluate(cfg, iteration, total):
                    record.pass_at_1 = pass_at_1(self.policy, self.eval_mdp)
                self.metrics.append(record)
                if cfg.log_interval and (iteration + 1) % cfg.log_interval == 0:
                    logger.info(
                        f"iter {iteration + 1}/{total} loss={record.policy_loss:.4f} "
                        f"pass@1={record.pass_at_1:.3f}"
                    )
                if cfg.checkpoint_interval and (iteration + 1) % cfg.checkpoint_interval == 0:
                    if self.output_dir is not None:
                        save_checkpoint(
                            self.policy,
                            self.output_dir / "checkpoints" / f"policy-{iteration + 1}.ckpt",
                        )
                iteration += 1
        return self.policy, None, self.metrics


class BcLoop(OfflineLoop):
    name = BaselineMethod.BC

    def update(self, batch, record):
        experts = self.batch_experts(batch)
        if not experts:
            return math.nan
        objective = bc_loss(self.policy, experts)
        self.descend(objective.gradient, record)
        return objective.loss


class DpoLoop(OfflineLoop):
    name = BaselineMethod.DPO

    def prepare(self):
        self.ref = self.policy.freeze()
        self.pairs = build_preference_pairs(
            self.mdp,
            self.experts,
            self.ref,
            self.cfg.n_rollouts,
            derive_seed(self.cfg.seed, 7),
        )
        if not self.pairs:
            raise AnnotationRequiredError("no preference pairs: every reference rollout verified")
        self.pairs_by_prompt = defaultdict(list)
        for pair in self.pairs:
            self.pairs_by_prompt[pair.prompt_id].append(pair)
        logger.info(f"Built {len(self.pairs)} preference pairs")

    def update(self, batch, record):
        pairs = [pair for prompt in batch for pair in self.pairs_by_prompt.get(prompt.id, ())]
        if not pairs:
            return math.nan
        objective = dpo_batch_loss(self.policy, self.ref, pairs, self.baseline.dpo_beta)
        self.descend(objective.gradient, record)
        return objective.loss


class DqoLoop(OfflineLoop):
    """
    Offline soft actor-critic on hidden-reward transitions of the experts and
    of reference-policy rollouts, with Q reparameterized through the policy.
    """

    name = BaselineMethod.DQO

    def prepare(self):
        ref = self.policy.freeze()
        seed = derive_seed(self.cfg.seed, 8)
        data = list(self.experts)
        for prompt in self.mdp.prompts:
            data.extend(sample_rollouts(ref, self.mdp, prompt, self.cfg.n_rollouts, seed))
        transitions = annotate_transitions(self.mdp, data)
        self.transitions_by_prompt = defaultdict(list)
        for step in transitions:
            self.transitions_by_prompt[step.state.prompt_id].append(step)
        order, _, _ = self.cfg.reward_shape()
        self.critics = SoftCritics(self.mdp.vocab_size, order)
        logger.info(f"Annotated {len(transitions)} transitions")

    def update(self, batch, record):
        transitions = [
            step for prompt in batch for step in self.transitions_by_prompt.get(prompt.id, ())
        ]
        if not transitions:
            return math.nan
        loss, value_gradient, policy_gradient = dqo_reparameterized_loss(
            self.critics, self.policy, transitions, self.cfg.beta
        )
        self.critics.apply_value_gradient(value_gradient, -self.cfg.reward_step)
        self.descend(policy_gradient, record)
        return loss


OFFLINE_LOOPS = {
    BaselineMethod.BC: BcLoop,
    BaselineMethod.DPO: DpoLoop,
    BaselineMethod.DQO: DqoLoop,
}


def online_reward_step(baseline: BaselineConfig) -> RewardStep:
    if baseline.method == BaselineMethod.PRIME:
        return PrimeRewardStep()
    if baseline.method == BaselineMethod.MCTS_PRM:
        return MathShepherdRewardStep(baseline.mcts_k, baseline.mcts_exact)
    if baseline.method == BaselineMethod.GAN_IRL:
        return GanIrlRewardStep()
    return RewardStep()


def run_baseline(
    method: str,
    mdp: TokenMdp,
    experts: Sequence[Trajectory],
    cfg: TrainConfig,
    baseline: Optional[BaselineConfig] = None,
    eval_mdp: Optional[TokenMdp] = None,
    output_dir=None,
    policy: Optional[PolicyParams] = None,
    reward: Optional[RewardParams] = None,
) -> Tuple[PolicyParams, Optional[RewardParams], RunMetrics]:
    """Train ``method`` on ``mdp``; returns (policy, reward or None, metrics)."""
    method = BaselineMethod(method)
    baseline = dataclasses.replace(baseline or BaselineConfig(), method=method)
    if method == BaselineMethod.MCTS_PRM and not mdp.task.has_verifier:
        raise AnnotationRequiredError(f"task {mdp.task_kind} has no verifier for step labels")
    loop_class = OFFLINE_LOOPS.get(method)
    if loop_class is not None:
        loop = loop_class(
            mdp,
            experts,
            cfg,
            baseline,
            eval_mdp=eval_mdp,
            policy=policy,
            output_dir=output_dir,
        )
        return loop.run()
    loop = DualLoop(
        mdp,
        experts,
        cfg,
        online_reward_step(baseline),
        eval_mdp=eval_mdp,
        policy=policy,
        reward=reward,
        output_dir=output_dir,
    )
    return loop.run()

