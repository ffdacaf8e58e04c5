"""
Reward and policy objectives of the dual loop.

Gradients are sparse ``TableGradient`` objects over the rows of the table
being trained. The reward loss is minimized; the policy surrogate is
maximized.
"""
import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy.special import softmax

from apps.core.errors import (
    ConfigurationError,
    EmptyDatasetError,
    GroupTooSmallError,
    MissingLogprobError,
)
from apps.mdp.models import Trajectory
from apps.policies.models import FrozenPolicy, PolicyParams, RewardParams, TableGradient
from apps.policies.sampling import token_rewards
from apps.trainer.models import AdvantageEstimator, BatchSplit, RewardNorm, TrainConfig

logger = logging.getLogger(__name__)

GRPO_EPSILON = 1e-8


def _require_logprobs(traj: Trajectory):
    if traj.behavior_logprobs is None:
        raise MissingLogprobError(
            f"trajectory for prompt {traj.prompt_id} has no behavior log-probabilities"
        )


def importance_log_weight(reward, traj: Trajectory, clip: Optional[float] = 20.0) -> float:
    """log w = sum_t r(s_t, a_t) - sum_t log pi(a_t | s_t), clipped to +-clip."""
    _require_logprobs(traj)
    log_weight = float(token_rewards(reward, traj).sum()) - float(sum(traj.behavior_logprobs))
    if clip is not None:
        log_weight = float(np.clip(log_weight, -clip, clip))
    return log_weight


def normalized_weights(log_weights: Sequence[float]) -> np.ndarray:
    """Self-normalized weights exp(lw) / sum exp(lw)."""
    if len(log_weights) == 0:
        return np.zeros(0)
    return softmax(np.asarray(log_weights, dtype=float))


def effective_sample_size(weights: Sequence[float]) -> float:
    weights = np.asarray(weights, dtype=float)
    if weights.size == 0:
        return 0.0
    weights = weights / weights.sum()
    return float(1.0 / np.square(weights).sum())


def _trajectory_value(reward, traj: Trajectory, norm: str) -> float:
    values = token_rewards(reward, traj)
    if norm == RewardNorm.MEAN:
        return float(values.mean())
    return float(values.sum())


def _add_counts(gradient: TableGradient, reward, traj: Trajectory, scale: float, norm: str):
    if norm == RewardNorm.MEAN:
        scale = scale / len(traj.actions)
    for state, action in traj.steps():
        gradient.add_entry(reward.key(state), action, scale)


@dataclass
class PrmLoss:
    loss: float
    gradient: TableGradient
    grad_norm: float
    weights: np.ndarray


def prm_loss(
    reward: RewardParams, split: BatchSplit, weights: Sequence[float], cfg: TrainConfig
) -> Optional[PrmLoss]:
    """
    L = sum_i w~_i v(tau_i) - mean_j v(tau^_j) over failed rollouts tau_i and
    expert-side trajectories tau^_j, where v is the per-token mean (or sum)
    reward and w~ the self-normalized weights, held constant.

    Returns None when the batch has no failed rollouts.
    """
    if not split.policy_failed:
        return None
    if not split.expert_pool:
        raise ConfigurationError("expert pool is empty for a reward update")
    if len(weights) != len(split.policy_failed):
        raise ValueError(
            f"{len(weights)} weights for {len(split.policy_failed)} failed rollouts"
        )
    if cfg.use_importance_weights:
        weights = np.asarray(weights, dtype=float)
        total = weights.sum()
        if total <= 0:
            raise EmptyDatasetError("importance weights sum to zero")
        normalized = weights / total
    else:
        normalized = np.full(len(split.policy_failed), 1.0 / len(split.policy_failed))

    norm = cfg.loss_reward_norm
    gradient = TableGradient(reward.vocab_size)
    loss = 0.0
    for traj, weight in zip(split.policy_failed, normalized):
        loss += weight * _trajectory_value(reward, traj, norm)
        _add_counts(gradient, reward, traj, float(weight), norm)
    expert_share = 1.0 / len(split.expert_pool)
    for traj in split.expert_pool:
        loss -= expert_share * _trajectory_value(reward, traj, norm)
        _add_counts(gradient, reward, traj, -expert_share, norm)
    clipped, grad_norm = gradient.clip_by_norm(cfg.reward_grad_clip)
    return PrmLoss(float(loss), clipped, grad_norm, normalized)


def advantage_estimates(
    rewards: Sequence[float], mode: str = AdvantageEstimator.RLOO
) -> List[float]:
    """Leave-one-out (rloo) or group-normalized (grpo) advantages of one group."""
    rewards = np.asarray(rewards, dtype=float)
    n = rewards.size
    if n < 2:
        raise GroupTooSmallError(f"advantages need at least 2 rewards per group, got {n}")
    if AdvantageEstimator(mode) == AdvantageEstimator.RLOO:
        baselines = (rewards.sum() - rewards) / (n - 1)
        return (rewards - baselines).tolist()
    return ((rewards - rewards.mean()) / (rewards.std() + GRPO_EPSILON)).tolist()


def combined_reward(
    outcome: float, prm_mean: float, cfg: TrainConfig, well_formed: bool = True
) -> float:
    """Outcome plus lambda times the mean PRM reward, with the optional format penalty."""
    value = cfg.outcome_weight * outcome + cfg.lambda_prm * prm_mean
    if cfg.format_reward and not well_formed:
        value -= 1.0
    return value


@dataclass
class PolicyStats:
    surrogate: float
    entropy: float
    grad_norm: float
    clip_fraction: float
    tokens: int


def policy_gradient(
    policy: PolicyParams,
    old: FrozenPolicy,
    rollouts: Sequence[Trajectory],
    advantages: Sequence[float],
    cfg: TrainConfig,
):
    """
    Gradient of mean_t[min(rho A, clip(rho) A)] + entropy_coef mean_t[H] with
    respect to the policy logits. Returns (gradient, stats) before clipping.
    """
    if len(rollouts) != len(advantages):
        raise ValueError(f"{len(advantages)} advantages for {len(rollouts)} rollouts")
    gradient = TableGradient(policy.vocab_size)
    low, high = 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio
    surrogate = entropy = 0.0
    clipped = tokens = 0
    for traj, advantage in zip(rollouts, advantages):
        _require_logprobs(traj)
        for state, action in traj.steps():
            log_probs = policy.log_distribution(state)
            probabilities = np.exp(log_probs)
            ratio = float(np.exp(log_probs[action] - old.log_distribution(state)[action]))
            unclipped = ratio * advantage
            bounded = float(np.clip(ratio, low, high)) * advantage
            key = policy.key(state)
            if bounded < unclipped:
                surrogate += bounded
                clipped += 1
            else:
                surrogate += unclipped
                direction = -probabilities
                direction[action] += 1.0
                gradient.add(key, direction, unclipped)
            token_entropy = float(-(probabilities * log_probs).sum())
            entropy += token_entropy
            if cfg.entropy_coef:
                gradient.add(key, -probabilities * (log_probs + token_entropy), cfg.entropy_coef)
            tokens += 1
    if tokens == 0:
        return gradient, PolicyStats(0.0, 0.0, 0.0, 0.0, 0)
    gradient = gradient.scaled(1.0 / tokens)
    stats = PolicyStats(
        surrogate=surrogate / tokens,
        entropy=entropy / tokens,
        grad_norm=gradient.norm(),
        clip_fraction=clipped / tokens,
        tokens=tokens,
    )
    return gradient, stats


def policy_update(
    policy: PolicyParams,
    old: FrozenPolicy,
    rollouts: Sequence[Trajectory],
    advantages: Sequence[float],
    cfg: TrainConfig,
):
    """One clipped-surrogate ascent step on ``policy`` in place; returns (policy, stats)."""
    gradient, stats = policy_gradient(policy, old, rollouts, advantages, cfg)
    if stats.tokens:
        clipped, _ = gradient.clip_by_norm(cfg.policy_grad_clip)
        policy.apply_gradient(clipped, cfg.policy_step)
    return policy, stats


def prompt_filter(per_prompt_accuracy: Dict[int, float], cfg: TrainConfig) -> set:
    """Prompt ids whose accuracy lies in [low, high]."""
    low, high = cfg.accuracy_filter
    return {
        prompt_id
        for prompt_id, accuracy in per_prompt_accuracy.items()
        if low <= accuracy <= high
    }


@dataclass
class GradientEstimate:
    estimate: TableGradient
    stderr: TableGradient
    ess: float


def _distinct(samples: Iterable[Trajectory]) -> Dict[int, Dict[tuple, list]]:
    """prompt id -> actions -> [trajectory, copies]."""
    groups: Dict[int, Dict[tuple, list]] = defaultdict(dict)
    for traj in samples:
        entry = groups[traj.prompt_id].get(traj.actions)
        if entry is None:
            groups[traj.prompt_id][traj.actions] = [traj, 1]
        else:
            entry[1] += 1
    return groups


def _step_counts(reward, trajectories: Sequence[Trajectory]):
    """
    Visit counts of every (context key, action) column of ``reward``, one row
    per trajectory. Returns (columns, counts).
    """
    columns: Dict[tuple, int] = {}
    cells = []
    for row, traj in enumerate(trajectories):
        for state, action in traj.steps():
            column = columns.setdefault((reward.key(state), action), len(columns))
            cells.append((row, column))
    counts = np.zeros((len(trajectories), len(columns)))
    if cells:
        rows, cols = np.array(cells).T
        np.add.at(counts, (rows, cols), 1.0)
    return list(columns), counts


def importance_sampled_gradient(
    reward, expert: Sequence[Trajectory], samples: Iterable[Trajectory]
) -> GradientEstimate:
    """
    Self-normalized estimate of E_expert[grad r] - E_soft-opt[grad r] from
    rollouts carrying behavior log-probabilities, with delta-method standard
    errors per coordinate. Samples are normalized within each prompt.

    Repeated rollouts are scored once and weighted by their copy count.
    """
    if not expert:
        raise EmptyDatasetError("expert set is empty")
    groups = _distinct(samples)
    expert_mass = defaultdict(float)
    estimate = TableGradient(reward.vocab_size)
    for traj in expert:
        expert_mass[traj.prompt_id] += 1.0 / len(expert)
        _add_counts(estimate, reward, traj, 1.0 / len(expert), RewardNorm.SUM)

    variance = TableGradient(reward.vocab_size)
    ess = []
    for prompt_id, mass in expert_mass.items():
        group = groups.get(prompt_id)
        if not group:
            raise EmptyDatasetError(f"no samples for prompt {prompt_id}")
        distinct = [traj for traj, _ in group.values()]
        copies = np.array([count for _, count in group.values()], dtype=float)
        log_weights = np.array([importance_log_weight(reward, t, clip=None) for t in distinct])
        shares = normalized_weights(log_weights + np.log(copies))
        # squared weight of a single copy, summed over copies
        squared = np.square(shares) / copies
        ess.append(float(1.0 / squared.sum()))
        columns, counts = _step_counts(reward, distinct)
        mean = shares @ counts
        spread = squared @ np.square(counts - mean)
        for (key, action), center, value in zip(columns, mean, spread):
            estimate.add_entry(key, action, -mass * center)
            variance.add_entry(key, action, mass**2 * value)
    stderr = TableGradient(reward.vocab_size)
    for key, row in variance.rows.items():
        stderr.rows[key] = np.sqrt(row)
    return GradientEstimate(estimate, stderr, float(np.mean(ess)))
