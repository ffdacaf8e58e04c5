"""
Objectives of the baseline methods.

Each loss returns an ``Objective`` whose gradient is taken with respect to
the table being trained (policy logits or reward entries). Losses are
minimized.
"""
import logging
from collections import defaultdict
from typing import Dict, Hashable, List, Sequence, Tuple

import numpy as np
from scipy.special import expit, logsumexp

from apps.baselines.models import Objective, PreferencePair, SoftCritics, Transition
from apps.core.errors import (
    AnnotationRequiredError,
    EmptyDatasetError,
    LabelRangeError,
    StepIndexError,
)
from apps.mdp.models import State, Trajectory
from apps.policies.models import FrozenPolicy, PolicyParams, RewardParams, TableGradient
from apps.policies.sampling import token_logprobs, token_rewards

logger = logging.getLogger(__name__)


def _add_score_gradient(gradient: TableGradient, policy: PolicyParams, traj: Trajectory, scale):
    """gradient += scale * d log pi(traj) / d logits."""
    for state, action in traj.steps():
        direction = -policy.distribution(state)
        direction[action] += 1.0
        gradient.add(policy.key(state), direction, scale)


def bc_loss(policy: PolicyParams, expert: Sequence[Trajectory]) -> Objective:
    """Mean over expert tokens of -log pi(a_t | s_t)."""
    tokens = sum(len(traj.actions) for traj in expert)
    if not expert or tokens == 0:
        raise EmptyDatasetError("behavioral cloning needs at least one expert token")
    gradient = TableGradient(policy.vocab_size)
    loss = 0.0
    for traj in expert:
        loss -= float(token_logprobs(policy, traj).sum())
        _add_score_gradient(gradient, policy, traj, -1.0 / tokens)
    return Objective(loss / tokens, gradient)


def sequence_log_ratio(policy: PolicyParams, ref: FrozenPolicy, traj: Trajectory) -> float:
    """log pi(traj) - log pi_ref(traj)."""
    return float(token_logprobs(policy, traj).sum() - token_logprobs(ref, traj).sum())


def dpo_loss(
    policy: PolicyParams, ref: FrozenPolicy, pair: PreferencePair, beta: float = 1.0
) -> Objective:
    """-log sigmoid(beta * (delta_chosen - delta_rejected))."""
    margin = beta * (
        sequence_log_ratio(policy, ref, pair.chosen)
        - sequence_log_ratio(policy, ref, pair.rejected)
    )
    loss = float(np.logaddexp(0.0, -margin))
    slope = -beta * float(expit(-margin))
    gradient = TableGradient(policy.vocab_size)
    _add_score_gradient(gradient, policy, pair.chosen, slope)
    _add_score_gradient(gradient, policy, pair.rejected, -slope)
    return Objective(loss, gradient)


def dpo_batch_loss(
    policy: PolicyParams, ref: FrozenPolicy, pairs: Sequence[PreferencePair], beta: float = 1.0
) -> Objective:
    if not pairs:
        raise EmptyDatasetError("no preference pairs")
    gradient = TableGradient(policy.vocab_size)
    loss = 0.0
    for pair in pairs:
        single = dpo_loss(policy, ref, pair, beta)
        loss += single.loss / len(pairs)
        gradient.merge(single.gradient, 1.0 / len(pairs))
    return Objective(loss, gradient)


def dqo_losses(
    critics: SoftCritics,
    policy: PolicyParams,
    transitions: Sequence[Transition],
    beta: float = 1.0,
) -> Tuple[float, float]:
    """
    (L_V, L_Q): mean squared residuals of V(s) - Q(s, a) + beta log pi(a | s)
    and Q(s, a) - r(s, a) - V(s'), with V = 0 past a terminal step.
    """
    if not transitions:
        raise EmptyDatasetError("no transitions")
    value_loss = q_loss = 0.0
    for step in transitions:
        if step.reward is None:
            raise AnnotationRequiredError("transition has no per-step reward")
        q = critics.q_row(step.state)[step.action]
        log_prob = policy.log_distribution(step.state)[step.action]
        next_value = 0.0 if step.terminal else critics.value(step.next_state)
        value_loss += (critics.value(step.state) - q + beta * log_prob) ** 2
        q_loss += (q - step.reward - next_value) ** 2
    return value_loss / len(transitions), q_loss / len(transitions)


def dqo_reparameterized_loss(
    critics: SoftCritics,
    policy: PolicyParams,
    transitions: Sequence[Transition],
    beta: float = 1.0,
) -> Tuple[float, Dict[Hashable, float], TableGradient]:
    """
    L_Q with Q(s, a) = V(s) + beta log pi(a | s) substituted, which makes L_V
    vanish identically. Returns (loss, value gradient, policy gradient).
    """
    if not transitions:
        raise EmptyDatasetError("no transitions")
    scale = 1.0 / len(transitions)
    value_gradient: Dict[Hashable, float] = defaultdict(float)
    policy_gradient = TableGradient(policy.vocab_size)
    loss = 0.0
    for step in transitions:
        if step.reward is None:
            raise AnnotationRequiredError("transition has no per-step reward")
        probabilities = policy.distribution(step.state)
        next_value = 0.0 if step.terminal else critics.value(step.next_state)
        residual = (
            critics.value(step.state)
            + beta * float(np.log(probabilities[step.action]))
            - step.reward
            - next_value
        )
        loss += scale * residual**2
        value_gradient[critics.key(step.state)] += 2.0 * scale * residual
        if not step.terminal:
            value_gradient[critics.key(step.next_state)] -= 2.0 * scale * residual
        direction = -probabilities
        direction[step.action] += 1.0
        policy_gradient.add(policy.key(step.state), direction, 2.0 * scale * residual * beta)
    return loss, dict(value_gradient), policy_gradient


def prime_implicit_reward(
    policy: PolicyParams, ref: FrozenPolicy, traj: Trajectory, t: int, beta: float = 1.0
) -> float:
    """
    beta * (sum_{i<=t} log ratio - sum_{i<=t-1} log ratio) for 1 <= t <= len,
    which telescopes to beta * log(pi(y_t) / pi_ref(y_t)).
    """
    if not 1 <= t <= len(traj.actions):
        raise StepIndexError(f"step {t} outside 1..{len(traj.actions)}")
    ratios = token_logprobs(policy, traj) - token_logprobs(ref, traj)
    return float(beta * (ratios[:t].sum() - ratios[: t - 1].sum()))


class ImplicitRewardScorer:
    """beta * log(pi / pi_ref) as a per-step scorer."""

    def __init__(self, policy: PolicyParams, ref: FrozenPolicy, beta: float = 1.0):
        self.policy = policy
        self.ref = ref
        self.beta = beta

    def score(self, state: State, action: int) -> float:
        return float(
            self.beta
            * (
                self.policy.log_distribution(state)[action]
                - self.ref.log_distribution(state)[action]
            )
        )


def _exp_mean(reward, trajectories: Sequence[Trajectory], clip: float) -> Tuple[float, List]:
    """mean exp(min(r(tau), clip)) in the log domain, with per-sample weights."""
    totals = np.array([token_rewards(reward, traj).sum() for traj in trajectories])
    clipped = np.minimum(totals, clip)
    log_weights = clipped - np.log(len(trajectories))
    value = float(np.exp(logsumexp(log_weights)))
    weights = np.where(totals < clip, np.exp(log_weights), 0.0)
    return value, list(weights)


def prime_prm_loss(
    reward: RewardParams,
    expert_side: Sequence[Trajectory],
    policy_side: Sequence[Trajectory],
    clip: float = 20.0,
) -> Objective:
    """
    Negated E_expert[exp r(tau)] - E_policy[exp r(tau)], with r(tau) the summed
    per-token reward clipped at ``clip`` before exponentiation.
    """
    if not expert_side or not policy_side:
        raise EmptyDatasetError("both sides of the PRIME objective need trajectories")
    expert_value, expert_weights = _exp_mean(reward, expert_side, clip)
    policy_value, policy_weights = _exp_mean(reward, policy_side, clip)
    gradient = TableGradient(reward.vocab_size)
    for traj, weight in zip(expert_side, expert_weights):
        for state, action in traj.steps():
            gradient.add_entry(reward.key(state), action, -weight)
    for traj, weight in zip(policy_side, policy_weights):
        for state, action in traj.steps():
            gradient.add_entry(reward.key(state), action, weight)
    return Objective(-(expert_value - policy_value), gradient)


def mcts_prm_loss(reward: RewardParams, labeled: Sequence[Tuple[State, int, float]]) -> Objective:
    """Mean binary cross-entropy between sigmoid(r(s, a)) and completion labels."""
    if not labeled:
        raise EmptyDatasetError("no labelled steps")
    gradient = TableGradient(reward.vocab_size)
    loss = 0.0
    scale = 1.0 / len(labeled)
    for state, action, target in labeled:
        if not 0.0 <= target <= 1.0:
            raise LabelRangeError(f"label {target} outside [0, 1]")
        logit = reward.score(state, action)
        loss += scale * (float(np.logaddexp(0.0, logit)) - target * logit)
        gradient.add_entry(reward.key(state), action, scale * (float(expit(logit)) - target))
    return Objective(loss, gradient)
