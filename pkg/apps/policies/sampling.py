"""
Likelihood, sampling, entropy and reward evaluation for table models.
"""
import logging
from typing import List, Tuple

import numpy as np
from scipy.special import entr

from apps.core.errors import EmptyTrajectoryError, InvalidActionError
from apps.core.random import stream
from apps.mdp.models import Prompt, State, TokenMdp, Trajectory, TrajectorySource
from apps.policies.models import PolicyParams, RewardParams

logger = logging.getLogger(__name__)


def _check_action(vocab_size: int, action: int):
    if not 0 <= int(action) < vocab_size:
        raise InvalidActionError(f"action {action} outside vocabulary of size {vocab_size}")


def token_logprobs(policy: PolicyParams, traj: Trajectory) -> np.ndarray:
    """log pi(a_t | s_t) for every step of ``traj``."""
    values = np.empty(len(traj.actions))
    for t, (state, action) in enumerate(traj.steps()):
        _check_action(policy.vocab_size, action)
        values[t] = policy.log_distribution(state)[action]
    return values


def policy_logprob(policy: PolicyParams, traj: Trajectory) -> float:
    """sum_t log pi(a_t | s_t)."""
    return float(token_logprobs(policy, traj).sum())


def _draw(rng: np.random.Generator, probabilities: np.ndarray) -> int:
    cumulative = np.cumsum(probabilities)
    index = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
    return min(index, len(probabilities) - 1)


def _rollout(policy, mdp: TokenMdp, prompt: Prompt, choose, temperature: float) -> Trajectory:
    state = mdp.root(prompt)
    actions = []
    logprobs = []
    while not mdp.is_terminal_prefix(state.prefix):
        log_probs = policy.log_distribution(state, temperature)
        action = choose(log_probs)
        actions.append(action)
        logprobs.append(min(float(log_probs[action]), 0.0))
        state = state.child(action)
    return Trajectory(
        prompt.id,
        tuple(actions),
        behavior_logprobs=tuple(logprobs),
        source=TrajectorySource.POLICY,
        prompt=prompt.tokens,
    )


def sample_rollouts(
    policy: PolicyParams,
    mdp: TokenMdp,
    prompt: Prompt,
    n: int,
    seed: int,
    temperature: float = 1.0,
) -> List[Trajectory]:
    """
    Draw ``n`` rollouts for ``prompt``.

    Rollout ``i`` uses the stream (seed, prompt id, i), so a rollout does not
    depend on how many others are drawn or in what order. Behavior
    log-probabilities are those of the sampling distribution.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    rollouts = []
    for index in range(n):
        rng = stream(seed, prompt.id, index)
        rollouts.append(
            _rollout(
                policy,
                mdp,
                prompt,
                lambda log_probs: _draw(rng, np.exp(log_probs)),
                temperature,
            )
        )
    return rollouts


def greedy_rollout(policy: PolicyParams, mdp: TokenMdp, prompt: Prompt) -> Trajectory:
    """Argmax decoding; ties go to the lowest token id."""
    return _rollout(policy, mdp, prompt, lambda log_probs: int(np.argmax(log_probs)), 1.0)


def policy_entropy(policy: PolicyParams, state: State) -> float:
    """Shannon entropy of pi(. | state) in nats."""
    entropy = float(entr(policy.distribution(state)).sum())
    return min(max(entropy, 0.0), float(np.log(policy.vocab_size)))


def prm_score(reward: RewardParams, state: State, action: int) -> float:
    _check_action(reward.vocab_size, action)
    return reward.score(state, action)


def token_rewards(reward, traj: Trajectory) -> np.ndarray:
    """r(s_t, a_t) for every step; ``reward`` is any step scorer."""
    return np.array([reward.score(state, action) for state, action in traj.steps()], dtype=float)


def trajectory_reward(reward, traj: Trajectory) -> Tuple[float, float]:
    """(sum, mean) of the per-token rewards of ``traj``."""
    if not traj.actions:
        raise EmptyTrajectoryError(f"trajectory for prompt {traj.prompt_id} has no tokens")
    values = token_rewards(reward, traj)
    total = float(values.sum())
    return total, total / len(values)
