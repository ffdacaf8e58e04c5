"""
Invariant suite behind the ``oracle-check`` command.

Each check runs on a seeded matrix of small enumerable instances with random
rewards and returns one ``CheckResult`` per (check, instance).
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence

import numpy as np

from apps.baselines.adversarial import exact_mixture, gan_irl_gradient
from apps.baselines.losses import dqo_losses, prime_implicit_reward
from apps.baselines.models import SoftCritics, Transition
from apps.core.random import stream
from apps.mdp.enumeration import enumerate_trajectories, iter_states
from apps.mdp.models import Prompt, TokenMdp, Trajectory, TrajectorySource
from apps.oracle.exact import (
    enumerate_distribution,
    exact_irl_gradient,
    exact_partition,
    forward_backward,
    irl_objective,
    soft_value_iteration,
)
from apps.oracle.models import CheckResult
from apps.policies.models import PolicyParams, RewardParams
from apps.policies.sampling import policy_logprob, token_logprobs
from apps.trainer.losses import advantage_estimates, importance_sampled_gradient

logger = logging.getLogger(__name__)

FULL_CONTEXT = 16
TOLERANCES = {
    "distribution": 1e-8,
    "soft_bellman": 1e-10,
    "messages": 1e-10,
    "finite_diff": 1e-6,
    "gan_irl": 1e-10,
    "dqo": 1e-16,
    "dpo_bandit": 1e-10,
    "rloo": 1e-12,
    "prime": 1e-12,
    "importance_sampling": 0.95,
}
RATE_BOUNDS = (2.0, 5.0)


@dataclass
class OracleInstance:
    index: int
    mdp: TokenMdp
    reward: RewardParams
    policy: PolicyParams
    expert: List[Trajectory]
    beta: float


def _random_table(table, mdp: TokenMdp, rng, scale: float):
    for prompt in mdp.prompts:
        for state in iter_states(mdp, prompt):
            table.rows[table.key(state)] = rng.normal(scale=scale, size=mdp.vocab_size)
    return table


def build_instance(seed: int, index: int) -> OracleInstance:
    """A random enumerable instance with V <= 3 and T <= 5."""
    rng = stream(seed, 9, index)
    vocab_size = int(rng.integers(2, 4))
    horizon = int(rng.integers(1, 6 if vocab_size == 2 else 5))
    eos = 0 if rng.random() < 0.5 else None
    num_prompts = int(rng.integers(1, vocab_size + 1))
    prompts = tuple(Prompt(i, (i,)) for i in range(num_prompts))
    mdp = TokenMdp(vocab_size=vocab_size, horizon=horizon, eos=eos, prompts=prompts)
    reward = _random_table(
        RewardParams(vocab_size, context_order=FULL_CONTEXT, value_clip=None), mdp, rng, 0.7
    )
    policy = _random_table(PolicyParams(vocab_size, context_order=FULL_CONTEXT), mdp, rng, 0.7)
    pool = [traj for prompt in prompts for traj in enumerate_trajectories(mdp, prompt)]
    picks = rng.choice(len(pool), size=min(4, len(pool)), replace=False)
    expert = [pool[int(i)] for i in sorted(picks)]
    beta = float(rng.choice([0.5, 1.0, 2.0]))
    return OracleInstance(index, mdp, reward, policy, expert, beta)


def _gradient_error(first, second) -> float:
    keys = sorted(set(first.rows) | set(second.rows), key=repr)
    if not keys:
        return 0.0
    return float(np.abs(first.to_vector(keys) - second.to_vector(keys)).max())


def check_distribution(instance: OracleInstance) -> float:
    """Soft-value-iteration sequence probabilities against exp(r(tau)) / z."""
    solution = soft_value_iteration(instance.mdp, instance.reward)
    error = 0.0
    for prompt in instance.mdp.prompts:
        for traj, log_p in enumerate_distribution(instance.mdp, instance.reward, prompt):
            error = max(error, abs(math.exp(solution.log_prob(traj)) - math.exp(log_p)))
    return error


def check_soft_bellman(instance: OracleInstance) -> float:
    """Soft Bellman consistency and pi* = exp((Q* - V*) / beta) at every state."""
    beta = instance.beta
    solution = soft_value_iteration(instance.mdp, instance.reward, beta)
    error = 0.0
    for state, q in solution.q_values.items():
        v = solution.v_values[state]
        pi = solution.policy[state]
        error = max(error, abs(float(np.sum(pi * (q - beta * np.log(pi)))) - v))
        error = max(error, abs(pi.sum() - 1.0))
        rewards = instance.reward.scores(state)
        for action in range(instance.mdp.vocab_size):
            child = state.child(action)
            tail = solution.v_values.get(child, 0.0)
            error = max(error, abs(q[action] - rewards[action] - tail))
    return error


def check_messages(instance: OracleInstance) -> float:
    """Forward-backward occupancy against enumeration aggregates."""
    messages = forward_backward(instance.mdp, instance.reward)
    expected: Dict = {}
    for prompt in instance.mdp.prompts:
        for traj, log_p in enumerate_distribution(instance.mdp, instance.reward, prompt):
            for state, action in traj.steps():
                row = expected.setdefault(state, np.zeros(instance.mdp.vocab_size))
                row[action] += math.exp(log_p)
    error = 0.0
    for state, visit in messages.occupancy.items():
        target = expected.get(state, np.zeros(instance.mdp.vocab_size))
        error = max(error, float(np.abs(visit - target).max()))
    return error


def check_finite_diff(
    instance: OracleInstance, eps: float = 1e-5, coordinates: int = 12
) -> float:
    """Exact IRL gradient against central differences of the objective."""
    mdp, reward, expert = instance.mdp, instance.reward, instance.expert
    gradient = exact_irl_gradient(mdp, reward, expert)
    rng = stream(instance.index, 10)
    keys = list(reward.rows)
    error = 0.0
    for _ in range(coordinates):
        key = keys[int(rng.integers(len(keys)))]
        action = int(rng.integers(mdp.vocab_size))
        original = reward.rows[key][action]
        reward.rows[key][action] = original + eps
        upper = irl_objective(mdp, reward, expert)
        reward.rows[key][action] = original - eps
        lower = irl_objective(mdp, reward, expert)
        reward.rows[key][action] = original
        error = max(error, abs((upper - lower) / (2 * eps) - gradient.get(key, action)))
    return error


def check_gan_irl(instance: OracleInstance) -> float:
    """Discriminator-form gradient with exact mixture expectations."""
    mdp, reward = instance.mdp, instance.reward
    log_z = exact_partition(mdp, reward).per_prompt
    mixture = []
    for prompt in mdp.prompts:
        mixture.extend(exact_mixture(mdp, reward, instance.policy, prompt, log_z))
    adversarial = gan_irl_gradient(reward, instance.expert, mixture, log_z)
    return _gradient_error(adversarial, exact_irl_gradient(mdp, reward, instance.expert))


def check_dqo(instance: OracleInstance) -> float:
    """Both DQO residuals at the exact soft solution."""
    mdp = instance.mdp
    solution = soft_value_iteration(mdp, instance.reward)
    critics = SoftCritics.from_solution(solution, mdp.vocab_size)
    policy = PolicyParams(mdp.vocab_size, context_order=FULL_CONTEXT)
    transitions = []
    for state, q in solution.q_values.items():
        policy.rows[policy.key(state)] = q - solution.v_values[state]
        rewards = instance.reward.scores(state)
        for action in range(mdp.vocab_size):
            child = state.child(action)
            transitions.append(
                Transition(
                    state,
                    action,
                    float(rewards[action]),
                    child,
                    mdp.is_terminal_prefix(child.prefix),
                )
            )
    return max(dqo_losses(critics, policy, transitions))


def check_dpo_bandit(instance: OracleInstance) -> float:
    """One-step soft optimum under r + beta log pi_ref equals pi_ref exp(r / beta) / Z."""
    mdp = TokenMdp(
        vocab_size=instance.mdp.vocab_size, horizon=1, eos=None, prompts=instance.mdp.prompts
    )
    beta = instance.beta
    shaped = RewardParams(mdp.vocab_size, context_order=FULL_CONTEXT, value_clip=None)
    error = 0.0
    for prompt in mdp.prompts:
        root = mdp.root(prompt)
        log_ref = instance.policy.log_distribution(root)
        raw = instance.reward.scores(root)
        shaped.rows[shaped.key(root)] = raw + beta * log_ref
    solution = soft_value_iteration(mdp, shaped, beta)
    for prompt in mdp.prompts:
        root = mdp.root(prompt)
        target = instance.policy.distribution(root) * np.exp(instance.reward.scores(root) / beta)
        target /= target.sum()
        error = max(error, float(np.abs(solution.policy[root] - target).max()))
    return error


def check_rloo(instance: OracleInstance) -> float:
    rng = stream(instance.index, 11)
    error = 0.0
    for _ in range(10):
        rewards = rng.normal(size=int(rng.integers(2, 9)))
        error = max(error, abs(sum(advantage_estimates(rewards))))
    return error


def check_prime(instance: OracleInstance) -> float:
    """Per-step implicit rewards telescope to the sequence log ratio."""
    ref = PolicyParams(instance.mdp.vocab_size, context_order=FULL_CONTEXT).freeze()
    beta = instance.beta
    error = 0.0
    for traj in instance.expert:
        steps = sum(
            prime_implicit_reward(instance.policy, ref, traj, t, beta)
            for t in range(1, len(traj.actions) + 1)
        )
        expected = beta * (policy_logprob(instance.policy, traj) - policy_logprob(ref, traj))
        error = max(error, abs(steps - expected))
    return error


def tree_rollouts(
    policy: PolicyParams, mdp: TokenMdp, prompt: Prompt, samples: int, rng
) -> List[Trajectory]:
    """
    ``samples`` rollouts of ``policy`` for ``prompt``, drawn as multinomial
    copy counts over the enumerated sequences. The distribution is that of
    ``sample_rollouts``; only the random stream differs.
    """
    sequences = enumerate_trajectories(mdp, prompt)
    logprobs = [np.minimum(token_logprobs(policy, traj), 0.0) for traj in sequences]
    probabilities = np.exp([values.sum() for values in logprobs])
    copies = rng.multinomial(samples, probabilities / probabilities.sum())
    rollouts = []
    for traj, values, count in zip(sequences, logprobs, copies):
        if count:
            sampled = Trajectory(
                prompt.id,
                traj.actions,
                behavior_logprobs=tuple(values),
                source=TrajectorySource.POLICY,
                prompt=prompt.tokens,
            )
            rollouts.extend([sampled] * int(count))
    return rollouts


def _sampled_gradient(instance: OracleInstance, samples: int, seed: int):
    mdp = instance.mdp
    uniform = PolicyParams(mdp.vocab_size, context_order=0)
    rng = stream(instance.index, 12, samples, seed)
    rollouts = []
    for prompt in mdp.prompts:
        rollouts.extend(tree_rollouts(uniform, mdp, prompt, samples, rng))
    return importance_sampled_gradient(instance.reward, instance.expert, rollouts)


def check_importance_sampling(
    instance: OracleInstance, samples: int = 50_000, seeds: int = 10, sigmas: float = 3.0
) -> float:
    """
    Mean over ``seeds`` sample sets of the share of coordinates where the
    sampled gradient lies within ``sigmas`` standard errors of the exact one.
    """
    exact = exact_irl_gradient(instance.mdp, instance.reward, instance.expert)
    shares = []
    for seed in range(seeds):
        sampled = _sampled_gradient(instance, samples, seed)
        keys = sorted(set(exact.rows) | set(sampled.estimate.rows), key=repr)
        difference = np.abs(sampled.estimate.to_vector(keys) - exact.to_vector(keys))
        stderr = sampled.stderr.to_vector(keys)
        within = (difference <= sigmas * stderr) | (difference <= 1e-9)
        shares.append(float(within.mean()) if within.size else 1.0)
    return float(np.mean(shares))


def estimator_rmse(instance: OracleInstance, samples: int, seeds: int = 50) -> float:
    """Root mean squared error of the sampled gradient over coordinates and seeds."""
    exact = exact_irl_gradient(instance.mdp, instance.reward, instance.expert)
    errors = []
    for seed in range(seeds):
        sampled = _sampled_gradient(instance, samples, seed)
        keys = sorted(set(exact.rows) | set(sampled.estimate.rows), key=repr)
        residual = sampled.estimate.to_vector(keys) - exact.to_vector(keys)
        errors.append(float(np.square(residual).mean()) if residual.size else 0.0)
    return float(np.sqrt(np.mean(errors)))


def check_importance_rate(
    instance: OracleInstance, samples: int = 500, factor: int = 10, seeds: int = 50
) -> float:
    """RMSE at ``samples`` rollouts over RMSE at ``factor`` times as many."""
    larger = estimator_rmse(instance, samples * factor, seeds)
    if larger == 0.0:
        return math.inf
    return estimator_rmse(instance, samples, seeds) / larger


CHECKS: Dict[str, Callable[[OracleInstance], float]] = {
    "distribution": check_distribution,
    "soft_bellman": check_soft_bellman,
    "messages": check_messages,
    "finite_diff": check_finite_diff,
    "gan_irl": check_gan_irl,
    "dqo": check_dqo,
    "dpo_bandit": check_dpo_bandit,
    "rloo": check_rloo,
    "prime": check_prime,
}


def run_oracle_suite(
    seed: int = 0,
    instances: int = 20,
    checks: Sequence[str] = tuple(CHECKS),
    sampling_instances: int = 2,
) -> List[CheckResult]:
    """
    Run every check on ``instances`` seeded instances. The sampling checks
    run on the first ``sampling_instances`` only: the coverage check passes when
    on average 95% of coordinates are within 3 standard errors, the rate check
    when the RMSE ratio for a tenfold sample increase lies within RATE_BOUNDS.
    """
    results = []
    for index in range(instances):
        instance = build_instance(seed, index)
        shape = (
            f"V={instance.mdp.vocab_size} T={instance.mdp.horizon} "
            f"eos={instance.mdp.eos} prompts={len(instance.mdp.prompts)}"
        )
        for name in checks:
            error = CHECKS[name](instance)
            tolerance = TOLERANCES[name]
            results.append(
                CheckResult(name, index, error <= tolerance, error, tolerance, shape)
            )
        if index < sampling_instances:
            share = check_importance_sampling(instance)
            tolerance = TOLERANCES["importance_sampling"]
            results.append(
                CheckResult(
                    "importance_sampling", index, share >= tolerance, share, tolerance, shape
                )
            )
            ratio = check_importance_rate(instance)
            low, high = RATE_BOUNDS
            results.append(
                CheckResult(
                    "importance_rate",
                    index,
                    low <= ratio <= high,
                    ratio,
                    high,
                    f"{shape} bounds=[{low}, {high}]",
                )
            )
    failed = sum(1 for result in results if not result.passed)
    logger.info(f"Oracle suite: {len(results) - failed}/{len(results)} checks passed")
    return results
