"""
The reward objective in discriminator form.

D(tau) = p~(tau) / (p~(tau) + pi(tau)) with p~ = exp(r(tau)) / z. Samples come
from the mixture mu = 1/2 p~ + 1/2 pi, whose density is known exactly on
enumerable instances, and z is held constant while differentiating.
"""
import logging
import math
from collections import defaultdict
from typing import Dict, List, Sequence

import numpy as np

from apps.baselines.models import MixtureSample
from apps.core.errors import DegenerateSampleError, EmptyDatasetError
from apps.core.random import stream
from apps.mdp.enumeration import enumerate_trajectories
from apps.mdp.models import Prompt, TokenMdp, Trajectory
from apps.oracle.exact import enumerate_distribution, feature_counts
from apps.policies.models import PolicyParams, TableGradient
from apps.policies.sampling import policy_logprob, sample_rollouts, token_rewards

logger = logging.getLogger(__name__)

LOG_HALF = math.log(0.5)


def _log_target(reward, traj: Trajectory, log_z: Dict[int, float]) -> float:
    return float(token_rewards(reward, traj).sum()) - log_z[traj.prompt_id]


def mixture_log_density(
    reward, policy: PolicyParams, traj: Trajectory, log_z: Dict[int, float]
) -> float:
    """log(1/2 exp(r(tau)) / z + 1/2 pi(tau))."""
    return float(
        np.logaddexp(
            LOG_HALF + _log_target(reward, traj, log_z),
            LOG_HALF + policy_logprob(policy, traj),
        )
    )


def exact_mixture(
    mdp: TokenMdp, reward, policy: PolicyParams, prompt: Prompt, log_z: Dict[int, float]
) -> List[MixtureSample]:
    """Every trajectory of ``prompt`` weighted by its mixture probability."""
    samples = []
    for traj in enumerate_trajectories(mdp, prompt):
        log_density = mixture_log_density(reward, policy, traj, log_z)
        samples.append(MixtureSample(traj, log_density, weight=math.exp(log_density)))
    return samples


def sample_mixture(
    mdp: TokenMdp,
    reward,
    policy: PolicyParams,
    prompt: Prompt,
    n: int,
    seed: int,
    log_z: Dict[int, float],
) -> List[MixtureSample]:
    """``n`` draws from mu for one prompt: soft-opt or policy by a fair coin."""
    rng = stream(seed, prompt.id)
    from_target = int(rng.binomial(n, 0.5))
    distribution = enumerate_distribution(mdp, reward, prompt)
    probabilities = np.exp([log_p for _, log_p in distribution])
    picks = rng.choice(len(distribution), size=from_target, p=probabilities / probabilities.sum())
    drawn = [distribution[int(i)][0] for i in picks]
    if n > from_target:
        drawn += sample_rollouts(policy, mdp, prompt, n - from_target, seed)
    return [
        MixtureSample(traj, mixture_log_density(reward, policy, traj, log_z)) for traj in drawn
    ]


def gan_irl_gradient(
    reward,
    expert: Sequence[Trajectory],
    mixture: Sequence[MixtureSample],
    log_z: Dict[int, float],
) -> TableGradient:
    """
    E_expert[grad r] - E_mu[(p~ / mu~) grad r], the mixture expectation taken
    per prompt and matched to the expert mass of that prompt. Samples with a
    ``weight`` are exact expectation terms; otherwise each prompt's samples
    are averaged.
    """
    if not expert:
        raise EmptyDatasetError("expert set is empty")
    gradient = TableGradient(reward.vocab_size)
    prompt_mass = defaultdict(float)
    for traj in expert:
        feature_counts(reward, traj, 1.0 / len(expert), into=gradient)
        prompt_mass[traj.prompt_id] += 1.0 / len(expert)

    by_prompt = defaultdict(list)
    for sample in mixture:
        by_prompt[sample.traj.prompt_id].append(sample)
    for prompt_id, mass in prompt_mass.items():
        samples = by_prompt.get(prompt_id)
        if not samples:
            raise EmptyDatasetError(f"no mixture samples for prompt {prompt_id}")
        for sample in samples:
            if not math.isfinite(sample.log_density):
                raise DegenerateSampleError(
                    f"mixture density is zero for a trajectory of prompt {prompt_id}"
                )
            ratio = math.exp(_log_target(reward, sample.traj, log_z) - sample.log_density)
            share = sample.weight if sample.weight is not None else 1.0 / len(samples)
            feature_counts(reward, sample.traj, -mass * share * ratio, into=gradient)
    return gradient


def gan_discriminator_objective(
    reward,
    policy: PolicyParams,
    expert: Sequence[Trajectory],
    policy_samples: Sequence[Trajectory],
    log_z: Dict[int, float],
) -> float:
    """E_expert[log D] + E_policy[log(1 - D)]."""
    if not expert or not policy_samples:
        raise EmptyDatasetError("both expectations need trajectories")

    def log_parts(traj):
        target = _log_target(reward, traj, log_z)
        model = policy_logprob(policy, traj)
        return target, model, float(np.logaddexp(target, model))

    value = 0.0
    for traj in expert:
        target, _, total = log_parts(traj)
        value += (target - total) / len(expert)
    for traj in policy_samples:
        _, model, total = log_parts(traj)
        value += (model - total) / len(policy_samples)
    return value
