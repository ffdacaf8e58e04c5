"""
pass@1, test-time selection rules and PRM ranking quality.
"""
import dataclasses
import logging
from collections import Counter
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from apps.core.errors import AnnotationRequiredError, EmptyDatasetError
from apps.core.random import stream
from apps.mdp.enumeration import count_trajectories
from apps.mdp.environment import label
from apps.mdp.models import Prompt, State, TokenMdp, Trajectory
from apps.policies.models import PolicyParams
from apps.policies.sampling import greedy_rollout, sample_rollouts, trajectory_reward

logger = logging.getLogger(__name__)


class HiddenRewardScorer:
    """Scores steps with the task's hidden ground-truth reward."""

    def __init__(self, mdp: TokenMdp):
        if mdp.hidden_reward is None:
            raise AnnotationRequiredError(f"{mdp.task_kind} MDP has no hidden reward")
        self.mdp = mdp

    def score(self, state: State, action: int) -> float:
        return float(self.mdp.hidden_reward(state, action))


def _prompts(mdp: TokenMdp, prompts: Optional[Sequence[Prompt]]) -> Sequence[Prompt]:
    return mdp.prompts if prompts is None else prompts


def per_prompt_pass(
    policy: PolicyParams,
    mdp: TokenMdp,
    prompts: Optional[Sequence[Prompt]] = None,
    greedy: bool = True,
    seed: int = 0,
) -> Dict[int, float]:
    """Outcome of one rollout per prompt (greedy, or sampled with ``seed``)."""
    results = {}
    for prompt in _prompts(mdp, prompts):
        if greedy:
            traj = greedy_rollout(policy, mdp, prompt)
        else:
            (traj,) = sample_rollouts(policy, mdp, prompt, 1, seed)
        results[prompt.id] = label(mdp, traj).outcome
    return results


def pass_at_1(
    policy: PolicyParams,
    mdp: TokenMdp,
    prompts: Optional[Sequence[Prompt]] = None,
    greedy: bool = True,
    seed: int = 0,
) -> float:
    results = per_prompt_pass(policy, mdp, prompts, greedy, seed)
    if not results:
        return 0.0
    return float(np.mean(list(results.values())))


def select_unsolved(policy: PolicyParams, mdp: TokenMdp) -> TokenMdp:
    """The MDP restricted to prompts the policy fails under greedy decoding."""
    results = per_prompt_pass(policy, mdp)
    unsolved = tuple(p for p in mdp.prompts if results[p.id] == 0.0)
    logger.info(f"{len(unsolved)} of {len(mdp.prompts)} prompts unsolved")
    return dataclasses.replace(mdp, prompts=unsolved)


def best_of_n_select(reward, rollouts: Sequence[Trajectory]) -> int:
    """Index of the rollout with the highest mean per-token reward; ties go low."""
    if not rollouts:
        raise EmptyDatasetError("best-of-n needs at least one rollout")
    means = [trajectory_reward(reward, traj)[1] for traj in rollouts]
    return int(np.argmax(means))


def majority_vote(rollouts: Sequence[Trajectory], extractor: Callable[[Trajectory], tuple]):
    """Most frequent answer; ties go to the answer seen first."""
    if not rollouts:
        raise EmptyDatasetError("majority vote needs at least one rollout")
    answers = [tuple(extractor(traj)) for traj in rollouts]
    counts = Counter(answers)
    best = max(counts.values())
    return next(answer for answer in answers if counts[answer] == best)


def ranking_auc(positive_scores: Sequence[float], negative_scores: Sequence[float]) -> float:
    """ROC-AUC of scores separating positives from negatives; ties count 0.5."""
    if len(positive_scores) == 0 or len(negative_scores) == 0:
        raise EmptyDatasetError("AUC needs positives and negatives")
    ranks = rankdata(np.concatenate([positive_scores, negative_scores]))
    n_pos, n_neg = len(positive_scores), len(negative_scores)
    u = ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def prm_ranking_auc(
    reward, positives: Sequence[Trajectory], negatives: Sequence[Trajectory]
) -> float:
    positive_scores = [trajectory_reward(reward, traj)[1] for traj in positives]
    negative_scores = [trajectory_reward(reward, traj)[1] for traj in negatives]
    return ranking_auc(positive_scores, negative_scores)


def uniform_negatives(mdp: TokenMdp, per_prompt: int, seed: int) -> List[Trajectory]:
    """
    ``per_prompt`` trajectories for each prompt, drawn uniformly from its
    complete sequences. Each token is picked with probability proportional to
    the number of complete sequences below it.
    """
    has_eos = mdp.eos is not None
    negatives = []
    for prompt in mdp.prompts:
        for index in range(per_prompt):
            rng = stream(seed, prompt.id, index)
            actions = ()
            while not mdp.is_terminal_prefix(actions):
                remaining = mdp.horizon - len(actions) - 1
                below = count_trajectories(mdp.vocab_size, remaining, has_eos)
                sizes = np.full(mdp.vocab_size, float(below))
                if has_eos:
                    sizes[mdp.eos] = 1.0
                actions += (int(rng.choice(mdp.vocab_size, p=sizes / sizes.sum())),)
            negatives.append(Trajectory(prompt.id, actions, prompt=prompt.tokens))
    return negatives
