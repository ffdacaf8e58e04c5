"""
Method-specific training data: preference pairs, reward-annotated
transitions and completion-based step labels.
"""
import logging
from collections import defaultdict
from typing import List, Optional, Sequence, Tuple

from apps.baselines.models import PreferencePair, Transition
from apps.core.errors import AnnotationRequiredError, EnumerationTooLargeError
from apps.core.random import derive_seed
from apps.mdp.environment import label
from apps.mdp.models import State, TokenMdp, Trajectory
from apps.oracle.exact import check_tree_size, mcts_value_label
from apps.policies.models import PolicyParams
from apps.policies.sampling import sample_rollouts

logger = logging.getLogger(__name__)


def build_preference_pairs(
    mdp: TokenMdp,
    experts: Sequence[Trajectory],
    policy: PolicyParams,
    n_rollouts: int,
    seed: int,
) -> List[PreferencePair]:
    """
    Pair each expert trajectory with a failed rollout of ``policy`` for the
    same prompt, cycling through the failures. Prompts where every rollout
    verifies contribute no pairs.
    """
    by_prompt = defaultdict(list)
    for traj in experts:
        by_prompt[traj.prompt_id].append(mdp.attach(traj))
    pairs = []
    skipped = 0
    for prompt in mdp.prompts:
        chosen = by_prompt.get(prompt.id)
        if not chosen:
            continue
        rollouts = [label(mdp, t) for t in sample_rollouts(policy, mdp, prompt, n_rollouts, seed)]
        failed = [t for t in rollouts if t.outcome != 1.0]
        if not failed:
            skipped += 1
            continue
        for index, traj in enumerate(chosen):
            pairs.append(PreferencePair(prompt.id, traj, failed[index % len(failed)]))
    if skipped:
        logger.info(f"{skipped} prompts had no failed rollout and produced no pairs")
    return pairs


def annotate_transitions(mdp: TokenMdp, trajectories: Sequence[Trajectory]) -> List[Transition]:
    """Per-step transitions rewarded by the task's hidden reward."""
    if mdp.hidden_reward is None:
        raise AnnotationRequiredError(
            f"task {mdp.task_kind} has no token-level reward annotation"
        )
    transitions = []
    for traj in trajectories:
        traj = mdp.attach(traj)
        steps = traj.steps()
        for t, (state, action) in enumerate(steps):
            transitions.append(
                Transition(
                    state=state,
                    action=action,
                    reward=float(mdp.hidden_reward(state, action)),
                    next_state=state.child(action),
                    terminal=t == len(steps) - 1,
                )
            )
    return transitions


def label_steps(
    mdp: TokenMdp,
    policy: PolicyParams,
    trajectories: Sequence[Trajectory],
    k: int,
    seed: int,
    exact: Optional[bool] = None,
) -> List[Tuple[State, int, float]]:
    """
    (s_t, a_t, label) for every step, where the label is the probability that
    completing s_t + a_t under ``policy`` verifies. ``exact`` None means exact
    labels when the instance is enumerable.
    """
    if not mdp.task.has_verifier:
        raise AnnotationRequiredError(f"task {mdp.task_kind} has no verifier to label steps")
    if exact is None:
        try:
            check_tree_size(mdp)
            exact = True
        except EnumerationTooLargeError:
            exact = False
    labeled = []
    for index, traj in enumerate(trajectories):
        traj = mdp.attach(traj)
        for t, (state, action) in enumerate(traj.steps()):
            value = mcts_value_label(
                mdp,
                policy,
                state.child(action),
                k,
                derive_seed(seed, 4, index, t),
                exact=exact,
            )
            labeled.append((state, action, value))
    return labeled
