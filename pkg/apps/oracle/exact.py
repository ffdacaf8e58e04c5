"""
Exact, enumeration-backed computation of the soft-optimal quantities.

Everything here walks the full prefix tree of every prompt, so it is only
usable on enumerable instances. Accumulation is in the log domain.
"""
import logging
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from apps.core.conf import framework_setting
from apps.core.errors import EmptyDatasetError, EnumerationTooLargeError
from apps.core.random import stream
from apps.mdp.enumeration import count_trajectories, enumerate_trajectories
from apps.mdp.environment import verify_outcome
from apps.mdp.models import State, TokenMdp, Trajectory
from apps.oracle.models import OccupancyMessages, PartitionValue, SoftSolution
from apps.policies.models import TableGradient

logger = logging.getLogger(__name__)


def check_tree_size(mdp: TokenMdp, cap: Optional[int] = None) -> int:
    """Total trajectory count over all prompts, checked against the cap."""
    cap = framework_setting("ENUMERATION_CAP") if cap is None else cap
    total = count_trajectories(mdp.vocab_size, mdp.horizon, mdp.eos is not None) * max(
        len(mdp.prompts), 1
    )
    if total > cap:
        raise EnumerationTooLargeError(
            f"{total} trajectories over {len(mdp.prompts)} prompts exceed the cap {cap}"
        )
    return total


def reward_row(reward, state: State, vocab_size: int) -> np.ndarray:
    """Per-action rewards at ``state`` for a table or any step scorer."""
    scores = getattr(reward, "scores", None)
    if scores is not None:
        return np.asarray(scores(state), dtype=float)
    return np.array([reward.score(state, a) for a in range(vocab_size)], dtype=float)


def soft_value_iteration(mdp: TokenMdp, reward, beta: float = 1.0) -> SoftSolution:
    """
    Backward induction: Q(s, a) = r(s, a) + V(s'), V(s) = beta logsumexp(Q / beta),
    V = 0 at terminal states; pi*(a | s) = exp((Q - V) / beta).
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    check_tree_size(mdp)
    solution = SoftSolution(beta=beta)

    def solve(state: State) -> float:
        q = reward_row(reward, state, mdp.vocab_size)
        for action in range(mdp.vocab_size):
            child = state.child(action)
            if not mdp.is_terminal_prefix(child.prefix):
                q[action] += solve(child)
        v = float(beta * logsumexp(q / beta))
        solution.q_values[state] = q
        solution.v_values[state] = v
        solution.policy[state] = np.exp((q - v) / beta)
        return v

    for prompt in mdp.prompts:
        solve(mdp.root(prompt))
    logger.debug(f"Soft value iteration solved {len(solution)} states (beta={beta})")
    return solution


def forward_backward(mdp: TokenMdp, reward) -> OccupancyMessages:
    """
    alpha and beta messages of the energy model exp(sum_t r), in log space.

    The backward message of s is log sum over completions of exp(reward to go);
    the forward message is the log reward accumulated on the unique path to s.
    """
    check_tree_size(mdp)
    messages = OccupancyMessages()
    rows: Dict[State, np.ndarray] = {}

    def backward(state: State) -> float:
        row = reward_row(reward, state, mdp.vocab_size)
        rows[state] = row
        scores = row.copy()
        for action in range(mdp.vocab_size):
            child = state.child(action)
            if not mdp.is_terminal_prefix(child.prefix):
                scores[action] += backward(child)
        value = float(logsumexp(scores))
        messages.log_backward[state] = value
        return value

    def child_backward(state: State, action: int) -> float:
        child = state.child(action)
        if mdp.is_terminal_prefix(child.prefix):
            return 0.0
        return messages.log_backward[child]

    for prompt in mdp.prompts:
        root = mdp.root(prompt)
        log_z = backward(root)
        messages.log_z[prompt.id] = log_z
        step_totals = defaultdict(float)
        visited = []
        stack = [(root, 0.0)]
        while stack:
            state, log_alpha = stack.pop()
            messages.log_forward[state] = log_alpha
            row = rows[state]
            tails = np.array([child_backward(state, a) for a in range(mdp.vocab_size)])
            visit = np.exp(log_alpha + row + tails - log_z)
            messages.occupancy[state] = visit
            visited.append(state)
            step_totals[state.t] += float(visit.sum())
            for action in reversed(range(mdp.vocab_size)):
                child = state.child(action)
                if not mdp.is_terminal_prefix(child.prefix):
                    stack.append((child, log_alpha + float(row[action])))
        for state in visited:
            messages.marginals[state] = messages.occupancy[state] / step_totals[state.t]
    return messages


def exact_partition(mdp: TokenMdp, reward) -> PartitionValue:
    """log z = log sum over feasible sequences of exp(sum_t r(s_t, a_t))."""
    messages = forward_backward(mdp, reward)
    per_prompt = dict(messages.log_z)
    total = float(logsumexp(list(per_prompt.values()))) if per_prompt else float("-inf")
    return PartitionValue(log_z=total, per_prompt=per_prompt)


def enumerate_distribution(mdp: TokenMdp, reward, prompt) -> List[Tuple[Trajectory, float]]:
    """(trajectory, log p) under p(tau) = exp(r(tau)) / z for one prompt."""
    trajectories = enumerate_trajectories(mdp, prompt)
    returns = np.array(
        [
            sum(reward_row(reward, s, mdp.vocab_size)[a] for s, a in traj.steps())
            for traj in trajectories
        ]
    )
    log_z = logsumexp(returns)
    return list(zip(trajectories, (returns - log_z).tolist()))


def _expert_weights(expert: Sequence[Trajectory], weights) -> np.ndarray:
    if not expert:
        raise EmptyDatasetError("expert set is empty")
    if weights is None:
        return np.full(len(expert), 1.0 / len(expert))
    weights = np.asarray(weights, dtype=float)
    return weights / weights.sum()


def feature_counts(reward, traj: Trajectory, scale: float = 1.0, into=None) -> TableGradient:
    """Visitation counts of ``traj`` in the reward's parameter rows."""
    gradient = into if into is not None else TableGradient(reward.vocab_size)
    for state, action in traj.steps():
        gradient.add_entry(reward.key(state), action, scale)
    return gradient


def exact_irl_gradient(
    mdp: TokenMdp, reward, expert: Sequence[Trajectory], expert_weights=None
) -> TableGradient:
    """
    E_expert[grad r(tau)] - E_soft-opt[grad r(tau)].

    Each expert trajectory is matched against the soft-optimal distribution
    of its own prompt; the model term uses expected visitation counts.
    """
    weights = _expert_weights(expert, expert_weights)
    messages = forward_backward(mdp, reward)
    gradient = TableGradient(reward.vocab_size)
    prompt_mass = defaultdict(float)
    for traj, weight in zip(expert, weights):
        feature_counts(reward, mdp.attach(traj), float(weight), into=gradient)
        prompt_mass[traj.prompt_id] += float(weight)
    for state, visit in messages.occupancy.items():
        mass = prompt_mass.get(state.prompt_id)
        if mass:
            gradient.add(reward.key(state), visit, -mass)
    return gradient


def irl_objective(
    mdp: TokenMdp, reward, expert: Sequence[Trajectory], expert_weights=None
) -> float:
    """J(phi) = weighted mean over experts of r(tau) - log z(prompt)."""
    weights = _expert_weights(expert, expert_weights)
    partition = exact_partition(mdp, reward)
    total = 0.0
    for traj, weight in zip(expert, weights):
        traj = mdp.attach(traj)
        ret = sum(reward_row(reward, s, mdp.vocab_size)[a] for s, a in traj.steps())
        total += float(weight) * (ret - partition.per_prompt[traj.prompt_id])
    return total


def mcts_value_label(
    mdp: TokenMdp, policy, state: State, k: int, seed: int, exact: bool = False
) -> float:
    """
    Probability that completing ``state`` under ``policy`` verifies.

    Monte Carlo over ``k`` completions, or the exact expectation over the
    completion tree when ``exact`` is set.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    prompt = mdp.prompt(state.prompt_id)
    state = State(state.prompt_id, state.prefix, prompt.tokens)

    def outcome(prefix) -> float:
        return verify_outcome(mdp, Trajectory(prompt.id, prefix))

    if mdp.is_terminal_prefix(state.prefix):
        return outcome(state.prefix)

    if exact:
        check_tree_size(mdp)

        def expected(current: State) -> float:
            if mdp.is_terminal_prefix(current.prefix):
                return outcome(current.prefix)
            probabilities = policy.distribution(current)
            return float(
                sum(
                    probabilities[a] * expected(current.child(a))
                    for a in range(mdp.vocab_size)
                )
            )

        return expected(state)

    successes = 0
    for index in range(k):
        rng = stream(seed, prompt.id, index)
        current = state
        while not mdp.is_terminal_prefix(current.prefix):
            probabilities = policy.distribution(current)
            action = int(rng.choice(mdp.vocab_size, p=probabilities))
            current = current.child(action)
        successes += outcome(current.prefix) == 1.0
    return successes / k


def _state_key(state: State) -> str:
    prefix = " ".join(str(t) for t in state.prefix) or "."
    return f"{state.prompt_id}:{prefix}"


def dump_solution(
    solution: SoftSolution, path, messages: Optional[OccupancyMessages] = None
) -> Path:
    """Write Q*, V*, pi* (and marginals) as a ``param_kind,key,value`` table."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        handle.write(f"# repirl-solution v1\n# beta={solution.beta!r}\nparam_kind,key,value\n")
        for state, value in solution.v_values.items():
            key = _state_key(state)
            handle.write(f"v,{key},{value!r}\n")
            for action, q in enumerate(solution.q_values[state]):
                handle.write(f"q,{key}|{action},{float(q)!r}\n")
            for action, p in enumerate(solution.policy[state]):
                handle.write(f"pi,{key}|{action},{float(p)!r}\n")
        if messages is not None:
            for state, row in messages.marginals.items():
                key = _state_key(state)
                for action, mu in enumerate(row):
                    handle.write(f"mu,{key}|{action},{float(mu)!r}\n")
    return path
