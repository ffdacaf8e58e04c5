"""
MDP operations: transitions, outcome verification, experts and prompt sets.
"""
import dataclasses
import logging
from typing import List, Tuple

from apps.core.conf import framework_setting
from apps.core.errors import (
    ConfigValidationError,
    EnumerationTooLargeError,
    InvalidActionError,
    StepLimitError,
)
from apps.core.random import stream
from apps.mdp.models import (
    Prompt,
    State,
    TaskConfig,
    TaskKind,
    TokenMdp,
    Tokens,
    Trajectory,
    TrajectorySource,
)
from apps.mdp.tasks import EOS, task_for

logger = logging.getLogger(__name__)


def step(mdp: TokenMdp, state: State, action: int) -> State:
    """Append ``action`` to the prefix of ``state``."""
    if state.t >= mdp.horizon or mdp.is_terminal_prefix(state.prefix):
        raise StepLimitError(
            f"no step from terminal state at t={state.t} (horizon {mdp.horizon})"
        )
    if not 0 <= int(action) < mdp.vocab_size:
        raise InvalidActionError(
            f"action {action} outside vocabulary of size {mdp.vocab_size}"
        )
    return state.child(action)


def is_terminal(mdp: TokenMdp, state: State) -> bool:
    return mdp.is_terminal_prefix(state.prefix)


def verify_outcome(mdp: TokenMdp, traj: Trajectory) -> float:
    """1.0 iff the answer encoded before eos is correct."""
    prompt = mdp.prompt(traj.prompt_id)
    return mdp.task.verify(prompt.tokens, mdp.output(traj.actions))


def extract_answer(mdp: TokenMdp, traj: Trajectory) -> Tokens:
    mdp.prompt(traj.prompt_id)
    return mdp.task.answer(mdp.output(traj.actions))


def is_well_formed(mdp: TokenMdp, traj: Trajectory) -> bool:
    """True when the trajectory ends properly and carries one answer."""
    prompt = mdp.prompt(traj.prompt_id)
    ended = len(traj.actions) >= mdp.horizon or (
        mdp.eos is not None and mdp.eos in traj.actions
    )
    if not ended:
        return False
    return mdp.task.well_formed(prompt.tokens, traj.actions, mdp.output(traj.actions))


def label(mdp: TokenMdp, traj: Trajectory) -> Trajectory:
    """Return ``traj`` with prompt tokens attached and its outcome verified."""
    return mdp.attach(traj).with_outcome(verify_outcome(mdp, traj))


def generate_expert(mdp: TokenMdp, prompt: Prompt, k: int, seed: int) -> List[Trajectory]:
    """
    Sample ``k`` correct demonstrations for ``prompt``.

    The generator is keyed by (seed, prompt id), so the list for a prompt does
    not depend on which other prompts are generated.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    rng = stream(seed, prompt.id)
    experts = []
    for _ in range(k):
        actions = mdp.task.expert_output(prompt.tokens, mdp.horizon, rng)
        if len(actions) < mdp.horizon and mdp.eos is not None:
            actions = actions + (mdp.eos,)
        traj = Trajectory(
            prompt.id,
            actions,
            source=TrajectorySource.EXPERT,
            prompt=prompt.tokens,
        )
        experts.append(traj.with_outcome(verify_outcome(mdp, traj)))
    return experts


def generate_expert_pool(mdp: TokenMdp, k: int, seed: int) -> List[Trajectory]:
    pool = []
    for prompt in mdp.prompts:
        pool.extend(generate_expert(mdp, prompt, k, seed))
    logger.debug(f"Generated {len(pool)} expert trajectories for {len(mdp.prompts)} prompts")
    return pool


def build_mdp(config: TaskConfig) -> TokenMdp:
    """
    Build the task MDP: every prompt of the configured lengths, subsampled by
    seed when ``num_prompts`` is smaller than the universe. Prompt ids are
    positions in the universe.
    """
    task = task_for(config.task_kind, config.vocab_size)
    max_length = config.prompt_length
    min_length = config.min_prompt_length or max_length
    if min_length > max_length:
        raise ConfigValidationError(
            "task.min_prompt_length", "must not exceed prompt_length"
        )
    if config.horizon < task.min_horizon(max_length):
        raise ConfigValidationError(
            "task.horizon",
            f"{config.task_kind} with prompt_length {max_length} needs "
            f"horizon >= {task.min_horizon(max_length)}",
        )
    size = task.universe_size(min_length, max_length)
    cap = framework_setting("ENUMERATION_CAP")
    if size > cap:
        raise EnumerationTooLargeError(f"prompt universe of {size} exceeds cap {cap}")

    universe = list(task.prompt_universe(min_length, max_length))
    indices = range(size)
    if config.num_prompts and config.num_prompts < size:
        picked = stream(config.seed, 0).choice(size, config.num_prompts, replace=False)
        indices = sorted(int(i) for i in picked)
    prompts = tuple(Prompt(i, universe[i]) for i in indices)

    eos = EOS
    if task.kind == TaskKind.SYNTHETIC and not config.synthetic_eos:
        eos = None
    hidden = task.hidden_reward if config.hidden_reward and task.has_verifier else None
    mdp = TokenMdp(
        vocab_size=config.vocab_size,
        horizon=config.horizon,
        eos=eos,
        prompts=prompts,
        task_kind=task.kind,
        hidden_reward=hidden,
    )
    logger.info(
        f"Built {task.kind} MDP: V={mdp.vocab_size} T={mdp.horizon} "
        f"{len(prompts)} of {size} prompts"
    )
    return mdp


def split_prompts(mdp: TokenMdp, heldout_fraction: float, seed: int) -> Tuple[TokenMdp, TokenMdp]:
    """Split the prompt set into (train, held-out) MDPs."""
    if heldout_fraction <= 0:
        return mdp, dataclasses.replace(mdp, prompts=())
    count = len(mdp.prompts)
    heldout_size = min(count - 1, max(1, int(round(heldout_fraction * count))))
    order = stream(seed, 1).permutation(count)
    heldout_ids = {mdp.prompts[int(i)].id for i in order[:heldout_size]}
    train = tuple(p for p in mdp.prompts if p.id not in heldout_ids)
    heldout = tuple(p for p in mdp.prompts if p.id in heldout_ids)
    return dataclasses.replace(mdp, prompts=train), dataclasses.replace(mdp, prompts=heldout)
