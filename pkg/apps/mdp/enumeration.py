"""Exhaustive enumeration of the eos-terminated token tree."""
from typing import Iterator, List, Optional

from apps.core.conf import framework_setting
from apps.core.errors import EnumerationTooLargeError
from apps.mdp.models import Prompt, State, TokenMdp, Trajectory


def count_trajectories(vocab_size: int, horizon: int, has_eos: bool = True) -> int:
    """
    Number of complete trajectories for one prompt.

    Without eos this is V^T. With eos, N(0) = 1 and N(t) = 1 + (V - 1) N(t - 1).
    """
    if not has_eos:
        return vocab_size**horizon
    count = 1
    for _ in range(horizon):
        count = 1 + (vocab_size - 1) * count
    return count


def check_enumerable(mdp: TokenMdp, cap: Optional[int] = None) -> int:
    cap = framework_setting("ENUMERATION_CAP") if cap is None else cap
    count = count_trajectories(mdp.vocab_size, mdp.horizon, mdp.eos is not None)
    if count > cap:
        raise EnumerationTooLargeError(
            f"{count} trajectories per prompt exceed the enumeration cap {cap}"
        )
    return count


def _walk(mdp: TokenMdp, prefix):
    if mdp.is_terminal_prefix(prefix):
        yield prefix
        return
    for action in range(mdp.vocab_size):
        yield from _walk(mdp, prefix + (action,))


def enumerate_trajectories(
    mdp: TokenMdp, prompt: Prompt, cap: Optional[int] = None
) -> List[Trajectory]:
    """Every complete token sequence for ``prompt``, in lexicographic order."""
    check_enumerable(mdp, cap)
    return [
        Trajectory(prompt.id, actions, prompt=prompt.tokens)
        for actions in _walk(mdp, ())
    ]


def iter_states(mdp: TokenMdp, prompt: Prompt) -> Iterator[State]:
    """Non-terminal states reachable from the prompt, depth first."""
    stack = [()]
    while stack:
        prefix = stack.pop()
        if mdp.is_terminal_prefix(prefix):
            continue
        yield State(prompt.id, prefix, prompt.tokens)
        for action in reversed(range(mdp.vocab_size)):
            stack.append(prefix + (action,))
