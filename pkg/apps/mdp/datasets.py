"""
Trajectory dataset files: one JSON record per line.

Fields: ``prompt_id``, ``tokens`` (space-separated ids), ``outcome``,
``source`` and optionally ``logprobs`` (space-separated reals).
"""
import json
import logging
from pathlib import Path
from typing import Iterable, List, Optional

from apps.core.errors import DatasetFormatError, RepirlError
from apps.mdp.models import TokenMdp, Trajectory

logger = logging.getLogger(__name__)


def _encode(traj: Trajectory) -> dict:
    record = {
        "prompt_id": traj.prompt_id,
        "tokens": " ".join(str(a) for a in traj.actions),
        "outcome": int(traj.outcome) if traj.outcome is not None else None,
        "source": str(traj.source),
    }
    if traj.behavior_logprobs is not None:
        record["logprobs"] = " ".join(repr(v) for v in traj.behavior_logprobs)
    return record


def _decode(record: dict, mdp: Optional[TokenMdp]) -> Trajectory:
    tokens = str(record["tokens"]).split()
    logprobs = record.get("logprobs")
    outcome = record.get("outcome")
    traj = Trajectory(
        prompt_id=int(record["prompt_id"]),
        actions=tuple(int(t) for t in tokens),
        behavior_logprobs=(
            tuple(float(v) for v in str(logprobs).split()) if logprobs is not None else None
        ),
        outcome=float(outcome) if outcome is not None else None,
        source=record.get("source", "policy"),
    )
    if mdp is not None:
        traj = mdp.attach(traj)
    return traj


def write_dataset(path, trajectories: Iterable[Trajectory]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as handle:
        for traj in trajectories:
            handle.write(json.dumps(_encode(traj)) + "\n")
            count += 1
    logger.info(f"Wrote {count} trajectories to {path}")
    return count


def read_dataset(path, mdp: Optional[TokenMdp] = None) -> List[Trajectory]:
    """Read a dataset; with ``mdp`` the prompt tokens are attached."""
    trajectories = []
    with Path(path).open(encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                trajectories.append(_decode(json.loads(line), mdp))
            except RepirlError:
                raise
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetFormatError(f"{path}:{number}: {exc}") from exc
    return trajectories
