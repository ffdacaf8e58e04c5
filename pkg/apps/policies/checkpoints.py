"""
Checkpoint text tables.

Layout::

    # repirl-checkpoint v1
    # kind=policy repr=tabular context_order=3 vocab_size=6 table_size=4096 value_clip=none
    param_kind,key,value
    logit,3 1|4,0.25

Keys are ``<context>|<action>``; an empty context is written ``.`` and a
linear bucket ``#<index>``.
"""
import logging
from pathlib import Path
from typing import Optional

from apps.core.errors import CheckpointFormatError
from apps.policies.models import PolicyParams, Representation, RewardParams, TokenTable

logger = logging.getLogger(__name__)

MAGIC = "# repirl-checkpoint v1"
COLUMNS = "param_kind,key,value"
PARAM_KINDS = {"policy": "logit", "reward": "reward"}


def _format_key(key, action: int) -> str:
    if isinstance(key, int):
        context = f"#{key}"
    elif key:
        context = " ".join(str(t) for t in key)
    else:
        context = "."
    return f"{context}|{action}"


def _parse_key(text: str):
    context, _, action = text.partition("|")
    if not action:
        raise CheckpointFormatError(f"malformed key {text!r}")
    if context.startswith("#"):
        key = int(context[1:])
    elif context == ".":
        key = ()
    else:
        key = tuple(int(t) for t in context.split())
    return key, int(action)


def save_checkpoint(table: TokenTable, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    clip = getattr(table, "value_clip", None)
    header = (
        f"# kind={table.kind} repr={table.representation} "
        f"context_order={table.context_order} vocab_size={table.vocab_size} "
        f"table_size={table.table_size} value_clip={'none' if clip is None else repr(clip)}"
    )
    param_kind = PARAM_KINDS[table.kind]
    with path.open("w", encoding="utf-8") as handle:
        handle.write(MAGIC + "\n" + header + "\n" + COLUMNS + "\n")
        for key, row in table.rows.items():
            for action, value in enumerate(row):
                handle.write(f"{param_kind},{_format_key(key, action)},{float(value)!r}\n")
    logger.debug(f"Saved {table!r} to {path}")
    return path


def _read_header(lines, path):
    if len(lines) < 3 or lines[0] != MAGIC or lines[2] != COLUMNS:
        raise CheckpointFormatError(f"{path}: missing checkpoint header")
    fields = {}
    for item in lines[1].lstrip("# ").split():
        name, _, value = item.partition("=")
        fields[name] = value
    try:
        return {
            "kind": fields["kind"],
            "representation": Representation(fields["repr"]),
            "context_order": int(fields["context_order"]),
            "vocab_size": int(fields["vocab_size"]),
            "table_size": int(fields["table_size"]),
            "value_clip": None if fields["value_clip"] == "none" else float(fields["value_clip"]),
        }
    except (KeyError, ValueError) as exc:
        raise CheckpointFormatError(f"{path}: bad header field {exc}") from exc


def load_checkpoint(path, expected: Optional[TokenTable] = None) -> TokenTable:
    """
    Load a policy or reward table. When ``expected`` is given the header must
    match its kind, representation, context order and vocabulary.
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    header = _read_header(lines, path)
    kind = header.pop("kind")
    clip = header.pop("value_clip")
    if kind == "policy":
        table = PolicyParams(**header)
    elif kind == "reward":
        table = RewardParams(**header, value_clip=clip)
    else:
        raise CheckpointFormatError(f"{path}: unknown kind {kind!r}")
    if expected is not None:
        if expected.kind != table.kind or not expected.compatible_with(table):
            raise CheckpointFormatError(
                f"{path}: checkpoint {table!r} is incompatible with {expected!r}"
            )

    param_kind = PARAM_KINDS[kind]
    for number, line in enumerate(lines[3:], start=4):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3 or parts[0] != param_kind:
            raise CheckpointFormatError(f"{path}:{number}: malformed row")
        try:
            key, action = _parse_key(parts[1])
            value = float(parts[2])
        except ValueError as exc:
            raise CheckpointFormatError(f"{path}:{number}: {exc}") from exc
        if not 0 <= action < table.vocab_size:
            raise CheckpointFormatError(f"{path}:{number}: action {action} out of range")
        table._writable_row(key)[action] = value
    return table
