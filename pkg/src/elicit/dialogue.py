"""Shared dialogue history types used by both agents."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from .ontology import TraitId


@dataclass(frozen=True)
class HistoryTurn:
    question: str
    response: str
    detections: Mapping[TraitId, bool] | None = None


DialogueHistory = list[HistoryTurn]


def render_history(history: list[HistoryTurn], limit: int | None = None) -> str:
    """Readable transcript block for prompt assembly."""
    turns = history if limit is None else history[-limit:]
    lines = []
    for t in turns:
        lines.append(f"Doctor: {t.question}")
        lines.append(f"Patient: {t.response}")
    return "\n".join(lines) if lines else "(no dialogue yet)"
