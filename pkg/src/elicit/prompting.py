"""Prompt template loading and structured-output parsing helpers.

Prompt texts live in versioned template files under ``prompts/``, not in
code; a custom directory can be supplied for experimentation.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path


def load_prompt(name: str, prompt_dir: str | Path | None = None) -> str:
    if prompt_dir is not None:
        return (Path(prompt_dir) / f"{name}.txt").read_text("utf-8")
    return resources.files("elicit").joinpath(f"prompts/{name}.txt").read_text("utf-8")


def extract_json_object(text: str) -> dict:
    """Pull the first JSON object out of a completion (models wrap in prose/fences)."""
    start = text.find("{")
    end = text.rfind("}")
    if start < 0 or end <= start:
        raise ValueError("no JSON object in completion")
    doc = json.loads(text[start : end + 1])
    if not isinstance(doc, dict):
        raise ValueError("completion JSON is not an object")
    return doc
