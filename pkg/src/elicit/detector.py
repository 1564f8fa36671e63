"""Trait detection over patient responses.

Two interchangeable backends: a deterministic lexical detector that matches
each trait's marker phrases (word-boundary, case-insensitive, no stemming:
markers are verbatim exemplars and fuzziness would break the realiser
round-trip), and a zero-shot generation-backed detector that classifies the
response against the full trait definitions.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Mapping

from .backends import GenerationRequest, Message
from .ontology import ALL_TRAITS, Ontology, TraitId, default_ontology
from .prompting import extract_json_object, load_prompt


class EmptyResponseError(ValueError):
    pass


class DetectorParseError(RuntimeError):
    """The generation backend returned unusable labels twice in a row."""


@dataclass(frozen=True)
class DetectionResult:
    labels: Mapping[TraitId, bool]
    evidence: Mapping[TraitId, str]  # spans only for traits labelled true

    def positive(self) -> frozenset[TraitId]:
        return frozenset(t for t, v in self.labels.items() if v)

    def to_dict(self) -> dict:
        return {
            "labels": {t.name: bool(self.labels[t]) for t in ALL_TRAITS},
            "evidence": {t.name: s for t, s in sorted(self.evidence.items())},
        }


class RuleDetector:
    """Lexical detector: trait is present iff any of its marker phrases occurs."""

    kind = "rule"

    def __init__(self, ontology: Ontology | None = None):
        self.ontology = ontology or default_ontology()
        self._patterns: dict[TraitId, re.Pattern] = {}
        for t, definition in self.ontology.traits.items():
            alts = "|".join(re.escape(p) for p in definition.marker_lexicon)
            self._patterns[t] = re.compile(rf"\b(?:{alts})\b", re.IGNORECASE)

    def detect(self, question: str, response: str) -> DetectionResult:
        if not response.strip():
            raise EmptyResponseError("response must be non-empty")
        labels: dict[TraitId, bool] = {}
        evidence: dict[TraitId, str] = {}
        for t in ALL_TRAITS:
            m = self._patterns[t].search(response)
            labels[t] = m is not None
            if m is not None:
                evidence[t] = m.group(0)
        return DetectionResult(labels=labels, evidence=evidence)


class LlmDetector:
    """Zero-shot detector: dialogue context plus trait definitions, JSON labels out."""

    kind = "llm"

    def __init__(self, client, ontology: Ontology | None = None, model: str = ""):
        self.client = client
        self.ontology = ontology or default_ontology()
        self.model = model
        self._template = load_prompt("detect")

    def _request(self, question: str, response: str) -> GenerationRequest:
        definitions = "\n".join(
            f"{t.name}: {d.name}. {d.definition}" for t, d in sorted(self.ontology.traits.items())
        )
        prompt = self._template.format(
            definitions=definitions, question=question, response=response
        )
        return GenerationRequest(
            messages=(Message("user", prompt),),
            temperature=0.0,
            model=self.model,
        )

    def detect(self, question: str, response: str) -> DetectionResult:
        if not response.strip():
            raise EmptyResponseError("response must be non-empty")
        request = self._request(question, response)
        last_error: Exception | None = None
        for _ in range(2):  # one retry on parse failure
            text = self.client.complete(request)
            try:
                doc = extract_json_object(text)
                labels = {t: bool(doc[t.name]) for t in ALL_TRAITS}
            except (KeyError, ValueError) as e:
                last_error = e
                continue
            return DetectionResult(labels=labels, evidence={})
        raise DetectorParseError(f"unparseable detector output: {last_error}")


def detect(backend, question: str, response: str) -> DetectionResult:
    return backend.detect(question, response)
