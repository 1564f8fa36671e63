"""Patient agent: probabilistic trait emission plus language realisation.

Emission: each trait is included independently with probability
sigma(logit(theta) - M*[confirmed] + offset), where theta is the patient's
clamped base rate, M suppresses traits the doctor has already confirmed, and
offset carries the optional strategy/affinity hooks (0 by default). At most
`max_traits_per_turn` traits survive; overflow keeps the highest-probability
ones.

Realisation: the template realiser is the deterministic twin of the
generation-backed realiser. It strips every known marker phrase out of the
anchor reply to get a neutral skeleton, then weaves exactly one marker per
emitted trait back in, so the rule detector recovers the emitted set exactly.
"""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .backends import GenerationRequest, Message
from .bank import PatientProfile, Snippet
from .dialogue import HistoryTurn, render_history
from .ontology import ALL_TRAITS, Ontology, TraitId, default_ontology
from .prompting import load_prompt

DEFAULT_SUPPRESSION = 4.0  # sigma(-4) ~ 1.8%: rare re-emission of confirmed traits


class EmptyAnchorError(ValueError):
    pass


@dataclass(frozen=True)
class EmissionParams:
    M: float = DEFAULT_SUPPRESSION
    max_traits_per_turn: int = 2
    epsilon: float = 1e-3
    strategy_gain: float = 0.0  # logit boost for traits in the asked strategy's affinity (off by default)
    affinity_enabled: bool = False  # question/definition semantic-affinity hook (off by default)
    affinity_weight: float = 0.0

    def __post_init__(self):
        if self.M <= 0:
            raise ValueError("suppression penalty M must be > 0")
        if self.max_traits_per_turn < 1:
            raise ValueError("max_traits_per_turn must be >= 1")


@dataclass(frozen=True)
class EmitDecision:
    probabilities: Mapping[TraitId, float]
    emitted: frozenset[TraitId]


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def emission_probability(
    theta: float, confirmed: bool, params: EmissionParams, offset: float = 0.0
) -> float:
    if not params.epsilon <= theta <= 1.0 - params.epsilon:
        raise ValueError(f"theta must be clamped to [{params.epsilon}, {1 - params.epsilon}]")
    if not confirmed and offset == 0.0:
        return theta  # sigma(logit(x)) == x
    logit = math.log(theta / (1.0 - theta))
    if confirmed:
        logit -= params.M
    return _sigmoid(logit + offset)


def emit_traits(
    profile: PatientProfile,
    confirmed: Iterable[TraitId],
    params: EmissionParams,
    rng: random.Random,
    logit_offsets: Mapping[TraitId, float] | None = None,
) -> EmitDecision:
    """Sample the traits this reply will express. Reads only profile.base_rates."""
    confirmed_set = frozenset(confirmed)
    offsets = logit_offsets or {}
    probabilities = {
        t: emission_probability(
            profile.base_rates[t], t in confirmed_set, params, offsets.get(t, 0.0)
        )
        for t in ALL_TRAITS
    }
    sampled = [t for t in ALL_TRAITS if rng.random() < probabilities[t]]
    if len(sampled) > params.max_traits_per_turn:
        sampled.sort(key=lambda t: (-probabilities[t], int(t)))
        sampled = sampled[: params.max_traits_per_turn]
    return EmitDecision(probabilities=probabilities, emitted=frozenset(sampled))


_FALLBACK_SKELETON = "Well I suppose it depends but I can try to say a little about that."
_WS_RE = re.compile(r"\s+")
_DANGLING_PUNCT_RE = re.compile(r"\s+([,.;!?])")


class TemplateRealiser:
    """Deterministic realiser; the exact-inverse partner of the rule detector."""

    kind = "template"

    def __init__(self, ontology: Ontology | None = None):
        self.ontology = ontology or default_ontology()
        alts = "|".join(
            re.escape(p)
            for t in self.ontology.traits.values()
            for p in t.marker_lexicon
        )
        self._any_marker = re.compile(rf"\b(?:{alts})\b", re.IGNORECASE)

    def _skeleton(self, text: str) -> str:
        # strip to a fixpoint: deleting one phrase may butt words together into another
        for _ in range(10):
            if not self._any_marker.search(text):
                break
            text = self._any_marker.sub(" ", text)
            text = _DANGLING_PUNCT_RE.sub(r"\1", _WS_RE.sub(" ", text)).strip()
        else:
            return _FALLBACK_SKELETON
        return text if text.strip(" ,.;!?") else _FALLBACK_SKELETON

    def realise(
        self,
        question: str,
        history: Sequence[HistoryTurn],
        anchor: Snippet,
        emitted: Iterable[TraitId],
        seed: int,
    ) -> str:
        if not question.strip():
            raise ValueError("question must be non-empty")
        if not anchor.patient_reply.strip():
            raise EmptyAnchorError("anchor reply is empty")
        rng = random.Random(seed)
        skeleton = self._skeleton(anchor.patient_reply)
        words = skeleton.split()
        for t in sorted(set(emitted)):
            lexicon = self.ontology.traits[t].marker_lexicon
            marker = lexicon[rng.randrange(len(lexicon))]
            pos = rng.randrange(1, len(words) + 1) if words else 0
            words.insert(pos, marker + ",")
        reply = " ".join(words)
        return reply if reply.strip() else _FALLBACK_SKELETON


class LlmRealiser:
    """Generation-backed realiser sharing the template twin's interface."""

    kind = "llm"

    def __init__(
        self,
        client,
        ontology: Ontology | None = None,
        model: str = "",
        temperature: float = 0.7,
        prompt_dir=None,
    ):
        self.client = client
        self.ontology = ontology or default_ontology()
        self.model = model
        self.temperature = temperature
        self._template = load_prompt("realise", prompt_dir)

    def realise(
        self,
        question: str,
        history: Sequence[HistoryTurn],
        anchor: Snippet,
        emitted: Iterable[TraitId],
        seed: int,
    ) -> str:
        if not question.strip():
            raise ValueError("question must be non-empty")
        if not anchor.patient_reply.strip():
            raise EmptyAnchorError("anchor reply is empty")
        emitted_sorted = sorted(set(emitted))
        if emitted_sorted:
            emitted_text = "\n".join(
                f"- {self.ontology.traits[t].name}: {self.ontology.traits[t].definition}"
                for t in emitted_sorted
            )
        else:
            emitted_text = "(none)"
        prompt = self._template.format(
            history=render_history(list(history)),
            question=question,
            anchor=anchor.patient_reply,
            emitted=emitted_text,
        )
        request = GenerationRequest(
            messages=(Message("user", prompt),),
            temperature=self.temperature,
            model=self.model,
        )
        reply = self.client.complete(request).strip()
        if not reply:
            reply = _FALLBACK_SKELETON
        return reply


def realise(backend, question, history, anchor, emitted, seed) -> str:
    return backend.realise(question, history, anchor, emitted, seed)
