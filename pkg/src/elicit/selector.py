"""Per-turn questioning cycle: gap analysis, strategy selection, question generation.

Two backends share one interface. The heuristic backend is a pure function of
the session context and exists so the whole loop runs deterministically
offline; the generation backend prompts a model with structured templates.
In both cases the priority-trait list is computed by the engine from the
belief state, never taken from model output.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from . import belief as belief_mod
from .backends import GenerationRequest, Message
from .belief import BeliefState
from .dialogue import HistoryTurn, render_history
from .ontology import (
    STRATEGY_ORDER,
    Ontology,
    Scenario,
    Strategy,
    TraitId,
    default_ontology,
)
from .prompting import extract_json_object, load_prompt

TRAIT_TOKEN_RE = re.compile(r"\bF(?:10|[1-9])\b")


class SelectorError(RuntimeError):
    """Backend produced unusable output twice in a row."""


class QuestionConstraintError(SelectorError):
    """Question leaked a trait id or the strategy name after one retry."""


@dataclass(frozen=True)
class SessionContext:
    clinical_background: str
    history: list[HistoryTurn]
    belief: BeliefState
    topic: Scenario
    ontology: Ontology = field(default_factory=default_ontology)


@dataclass(frozen=True)
class Thought:
    confirmed_analysis: str
    priority_traits: tuple[TraitId, ...]
    elicitation_conditions: str
    strategy_rationale: str

    def to_dict(self) -> dict:
        return {
            "confirmed_analysis": self.confirmed_analysis,
            "priority_traits": [t.name for t in self.priority_traits],
            "elicitation_conditions": self.elicitation_conditions,
            "strategy_rationale": self.strategy_rationale,
        }


def question_violates(question: str, strategy: Strategy, ontology: Ontology) -> bool:
    """True when the question names a trait id or the selected strategy."""
    if TRAIT_TOKEN_RE.search(question):
        return True
    display = ontology.strategy_display_name(strategy)
    return display.lower() in question.lower()


def _plan_from_priority(priority: tuple[TraitId, ...], ontology: Ontology) -> Strategy:
    for trait in priority:
        for strategy in STRATEGY_ORDER:
            if trait in ontology.strategy_affinity(strategy):
                return strategy
    return Strategy.OPEN_ENDED


# lead-in varies with the priority head so the template is a function of it
_LEAD_INS = [
    "Let's stay on this a little longer.",
    "I want to come back to something.",
    "Thanks for that.",
    "That's helpful to hear.",
    "Let's take this one more step.",
    "I was wondering about something.",
    "Bear with me for a moment.",
    "Let me ask it another way.",
    "Here's a different angle.",
    "One more thing on this.",
]

_ASK_TEMPLATES: dict[Strategy, str] = {
    Strategy.OPEN_ENDED: "{lead} Tell me about {topic}. What has that been like for you recently?",
    Strategy.EMOTION_ORIENTED: (
        "{lead} When you think about {topic}, what feelings come up for you, "
        "and what do you usually do with those feelings?"
    ),
    Strategy.HYPOTHETICAL: (
        "{lead} Imagine that tomorrow everything about {topic} suddenly changed. "
        "What would you do first, and who would you tell?"
    ),
    Strategy.MULTI_STEP: (
        "{lead} Walk me through {topic} from start to finish: "
        "what happens first, what comes in the middle, and how does it usually end?"
    ),
    Strategy.PERSPECTIVE_TAKING: (
        "{lead} Think of someone who knows you well. How would they describe {topic}, "
        "and where do you think their view differs from yours?"
    ),
    Strategy.CORRECTION_INDUCING: (
        "{lead} If I remember right, you told me earlier that {topic} never really "
        "matters to you at all. Did I get that right?"
    ),
}


def heuristic_question(topic: Scenario, strategy: Strategy, head: TraitId | None) -> str:
    lead = _LEAD_INS[(int(head) - 1) % len(_LEAD_INS)] if head is not None else _LEAD_INS[0]
    return _ASK_TEMPLATES[strategy].format(lead=lead, topic=topic.name.lower())


class HeuristicSelector:
    """Deterministic twin: affinity-table planning, template questions."""

    kind = "heuristic"

    def think(self, ctx: SessionContext) -> Thought:
        priority = tuple(belief_mod.priority_traits(ctx.belief, k=4))
        confirmed = sorted(ctx.belief.confirmed)
        confirmed_text = ", ".join(t.name for t in confirmed) if confirmed else "none yet"
        priority_names = ", ".join(
            f"{t.name} ({ctx.ontology.traits[t].name})" for t in priority
        )
        return Thought(
            confirmed_analysis=f"Confirmed so far: {confirmed_text}.",
            priority_traits=priority,
            elicitation_conditions=(
                f"Highest remaining uncertainty: {priority_names or 'none'}. "
                f"Create conditions on the topic '{ctx.topic.name}' under which these patterns surface."
            ),
            strategy_rationale=(
                "Choose the first strategy whose elicitation profile covers the top remaining trait."
            ),
        )

    def plan(self, ctx: SessionContext, thought: Thought) -> Strategy:
        return _plan_from_priority(thought.priority_traits, ctx.ontology)

    def ask(self, ctx: SessionContext, thought: Thought, strategy: Strategy) -> str:
        head = thought.priority_traits[0] if thought.priority_traits else None
        question = heuristic_question(ctx.topic, strategy, head)
        if question_violates(question, strategy, ctx.ontology):
            raise QuestionConstraintError(f"template question leaked vocabulary: {question!r}")
        return question


class LlmSelector:
    """Generation-backed selector with structured JSON outputs and one retry per step."""

    kind = "llm"

    def __init__(
        self,
        client,
        model: str = "",
        ask_temperature: float = 0.7,
        prompt_dir=None,
    ):
        self.client = client
        self.model = model
        self.ask_temperature = ask_temperature
        self._think_tpl = load_prompt("think", prompt_dir)
        self._plan_tpl = load_prompt("plan", prompt_dir)
        self._ask_tpl = load_prompt("ask", prompt_dir)

    def _strategies_text(self, ontology: Ontology) -> str:
        return "\n".join(
            f"- {p.strategy.value}: {p.description}" for p in ontology.strategies.values()
        )

    def think(self, ctx: SessionContext) -> Thought:
        priority = tuple(belief_mod.priority_traits(ctx.belief, k=4))
        confirmed = sorted(ctx.belief.confirmed)
        prompt = self._think_tpl.format(
            background=ctx.clinical_background or "(none)",
            history=render_history(ctx.history),
            topic=ctx.topic.name,
            strategies=self._strategies_text(ctx.ontology),
            confirmed=", ".join(t.name for t in confirmed) or "none yet",
            priority="\n".join(
                f"- {t.name}: {ctx.ontology.traits[t].name} -- {ctx.ontology.traits[t].definition}"
                for t in priority
            )
            or "(all traits confirmed)",
        )
        request = GenerationRequest(
            messages=(Message("user", prompt),), temperature=0.0, model=self.model
        )
        last: Exception | None = None
        for _ in range(2):
            text = self.client.complete(request)
            try:
                doc = extract_json_object(text)
                return Thought(
                    confirmed_analysis=str(doc["confirmed_analysis"]),
                    priority_traits=priority,  # engine-computed, model output ignored
                    elicitation_conditions=str(doc["elicitation_conditions"]),
                    strategy_rationale=str(doc["strategy_rationale"]),
                )
            except (KeyError, ValueError) as e:
                last = e
        raise SelectorError(f"unparseable reasoning output: {last}")

    def plan(self, ctx: SessionContext, thought: Thought) -> Strategy:
        prompt = self._plan_tpl.format(
            background=ctx.clinical_background or "(none)",
            history=render_history(ctx.history),
            thought=thought.strategy_rationale + "\n" + thought.elicitation_conditions,
            strategies=self._strategies_text(ctx.ontology),
        )
        request = GenerationRequest(
            messages=(Message("user", prompt),), temperature=0.0, model=self.model
        )
        last: Exception | None = None
        for _ in range(2):
            text = self.client.complete(request)
            try:
                doc = extract_json_object(text)
                return Strategy(str(doc["strategy"]).strip())
            except (KeyError, ValueError) as e:
                last = e
        raise SelectorError(f"strategy outside the six-element set: {last}")

    def ask(self, ctx: SessionContext, thought: Thought, strategy: Strategy) -> str:
        prompt = self._ask_tpl.format(
            history=render_history(ctx.history),
            topic=ctx.topic.name,
            thought=thought.elicitation_conditions,
            strategy_description=ctx.ontology.strategies[strategy].description,
        )
        request = GenerationRequest(
            messages=(Message("user", prompt),),
            temperature=self.ask_temperature,
            model=self.model,
        )
        last_question = ""
        for _ in range(2):
            text = self.client.complete(request)
            try:
                doc = extract_json_object(text)
                question = str(doc["question"]).strip()
            except (KeyError, ValueError):
                continue
            if question and not question_violates(question, strategy, ctx.ontology):
                return question
            last_question = question
        raise QuestionConstraintError(
            f"question violated constraints after retry: {last_question!r}"
        )


def think(backend, ctx: SessionContext) -> Thought:
    return backend.think(ctx)


def plan(backend, ctx: SessionContext, thought: Thought) -> Strategy:
    return backend.plan(ctx, thought)


def ask(backend, ctx: SessionContext, thought: Thought, strategy: Strategy) -> str:
    return backend.ask(ctx, thought, strategy)
