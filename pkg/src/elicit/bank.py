"""Clinical snippet bank: ingestion, validation, synthesis, and per-patient base rates.

A bank is a flat sequence of (doctor question, patient reply) snippets with
trait annotations. File format is JSON-lines with fields
``patient_id, session_id, scenario_id, doctor_curr, patient_reply, traits``
plus an optional ``excluded_from_eval`` boolean.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .ontology import ALL_TRAITS, Ontology, TraitId, UnknownTraitError, default_ontology

THETA_EPS = 1e-3  # clamp keeps logit(theta) finite

REQUIRED_FIELDS = ("patient_id", "session_id", "scenario_id", "doctor_curr", "patient_reply", "traits")


class BankSchemaError(ValueError):
    """A bank line failed validation; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class UnknownPatientError(KeyError):
    pass


@dataclass(frozen=True)
class Snippet:
    patient_id: str
    session_id: str
    scenario_id: int
    doctor_curr: str
    patient_reply: str
    traits: frozenset[TraitId]
    excluded_from_eval: bool = False

    def to_dict(self) -> dict:
        d = {
            "patient_id": self.patient_id,
            "session_id": self.session_id,
            "scenario_id": self.scenario_id,
            "doctor_curr": self.doctor_curr,
            "patient_reply": self.patient_reply,
            "traits": [t.name for t in sorted(self.traits)],
        }
        if self.excluded_from_eval:
            d["excluded_from_eval"] = True
        return d


@dataclass
class SnippetBank:
    snippets: tuple[Snippet, ...]
    by_patient: dict[str, tuple[int, ...]] = field(default_factory=dict)
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.by_patient:
            index: dict[str, list[int]] = {}
            for i, s in enumerate(self.snippets):
                index.setdefault(s.patient_id, []).append(i)
            self.by_patient = {p: tuple(v) for p, v in index.items()}

    def patient_ids(self) -> list[str]:
        return sorted(self.by_patient)

    def patient_snippets(self, patient_id: str) -> list[Snippet]:
        if patient_id not in self.by_patient:
            raise UnknownPatientError(f"no snippets for patient {patient_id!r}")
        return [self.snippets[i] for i in self.by_patient[patient_id]]

    def __len__(self) -> int:
        return len(self.snippets)


@dataclass(frozen=True)
class PatientProfile:
    patient_id: str
    base_rates: dict[TraitId, float]  # clamped to [eps, 1-eps]
    total_turns: int
    ground_truth: frozenset[TraitId]  # traits with raw rate > 0


def _parse_line(line_no: int, raw: str) -> Snippet:
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as e:
        raise BankSchemaError(line_no, f"invalid JSON ({e.msg})") from None
    if not isinstance(obj, dict):
        raise BankSchemaError(line_no, "expected a JSON object")
    for f in REQUIRED_FIELDS:
        if f not in obj:
            raise BankSchemaError(line_no, f"missing field {f!r}")
    scenario_id = obj["scenario_id"]
    if not isinstance(scenario_id, int) or not 1 <= scenario_id <= 15:
        raise BankSchemaError(line_no, f"scenario_id out of range 1..15: {scenario_id!r}")
    if not isinstance(obj["doctor_curr"], str) or not obj["doctor_curr"].strip():
        raise BankSchemaError(line_no, "doctor_curr must be non-empty text")
    if not isinstance(obj["patient_reply"], str) or not obj["patient_reply"].strip():
        raise BankSchemaError(line_no, "patient_reply must be non-empty text")
    try:
        traits = frozenset(TraitId.parse(t) for t in obj["traits"])
    except UnknownTraitError as e:
        raise BankSchemaError(line_no, str(e)) from None
    return Snippet(
        patient_id=str(obj["patient_id"]),
        session_id=str(obj["session_id"]),
        scenario_id=scenario_id,
        doctor_curr=obj["doctor_curr"],
        patient_reply=obj["patient_reply"],
        traits=traits,
        excluded_from_eval=bool(obj.get("excluded_from_eval", False)),
    )


def ingest(path: str | Path) -> SnippetBank:
    """Load and validate a JSON-lines snippet bank.

    Raises BankSchemaError naming the first offending line; an empty file
    yields an empty bank carrying a warning.
    """
    text = Path(path).read_text("utf-8")
    snippets: list[Snippet] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        snippets.append(_parse_line(line_no, raw))
    warnings = () if snippets else ("bank is empty",)
    return SnippetBank(snippets=tuple(snippets), warnings=warnings)


def write_bank(bank: SnippetBank, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in bank.snippets:
            fh.write(json.dumps(s.to_dict(), sort_keys=True) + "\n")


def base_rates(bank: SnippetBank, patient_id: str) -> PatientProfile:
    """Per-trait empirical emission rates for one patient.

    Raw rate is the fraction of the patient's snippets annotated with the
    trait; rates are clamped to [1e-3, 1-1e-3], ground truth is the set of
    traits with raw rate > 0.
    """
    snippets = bank.patient_snippets(patient_id)
    total = len(snippets)
    rates: dict[TraitId, float] = {}
    ground_truth = set()
    for trait in ALL_TRAITS:
        count = sum(1 for s in snippets if trait in s.traits)
        raw = count / total
        if raw > 0:
            ground_truth.add(trait)
        rates[trait] = min(max(raw, THETA_EPS), 1.0 - THETA_EPS)
    return PatientProfile(
        patient_id=patient_id,
        base_rates=rates,
        total_turns=total,
        ground_truth=frozenset(ground_truth),
    )


@dataclass(frozen=True)
class SynthSpec:
    n_patients: int
    snippets_per_patient: int
    trait_profile_seed: int | None = None  # defaults to the main seed

    def validate(self) -> None:
        if self.n_patients < 1 or self.snippets_per_patient < 1:
            raise ValueError("n_patients and snippets_per_patient must be >= 1")


_QUESTION_TEMPLATES = [
    "Can you tell me about {topic}?",
    "What was the last time you dealt with {topic} like for you?",
    "How do you usually handle {topic} during the week?",
    "What comes to mind first when someone brings up {topic}?",
    "Could you describe {topic} the way you would to a friend?",
    "What happened the most recent time {topic} came up?",
]

_REPLY_TEMPLATES = [
    "Well I was thinking about {topic} just the other day and it took most of the afternoon.",
    "It depends on the day but usually {topic} goes fine and then I move on to something else.",
    "I remember one time with {topic} where everything went sideways and we had to start over.",
    "Mostly I keep to a routine so {topic} does not change much from week to week.",
    "My brother asked me about {topic} once and I did not really know what to tell him.",
    "There was a stretch last year when {topic} was all I could think about honestly.",
]

_TOPIC_WORDS = [
    "school", "my job", "the weekend", "dinner plans", "the bus ride",
    "my neighbors", "video games", "the holidays", "grocery shopping", "my old town",
]


def weave_markers(skeleton: str, markers: list[str], rng: random.Random) -> str:
    """Insert each marker phrase mid-sentence at a seeded position."""
    words = skeleton.split()
    for marker in markers:
        pos = rng.randrange(1, len(words) + 1) if words else 0
        words.insert(pos, marker + ",")
    return " ".join(words)


def synthesize_bank(spec: SynthSpec, seed: int, ontology: Ontology | None = None) -> SnippetBank:
    """Deterministically generate a synthetic snippet bank.

    Each patient receives a random profile of 1-10 active traits; replies are
    template sentences with the active traits' marker phrases woven in, so the
    rule-based detector recovers each snippet's annotations exactly.
    """
    spec.validate()
    ont = ontology or default_ontology()
    profile_rng = random.Random(spec.trait_profile_seed if spec.trait_profile_seed is not None else seed)
    rng = random.Random(seed)

    snippets: list[Snippet] = []
    for p in range(spec.n_patients):
        patient_id = f"P{p + 1:03d}"
        n_active = profile_rng.randint(1, 10)
        active = sorted(profile_rng.sample(ALL_TRAITS, n_active))
        # per-trait propensity: how often an active trait shows up in this patient's turns
        propensity = {t: profile_rng.uniform(0.15, 0.6) for t in active}

        dialogic_ids = [s.id for s in ont.dialogic_scenarios()]
        patient_turn_traits: list[list[TraitId]] = []
        for i in range(spec.snippets_per_patient):
            drawn = [t for t in active if rng.random() < propensity[t]]
            if len(drawn) > 2:
                drawn = sorted(rng.sample(drawn, 2))
            patient_turn_traits.append(drawn)
        # ground truth must be non-empty: force one active trait into the first turn
        if not any(patient_turn_traits):
            patient_turn_traits[0] = [rng.choice(active)]

        for i, turn_traits in enumerate(patient_turn_traits):
            topic = rng.choice(_TOPIC_WORDS)
            question = rng.choice(_QUESTION_TEMPLATES).format(topic=topic)
            skeleton = rng.choice(_REPLY_TEMPLATES).format(topic=topic)
            markers = [rng.choice(ont.traits[t].marker_lexicon) for t in sorted(turn_traits)]
            reply = weave_markers(skeleton, markers, rng)
            snippets.append(
                Snippet(
                    patient_id=patient_id,
                    session_id=f"S{(i // 11) + 1}",
                    scenario_id=dialogic_ids[i % len(dialogic_ids)],
                    doctor_curr=question,
                    patient_reply=reply,
                    traits=frozenset(turn_traits),
                )
            )
    return SnippetBank(snippets=tuple(snippets))
