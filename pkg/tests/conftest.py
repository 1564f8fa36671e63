import pytest

from elicit.bank import SnippetBank, Snippet, SynthSpec, synthesize_bank
from elicit.ontology import TraitId, default_ontology


@pytest.fixture(scope="session")
def ontology():
    return default_ontology()


@pytest.fixture(scope="session")
def synth_bank():
    return synthesize_bank(SynthSpec(n_patients=4, snippets_per_patient=8), seed=42)


def make_snippet(
    patient_id="P001",
    session_id="S1",
    scenario_id=3,
    doctor_curr="Can you tell me about your day?",
    patient_reply="It was a long day but it went fine overall.",
    traits=(),
):
    return Snippet(
        patient_id=patient_id,
        session_id=session_id,
        scenario_id=scenario_id,
        doctor_curr=doctor_curr,
        patient_reply=patient_reply,
        traits=frozenset(TraitId.parse(t) if isinstance(t, str) else t for t in traits),
    )


@pytest.fixture
def tiny_bank():
    return SnippetBank(
        snippets=(
            make_snippet("P001", doctor_curr="Tell me about school."),
            make_snippet("P001", doctor_curr="What do you do on weekends?"),
            make_snippet("P002", doctor_curr="Tell me about your job."),
            make_snippet("P002", doctor_curr="How was the trip?"),
            make_snippet("P003", doctor_curr="Tell me about school."),
        )
    )
