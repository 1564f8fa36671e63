import re

import pytest

from elicit.ontology import (
    ALL_TRAITS,
    STRATEGY_ORDER,
    Strategy,
    TraitId,
    UnknownTraitError,
    default_ontology,
    load_ontology,
)


def test_trait_universe_cardinality(ontology):
    assert len(ontology.traits) == 10
    assert len(ALL_TRAITS) == 10
    assert [int(t) for t in ALL_TRAITS] == list(range(1, 11))


def test_strategy_set_cardinality(ontology):
    assert len(ontology.strategies) == 6
    assert len(STRATEGY_ORDER) == 6


def test_trait_by_id_f1_definition(ontology):
    assert "mimics verbatim" in ontology.trait_by_id("F1").definition


def test_trait_by_id_f10_definition(ontology):
    assert "circle of life" in ontology.trait_by_id("F10").definition


def test_trait_by_id_unknown(ontology):
    with pytest.raises(UnknownTraitError):
        ontology.trait_by_id("F11")
    with pytest.raises(UnknownTraitError):
        ontology.trait_by_id("F0")
    with pytest.raises(UnknownTraitError):
        ontology.trait_by_id("nonsense")


def test_every_trait_resolves(ontology):
    for t in ALL_TRAITS:
        d = ontology.trait_by_id(t.name)
        assert d.id == t
        assert d.name and d.definition
        assert d.marker_lexicon


def test_dialogic_scenarios_count_and_order(ontology):
    dialogic = ontology.dialogic_scenarios()
    assert len(dialogic) == 11
    assert dialogic[0].id == 3
    assert dialogic[0].name == "Description of a Picture"
    ids = [s.id for s in dialogic]
    assert ids == sorted(ids)
    assert 10 not in ids
    assert not {1, 2, 8, 10} & set(ids)


def test_strategy_affinities(ontology):
    assert ontology.strategy_affinity(Strategy.CORRECTION_INDUCING) == {TraitId.F1}
    assert ontology.strategy_affinity(Strategy.HYPOTHETICAL) == {TraitId.F3, TraitId.F4}
    assert ontology.strategy_affinity(Strategy.MULTI_STEP) == {TraitId.F5, TraitId.F6}
    assert ontology.strategy_affinity(Strategy.EMOTION_ORIENTED) == {TraitId.F6, TraitId.F8}
    # defaults for traits the strategy table leaves unmapped
    assert ontology.strategy_affinity(Strategy.OPEN_ENDED) == {
        TraitId.F2, TraitId.F7, TraitId.F9, TraitId.F10,
    }
    assert ontology.strategy_affinity(Strategy.PERSPECTIVE_TAKING) == {TraitId.F7, TraitId.F8}


def test_marker_lexicons_partition(ontology):
    seen: dict[str, TraitId] = {}
    for t, d in ontology.traits.items():
        for phrase in d.marker_lexicon:
            key = phrase.lower()
            assert key not in seen, f"{phrase!r} owned by {seen[key]} and {t}"
            seen[key] = t


def test_markers_never_cross_contained(ontology):
    # a phrase matching inside another trait's phrase would break detection
    for ta, da in ontology.traits.items():
        for pa in da.marker_lexicon:
            pat = re.compile(rf"\b{re.escape(pa)}\b", re.IGNORECASE)
            for tb, db in ontology.traits.items():
                if ta == tb:
                    continue
                for pb in db.marker_lexicon:
                    assert not pat.search(pb)


def test_score_levels(ontology):
    assert [l.score for l in ontology.score_levels] == [0, 1, 2, 3]
    assert "Predominantly stereotyped" in ontology.score_levels[3].description
    assert "Rarely or never" in ontology.score_levels[0].description


def test_load_ontology_from_path(tmp_path, ontology):
    # the embedded file round-trips through the --ontology override path
    from importlib import resources

    raw = resources.files("elicit").joinpath("data/ontology.json").read_text("utf-8")
    p = tmp_path / "ont.json"
    p.write_text(raw, encoding="utf-8")
    ont2 = load_ontology(p)
    assert ont2.version == ontology.version
    assert set(ont2.traits) == set(ontology.traits)


def test_default_ontology_cached():
    assert default_ontology() is default_ontology()
