import numpy as np
import pytest

from petreport import grammar
from petreport.errors import InvalidVolumeError
from petreport.ontology import (
    DENSITY_NAMES,
    DENSITY_NORMAL,
    LabelMatrix,
    N_DENSITY,
    N_REGIONS,
    N_UPTAKE,
    REGION_NAMES,
    RegionLabel,
    SECTION_REGION_RANGES,
    UPTAKE_NAMES,
    UPTAKE_NORMAL,
    UPTAKE_SEVERITY_ORDER,
    section_of_region,
)


def test_ontology_cardinalities():
    assert len(REGION_NAMES) == 24
    assert N_REGIONS == 24
    assert len(UPTAKE_NAMES) == N_UPTAKE == 5
    assert len(DENSITY_NAMES) == N_DENSITY == 8
    assert UPTAKE_NAMES[5] == "Normal"
    assert DENSITY_NAMES[8] == "Normal"
    assert sorted(UPTAKE_SEVERITY_ORDER) == [1, 2, 3, 4, 5]
    # sections tile the region ids exactly
    covered = []
    for lo, hi in SECTION_REGION_RANGES.values():
        covered.extend(range(lo, hi + 1))
    assert sorted(covered) == list(range(1, 25))
    assert section_of_region(1) == "head_neck"
    assert section_of_region(13) == "abdomen"
    assert section_of_region(24) == "pelvis_below"


def test_label_matrix_all_normal_and_bounds():
    m = LabelMatrix.all_normal(3)
    assert m.values.shape == (3, 24, 2)
    assert (m.uptake() == UPTAKE_NORMAL).all()
    assert (m.density() == DENSITY_NORMAL).all()
    with pytest.raises(InvalidVolumeError):
        LabelMatrix(np.zeros((1, 24, 2), dtype=int))  # class 0 out of range
    with pytest.raises(InvalidVolumeError):
        LabelMatrix(np.full((1, 23, 2), 5))


def test_label_matrix_from_labels_and_round_trip_json():
    m = LabelMatrix.from_labels([RegionLabel(13, 1, 1), RegionLabel(6, 2, 3)])
    assert m.values[0, 12, 0] == 1 and m.values[0, 12, 1] == 1
    assert m.values[0, 5, 0] == 2 and m.values[0, 5, 1] == 3
    assert m.values[0, 0, 0] == UPTAKE_NORMAL
    again = LabelMatrix.from_jsonable(m.to_jsonable())
    assert again == m
    assert len(m.abnormal_rows(0)) == 2


def test_alias_table_is_unambiguous():
    # registration would have raised on conflicts; spot-check resolution
    assert grammar.REGION_ALIASES["spleen"] == 13
    assert grammar.REGION_ALIASES["lungs and pleura"] == 6
    assert grammar.REGION_ALIASES["uterus and adnexa"] == 20
    assert grammar.REGION_ALIASES["prostate and seminal vesicles"] == 20
    assert grammar.REGION_ALIASES["pelvic and inguinal lymph nodes"] == 21
    assert "pelvic" not in grammar.REGION_ALIASES
    assert "lymph nodes" not in grammar.REGION_ALIASES


def test_render_parse_round_trip_every_combination():
    for region in range(1, N_REGIONS + 1):
        for uptake in range(1, N_UPTAKE + 1):
            for density in range(1, N_DENSITY + 1):
                sentence = grammar.render_finding_sentence(region, uptake, density)
                parsed = grammar.parse_finding_sentence(sentence)
                assert parsed == RegionLabel(region, uptake, density), sentence


def test_parse_example_sentence():
    lab = grammar.parse_finding_sentence(
        "The spleen demonstrates intense abnormal tracer uptake with enlarged lymph nodes."
    )
    assert lab == RegionLabel(13, 1, 1)


def test_parse_rejects_off_grammar_sentences():
    assert grammar.parse_finding_sentence("The spleen is fine") is None
    assert grammar.parse_finding_sentence("demonstrates things with stuff") is None
    assert grammar.parse_finding_sentence(
        "The spleen demonstrates intense abnormal tracer uptake with something odd."
    ) is None
    # filler between skeleton parts must not parse
    assert grammar.parse_finding_sentence(
        "Notably the spleen demonstrates intense abnormal tracer uptake with enlarged lymph nodes."
    ) is None


def test_phrase_tables_do_not_collide_with_skeleton():
    for phrase in list(grammar.UPTAKE_PHRASES.values()) + list(grammar.DENSITY_PHRASES.values()):
        assert " with " not in f" {phrase} "
        assert "demonstrates" not in phrase
        assert "unremarkable" not in phrase


def test_explicit_normal_and_mentions():
    sentence = "The lungs and pleura are unremarkable"
    assert grammar.is_explicit_normal(sentence)
    assert grammar.find_region_mentions(sentence) == [6]
    # sub-structure statements resolve to the parent region
    assert grammar.find_region_mentions("the pleura appears unremarkable") == [6]
    assert grammar.find_region_mentions("prostate and seminal vesicles unremarkable") == [20]
    # longest alias wins; no double count from contained aliases
    assert grammar.find_region_mentions("the pelvic and inguinal lymph nodes are unremarkable") == [21]
    assert grammar.find_region_mentions("liver and spleen unremarkable") == [11, 13]
    assert grammar.find_region_mentions("no organs here") == []


def test_sentence_split_is_whitespace_robust():
    text = "The liver demonstrates intense abnormal tracer uptake with a focal lesion. CHEST: The lungs are clear.\nThe spleen is unremarkable."
    sentences = grammar.split_sentences(text)
    assert "The liver demonstrates intense abnormal tracer uptake with a focal lesion" in sentences
    assert any("spleen" in s for s in sentences)
    # flattened whitespace (as after tokenization round trips) still parses
    flat = text.replace("\n", " ")
    labs = [grammar.parse_finding_sentence(s) for s in grammar.split_sentences(flat)]
    assert RegionLabel(11, 1, 2) in labs
