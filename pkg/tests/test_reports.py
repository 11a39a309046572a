import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from petreport.errors import ReportParseError, SplitError, UnknownCenterError
from petreport.grammar import parse_finding_sentence
from petreport.ontology import RegionLabel, SECTION_NAMES
from petreport.reports import (
    TemplateDictionary,
    build_template,
    join_region_sections,
    normalize_report_text,
    parse_report_fields,
    render_findings,
    render_report_document,
    split_report_by_region,
    template_region_line_indices,
    ReportRecord,
)

# ---------------------------------------------------------------------------
# normalization


def test_whitespace_runs_longer_than_two_collapse():
    assert normalize_report_text("a   b") == "a b"
    assert normalize_report_text("a  b") == "a  b"  # runs of two survive
    assert normalize_report_text("a \t \n b") == "a b"
    assert normalize_report_text("a\n\nb") == "a\n\nb"


def test_roman_numerals_standalone_only():
    assert normalize_report_text("stage III lymphoma") == "stage 3 lymphoma"
    assert normalize_report_text("stage IV.") == "stage 4."
    assert normalize_report_text("grade I") == "grade 1"
    assert normalize_report_text("type XII variant") == "type 12 variant"
    assert normalize_report_text("IIIa") == "IIIa"       # not standalone
    assert normalize_report_text("VIIIth") == "VIIIth"
    assert normalize_report_text("CIV") == "CIV"


def test_symbol_substitution():
    assert normalize_report_text("“quoted”") == '"quoted"'
    assert normalize_report_text("range – wide") == "range - wide"
    assert normalize_report_text("size 3×4 cm") == "size 3x4 cm"
    assert normalize_report_text("a，b。") == "a,b."


@given(st.text(max_size=300))
@settings(max_examples=150, deadline=None)
def test_normalize_is_idempotent(text):
    once = normalize_report_text(text)
    assert normalize_report_text(once) == once


def test_normalize_leaves_clean_text_alone():
    clean = "Findings: the liver demonstrates no abnormal tracer uptake.\nNext line."
    assert normalize_report_text(clean) == clean


# ---------------------------------------------------------------------------
# report documents


DOC = """Center: 3
Gender: F
Clinical History: Staging work-up for suspected malignancy.
Findings:
HEAD AND NECK:
Unremarkable appearance of the brain, skull, and meninges.
Impression: No significant abnormality.
"""


def test_parse_report_fields():
    rec = parse_report_fields(DOC)
    assert rec.center_id == 3
    assert rec.gender == "female"
    assert rec.clinical_history.startswith("Staging")
    assert "HEAD AND NECK:" in rec.findings
    assert rec.impression == "No significant abnormality."
    assert rec.language_tag == "en"


def test_parse_missing_findings_raises():
    with pytest.raises(ReportParseError):
        parse_report_fields("Gender: M\nImpression: fine\n")
    with pytest.raises(ReportParseError):
        parse_report_fields("free text with no sections at all")


def test_parse_missing_optional_fields_default_empty():
    rec = parse_report_fields("Findings: something definite here")
    assert rec.findings == "something definite here"
    assert rec.gender == ""
    assert rec.clinical_history == ""
    assert rec.impression == ""
    assert rec.center_id == 0


def test_render_parse_round_trip():
    rec = ReportRecord(
        gender="male",
        clinical_history="Fever of unknown origin.",
        findings="CHEST:\nSurvey of the lungs and pleura reveals no suspicious focus.",
        impression="Nothing acute.",
        center_id=4,
    )
    again = parse_report_fields(render_report_document(rec))
    assert again == rec


# ---------------------------------------------------------------------------
# templates


def test_builtin_templates_cover_all_center_gender_pairs():
    td = TemplateDictionary.builtin()
    assert td.keys() == [(c, g) for c in (1, 2, 3, 4, 5) for g in ("female", "male")]


def test_template_structure_and_line_map():
    text = build_template(2, "male")
    indices = template_region_line_indices(text)
    assert sorted(indices) == list(range(1, 25))
    lines = text.split("\n")
    assert len(lines) == 28
    assert lines[0] == "HEAD AND NECK:"
    assert lines[6] == "CHEST:"
    assert lines[12] == "ABDOMEN:"
    assert lines[22] == "PELVIS AND BELOW:"


def test_templates_differ_by_gender_only_in_pelvic_line():
    for center in (1, 2, 3, 4, 5):
        male = build_template(center, "male").split("\n")
        female = build_template(center, "female").split("\n")
        diff = [i for i, (a, b) in enumerate(zip(male, female)) if a != b]
        idx = template_region_line_indices(build_template(center, "male"))
        assert diff == [idx[20]]
        assert "prostate" in male[idx[20]]
        assert "uterus" in female[idx[20]]


def test_templates_are_stylistically_distinct_across_centers():
    liver_lines = set()
    for center in (1, 2, 3, 4, 5):
        idx = template_region_line_indices(build_template(center, "male"))
        liver_lines.add(build_template(center, "male").split("\n")[idx[11]])
    assert len(liver_lines) == 5


def test_template_lookup_unknown_center_raises():
    td = TemplateDictionary.builtin()
    with pytest.raises(UnknownCenterError):
        td.lookup(99, "male")
    with pytest.raises(UnknownCenterError):
        td.lookup(1, "other")


def test_template_dictionary_dir_round_trip(tmp_path):
    td = TemplateDictionary.builtin()
    td.save_dir(tmp_path / "templates")
    again = TemplateDictionary.load_dir(tmp_path / "templates")
    assert again.keys() == td.keys()
    for key in td.keys():
        assert again.lookup(*key) == td.lookup(*key)
    with pytest.raises(UnknownCenterError):
        TemplateDictionary.load_dir(tmp_path / "empty")


def test_register_rejects_malformed_template():
    td = TemplateDictionary()
    with pytest.raises(ReportParseError):
        td.register(1, "male", "not a template at all")
    broken = build_template(1, "male").replace("CHEST:", "TORSO:")
    with pytest.raises(ReportParseError):
        td.register(1, "male", broken)


# ---------------------------------------------------------------------------
# findings rendering


def test_render_all_normal_returns_template_verbatim():
    template = build_template(3, "female")
    assert render_findings([], template) == template
    normals = [RegionLabel(5, 5, 8)]
    assert render_findings(normals, template) == template


def test_render_replaces_exactly_the_abnormal_lines():
    template = build_template(1, "male")
    labels = [RegionLabel(13, 1, 1), RegionLabel(6, 2, 3)]
    out = render_findings(labels, template)
    t_lines, o_lines = template.split("\n"), out.split("\n")
    assert len(t_lines) == len(o_lines)
    changed = [i for i, (a, b) in enumerate(zip(t_lines, o_lines)) if a != b]
    idx = template_region_line_indices(template)
    assert sorted(changed) == sorted([idx[13], idx[6]])
    assert parse_finding_sentence(o_lines[idx[13]]) == RegionLabel(13, 1, 1)
    assert parse_finding_sentence(o_lines[idx[6]]) == RegionLabel(6, 2, 3)


# ---------------------------------------------------------------------------
# region splitting


def test_split_template_into_sections():
    template = build_template(2, "female")
    sections = split_report_by_region(template)
    assert list(sections) == list(SECTION_NAMES)
    assert len(sections["head_neck"].split("\n")) == 5
    assert len(sections["chest"].split("\n")) == 5
    assert len(sections["abdomen"].split("\n")) == 9
    assert len(sections["pelvis_below"].split("\n")) == 5


def test_split_join_round_trip_up_to_whitespace():
    template = build_template(4, "male")
    rebuilt = join_region_sections(split_report_by_region(template))
    assert " ".join(rebuilt.split()) == " ".join(template.split())


def test_split_survives_whitespace_mangling():
    template = build_template(1, "male")
    flattened = " ".join(template.split())  # newlines gone
    sections = split_report_by_region(flattened)
    assert "brain" in sections["head_neck"]
    assert "liver" in sections["abdomen"]


def test_split_empty_input_gives_empty_sections():
    assert split_report_by_region("   \n ") == {name: "" for name in SECTION_NAMES}


def test_split_missing_marker_raises_with_raw_text():
    bad = build_template(1, "male").replace("ABDOMEN:", "MIDDLE:")
    with pytest.raises(SplitError) as err:
        split_report_by_region(bad)
    assert err.value.raw_text == bad
