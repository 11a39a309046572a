"""Report documents, healthy templates, and region splitting.

A report document is plain text with labeled sections (Gender, Clinical
History, Findings, Impression, optionally Center). Healthy templates are
per-(center, gender) findings texts written in the closed grammar: four
section markers, one normal sentence per region, one region per line.
The bundled templates are synthetic fixtures, one writing style per
center, with gendered pelvic wording.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

from .errors import ReportParseError, SplitError, UnknownCenterError
from .grammar import PELVIC_PHRASE, REGION_PHRASES, render_finding_sentence
from .ontology import (
    DENSITY_NORMAL,
    N_REGIONS,
    RegionLabel,
    SECTION_NAMES,
    SECTION_REGION_RANGES,
    SECTION_TITLES,
    UPTAKE_NORMAL,
)

# ---------------------------------------------------------------------------
# text normalization

# One-to-one symbol substitutions; normalization must never grow the text.
_SYMBOL_TABLE = str.maketrans({
    "“": '"', "”": '"', "„": '"', "«": '"', "»": '"',
    "‘": "'", "’": "'", "‚": "'",
    "–": "-", "—": "-", "‑": "-", "−": "-",
    "，": ",", "。": ".", "：": ":", "；": ";",
    "（": "(", "）": ")", "！": "!", "？": "?", "、": ",",
    "×": "x", "÷": "/", " ": " ",
})

_ROMAN = {
    "XII": "12", "XI": "11", "X": "10", "IX": "9", "VIII": "8", "VII": "7",
    "VI": "6", "V": "5", "IV": "4", "III": "3", "II": "2", "I": "1",
}
_ROMAN_RE = re.compile(
    r"(?<![A-Za-z0-9])(" + "|".join(sorted(_ROMAN, key=len, reverse=True)) + r")(?![A-Za-z0-9])"
)
_LONG_WHITESPACE = re.compile(r"\s{3,}")


def normalize_report_text(text: str) -> str:
    """Canonicalize report text: symbol substitution, standalone Roman
    numerals I..XII to Arabic, whitespace runs longer than two collapsed
    to one space. Idempotent, and never increases length.
    """
    out = text.translate(_SYMBOL_TABLE)
    out = _ROMAN_RE.sub(lambda m: _ROMAN[m.group(1)], out)
    out = _LONG_WHITESPACE.sub(" ", out)
    return out


# ---------------------------------------------------------------------------
# report documents

_FIELD_HEADERS = ("Center", "Gender", "Clinical History", "Findings", "Impression")
_HEADER_RE = re.compile(
    r"^(?P<name>" + "|".join(_FIELD_HEADERS) + r")\s*:\s*", re.IGNORECASE | re.MULTILINE
)

_GENDER_MAP = {"m": "male", "male": "male", "f": "female", "female": "female"}


@dataclass
class ReportRecord:
    """Parsed report document."""

    gender: str = ""
    clinical_history: str = ""
    findings: str = ""
    impression: str = ""
    center_id: int = 0
    language_tag: str = "en"


def parse_report_fields(raw: str) -> ReportRecord:
    """Extract labeled sections from a report document.

    Findings is mandatory; everything else defaults to empty. The gender
    value is canonicalized to male/female when recognizable.
    """
    matches = list(_HEADER_RE.finditer(raw))
    if not matches:
        raise ReportParseError("no labeled sections found")
    fields: Dict[str, str] = {}
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(raw)
        name = m.group("name").strip().lower()
        fields[name] = raw[m.end():end].strip()
    if "findings" not in fields or not fields["findings"]:
        raise ReportParseError("report document has no Findings section")
    gender_raw = fields.get("gender", "").strip().lower()
    gender = _GENDER_MAP.get(gender_raw, gender_raw)
    center_raw = fields.get("center", "").strip()
    try:
        center_id = int(center_raw) if center_raw else 0
    except ValueError as exc:
        raise ReportParseError(f"non-numeric Center value: {center_raw!r}") from exc
    return ReportRecord(
        gender=gender,
        clinical_history=fields.get("clinical history", ""),
        findings=fields["findings"],
        impression=fields.get("impression", ""),
        center_id=center_id,
    )


def render_report_document(record: ReportRecord) -> str:
    parts = []
    if record.center_id:
        parts.append(f"Center: {record.center_id}")
    parts.append(f"Gender: {record.gender}")
    parts.append(f"Clinical History: {record.clinical_history}")
    parts.append(f"Findings:\n{record.findings}")
    parts.append(f"Impression: {record.impression}")
    return "\n".join(parts)


# ---------------------------------------------------------------------------
# healthy templates

GENDERS = ("male", "female")
BUILTIN_CENTER_IDS = (1, 2, 3, 4, 5)


def _region_phrase(region_id: int, gender: str) -> str:
    # templates use gendered pelvic wording; everything else is canonical
    if region_id == 20:
        return PELVIC_PHRASE[gender]
    phrase = REGION_PHRASES[region_id - 1]
    return phrase[4:] if phrase.startswith("the ") else phrase


# One healthy-sentence style per center. None of these may use the
# abnormal skeleton verb ("demonstrates"), so the rule extractor reads
# every template as all-Normal.
_CENTER_STYLES = {
    1: "Unremarkable appearance of the {r}.",
    2: "No abnormal tracer uptake or structural abnormality is seen in the {r}.",
    3: "Preserved morphology and physiologic tracer distribution of the {r}.",
    4: "Survey of the {r} reveals no suspicious focus.",
    5: "There is no focal abnormality in the {r}.",
}


def build_template(center_id: int, gender: str) -> str:
    if center_id not in _CENTER_STYLES:
        raise UnknownCenterError(f"no template style for center {center_id}")
    if gender not in GENDERS:
        raise UnknownCenterError(f"no template for gender {gender!r}")
    style = _CENTER_STYLES[center_id]
    lines: List[str] = []
    for section in SECTION_NAMES:
        lines.append(f"{SECTION_TITLES[section]}:")
        lo, hi = SECTION_REGION_RANGES[section]
        for region_id in range(lo, hi + 1):
            lines.append(style.format(r=_region_phrase(region_id, gender)))
    return "\n".join(lines)


def template_region_line_indices(template_text: str) -> Dict[int, int]:
    """Map region id -> line index inside a structured template.

    Raises ReportParseError when the template does not follow the
    4-marker / 24-line layout.
    """
    lines = template_text.split("\n")
    indices: Dict[int, int] = {}
    cursor = 0
    for section in SECTION_NAMES:
        title = f"{SECTION_TITLES[section]}:"
        if cursor >= len(lines) or lines[cursor].strip() != title:
            raise ReportParseError(
                f"template section marker {title!r} missing or out of order"
            )
        cursor += 1
        lo, hi = SECTION_REGION_RANGES[section]
        for region_id in range(lo, hi + 1):
            if cursor >= len(lines) or not lines[cursor].strip():
                raise ReportParseError(f"template is missing the line for region {region_id}")
            indices[region_id] = cursor
            cursor += 1
    if cursor != len(lines):
        raise ReportParseError("template has trailing lines beyond the 24 region lines")
    return indices


class TemplateDictionary:
    """Healthy findings templates keyed by (center_id, gender)."""

    def __init__(self):
        self._templates: Dict[Tuple[int, str], str] = {}

    def register(self, center_id: int, gender: str, text: str):
        template_region_line_indices(text)  # structural validation
        self._templates[(int(center_id), gender)] = text

    def lookup(self, center_id: int, gender: str) -> str:
        key = (int(center_id), gender)
        if key not in self._templates:
            raise UnknownCenterError(f"no template for center {center_id}, gender {gender!r}")
        return self._templates[key]

    def keys(self):
        return sorted(self._templates.keys())

    @classmethod
    def builtin(cls) -> "TemplateDictionary":
        td = cls()
        for center_id in BUILTIN_CENTER_IDS:
            for gender in GENDERS:
                td.register(center_id, gender, build_template(center_id, gender))
        return td

    # -- directory interface: one JSON file per center ------------------

    def save_dir(self, path):
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        by_center: Dict[int, Dict[str, str]] = {}
        for (center_id, gender), text in self._templates.items():
            by_center.setdefault(center_id, {})[gender] = text
        for center_id, genders in sorted(by_center.items()):
            payload = {"center_id": center_id, **genders}
            with open(path / f"center_{center_id}.json", "w", encoding="utf-8") as fh:
                json.dump(payload, fh, indent=2, sort_keys=True)

    @classmethod
    def load_dir(cls, path) -> "TemplateDictionary":
        path = Path(path)
        files = sorted(path.glob("center_*.json"))
        if not files:
            raise UnknownCenterError(f"no template files found under {path}")
        td = cls()
        for f in files:
            with open(f, "r", encoding="utf-8") as fh:
                payload = json.load(fh)
            center_id = payload["center_id"]
            for gender in GENDERS:
                if gender in payload:
                    td.register(center_id, gender, payload[gender])
        return td


def render_findings(labels: Sequence[RegionLabel], template_text: str) -> str:
    """Materialize a findings text: start from the healthy template and
    replace the line of every abnormal region with a grammar sentence.
    All-normal labels return the template verbatim.
    """
    indices = template_region_line_indices(template_text)
    lines = template_text.split("\n")
    for lab in labels:
        lab.validate()
        if (lab.uptake, lab.density) == (UPTAKE_NORMAL, DENSITY_NORMAL):
            continue
        lines[indices[lab.region_id]] = render_finding_sentence(
            lab.region_id, lab.uptake, lab.density
        )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# region splitting

_MARKER_PATTERNS = {
    name: re.compile(r"\b" + r"\s+".join(SECTION_TITLES[name].split()) + r"\s*:")
    for name in SECTION_NAMES
}


def split_report_by_region(text: str) -> Dict[str, str]:
    """Rule-based split of a findings text into the four scan sections.

    Tolerates whitespace mangling (markers may sit mid-line). Returns
    section-name -> content (marker excluded). Whitespace-only input
    yields four empty sections; missing markers raise SplitError.
    """
    if not text.strip():
        return {name: "" for name in SECTION_NAMES}
    positions = []
    for name in SECTION_NAMES:
        m = _MARKER_PATTERNS[name].search(text)
        if m is None:
            raise SplitError(f"section marker for {name!r} not found", raw_text=text)
        positions.append((name, m.start(), m.end()))
    starts = [p[1] for p in positions]
    if starts != sorted(starts):
        raise SplitError("section markers out of order", raw_text=text)
    out: Dict[str, str] = {}
    for i, (name, _, content_start) in enumerate(positions):
        end = positions[i + 1][1] if i + 1 < len(positions) else len(text)
        out[name] = text[content_start:end].strip()
    return out


def join_region_sections(sections: Dict[str, str]) -> str:
    parts = []
    for name in SECTION_NAMES:
        parts.append(f"{SECTION_TITLES[name]}:")
        if sections.get(name):
            parts.append(sections[name])
    return "\n".join(parts)
