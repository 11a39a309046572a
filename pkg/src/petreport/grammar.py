"""Closed findings grammar.

The synthetic corpus is written in a deliberately closed clinical idiom:
every abnormal finding is rendered through one sentence skeleton,

    "<region phrase> demonstrates <uptake phrase> with <density phrase>."

and explicitly-normal statements use "... unremarkable". Because the
renderer and the rule-based extractor share the phrase tables below, a
label matrix can be rendered to text and recovered exactly. Keep the
three tables mutually non-colliding: no uptake/density phrase may contain
" with " or "demonstrates", and no template sentence style may use the
skeleton verb.
"""

from __future__ import annotations

import re
from typing import Dict, List, Optional, Tuple

from .ontology import N_REGIONS, RegionLabel

GRAMMAR_VERSION = "findings-v1"

# Canonical region phrases used when rendering abnormal findings.
REGION_PHRASES: Tuple[str, ...] = (
    "the brain, skull, and meninges",
    "the orbits, nasal cavity, and paranasal sinuses",
    "the pharyngeal spaces, tonsils, and larynx",
    "the thyroid gland and major salivary glands",
    "the cervical lymph nodes",
    "the lungs and pleura",
    "the mediastinum and hila",
    "the heart and pericardium",
    "the axillae and chest wall",
    "the breasts",
    "the liver",
    "the gallbladder and biliary tract",
    "the spleen",
    "the pancreas",
    "the kidneys",
    "the adrenal glands",
    "the gastrointestinal tract",
    "the retroperitoneal space",
    "the peritoneum, mesentery, and omentum",
    "the pelvic organs",
    "the pelvic and inguinal lymph nodes",
    "the spine",
    "the pelvis and bones of the extremities",
    "the muscles and subcutaneous tissue",
)

# Alias -> region id. Aliases cover sub-structures so that a statement
# about a major region ("lungs and pleura unremarkable") or one of its
# parts resolves to the same row. Single generic words shared between
# regions (e.g. "pelvic") are deliberately absent.
REGION_ALIASES: Dict[str, int] = {}


def _register_aliases(region_id: int, aliases: List[str]):
    for alias in aliases:
        key = alias.lower()
        if key in REGION_ALIASES and REGION_ALIASES[key] != region_id:
            raise ValueError(f"alias {alias!r} is ambiguous between regions "
                             f"{REGION_ALIASES[key]} and {region_id}")
        REGION_ALIASES[key] = region_id


_register_aliases(1, ["brain, skull, and meninges", "brain", "skull", "meninges"])
_register_aliases(2, ["orbits, nasal cavity, and paranasal sinuses", "orbit", "orbits",
                      "nasal cavity", "paranasal sinuses"])
_register_aliases(3, ["pharyngeal spaces, tonsils, and larynx", "pharyngeal spaces",
                      "tonsils", "larynx", "pharynx"])
_register_aliases(4, ["thyroid gland and major salivary glands", "thyroid gland", "thyroid",
                      "salivary glands", "parotid glands", "submandibular glands"])
_register_aliases(5, ["cervical lymph nodes"])
_register_aliases(6, ["lungs and pleura", "lungs", "lung", "pleura"])
_register_aliases(7, ["mediastinum and hila", "mediastinum", "hila", "hilar regions"])
_register_aliases(8, ["heart and pericardium", "heart", "pericardium"])
_register_aliases(9, ["axillae and chest wall", "axilla", "axillae", "chest wall"])
_register_aliases(10, ["breasts", "breast"])
_register_aliases(11, ["liver", "hepatic parenchyma"])
_register_aliases(12, ["gallbladder and biliary tract", "gallbladder", "biliary tract"])
_register_aliases(13, ["spleen", "splenic parenchyma"])
_register_aliases(14, ["pancreas"])
_register_aliases(15, ["kidneys", "kidney", "renal parenchyma"])
_register_aliases(16, ["adrenal glands", "adrenals"])
_register_aliases(17, ["gastrointestinal tract", "esophagus", "stomach", "intestines", "bowel"])
_register_aliases(18, ["retroperitoneal space", "retroperitoneum"])
_register_aliases(19, ["peritoneum, mesentery, and omentum", "peritoneum", "mesentery", "omentum"])
_register_aliases(20, ["pelvic organs", "bladder", "uterus and adnexa", "uterus",
                       "prostate and seminal vesicles", "prostate"])
_register_aliases(21, ["pelvic and inguinal lymph nodes", "inguinal lymph nodes", "pelvic lymph nodes"])
_register_aliases(22, ["spine", "vertebral column"])
_register_aliases(23, ["pelvis and bones of the extremities", "pelvic bones", "bones of the extremities"])
_register_aliases(24, ["muscles and subcutaneous tissue", "muscles", "subcutaneous tissue", "soft tissues"])

# Gendered stand-ins for region 20 used by healthy templates.
PELVIC_PHRASE = {"male": "prostate and seminal vesicles", "female": "uterus and adnexa"}

UPTAKE_PHRASES: Dict[int, str] = {
    1: "intense abnormal tracer uptake",
    2: "mild suspicious tracer uptake",
    3: "physiological background tracer uptake",
    4: "a photopenic uptake defect",
    5: "no abnormal tracer uptake",
}

DENSITY_PHRASES: Dict[int, str] = {
    1: "enlarged lymph nodes",
    2: "a focal lesion",
    3: "lung parenchymal opacities",
    4: "wall thickening",
    5: "calcified foci",
    6: "a lytic skeletal lesion",
    7: "a nonspecific abnormality",
    8: "no structural abnormality",
}

_UPTAKE_BY_PHRASE = {v: k for k, v in UPTAKE_PHRASES.items()}
_DENSITY_BY_PHRASE = {v: k for k, v in DENSITY_PHRASES.items()}

_SKELETON = re.compile(r"^(?P<region>.+?)\s+demonstrates\s+(?P<uptake>.+?)\s+with\s+(?P<density>.+)$")

# Longest aliases first so "pelvic and inguinal lymph nodes" wins over
# any shorter alias contained in it.
_ALIASES_BY_LENGTH = sorted(REGION_ALIASES, key=len, reverse=True)
_ALIAS_PATTERNS = {alias: re.compile(r"(?<![a-z])" + re.escape(alias) + r"(?![a-z])") for alias in _ALIASES_BY_LENGTH}


def render_finding_sentence(region_id: int, uptake: int, density: int) -> str:
    """One abnormal-finding sentence in the closed skeleton."""
    RegionLabel(region_id, uptake, density).validate()
    phrase = REGION_PHRASES[region_id - 1]
    sentence = f"{phrase} demonstrates {UPTAKE_PHRASES[uptake]} with {DENSITY_PHRASES[density]}."
    return sentence[0].upper() + sentence[1:]


def _clean(sentence: str) -> str:
    return re.sub(r"\s+", " ", sentence).strip().strip(".").strip().lower()


def parse_finding_sentence(sentence: str) -> Optional[RegionLabel]:
    """Recover (region, uptake, density) from a skeleton sentence.

    Returns None for anything that is not an exact skeleton instance;
    callers treat unparseable sentences as carrying no finding.
    """
    m = _SKELETON.match(_clean(sentence))
    if m is None:
        return None
    region_part = m.group("region")
    if region_part.startswith("the "):
        region_part = region_part[4:]
    region_id = REGION_ALIASES.get(region_part)
    uptake = _UPTAKE_BY_PHRASE.get(m.group("uptake"))
    density = _DENSITY_BY_PHRASE.get(m.group("density"))
    if region_id is None or uptake is None or density is None:
        return None
    return RegionLabel(region_id, uptake, density)


def find_region_mentions(sentence: str) -> List[int]:
    """Region ids mentioned in a sentence, longest alias first, no overlaps."""
    text = _clean(sentence)
    taken: List[Tuple[int, int]] = []
    found: List[int] = []
    for alias in _ALIASES_BY_LENGTH:
        for m in _ALIAS_PATTERNS[alias].finditer(text):
            span = (m.start(), m.end())
            if any(span[0] < hi and span[1] > lo for lo, hi in taken):
                continue
            taken.append(span)
            rid = REGION_ALIASES[alias]
            if rid not in found:
                found.append(rid)
    return sorted(found)


def split_sentences(text: str) -> List[str]:
    """Sentence segmentation for extraction: periods and newlines both end
    a sentence, which keeps the pass robust to whitespace-mangled text."""
    parts = re.split(r"[.\n]+", text)
    return [p.strip() for p in parts if p.strip()]


def is_explicit_normal(sentence: str) -> bool:
    return "unremarkable" in sentence.lower()


assert len(REGION_PHRASES) == N_REGIONS
