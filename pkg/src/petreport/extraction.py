"""Report-to-label extraction.

Two backends produce the same 24-region label rows: a rule backend that
inverts the closed findings grammar (exact on synthetic reports), and a
remote-model backend that sends a versioned prompt and parses numeric
indices from the reply. Both run through the same normalization:
unmentioned regions default to Normal, repeated findings keep the most
significant class per channel.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

from .errors import ConfigError, ExtractionError
from .grammar import (
    find_region_mentions,
    is_explicit_normal,
    parse_finding_sentence,
    split_sentences,
)
from .ontology import (
    DENSITY_NORMAL,
    LabelMatrix,
    N_DENSITY,
    N_REGIONS,
    N_UPTAKE,
    RegionLabel,
    UPTAKE_NORMAL,
    UPTAKE_SEVERITY_ORDER,
    density_severity_key,
)
from .reports import normalize_report_text

PROMPT_VERSION = "extract-v1"
API_KEY_ENV = "PETREPORT_LLM_API_KEY"

_UPTAKE_RANK = {cls: i for i, cls in enumerate(UPTAKE_SEVERITY_ORDER)}


def normalize_label_matrix(rows: Iterable[RegionLabel]) -> LabelMatrix:
    """Collapse raw finding rows into one total 24-region row set."""
    uptake: Dict[int, int] = {}
    density: Dict[int, int] = {}
    for row in rows:
        row.validate()
        rid = row.region_id
        if rid not in uptake or _UPTAKE_RANK[row.uptake] < _UPTAKE_RANK[uptake[rid]]:
            uptake[rid] = row.uptake
        if rid not in density or density_severity_key(row.density) < density_severity_key(density[rid]):
            density[rid] = row.density
    return LabelMatrix.from_labels(
        RegionLabel(rid, uptake[rid], density.get(rid, DENSITY_NORMAL))
        if rid in uptake
        else RegionLabel(rid, UPTAKE_NORMAL, density[rid])
        for rid in sorted(set(uptake) | set(density))
    )


# ---------------------------------------------------------------------------
# rule backend


class RuleExtractor:
    """Grammar inversion: exact on reports written in the closed grammar.

    Off-grammar sentences carry no finding unless they explicitly mark
    mentioned regions as normal, which also covers every sub-structure
    named by the matched alias.
    """

    backend_name = "rule"

    def extract(self, report_text: str) -> LabelMatrix:
        rows: List[RegionLabel] = []
        for sentence in split_sentences(normalize_report_text(report_text)):
            label = parse_finding_sentence(sentence)
            if label is not None:
                rows.append(label)
                continue
            if is_explicit_normal(sentence):
                for region_id in find_region_mentions(sentence):
                    rows.append(RegionLabel(region_id, UPTAKE_NORMAL, DENSITY_NORMAL))
        return normalize_label_matrix(rows)

    def extract_many(self, report_texts: Sequence[str]) -> LabelMatrix:
        if not report_texts:
            raise ExtractionError("no reports to extract", raw_response="")
        return LabelMatrix.stack([self.extract(t) for t in report_texts])


# ---------------------------------------------------------------------------
# remote-model backend


def load_extraction_prompt() -> str:
    text = resources.files("petreport").joinpath("assets/extraction_prompt.txt").read_text("utf-8")
    if not text.startswith(f"version: {PROMPT_VERSION}"):
        raise ConfigError(f"extraction prompt asset does not declare {PROMPT_VERSION}")
    return text


_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)\s*```", re.DOTALL)


def parse_index_response(content: str) -> List[RegionLabel]:
    """Parse the model reply: a JSON object of region -> [uptake, density].

    Raises ExtractionError (carrying the raw reply) on anything that is
    not exactly that shape or uses out-of-range indices.
    """
    body = content.strip()
    fence = _FENCE_RE.search(body)
    if fence:
        body = fence.group(1)
    try:
        payload = json.loads(body)
    except json.JSONDecodeError as err:
        raise ExtractionError(f"reply is not JSON: {err}", raw_response=content) from err
    if not isinstance(payload, dict):
        raise ExtractionError("reply JSON is not an object", raw_response=content)
    rows: List[RegionLabel] = []
    for key, value in payload.items():
        try:
            region_id = int(key)
        except (TypeError, ValueError):
            raise ExtractionError(f"non-numeric region key {key!r}", raw_response=content)
        if not (isinstance(value, (list, tuple)) and len(value) == 2):
            raise ExtractionError(f"region {key}: value must be [uptake, density]",
                                  raw_response=content)
        u, d = value
        if not (isinstance(u, int) and isinstance(d, int)):
            raise ExtractionError(f"region {key}: indices must be integers",
                                  raw_response=content)
        if not (1 <= region_id <= N_REGIONS and 1 <= u <= N_UPTAKE and 1 <= d <= N_DENSITY):
            raise ExtractionError(f"region {key}: index out of range", raw_response=content)
        rows.append(RegionLabel(region_id, u, d))
    return rows


class LlmExtractor:
    """Chat-endpoint backend with retries and an on-disk response cache.

    The cache key is (report hash, prompt version, model id), so cached
    labels survive re-runs but never leak across prompt or model
    changes. The API key comes from the environment, not from config.
    """

    backend_name = "llm"

    def __init__(self, endpoint_url: str, model_id: str,
                 cache_dir: Optional[Path] = None, max_retries: int = 3,
                 timeout_s: float = 60.0, backoff_s: float = 2.0,
                 max_workers: int = 4, session=None, api_key: Optional[str] = None):
        self.endpoint_url = endpoint_url
        self.model_id = model_id
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.max_retries = max_retries
        self.timeout_s = timeout_s
        self.backoff_s = backoff_s
        self.max_workers = max_workers
        self.prompt = load_extraction_prompt()
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        if session is None:
            import requests

            session = requests.Session()
        self.session = session

    # -- cache --------------------------------------------------------

    def _cache_key(self, report_text: str) -> str:
        digest = hashlib.sha256()
        for part in (report_text, PROMPT_VERSION, self.model_id):
            digest.update(part.encode("utf-8"))
            digest.update(b"\x00")
        return digest.hexdigest()

    def _cache_path(self, key: str) -> Optional[Path]:
        return self.cache_dir / f"{key}.json" if self.cache_dir else None

    def _cache_read(self, key: str) -> Optional[List[RegionLabel]]:
        path = self._cache_path(key)
        if path is None or not path.exists():
            return None
        data = json.loads(path.read_text("utf-8"))
        return [RegionLabel(*row) for row in data["rows"]]

    def _cache_write(self, key: str, rows: List[RegionLabel]):
        path = self._cache_path(key)
        if path is None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps({
            "prompt_version": PROMPT_VERSION,
            "model_id": self.model_id,
            "rows": [[r.region_id, r.uptake, r.density] for r in rows],
        }), "utf-8")
        tmp.replace(path)

    # -- transport ----------------------------------------------------

    def _request_once(self, report_text: str) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        response = self.session.post(
            self.endpoint_url,
            json={
                "model": self.model_id,
                "temperature": 0.0,
                "messages": [{"role": "user", "content": self.prompt + report_text}],
            },
            headers=headers,
            timeout=self.timeout_s,
        )
        response.raise_for_status()
        payload = response.json()
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as err:
            raise ExtractionError(f"unexpected response shape: {err}",
                                  raw_response=json.dumps(payload)) from err

    def _extract_rows(self, report_text: str) -> List[RegionLabel]:
        key = self._cache_key(report_text)
        cached = self._cache_read(key)
        if cached is not None:
            return cached
        last_error: Optional[ExtractionError] = None
        for attempt in range(self.max_retries):
            try:
                rows = parse_index_response(self._request_once(report_text))
                self._cache_write(key, rows)
                return rows
            except ExtractionError as err:
                last_error = err
                if attempt + 1 < self.max_retries and self.backoff_s:
                    time.sleep(self.backoff_s * (2 ** attempt))
        assert last_error is not None
        raise last_error

    # -- public -------------------------------------------------------

    def extract(self, report_text: str) -> LabelMatrix:
        return normalize_label_matrix(self._extract_rows(report_text))

    def extract_many(self, report_texts: Sequence[str]) -> LabelMatrix:
        if not report_texts:
            raise ExtractionError("no reports to extract", raw_response="")
        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            rows_per_report = list(pool.map(self._extract_rows, report_texts))
        return LabelMatrix.stack([normalize_label_matrix(r) for r in rows_per_report])


def make_extractor(backend: str, **kwargs):
    if backend == "rule":
        return RuleExtractor()
    if backend == "llm":
        missing = [k for k in ("endpoint_url", "model_id") if not kwargs.get(k)]
        if missing:
            raise ConfigError(f"llm backend needs {', '.join(missing)}")
        return LlmExtractor(**kwargs)
    raise ConfigError(f"unknown extraction backend: {backend!r}")


def extract_labels(report_text: str, backend: str = "rule", **kwargs) -> LabelMatrix:
    """One-shot convenience wrapper around the two backends."""
    return make_extractor(backend, **kwargs).extract(report_text)
