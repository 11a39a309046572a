"""Run manifests.

Every artifact-producing command drops a ``manifest.json`` next to its
outputs, on success and on failure, so any result directory is
self-describing: what ran, on which inputs, with which config
fingerprint and seed, and what came out.
"""

from __future__ import annotations

import datetime
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from . import __version__

MANIFEST_NAME = "manifest.json"


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    argv: List[str]
    config_fingerprint: Optional[str] = None
    seed: Optional[int] = None
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    metrics: Dict[str, float] = field(default_factory=dict)
    started_at: str = field(default_factory=_now)
    finished_at: Optional[str] = None
    status: str = "running"
    error: Optional[str] = None
    tool_version: str = __version__

    def finish(self, status: str = "ok", error: Optional[str] = None) -> "RunManifest":
        self.status = status
        self.error = error
        self.finished_at = _now()
        return self

    def write(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / MANIFEST_NAME
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def read_manifest(out_dir) -> RunManifest:
    with open(Path(out_dir) / MANIFEST_NAME, "r", encoding="utf-8") as fh:
        return RunManifest(**json.load(fh))
