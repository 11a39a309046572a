"""On-disk dataset layout.

A dataset root holds ``templates/`` (one JSON per center) and ``cases/``
with one directory per scan::

    root/templates/center_1.json
    root/cases/case_0000/{pet_raw.nii, ct_raw.nii, meta.json, report.txt, labels.json}

Raw cases store scanner-style values (PET as Bq/mL activity
concentration, CT needing rescale slope/intercept) so preprocessing is
exercised end to end. Prepped datasets mirror the same structure with
``pet_suv.nii``/``ct_norm.nii``, a crop record and optional per-region
subvolumes. Volumes are written float32.
"""

from __future__ import annotations

import datetime
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError
from .nifti import read_nifti, write_nifti
from .ontology import LabelMatrix
from .phantom import PhantomSpec, ScanRecord, generate_case, random_spec
from .reports import (
    ReportRecord,
    TemplateDictionary,
    parse_report_fields,
    render_report_document,
)
from .volumes import Modality, PreppedPair, ScanMetadata, VolumeGrid

GRAMMAR_KEY = "grammar_version"


def _meta_to_json(meta: ScanMetadata) -> dict:
    return {
        "patient_id": meta.patient_id,
        "body_weight_g": meta.body_weight_g,
        "injected_dose_bq": meta.injected_dose_bq,
        "injection_time": meta.injection_time.isoformat(),
        "acquisition_time": meta.acquisition_time.isoformat(),
        "rescale_slope": meta.rescale_slope,
        "rescale_intercept": meta.rescale_intercept,
        "center_id": meta.center_id,
        "gender": meta.gender,
    }


def _meta_from_json(data: dict) -> ScanMetadata:
    try:
        return ScanMetadata(
            patient_id=data["patient_id"],
            body_weight_g=float(data["body_weight_g"]),
            injected_dose_bq=float(data["injected_dose_bq"]),
            injection_time=datetime.datetime.fromisoformat(data["injection_time"]),
            acquisition_time=datetime.datetime.fromisoformat(data["acquisition_time"]),
            rescale_slope=float(data["rescale_slope"]),
            rescale_intercept=float(data["rescale_intercept"]),
            center_id=int(data["center_id"]),
            gender=data["gender"],
        ).validate()
    except KeyError as exc:
        raise DataError(f"meta.json missing field {exc}") from exc


def _write_json(path: Path, payload: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def _read_json(path: Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"missing file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupt JSON in {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# raw cases


def write_raw_case(case_dir, record: ScanRecord):
    """Store a generated case in scanner-style raw encoding."""
    case_dir = Path(case_dir)
    case_dir.mkdir(parents=True, exist_ok=True)
    meta = record.meta
    # invert the quantification so prep recovers SUV / HU exactly
    pet_raw = record.pet_suv.values * (meta.injected_dose_bq / meta.body_weight_g)
    ct_raw = (record.ct_hu.values - meta.rescale_intercept) / meta.rescale_slope
    spacing = record.ct_hu.spacing_mm
    write_nifti(case_dir / "pet_raw.nii", pet_raw.astype(np.float32), spacing, record.pet_suv.orientation)
    write_nifti(case_dir / "ct_raw.nii", ct_raw.astype(np.float32), spacing, record.ct_hu.orientation)
    _write_json(case_dir / "meta.json", _meta_to_json(meta))
    (case_dir / "report.txt").write_text(render_report_document(record.report), encoding="utf-8")
    from .grammar import GRAMMAR_VERSION

    _write_json(case_dir / "labels.json", {GRAMMAR_KEY: GRAMMAR_VERSION, "labels": record.labels.to_jsonable()})


@dataclass
class RawCase:
    case_id: str
    pet: VolumeGrid
    ct: VolumeGrid
    meta: ScanMetadata
    report: ReportRecord
    labels: Optional[LabelMatrix]


def read_raw_case(case_dir) -> RawCase:
    case_dir = Path(case_dir)
    pet_values, pet_spacing, pet_orient = read_nifti(case_dir / "pet_raw.nii")
    ct_values, ct_spacing, ct_orient = read_nifti(case_dir / "ct_raw.nii")
    meta = _meta_from_json(_read_json(case_dir / "meta.json"))
    report = parse_report_fields((case_dir / "report.txt").read_text(encoding="utf-8"))
    labels = None
    labels_path = case_dir / "labels.json"
    if labels_path.exists():
        labels = LabelMatrix.from_jsonable(_read_json(labels_path)["labels"])
    return RawCase(
        case_id=case_dir.name,
        pet=VolumeGrid(pet_values, pet_spacing, pet_orient, Modality.PET_RAW),
        ct=VolumeGrid(ct_values, ct_spacing, ct_orient, Modality.CT_RAW),
        meta=meta,
        report=report,
        labels=labels,
    )


def list_case_dirs(root) -> List[Path]:
    cases = Path(root) / "cases"
    if not cases.is_dir():
        raise DataError(f"no cases/ directory under {root}")
    dirs = sorted(p for p in cases.iterdir() if p.is_dir())
    if not dirs:
        raise DataError(f"no case directories under {cases}")
    return dirs


def synth_dataset(
    out_dir,
    n_cases: int,
    seed: int,
    volume_shape: Tuple[int, int, int] = (24, 24, 32),
    spacing_mm: Tuple[float, float, float] = (3.0, 3.0, 3.0),
) -> List[Path]:
    """Generate a full synthetic dataset with its template directory."""
    out_dir = Path(out_dir)
    templates = TemplateDictionary.builtin()
    templates.save_dir(out_dir / "templates")
    dirs = []
    for i in range(n_cases):
        spec = random_spec(i, seed, volume_shape, spacing_mm)
        record = generate_case(spec, templates)
        case_dir = out_dir / "cases" / f"case_{i:04d}"
        write_raw_case(case_dir, record)
        dirs.append(case_dir)
    return dirs


# ---------------------------------------------------------------------------
# prepped cases


def write_prepped_case(case_dir, prepped: PreppedPair, meta: ScanMetadata,
                       report_text: str, labels: Optional[LabelMatrix]):
    case_dir = Path(case_dir)
    case_dir.mkdir(parents=True, exist_ok=True)
    spacing = prepped.pet.spacing_mm
    write_nifti(case_dir / "pet_suv.nii", prepped.pet.values.astype(np.float32), spacing)
    write_nifti(case_dir / "ct_norm.nii", prepped.ct.values.astype(np.float32), spacing)
    _write_json(case_dir / "crop_record.json", prepped.crop.to_jsonable())
    _write_json(case_dir / "meta.json", _meta_to_json(meta))
    (case_dir / "report.txt").write_text(report_text, encoding="utf-8")
    if labels is not None:
        from .grammar import GRAMMAR_VERSION

        _write_json(case_dir / "labels.json", {GRAMMAR_KEY: GRAMMAR_VERSION, "labels": labels.to_jsonable()})
    if prepped.regions:
        for name, pet_slab, ct_slab, z_range in prepped.regions:
            rdir = case_dir / "regions" / name
            rdir.mkdir(parents=True, exist_ok=True)
            write_nifti(rdir / "pet_suv.nii", pet_slab.values.astype(np.float32), spacing)
            write_nifti(rdir / "ct_norm.nii", ct_slab.values.astype(np.float32), spacing)
            _write_json(rdir / "range.json", {"z_range": list(z_range)})


@dataclass
class PreppedCase:
    case_id: str
    pet: VolumeGrid  # PET_SUV
    ct: VolumeGrid   # CT_NORM
    meta: ScanMetadata
    report: ReportRecord
    labels: Optional[LabelMatrix]


def read_prepped_case(case_dir) -> PreppedCase:
    case_dir = Path(case_dir)
    pet_values, pet_spacing, _ = read_nifti(case_dir / "pet_suv.nii")
    ct_values, ct_spacing, _ = read_nifti(case_dir / "ct_norm.nii")
    meta = _meta_from_json(_read_json(case_dir / "meta.json"))
    report = parse_report_fields((case_dir / "report.txt").read_text(encoding="utf-8"))
    labels = None
    if (case_dir / "labels.json").exists():
        labels = LabelMatrix.from_jsonable(_read_json(case_dir / "labels.json")["labels"])
    return PreppedCase(
        case_id=case_dir.name,
        pet=VolumeGrid(pet_values, pet_spacing, "RAS", Modality.PET_SUV),
        ct=VolumeGrid(np.clip(ct_values, 0.0, 1.0), ct_spacing, "RAS", Modality.CT_NORM),
        meta=meta,
        report=report,
        labels=labels,
    )


def load_templates(root) -> TemplateDictionary:
    return TemplateDictionary.load_dir(Path(root) / "templates")


# ---------------------------------------------------------------------------
# patient-grouped chronological split


def chronological_patient_split(
    cases: Sequence[Tuple[str, str, datetime.datetime]],
    train_fraction: float = 0.8,
) -> Tuple[List[str], List[str]]:
    """Split case ids train/validation grouped by patient.

    ``cases`` holds (case_id, patient_id, acquisition_time). Patients are
    ordered by their first acquisition; the earliest fraction goes to
    train, so a patient's scans never straddle the boundary.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    first_seen: Dict[str, datetime.datetime] = {}
    by_patient: Dict[str, List[str]] = {}
    for case_id, patient_id, when in cases:
        by_patient.setdefault(patient_id, []).append(case_id)
        if patient_id not in first_seen or when < first_seen[patient_id]:
            first_seen[patient_id] = when
    patients = sorted(by_patient, key=lambda p: (first_seen[p], p))
    n_train = int(round(train_fraction * len(patients)))
    n_train = min(max(n_train, 1), max(len(patients) - 1, 1))
    train_patients = set(patients[:n_train])
    train_ids, val_ids = [], []
    for patient_id in patients:
        target = train_ids if patient_id in train_patients else val_ids
        target.extend(sorted(by_patient[patient_id]))
    return train_ids, val_ids
