"""Synthetic PET/CT phantom cases with paired ground-truth reports.

A case is an ellipsoidal soft-tissue body in air, with spherical lesions
placed at fixed per-region anchor points. Uptake classes modulate the
PET value inside a lesion, density classes offset its HU. The findings
text is rendered from the ground-truth labels through the closed
grammar, so the rule extractor recovers the labels exactly. Everything
is a pure function of the spec (seed included): identical specs yield
bit-identical volumes.
"""

from __future__ import annotations

import datetime
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import PhantomSpecError
from .ontology import (
    DENSITY_NORMAL,
    LabelMatrix,
    N_REGIONS,
    RegionLabel,
    UPTAKE_NORMAL,
)
from .reports import ReportRecord, TemplateDictionary, render_findings, render_report_document
from .volumes import Modality, ScanMetadata, VolumeGrid

ANCHORS_VERSION = "anchors-v1"

# Fractional (x, y, z) anchor of each region inside the body ellipsoid's
# bounding box; z runs inferior -> superior, so the head sits near 1.
# Offsets from the ellipsoid center stay within 0.80 of the unit radius
# so small lesions always fit. Versioned: do not reorder or tweak without
# bumping ANCHORS_VERSION.
REGION_ANCHORS: Tuple[Tuple[float, float, float], ...] = (
    (0.50, 0.50, 0.90),  # 1 brain / skull / meninges
    (0.50, 0.58, 0.86),  # 2 orbit / nasal cavity / sinuses
    (0.50, 0.54, 0.82),  # 3 pharynx / tonsils / larynx
    (0.50, 0.55, 0.78),  # 4 thyroid / salivary glands
    (0.58, 0.50, 0.80),  # 5 cervical nodes
    (0.62, 0.50, 0.66),  # 6 lungs / pleura
    (0.50, 0.50, 0.68),  # 7 mediastinum / hila
    (0.45, 0.55, 0.64),  # 8 heart / pericardium
    (0.72, 0.50, 0.70),  # 9 axilla / chest wall
    (0.58, 0.64, 0.66),  # 10 breasts
    (0.62, 0.52, 0.54),  # 11 liver
    (0.60, 0.58, 0.50),  # 12 gallbladder / biliary
    (0.36, 0.50, 0.54),  # 13 spleen
    (0.46, 0.50, 0.50),  # 14 pancreas
    (0.60, 0.42, 0.46),  # 15 kidneys
    (0.58, 0.44, 0.50),  # 16 adrenals
    (0.50, 0.56, 0.42),  # 17 GI tract
    (0.50, 0.42, 0.46),  # 18 retroperitoneum
    (0.45, 0.60, 0.40),  # 19 peritoneum / mesentery / omentum
    (0.50, 0.50, 0.26),  # 20 pelvic organs
    (0.58, 0.50, 0.24),  # 21 pelvic / inguinal nodes
    (0.50, 0.40, 0.55),  # 22 spine
    (0.40, 0.50, 0.20),  # 23 pelvis / extremity bones
    (0.68, 0.54, 0.36),  # 24 muscles / subcutaneous tissue
)

AIR_HU = -1000.0
SOFT_TISSUE_HU = 40.0
BACKGROUND_SUV = 1.0
CT_NOISE_HU = 3.0
PET_NOISE_SUV = 0.02

# PET multiplier per uptake class (1..4 abnormal only).
UPTAKE_SUV_MULT = {1: 8.0, 2: 3.5, 3: 1.8, 4: 0.15}
# HU offset per density class (1..7 abnormal only).
DENSITY_HU_DELTA = {1: 25.0, 2: -30.0, 3: -120.0, 4: 45.0, 5: 800.0, 6: 400.0, 7: 15.0}

_CLINICAL_HISTORIES = (
    "Staging work-up for suspected malignancy.",
    "Response assessment after systemic therapy.",
    "Surveillance of known malignancy.",
    "Fever of unknown origin.",
)


@dataclass(frozen=True)
class LesionSpec:
    """One spherical lesion: where, and which class pair it realizes."""

    region_id: int
    uptake: int
    density: int
    radius_mm: float = 7.5
    center_voxel: Optional[Tuple[int, int, int]] = None  # default: region anchor

    def validate(self):
        try:
            RegionLabel(self.region_id, self.uptake, self.density).validate()
        except ValueError as err:
            raise PhantomSpecError(str(err)) from err
        if self.uptake == UPTAKE_NORMAL or self.density == DENSITY_NORMAL:
            raise PhantomSpecError(
                f"lesion classes must be abnormal (uptake 1-4, density 1-7), "
                f"got ({self.uptake}, {self.density}) in region {self.region_id}"
            )
        if self.radius_mm <= 0:
            raise PhantomSpecError(f"lesion radius must be positive, got {self.radius_mm}")
        return self


@dataclass
class PhantomSpec:
    """Full deterministic description of one synthetic case."""

    seed: int
    volume_shape: Tuple[int, int, int] = (24, 24, 32)
    spacing_mm: Tuple[float, float, float] = (3.0, 3.0, 3.0)
    center_id: int = 1
    gender: str = "male"
    lesions: Tuple[LesionSpec, ...] = ()
    patient_id: str = "P0000"
    scan_day: int = 0

    @property
    def lesion_count(self) -> int:
        return len(self.lesions)

    def validate(self):
        if any(n < 8 for n in self.volume_shape):
            raise PhantomSpecError(f"volume_shape too small: {self.volume_shape}")
        if any(s <= 0 for s in self.spacing_mm):
            raise PhantomSpecError(f"bad spacing: {self.spacing_mm}")
        if self.gender not in ("male", "female"):
            raise PhantomSpecError(f"gender must be male/female, got {self.gender!r}")
        seen = {}
        for lesion in self.lesions:
            lesion.validate()
            prev = seen.get(lesion.region_id)
            if prev is not None and prev != (lesion.uptake, lesion.density):
                raise PhantomSpecError(
                    f"conflicting lesion classes in region {lesion.region_id}: "
                    f"{prev} vs ({lesion.uptake}, {lesion.density})"
                )
            seen[lesion.region_id] = (lesion.uptake, lesion.density)
        return self


@dataclass
class ScanRecord:
    """One generated case: aligned volumes, metadata, report, labels."""

    pet_suv: VolumeGrid
    ct_hu: VolumeGrid
    meta: ScanMetadata
    report: ReportRecord
    labels: LabelMatrix
    spec: PhantomSpec

    @property
    def findings(self) -> str:
        return self.report.findings


def _body_geometry(shape, spacing):
    center = np.array([(n - 1) / 2.0 for n in shape])
    semi_vox = np.array([0.44 * shape[0], 0.44 * shape[1], 0.46 * shape[2]])
    semi_mm = semi_vox * np.asarray(spacing)
    return center, semi_vox, semi_mm


def anchor_voxel(region_id: int, shape, spacing) -> Tuple[int, int, int]:
    """Voxel position of a region anchor inside the body ellipsoid."""
    center, semi_vox, _ = _body_geometry(shape, spacing)
    frac = np.array(REGION_ANCHORS[region_id - 1])
    pos = center + (2.0 * frac - 1.0) * semi_vox
    return tuple(int(round(p)) for p in pos)


def max_fitting_radius_mm(region_id: int, shape, spacing) -> float:
    """Largest lesion radius that provably passes the fit check.

    Measured from the rounded anchor voxel with the same normalized
    metric as the fit check, minus a 5% margin.
    """
    center, _, semi_mm = _body_geometry(shape, spacing)
    cv = anchor_voxel(region_id, shape, spacing)
    offset_mm = (np.asarray(cv) - center) * np.asarray(spacing)
    u = np.linalg.norm(offset_mm / semi_mm)
    return max(0.0, (0.95 - u) * float(semi_mm.min()))


def _check_fit(lesion: LesionSpec, center_voxel, shape, spacing):
    center, _, semi_mm = _body_geometry(shape, spacing)
    offset_mm = (np.asarray(center_voxel) - center) * np.asarray(spacing)
    u = np.linalg.norm(offset_mm / semi_mm)
    if u + lesion.radius_mm / float(semi_mm.min()) > 1.0:
        raise PhantomSpecError(
            f"lesion in region {lesion.region_id} (radius {lesion.radius_mm} mm at "
            f"{tuple(center_voxel)}) does not fit inside the body ellipsoid"
        )


def generate_case(spec: PhantomSpec, templates: Optional[TemplateDictionary] = None) -> ScanRecord:
    """Render one case from its spec. Deterministic, including the noise."""
    spec.validate()
    templates = templates or TemplateDictionary.builtin()
    template = templates.lookup(spec.center_id, spec.gender)
    rng = np.random.default_rng(spec.seed)

    shape, spacing = spec.volume_shape, spec.spacing_mm
    center, semi_vox, _ = _body_geometry(shape, spacing)
    ii, jj, kk = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in shape], indexing="ij")
    body = (
        ((ii - center[0]) / semi_vox[0]) ** 2
        + ((jj - center[1]) / semi_vox[1]) ** 2
        + ((kk - center[2]) / semi_vox[2]) ** 2
    ) <= 1.0

    ct = np.full(shape, AIR_HU, dtype=np.float64)
    pet = np.zeros(shape, dtype=np.float64)
    ct[body] = SOFT_TISSUE_HU + rng.normal(0.0, CT_NOISE_HU, size=int(body.sum()))
    pet[body] = BACKGROUND_SUV + rng.normal(0.0, PET_NOISE_SUV, size=int(body.sum()))

    labels: List[RegionLabel] = []
    for lesion in spec.lesions:
        cv = lesion.center_voxel or anchor_voxel(lesion.region_id, shape, spacing)
        _check_fit(lesion, cv, shape, spacing)
        dist_mm = np.sqrt(
            ((ii - cv[0]) * spacing[0]) ** 2
            + ((jj - cv[1]) * spacing[1]) ** 2
            + ((kk - cv[2]) * spacing[2]) ** 2
        )
        sphere = dist_mm <= lesion.radius_mm
        pet[sphere] = BACKGROUND_SUV * UPTAKE_SUV_MULT[lesion.uptake]
        ct[sphere] = SOFT_TISSUE_HU + DENSITY_HU_DELTA[lesion.density]
        labels.append(RegionLabel(lesion.region_id, lesion.uptake, lesion.density))

    pet = np.clip(pet, 0.0, None)
    ct = np.clip(ct, -1000.0, 1000.0)

    label_matrix = LabelMatrix.from_labels(labels)
    findings = render_findings(labels, template)
    n_abnormal = len(label_matrix.abnormal_rows(0))
    impression = (
        "No significant hypermetabolic or structural abnormality."
        if n_abnormal == 0
        else f"Abnormal findings in {n_abnormal} region(s), as detailed above."
    )
    report = ReportRecord(
        gender=spec.gender,
        clinical_history=_CLINICAL_HISTORIES[spec.seed % len(_CLINICAL_HISTORIES)],
        findings=findings,
        impression=impression,
        center_id=spec.center_id,
    )

    base = datetime.datetime(2024, 1, 1, 9, 0, 0) + datetime.timedelta(days=spec.scan_day)
    meta = ScanMetadata(
        patient_id=spec.patient_id,
        body_weight_g=float(rng.uniform(55000.0, 95000.0)),
        injected_dose_bq=float(rng.uniform(2.5e8, 4.5e8)),
        injection_time=base,
        acquisition_time=base + datetime.timedelta(minutes=40),
        rescale_slope=1.0,
        rescale_intercept=-1024.0,
        center_id=spec.center_id,
        gender=spec.gender,
    ).validate()

    return ScanRecord(
        pet_suv=VolumeGrid(pet, spacing, "RAS", Modality.PET_SUV),
        ct_hu=VolumeGrid(ct, spacing, "RAS", Modality.CT_HU),
        meta=meta,
        report=report,
        labels=label_matrix,
        spec=spec,
    )


def random_spec(
    case_index: int,
    seed: int,
    volume_shape: Tuple[int, int, int] = (24, 24, 32),
    spacing_mm: Tuple[float, float, float] = (3.0, 3.0, 3.0),
) -> PhantomSpec:
    """Deterministic per-case spec for dataset synthesis.

    Centers cycle 1..4 and genders alternate so any 8 consecutive cases
    cover every (center, gender) pair; every sixth case is all-normal;
    every fifth case repeats the previous patient for split-utility
    exercises.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, case_index]))
    center_id = (case_index % 4) + 1
    gender = ("male", "female")[case_index % 2]
    lesions: List[LesionSpec] = []
    if case_index % 6 != 5:
        n_lesions = int(rng.integers(1, 4))
        regions = rng.choice(np.arange(1, N_REGIONS + 1), size=n_lesions, replace=False)
        for region_id in sorted(int(r) for r in regions):
            r_max = max_fitting_radius_mm(region_id, volume_shape, spacing_mm)
            radius = float(min(max(2.0 * min(spacing_mm), 0.6 * r_max), 0.95 * r_max, 9.0))
            lesions.append(
                LesionSpec(
                    region_id=region_id,
                    uptake=int(rng.integers(1, 5)),
                    density=int(rng.integers(1, 8)),
                    radius_mm=radius,
                )
            )
    if case_index % 5 == 4 and case_index > 0:
        patient_id = f"P{case_index - 1:04d}"
    else:
        patient_id = f"P{case_index:04d}"
    return PhantomSpec(
        seed=seed * 100003 + case_index,
        volume_shape=volume_shape,
        spacing_mm=spacing_mm,
        center_id=center_id,
        gender=gender,
        lesions=tuple(lesions),
        patient_id=patient_id,
        scan_day=case_index,
    )
