"""Volumetric preprocessing for paired PET/CT scans.

Pipeline order is fixed: tracer quantification (SUV) and HU conversion
happen on the native grids, then both volumes are reoriented/resampled
onto one target lattice, cropped to the body with a mid-thigh cut, and
optionally split into four longitudinal regions.

Axis convention: arrays are indexed [x, y, z] and orientation codes give
the world direction of each positive axis ("RAS": x grows to the
patient's right, y anterior, z superior). All crop/region arithmetic is
in slice indices along z.
"""

from __future__ import annotations

import datetime
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .config import PrepConfig
from .errors import (
    InvalidLandmarkError,
    InvalidMetadataError,
    InvalidVolumeError,
    NoBodyFoundError,
)


class Modality(str, Enum):
    PET_RAW = "pet_raw"    # activity concentration, Bq/mL
    PET_SUV = "pet_suv"
    CT_RAW = "ct_raw"      # scanner values needing rescale slope/intercept
    CT_HU = "ct_hu"
    CT_NORM = "ct_norm"    # HU clipped and scaled to [0, 1]
    MASK = "mask"


INTENSITY_MODALITIES = frozenset(m for m in Modality if m != Modality.MASK)


@dataclass
class VolumeGrid:
    """A 3D volume with its sampling geometry."""

    values: np.ndarray
    spacing_mm: Tuple[float, float, float]
    orientation: str = "RAS"
    modality: Modality = Modality.CT_HU

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 3:
            raise InvalidVolumeError(f"volume must be 3D, got shape {self.values.shape}")
        self.spacing_mm = tuple(float(s) for s in self.spacing_mm)
        if len(self.spacing_mm) != 3 or any(s <= 0 for s in self.spacing_mm):
            raise InvalidVolumeError(f"spacing must be 3 positive floats, got {self.spacing_mm}")
        self.modality = Modality(self.modality)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.values.shape

    def validate_values(self, cfg: Optional[PrepConfig] = None):
        cfg = cfg or PrepConfig()
        if self.modality == Modality.CT_NORM:
            if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0):
                raise InvalidVolumeError("CT_NORM values must lie in [0, 1]")
        if self.modality == Modality.CT_HU:
            lo, hi = cfg.hu_clip
            if self.values.size and (self.values.min() < lo or self.values.max() > hi):
                raise InvalidVolumeError(f"CT_HU values must lie in [{lo}, {hi}]")
        return self

    def with_values(self, values, modality: Optional[Modality] = None) -> "VolumeGrid":
        return VolumeGrid(values, self.spacing_mm, self.orientation, modality or self.modality)


@dataclass
class ScanMetadata:
    """Acquisition metadata needed for quantification."""

    patient_id: str
    body_weight_g: float
    injected_dose_bq: float
    injection_time: datetime.datetime
    acquisition_time: datetime.datetime
    rescale_slope: float = 1.0
    rescale_intercept: float = 0.0
    center_id: int = 0
    gender: str = "male"

    def validate(self):
        if self.body_weight_g <= 0:
            raise InvalidMetadataError(f"body weight must be positive, got {self.body_weight_g} g")
        if self.injected_dose_bq <= 0:
            raise InvalidMetadataError(f"injected dose must be positive, got {self.injected_dose_bq} Bq")
        if self.acquisition_time < self.injection_time:
            raise InvalidMetadataError("acquisition time precedes injection time")
        if self.rescale_slope == 0:
            raise InvalidMetadataError("rescale slope must be nonzero")
        if self.gender not in ("male", "female"):
            raise InvalidMetadataError(f"gender must be 'male' or 'female', got {self.gender!r}")
        return self

    @property
    def uptake_period_s(self) -> float:
        return (self.acquisition_time - self.injection_time).total_seconds()


def round_half_away(x: float) -> int:
    """Round with halves away from zero (numpy rounds halves to even)."""
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


# ---------------------------------------------------------------------------
# quantification


def compute_suv(pet_raw: VolumeGrid, meta: ScanMetadata, cfg: PrepConfig) -> VolumeGrid:
    """Activity concentration (Bq/mL) -> SUV via body weight and dose.

    SUV = c_img * BW / ID with BW in grams and ID in Bq. With
    cfg.decay_correct the dose is decayed from injection to acquisition
    time, which scales SUV up by exp(ln2 * dt / half_life).
    """
    if pet_raw.modality != Modality.PET_RAW:
        raise InvalidVolumeError(f"compute_suv expects PET_RAW, got {pet_raw.modality}")
    meta.validate()
    dose = meta.injected_dose_bq
    if cfg.decay_correct:
        dose = dose * math.exp(-math.log(2.0) * meta.uptake_period_s / cfg.half_life_s)
    suv = pet_raw.values.astype(np.float64) * (meta.body_weight_g / dose)
    return pet_raw.with_values(suv, Modality.PET_SUV)


def convert_and_clip_hu(ct_raw: VolumeGrid, meta: ScanMetadata, cfg: PrepConfig) -> VolumeGrid:
    """Scanner values -> HU -> clip -> min-max to [0, 1]."""
    if ct_raw.modality != Modality.CT_RAW:
        raise InvalidVolumeError(f"convert_and_clip_hu expects CT_RAW, got {ct_raw.modality}")
    meta.validate()
    lo, hi = cfg.hu_clip
    hu = ct_raw.values.astype(np.float64) * meta.rescale_slope + meta.rescale_intercept
    hu = np.clip(hu, lo, hi)
    norm = (hu - lo) / (hi - lo)
    return ct_raw.with_values(norm, Modality.CT_NORM)


# ---------------------------------------------------------------------------
# geometry

_AXIS_OF_LETTER = {"R": 0, "L": 0, "A": 1, "P": 1, "S": 2, "I": 2}
_POSITIVE = {"R", "A", "S"}


def reorient(v: VolumeGrid, target: str = "RAS") -> VolumeGrid:
    """Permute/flip axes to the target orientation code. No interpolation."""
    src = v.orientation.upper()
    tgt = target.upper()
    for code in (src, tgt):
        if sorted(_AXIS_OF_LETTER.get(c, -1) for c in code) != [0, 1, 2]:
            raise InvalidVolumeError(f"bad orientation code {code!r}")
    perm = []
    flips = []
    for letter in tgt:
        world_axis = _AXIS_OF_LETTER[letter]
        j = next(i for i, c in enumerate(src) if _AXIS_OF_LETTER[c] == world_axis)
        perm.append(j)
        flips.append((src[j] in _POSITIVE) != (letter in _POSITIVE))
    values = np.transpose(v.values, perm)
    for axis, flip in enumerate(flips):
        if flip:
            values = np.flip(values, axis=axis)
    spacing = tuple(v.spacing_mm[j] for j in perm)
    return VolumeGrid(np.ascontiguousarray(values), spacing, tgt, v.modality)


def resample_reorient(v: VolumeGrid, cfg: PrepConfig) -> VolumeGrid:
    """Reorient to cfg.orientation, then resample to cfg.target_spacing_mm.

    New size per axis is round-half-away-from-zero of
    old_size * old_spacing / target_spacing, floored at 1. Intensity
    volumes are interpolated trilinearly, masks nearest-neighbor. A
    volume already on the target lattice is returned value-identical.
    """
    v = reorient(v, cfg.orientation)
    target = cfg.target_spacing_mm
    old_shape = v.shape
    new_shape = tuple(
        max(1, round_half_away(n * s / t)) for n, s, t in zip(old_shape, v.spacing_mm, target)
    )
    if new_shape == old_shape and all(
        abs(s - t) < 1e-12 for s, t in zip(v.spacing_mm, target)
    ):
        return VolumeGrid(v.values.copy(), target, cfg.orientation, v.modality)

    # Output voxel i sits at world position i * target; sample the input
    # at fractional index i * target / old_spacing.
    axes = [
        np.arange(n, dtype=np.float64) * t / s
        for n, t, s in zip(new_shape, target, v.spacing_mm)
    ]
    grid = np.meshgrid(*axes, indexing="ij")
    order = 0 if v.modality == Modality.MASK else 1
    values = ndimage.map_coordinates(
        v.values,
        np.stack([g.ravel() for g in grid]),
        order=order,
        mode="nearest",
    ).reshape(new_shape)
    return VolumeGrid(values, target, cfg.orientation, v.modality)


# ---------------------------------------------------------------------------
# body crop

MaskProvider = Callable[[VolumeGrid], Tuple[np.ndarray, int]]
LandmarkProvider = Callable[[VolumeGrid], Sequence[int]]


@dataclass
class CropRecord:
    """Index ranges (half-open, in pre-crop coordinates) of the kept block."""

    original_shape: Tuple[int, int, int]
    x_range: Tuple[int, int]
    y_range: Tuple[int, int]
    z_range: Tuple[int, int]
    pelvic_floor_z: int
    thigh_extension: int

    def to_original(self, index: Tuple[int, int, int]) -> Tuple[int, int, int]:
        return (
            index[0] + self.x_range[0],
            index[1] + self.y_range[0],
            index[2] + self.z_range[0],
        )

    def to_jsonable(self) -> dict:
        return {
            "original_shape": list(self.original_shape),
            "x_range": list(self.x_range),
            "y_range": list(self.y_range),
            "z_range": list(self.z_range),
            "pelvic_floor_z": self.pelvic_floor_z,
            "thigh_extension": self.thigh_extension,
        }

    @classmethod
    def from_jsonable(cls, data: dict) -> "CropRecord":
        return cls(
            tuple(data["original_shape"]),
            tuple(data["x_range"]),
            tuple(data["y_range"]),
            tuple(data["z_range"]),
            int(data["pelvic_floor_z"]),
            int(data["thigh_extension"]),
        )


def threshold_body_mask(ct: VolumeGrid, pelvic_floor_fraction: float = 0.25) -> Tuple[np.ndarray, int]:
    """Fallback body-mask provider: air threshold + largest 3D component.

    The pelvic floor estimate is a fixed fraction of the body z-extent
    above its inferior end; segmentation-model providers can be plugged
    in wherever a MaskProvider is accepted.
    """
    if ct.modality == Modality.CT_HU:
        threshold = -500.0
    elif ct.modality == Modality.CT_NORM:
        threshold = 0.25  # -500 HU after [-1000, 1000] min-max scaling
    else:
        raise InvalidVolumeError(f"body mask needs CT_HU or CT_NORM, got {ct.modality}")
    fg = ct.values > threshold
    if not fg.any():
        raise NoBodyFoundError("threshold body mask is empty")
    labels, n = ndimage.label(fg)
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=np.arange(1, n + 1))
    mask = labels == (1 + int(np.argmax(sizes)))
    zs = np.where(mask.any(axis=(0, 1)))[0]
    z_lo, z_hi = int(zs[0]), int(zs[-1])
    pelvic_floor_z = z_lo + round_half_away(pelvic_floor_fraction * (z_hi - z_lo))
    return mask, pelvic_floor_z


def crop_body_and_thigh(
    pet: VolumeGrid,
    ct: VolumeGrid,
    cfg: PrepConfig,
    mask_provider: MaskProvider = threshold_body_mask,
) -> Tuple[VolumeGrid, VolumeGrid, CropRecord]:
    """Crop both volumes to the body bounding box plus margin, with an
    inferior cut a capped fraction of trunk height below the pelvic floor.
    """
    if pet.shape != ct.shape:
        raise InvalidVolumeError(f"PET/CT shapes differ: {pet.shape} vs {ct.shape}")
    mask, pelvic_floor_z = mask_provider(ct)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != ct.shape:
        raise InvalidVolumeError(f"mask shape {mask.shape} does not match volume {ct.shape}")
    if not mask.any():
        raise NoBodyFoundError("body mask is empty")

    nx, ny, nz = ct.shape
    margin = cfg.body_margin_slices
    ranges = []
    for axis, n in ((0, nx), (1, ny), (2, nz)):
        other = tuple(a for a in range(3) if a != axis)
        idx = np.where(mask.any(axis=other))[0]
        lo = max(0, int(idx[0]) - margin)
        hi = min(n, int(idx[-1]) + 1 + margin)
        ranges.append((lo, hi))

    body_z_top = int(np.where(mask.any(axis=(0, 1)))[0][-1])
    trunk_height = max(0, body_z_top - pelvic_floor_z)
    extension = min(round_half_away(cfg.thigh_fraction * trunk_height), cfg.thigh_cap_slices)
    z_cut = max(0, pelvic_floor_z - extension)
    z_lo = max(ranges[2][0], z_cut)
    z_hi = ranges[2][1]
    if z_lo >= z_hi:
        raise InvalidVolumeError(f"thigh cut at z={z_lo} leaves no slices (z_hi={z_hi})")

    record = CropRecord((nx, ny, nz), ranges[0], ranges[1], (z_lo, z_hi), pelvic_floor_z, extension)
    sl = (
        slice(*record.x_range),
        slice(*record.y_range),
        slice(*record.z_range),
    )
    return (
        pet.with_values(pet.values[sl]),
        ct.with_values(ct.values[sl]),
        record,
    )


# ---------------------------------------------------------------------------
# region split

REGION_SLAB_NAMES = ("head_neck", "chest", "abdomen", "pelvis_below")


@dataclass
class RegionSlab:
    name: str
    z_range: Tuple[int, int]  # half-open
    volume: VolumeGrid


@dataclass
class PreppedPair:
    """Output of the full preprocessing chain for one scan pair."""

    pet: VolumeGrid  # PET_SUV on the target lattice, cropped
    ct: VolumeGrid   # CT_NORM on the same lattice
    crop: CropRecord
    regions: Optional[List[Tuple[str, VolumeGrid, VolumeGrid, Tuple[int, int]]]] = None


def fractional_landmarks(v: VolumeGrid) -> List[int]:
    """Fallback landmark provider: fixed fractional z boundaries."""
    nz = v.shape[2]
    return [0, round_half_away(0.25 * nz), round_half_away(0.5 * nz), round_half_away(0.75 * nz), nz]


def split_regions(
    v: VolumeGrid,
    cfg: PrepConfig,
    landmark_provider: LandmarkProvider = fractional_landmarks,
    landmarks: Optional[Sequence[int]] = None,
) -> List[RegionSlab]:
    """Cut a trunk volume into four longitudinal regions.

    Landmarks are five ascending z boundaries spanning [0, nz]; the four
    gaps between them are, inferior to superior: pelvis&below, abdomen,
    chest, head&neck. Each internal boundary is pushed outward by
    cfg.region_buffer_slices so neighbouring regions share context.
    Results are ordered superior to inferior.
    """
    nz = v.shape[2]
    marks = list(landmarks) if landmarks is not None else list(landmark_provider(v))
    if len(marks) != 5:
        raise InvalidLandmarkError(f"expected 5 landmarks, got {len(marks)}")
    if any(int(m) != m for m in marks):
        raise InvalidLandmarkError(f"landmarks must be integers, got {marks}")
    marks = [int(m) for m in marks]
    if any(b <= a for a, b in zip(marks, marks[1:])):
        raise InvalidLandmarkError(f"landmarks must be strictly ascending, got {marks}")
    if marks[0] != 0 or marks[-1] != nz:
        raise InvalidLandmarkError(
            f"landmarks must span the full z-extent [0, {nz}], got {marks}"
        )

    b = cfg.region_buffer_slices
    slabs = []
    # interval i (inferior to superior) is [marks[i], marks[i+1])
    for i, name in enumerate(reversed(REGION_SLAB_NAMES)):
        lo, hi = marks[i], marks[i + 1]
        lo_b = max(0, lo - b) if i > 0 else lo
        hi_b = min(nz, hi + b) if i < 3 else hi
        slab = RegionSlab(name, (lo_b, hi_b), v.with_values(v.values[:, :, lo_b:hi_b]))
        slabs.append(slab)
    slabs.reverse()  # superior first: head_neck, chest, abdomen, pelvis_below
    return slabs


def prep_scan_pair(
    pet_raw: VolumeGrid,
    ct_raw: VolumeGrid,
    meta: ScanMetadata,
    cfg: PrepConfig,
    mask_provider: MaskProvider = threshold_body_mask,
    landmark_provider: LandmarkProvider = fractional_landmarks,
    split: bool = False,
) -> PreppedPair:
    """Full chain: quantify, resample both volumes onto one lattice, crop,
    and optionally split into the four regions (landmarks from the CT)."""
    suv = compute_suv(pet_raw, meta, cfg)
    norm = convert_and_clip_hu(ct_raw, meta, cfg)
    suv = resample_reorient(suv, cfg)
    norm = resample_reorient(norm, cfg)
    if suv.shape != norm.shape:
        raise InvalidVolumeError(
            f"resampled PET/CT lattices differ: {suv.shape} vs {norm.shape}"
        )
    pet_c, ct_c, record = crop_body_and_thigh(suv, norm, cfg, mask_provider)
    regions = None
    if split:
        slabs = split_regions(ct_c, cfg, landmark_provider)
        regions = [
            (s.name, pet_c.with_values(pet_c.values[:, :, s.z_range[0]:s.z_range[1]]), s.volume, s.z_range)
            for s in slabs
        ]
    return PreppedPair(pet=pet_c, ct=ct_c, crop=record, regions=regions)
