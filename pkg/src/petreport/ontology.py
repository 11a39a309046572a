"""Reporting ontology: anatomical regions and finding classes.

Every report, template and label matrix in the package is expressed over
this fixed vocabulary: 24 anatomical regions, each carrying one uptake
class (metabolic channel, 5 classes) and one density class (anatomic
channel, 8 classes). Class ids are 1-based; the last id of each channel
is the Normal class.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .errors import InvalidVolumeError

N_REGIONS = 24
N_UPTAKE = 5
N_DENSITY = 8
UPTAKE_NORMAL = 5
DENSITY_NORMAL = 8

CHANNEL_UPTAKE = 0
CHANNEL_DENSITY = 1

REGION_NAMES: Tuple[str, ...] = (
    "Brain, Skull, and Meninges",
    "Orbit, Nasal Cavity, and Paranasal Sinuses",
    "Pharyngeal Spaces, Tonsils, and Larynx",
    "Thyroid Gland and Major Salivary Glands",
    "Cervical Lymph Nodes",
    "Lungs and Pleura",
    "Mediastinum and Hila",
    "Heart and Pericardium",
    "Axilla and Chest Wall",
    "Breasts",
    "Liver",
    "Gallbladder and Biliary Tract",
    "Spleen",
    "Pancreas",
    "Kidneys",
    "Adrenal Glands",
    "Gastrointestinal Tract",
    "Retroperitoneal Space",
    "Peritoneum, Mesentery, and Omentum",
    "Pelvic Organs",
    "Pelvic and Inguinal Lymph Nodes",
    "Spine",
    "Pelvis and Bones of Extremities",
    "Muscles and Subcutaneous Tissue",
)

UPTAKE_NAMES = {
    1: "Intense Abnormal Uptake",
    2: "Mild or Suspicious Abnormal Uptake",
    3: "Physiological or Background Uptake",
    4: "Uptake Defect or Decreased Uptake",
    5: "Normal",
}

DENSITY_NAMES = {
    1: "Lymphadenopathy",
    2: "Focal Lesion",
    3: "Lung Parenchymal Abnormality",
    4: "Wall or Membrane Thickening",
    5: "Calcification",
    6: "Bone or Skeletal Lesion",
    7: "Other Abnormality",
    8: "Normal",
}

# Uptake significance, most significant first. Intense beats mild beats a
# cold defect beats physiologic activity beats normal.
UPTAKE_SEVERITY_ORDER = (1, 2, 4, 3, 5)

# Four scan sections used by the phantom generator, templates and the
# region splitter; values are inclusive 1-based region id ranges.
SECTION_NAMES = ("head_neck", "chest", "abdomen", "pelvis_below")
SECTION_TITLES = {
    "head_neck": "HEAD AND NECK",
    "chest": "CHEST",
    "abdomen": "ABDOMEN",
    "pelvis_below": "PELVIS AND BELOW",
}
SECTION_REGION_RANGES = {
    "head_neck": (1, 5),
    "chest": (6, 10),
    "abdomen": (11, 19),
    "pelvis_below": (20, 24),
}


def section_of_region(region_id: int) -> str:
    for name, (lo, hi) in SECTION_REGION_RANGES.items():
        if lo <= region_id <= hi:
            return name
    raise ValueError(f"region id out of range: {region_id}")


def uptake_severity_rank(cls: int) -> int:
    """Smaller rank = more significant finding."""
    return UPTAKE_SEVERITY_ORDER.index(cls)


def density_severity_key(cls: int) -> Tuple[int, int]:
    """Sort key: any abnormal class outranks Normal, ties to the lowest id."""
    return (1 if cls == DENSITY_NORMAL else 0, cls)


@dataclass(frozen=True)
class RegionLabel:
    """One extracted finding: a region with its class pair."""

    region_id: int
    uptake: int
    density: int

    def validate(self):
        if not 1 <= self.region_id <= N_REGIONS:
            raise ValueError(f"region_id must lie in [1, {N_REGIONS}], got {self.region_id}")
        if not 1 <= self.uptake <= N_UPTAKE:
            raise ValueError(f"uptake class must lie in [1, {N_UPTAKE}], got {self.uptake}")
        if not 1 <= self.density <= N_DENSITY:
            raise ValueError(f"density class must lie in [1, {N_DENSITY}], got {self.density}")
        return self


class LabelMatrix:
    """Dense (n_reports, 24, 2) int array of class ids.

    Channel 0 holds uptake classes, channel 1 density classes. A fresh
    matrix is all-Normal; construction validates class ranges.
    """

    def __init__(self, values: np.ndarray):
        values = np.asarray(values, dtype=np.int64)
        if values.ndim == 2:
            values = values[None, ...]
        if values.ndim != 3 or values.shape[1:] != (N_REGIONS, 2):
            raise InvalidVolumeError(f"label matrix must have shape (n, {N_REGIONS}, 2), got {values.shape}")
        up = values[:, :, CHANNEL_UPTAKE]
        de = values[:, :, CHANNEL_DENSITY]
        if up.size and not ((up >= 1).all() and (up <= N_UPTAKE).all()):
            raise InvalidVolumeError("uptake classes out of range [1, 5]")
        if de.size and not ((de >= 1).all() and (de <= N_DENSITY).all()):
            raise InvalidVolumeError("density classes out of range [1, 8]")
        self.values = values

    # -- constructors -------------------------------------------------

    @classmethod
    def all_normal(cls, n_reports: int = 1) -> "LabelMatrix":
        values = np.empty((n_reports, N_REGIONS, 2), dtype=np.int64)
        values[:, :, CHANNEL_UPTAKE] = UPTAKE_NORMAL
        values[:, :, CHANNEL_DENSITY] = DENSITY_NORMAL
        return cls(values)

    @classmethod
    def from_labels(cls, labels: Iterable[RegionLabel]) -> "LabelMatrix":
        """Single-report matrix from a list of per-region findings."""
        out = cls.all_normal(1)
        for lab in labels:
            lab.validate()
            out.values[0, lab.region_id - 1, CHANNEL_UPTAKE] = lab.uptake
            out.values[0, lab.region_id - 1, CHANNEL_DENSITY] = lab.density
        return out

    @classmethod
    def stack(cls, matrices: Sequence["LabelMatrix"]) -> "LabelMatrix":
        return cls(np.concatenate([m.values for m in matrices], axis=0))

    # -- views --------------------------------------------------------

    @property
    def n_reports(self) -> int:
        return self.values.shape[0]

    def uptake(self) -> np.ndarray:
        return self.values[:, :, CHANNEL_UPTAKE]

    def density(self) -> np.ndarray:
        return self.values[:, :, CHANNEL_DENSITY]

    def row(self, i: int) -> List[RegionLabel]:
        return [
            RegionLabel(r + 1, int(self.values[i, r, CHANNEL_UPTAKE]), int(self.values[i, r, CHANNEL_DENSITY]))
            for r in range(N_REGIONS)
        ]

    def abnormal_rows(self, i: int) -> List[RegionLabel]:
        return [lab for lab in self.row(i) if (lab.uptake, lab.density) != (UPTAKE_NORMAL, DENSITY_NORMAL)]

    def __eq__(self, other) -> bool:
        return isinstance(other, LabelMatrix) and np.array_equal(self.values, other.values)

    def __repr__(self) -> str:
        return f"LabelMatrix(n={self.n_reports})"

    def to_jsonable(self) -> list:
        return self.values.tolist()

    @classmethod
    def from_jsonable(cls, data) -> "LabelMatrix":
        return cls(np.asarray(data, dtype=np.int64))
