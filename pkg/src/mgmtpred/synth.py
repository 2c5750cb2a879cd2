"""Synthetic glioma cohorts with planted, class-dependent signal.

Each subject gets an axis-aligned ellipsoidal lesion: an edema shell around
a core whose outer rim enhances and whose centre is necrotic.  Methylated
subjects (label 1) get a larger lesion (``diameter_delta_mm``) and a
brighter T1ce core (``core_intensity_delta``).  Latent vectors are standard
normal with the class-1 mean shifted on the first ``latent_signal_dims``
dimensions.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .nifti import MODALITIES, LabelMask, Volume, save_nifti
from .seeding import derive_seed
from .tables import FeatureTable, latent_feature_name, write_labels, write_latent_csv

# mean intensity per modality for (background, edema, necrosis, enhancing)
TISSUE_MEANS = {
    "t1": (100.0, 80.0, 60.0, 90.0),
    "t1ce": (100.0, 85.0, 60.0, 180.0),
    "t2": (80.0, 160.0, 200.0, 140.0),
    "flair": (90.0, 170.0, 120.0, 150.0),
}
# label code -> tissue column of TISSUE_MEANS (code 3 is unused)
_TISSUE_OF_LABEL = np.array([0, 2, 1, 0, 3])


@dataclass(frozen=True)
class SyntheticSpec:
    n_subjects: int = 200
    dims: tuple[int, int, int] = (32, 32, 32)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    base_diameter_mm: float = 12.0
    diameter_sd_mm: float = 1.5
    diameter_delta_mm: float = 8.0
    core_intensity_delta: float = 40.0
    core_intensity_sd: float = 10.0
    noise_sd: float = 8.0
    positive_fraction: float = 0.5
    latent_dim: int = 64
    latent_shift: float = 1.0
    latent_signal_dims: int = 4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        if self.n_subjects < 2:
            raise ValueError("n_subjects must be >= 2")
        if not 0.0 < self.positive_fraction < 1.0:
            raise ValueError("positive_fraction must lie strictly between 0 and 1")
        if min(self.diameter_sd_mm, self.core_intensity_sd, self.noise_sd) < 0:
            raise ValueError("standard deviations must be nonnegative")
        if not 0 <= self.latent_signal_dims <= self.latent_dim:
            raise ValueError("latent_signal_dims must lie in [0, latent_dim]")
        if self.base_diameter_mm <= 0:
            raise ValueError("base_diameter_mm must be positive")
        extent = min(d * s for d, s in zip(self.dims, self.spacing))
        if self.max_diameter_mm + 4 * max(self.spacing) > extent:
            raise ValueError(
                f"lesions up to {self.max_diameter_mm:.1f} mm do not fit a {self.dims} grid "
                f"with spacing {self.spacing}"
            )

    @property
    def max_diameter_mm(self) -> float:
        return self.base_diameter_mm + max(self.diameter_delta_mm, 0.0) + 3 * self.diameter_sd_mm

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synthetic spec key(s): {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class SyntheticSubject:
    subject_id: str
    label: int
    volumes: dict = field(repr=False)
    mask: LabelMask = field(repr=False)


@dataclass(frozen=True)
class SyntheticCohort:
    spec: SyntheticSpec
    subjects: tuple[SyntheticSubject, ...]
    latent: FeatureTable | None

    @property
    def labels(self) -> dict[str, int]:
        return {s.subject_id: s.label for s in self.subjects}


def subject_id(i: int) -> str:
    return f"SYN{i:04d}"


def _labels(spec: SyntheticSpec) -> np.ndarray:
    n_pos = int(round(spec.n_subjects * spec.positive_fraction))
    n_pos = min(max(n_pos, 1), spec.n_subjects - 1)
    y = np.zeros(spec.n_subjects, dtype=np.int64)
    y[:n_pos] = 1
    return np.random.default_rng(derive_seed(spec.seed, "labels")).permutation(y)


def _lesion(spec: SyntheticSpec, label: int, rng: np.random.Generator) -> np.ndarray:
    dims = np.array(spec.dims)
    spacing = np.array(spec.spacing)
    diameter = spec.base_diameter_mm + label * spec.diameter_delta_mm + rng.normal(0, spec.diameter_sd_mm)
    diameter = float(np.clip(diameter, 4 * spacing.max(), spec.max_diameter_mm))
    semi = diameter / 2 * np.concatenate([[1.0], rng.uniform(0.7, 0.9, 2)])
    semi = semi[rng.permutation(3)]
    extent = dims * spacing
    lo, hi = semi + spacing, extent - semi - 2 * spacing
    center = rng.uniform(lo, np.maximum(lo, hi))
    grid = np.meshgrid(*[np.arange(d) * s for d, s in zip(dims, spacing)], indexing="ij")
    radius = np.sqrt(sum(((g - c) / a) ** 2 for g, c, a in zip(grid, center, semi)))
    labels = np.zeros(spec.dims, dtype=np.int64)
    labels[radius <= 1.0] = 2
    core = radius <= 0.55
    labels[core] = 1
    labels[core & (radius > 0.35)] = 4
    return labels


def generate_subject(spec: SyntheticSpec, i: int, label: int) -> SyntheticSubject:
    rng = np.random.default_rng(derive_seed(spec.seed, "subject", i))
    labels = _lesion(spec, label, rng)
    tissue = _TISSUE_OF_LABEL[labels]
    core = (labels == 1) | (labels == 4)
    core_offset = label * spec.core_intensity_delta + rng.normal(0, spec.core_intensity_sd)
    volumes = {}
    for mod in MODALITIES:
        means = np.asarray(TISSUE_MEANS[mod])[tissue]
        if mod == "t1ce":
            means = means + core * core_offset
        image = means + rng.normal(0, spec.noise_sd, spec.dims)
        volumes[mod] = Volume.from_array(image.astype(np.float32), spacing=spec.spacing, modality=mod)
    mask = LabelMask.from_array(labels, spacing=spec.spacing)
    return SyntheticSubject(subject_id(i), int(label), volumes, mask)


def generate_latent(spec: SyntheticSpec, y: np.ndarray) -> FeatureTable:
    rows = []
    for i, label in enumerate(y):
        v = np.random.default_rng(derive_seed(spec.seed, "latent", i)).normal(size=spec.latent_dim)
        v[: spec.latent_signal_dims] += label * spec.latent_shift
        rows.append(v)
    names = tuple(latent_feature_name(k) for k in range(spec.latent_dim))
    return FeatureTable(tuple(subject_id(i) for i in range(len(y))), names, np.array(rows).reshape(len(y), -1))


def gen_synthetic_cohort(spec: SyntheticSpec, with_latent: bool = True) -> SyntheticCohort:
    y = _labels(spec)
    subjects = tuple(generate_subject(spec, i, int(label)) for i, label in enumerate(y))
    latent = generate_latent(spec, y) if with_latent and spec.latent_dim > 0 else None
    return SyntheticCohort(spec, subjects, latent)


def write_cohort(cohort: SyntheticCohort, out_dir) -> dict[str, Path]:
    """Write NIFTI images, ``manifest.csv``, ``labels.csv`` and ``latent.csv`` under ``out_dir``.

    Manifest paths are relative to the manifest's directory.
    """
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.csv"
    with manifest.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", *MODALITIES, "mask"])
        for s in cohort.subjects:
            row = [s.subject_id]
            for mod in MODALITIES:
                name = f"images/{s.subject_id}_{mod}.nii.gz"
                save_nifti(out_dir / name, s.volumes[mod], "f4")
                row.append(name)
            name = f"images/{s.subject_id}_mask.nii.gz"
            save_nifti(out_dir / name, s.mask, "u1")
            writer.writerow(row + [name])
    paths = {"manifest": manifest, "labels": write_labels(out_dir / "labels.csv", cohort.labels)}
    if cohort.latent is not None:
        paths["latent"] = write_latent_csv(out_dir / "latent.csv", cohort.latent.subject_ids, cohort.latent.values)
    paths["spec"] = out_dir / "synthetic_spec.json"
    paths["spec"].write_text(json.dumps(asdict(cohort.spec), indent=2, sort_keys=True) + "\n")
    return paths
