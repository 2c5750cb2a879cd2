from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..nifti import MODALITIES, REGIONS, LabelMask, Volume, check_same_grid, derive_regions
from . import firstorder, shape, texture
from .discretize import RegionTopology, discretize

FAMILY_FEATURES = {
    "shape": shape.FEATURES,
    "firstorder": firstorder.FEATURES,
    "glcm": texture.GLCM_FEATURES,
    "glrlm": texture.GLRLM_FEATURES,
    "glszm": texture.GLSZM_FEATURES,
    "gldm": texture.GLDM_FEATURES,
    "ngtdm": texture.NGTDM_FEATURES,
}
FAMILIES = tuple(FAMILY_FEATURES)
TEXTURE_FAMILIES = ("glcm", "glrlm", "glszm", "gldm", "ngtdm")

_TEXTURE_FUNCS = {
    "glcm": texture.glcm_features,
    "glrlm": texture.glrlm_features,
    "glszm": texture.glszm_features,
    "gldm": texture.gldm_features,
    "ngtdm": texture.ngtdm_features,
}


def feature_name(family: str, feature: str, modality: str = "na", region: str = "na") -> str:
    return f"{family}__{feature}__{modality}__{region}"


def split_feature_name(name: str) -> tuple[str, str, str, str]:
    parts = name.split("__")
    if len(parts) != 4:
        raise ValueError(f"feature name {name!r} does not follow family__feature__modality__region")
    return tuple(parts)


@dataclass(frozen=True)
class ExtractionConfig:
    bin_count: int = 32
    families: tuple[str, ...] = FAMILIES
    modalities: tuple[str, ...] = MODALITIES
    gldm_alpha: int = 0

    def __post_init__(self):
        if self.bin_count < 2:
            raise ValueError("bin_count must be >= 2")
        unknown = set(self.families) - set(FAMILIES)
        if unknown:
            raise ValueError(f"unknown feature families {sorted(unknown)}")
        unknown = set(self.modalities) - set(MODALITIES)
        if unknown:
            raise ValueError(f"unknown modalities {sorted(unknown)}")
        # canonical order keeps column order independent of how the user listed them
        object.__setattr__(self, "families", tuple(f for f in FAMILIES if f in self.families))
        object.__setattr__(self, "modalities", tuple(m for m in MODALITIES if m in self.modalities))


def feature_names(config: ExtractionConfig = ExtractionConfig()) -> list[str]:
    """Column order of ``extract_all`` output: shape per region, then modality x region x family."""
    names = []
    if "shape" in config.families:
        for region in REGIONS:
            names += [feature_name("shape", f, "na", region) for f in shape.FEATURES]
    for modality in config.modalities:
        for region in REGIONS:
            for family in config.families:
                if family == "shape":
                    continue
                names += [feature_name(family, f, modality, region) for f in FAMILY_FEATURES[family]]
    return names


@dataclass(frozen=True)
class FeatureVector:
    """Ordered feature values for one subject plus the names that were undefined."""

    names: tuple[str, ...]
    values: np.ndarray
    missing: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if len(self.names) != values.size:
            raise ValueError("names and values disagree in length")
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate feature names")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing", frozenset(self.missing))

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))


def extract_all(
    volumes: Mapping[str, Volume],
    mask: LabelMask,
    config: ExtractionConfig = ExtractionConfig(),
) -> FeatureVector:
    """Radiomic features for one subject.

    Features that are undefined (empty region, degenerate matrix) are set to
    0.0 and listed in ``missing``.
    """
    for modality in config.modalities:
        if modality not in volumes:
            raise KeyError(f"missing volume for modality {modality!r}")
        check_same_grid(volumes[modality], mask, f"{modality} volume")

    regions = derive_regions(mask)
    computed: dict[str, float] = {}

    if "shape" in config.families:
        for region in regions:
            if not region.empty:
                for f, v in shape.shape_features(region).items():
                    computed[feature_name("shape", f, "na", region.region)] = v

    wanted = [f for f in TEXTURE_FAMILIES if f in config.families]
    topologies = {}
    if wanted:
        for region in regions:
            if not region.empty:
                topologies[region.region] = RegionTopology(np.argwhere(region.array))

    for modality in config.modalities:
        vol = volumes[modality]
        for region in regions:
            if region.empty:
                continue
            if "firstorder" in config.families:
                fo = firstorder.first_order(vol, region, config.bin_count)
                for f, v in fo.items():
                    computed[feature_name("firstorder", f, modality, region.region)] = v
            if not wanted:
                continue
            disc = discretize(vol, region, config.bin_count, topologies[region.region])
            for family in wanted:
                if family == "gldm":
                    feats = texture.gldm_features(disc, config.gldm_alpha)
                else:
                    feats = _TEXTURE_FUNCS[family](disc)
                for f, v in feats.items():
                    computed[feature_name(family, f, modality, region.region)] = v

    names = feature_names(config)
    values = np.zeros(len(names))
    missing = set()
    for k, name in enumerate(names):
        v = computed.get(name, float("nan"))
        if np.isfinite(v):
            values[k] = v
        else:
            missing.add(name)
    return FeatureVector(tuple(names), values, frozenset(missing))
