"""Radiomic features: first-order, shape and five texture-matrix families."""

from .discretize import DiscretizedRegion, EmptyRegionError, discretize
from .extract import (
    FAMILIES,
    FAMILY_FEATURES,
    ExtractionConfig,
    FeatureVector,
    extract_all,
    feature_name,
    feature_names,
    split_feature_name,
)
from .firstorder import first_order
from .shape import shape_features
from .texture import glcm_features, gldm_features, glrlm_features, glszm_features, ngtdm_features

__all__ = [
    "DiscretizedRegion",
    "EmptyRegionError",
    "ExtractionConfig",
    "FAMILIES",
    "FAMILY_FEATURES",
    "FeatureVector",
    "discretize",
    "extract_all",
    "feature_name",
    "feature_names",
    "first_order",
    "glcm_features",
    "gldm_features",
    "glrlm_features",
    "glszm_features",
    "ngtdm_features",
    "shape_features",
    "split_feature_name",
]
