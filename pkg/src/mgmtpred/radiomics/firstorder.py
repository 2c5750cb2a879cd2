from __future__ import annotations

import numpy as np

from ..nifti import RegionMask, Volume, check_same_grid
from .discretize import EmptyRegionError, bin_levels

FEATURES = (
    "Mean",
    "Median",
    "Variance",
    "InterquartileRange",
    "MeanAbsoluteDeviation",
    "Percentile10",
    "Percentile90",
    "Minimum",
    "Maximum",
    "Range",
    "Skewness",
    "Kurtosis",
    "Energy",
    "Entropy",
    "RootMeanSquared",
    "Uniformity",
)


def first_order_values(values, bin_count: int = 32) -> dict[str, float]:
    """Intensity statistics of the region voxels ``values``.

    Percentiles use linear interpolation between closest ranks.  Variance,
    skewness and kurtosis use population moments; kurtosis is not
    excess-corrected.  Entropy and Uniformity are taken over the
    fixed-bin-count histogram.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise EmptyRegionError("first-order features need a nonempty region")
    mean = v.mean()
    dev = v - mean
    m2 = np.mean(dev**2)
    p10, p25, p50, p75, p90 = np.percentile(v, [10, 25, 50, 75, 90])
    if m2 > 0:
        skew = np.mean(dev**3) / m2**1.5
        kurt = np.mean(dev**4) / m2**2
    else:
        skew = kurt = 0.0
    levels, _ = bin_levels(v, bin_count)
    p = np.bincount(levels)[1:] / v.size
    p = p[p > 0]
    return {
        "Mean": float(mean),
        "Median": float(p50),
        "Variance": float(m2),
        "InterquartileRange": float(p75 - p25),
        "MeanAbsoluteDeviation": float(np.mean(np.abs(dev))),
        "Percentile10": float(p10),
        "Percentile90": float(p90),
        "Minimum": float(v.min()),
        "Maximum": float(v.max()),
        "Range": float(v.max() - v.min()),
        "Skewness": float(skew),
        "Kurtosis": float(kurt),
        "Energy": float(np.sum(v**2)),
        "Entropy": float(-np.sum(p * np.log2(p))),
        "RootMeanSquared": float(np.sqrt(np.mean(v**2))),
        "Uniformity": float(np.sum(p**2)),
    }


def first_order(volume: Volume, region: RegionMask, bin_count: int = 32) -> dict[str, float]:
    check_same_grid(volume, region, "volume")
    member = region.array
    if not member.any():
        raise EmptyRegionError(f"region {region.region!r} is empty")
    return first_order_values(volume.array[member], bin_count)
