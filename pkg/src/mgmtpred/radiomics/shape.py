from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from ..nifti import RegionMask
from .discretize import EmptyRegionError

FEATURES = (
    "VoxelVolume",
    "Maximum3DDiameter",
    "MajorAxisLength",
    "MinorAxisLength",
    "LeastAxisLength",
    "Elongation",
    "Flatness",
)

_FACE_OFFSETS = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))


def surface_voxels(member: np.ndarray) -> np.ndarray:
    """Indices of region voxels with at least one face neighbor outside the region."""
    padded = np.pad(member, 1, constant_values=False)
    sx, sy, sz = member.shape
    interior = member.copy()
    for dx, dy, dz in _FACE_OFFSETS:
        interior &= padded[1 + dx:1 + dx + sx, 1 + dy:1 + dy + sy, 1 + dz:1 + dz + sz]
    return np.argwhere(member & ~interior)


def _max_pairwise_distance(points: np.ndarray, block: int = 2048) -> float:
    n = points.shape[0]
    best = 0.0
    for start in range(0, n, block):
        chunk = points[start:start + block]
        d2 = ((chunk[:, None, :] - points[None, start:, :]) ** 2).sum(axis=-1)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))


def max_diameter(points: np.ndarray) -> float:
    if points.shape[0] < 2:
        return 0.0
    if points.shape[0] > 64:
        # The farthest pair are hull vertices; flat point sets make qhull fail.
        try:
            points = points[ConvexHull(points).vertices]
        except QhullError:
            pass
    return _max_pairwise_distance(points)


def shape_features(region: RegionMask) -> dict[str, float]:
    member = region.array
    if not member.any():
        raise EmptyRegionError(f"region {region.region!r} is empty")
    spacing = np.asarray(region.spacing)
    n = int(member.sum())

    surface = surface_voxels(member) * spacing
    diameter = max_diameter(surface)

    coords = np.argwhere(member) * spacing
    centered = coords - coords.mean(axis=0)
    cov = centered.T @ centered / n
    eig = np.clip(np.linalg.eigvalsh(cov), 0.0, None)  # ascending
    least, minor, major = eig
    return {
        "VoxelVolume": float(n * np.prod(spacing)),
        "Maximum3DDiameter": diameter,
        "MajorAxisLength": float(4.0 * np.sqrt(major)),
        "MinorAxisLength": float(4.0 * np.sqrt(minor)),
        "LeastAxisLength": float(4.0 * np.sqrt(least)),
        "Elongation": float(np.sqrt(minor / major)) if major > 0 else 0.0,
        "Flatness": float(np.sqrt(least / major)) if major > 0 else 0.0,
    }
