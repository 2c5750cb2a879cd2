from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ..nifti import RegionMask, Volume, check_same_grid

NEIGHBORS_26 = tuple(d for d in itertools.product((-1, 0, 1), repeat=3) if d != (0, 0, 0))
# One representative per +/- pair: first nonzero component positive.
DIRECTIONS_13 = tuple(d for d in NEIGHBORS_26 if next(c for c in d if c != 0) > 0)


class EmptyRegionError(ValueError):
    pass


class RegionTopology:
    """Neighbor structure of a voxel set, shared by every modality on that region.

    For each of the 13 directions ``d`` it stores the index pairs
    (src, dst) of region voxels with ``coords[dst] == coords[src] + d``, and
    the voxel order sorted by (line along d, position on that line).
    """

    def __init__(self, coords: np.ndarray):
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        self.coords = coords
        self.n = coords.shape[0]
        lo = coords.min(axis=0)
        shape = coords.max(axis=0) - lo + 3
        index = np.full(shape, -1, dtype=np.int64)
        local = coords - lo + 1
        index[local[:, 0], local[:, 1], local[:, 2]] = np.arange(self.n)

        self.pairs = {}
        self.line_order = {}
        self.line_code = {}
        base = int(shape.max()) * 2 + 1
        m = int(shape.max())
        for d in DIRECTIONS_13:
            nb = index[local[:, 0] + d[0], local[:, 1] + d[1], local[:, 2] + d[2]]
            has = nb >= 0
            self.pairs[d] = (np.flatnonzero(has), nb[has])

            axis = next(k for k, c in enumerate(d) if c != 0)
            t = coords[:, axis]
            code = np.zeros(self.n, dtype=np.int64)
            for k in range(3):
                code = code * base + (coords[:, k] - t * d[k] + m)
            code = code * base + t
            order = np.argsort(code, kind="stable")
            self.line_order[d] = order
            self.line_code[d] = code[order]

        self.all_src = np.concatenate([self.pairs[d][0] for d in DIRECTIONS_13])
        self.all_dst = np.concatenate([self.pairs[d][1] for d in DIRECTIONS_13])
        self.degree = np.bincount(self.all_src, minlength=self.n) + np.bincount(self.all_dst, minlength=self.n)


@dataclass(frozen=True)
class DiscretizedRegion:
    """Gray levels 1..n_levels for every voxel of one region.

    ``coords`` holds the (x, y, z) voxel index of each entry of ``levels``.
    """

    levels: np.ndarray
    n_levels: int
    bin_edges: np.ndarray
    coords: np.ndarray
    topology: RegionTopology | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=np.int64)
        coords = np.asarray(self.coords, dtype=np.int64).reshape(-1, 3)
        if levels.size == 0:
            raise EmptyRegionError("region has no voxels")
        if levels.size != coords.shape[0]:
            raise ValueError("levels and coords disagree in length")
        if levels.min() < 1 or levels.max() > self.n_levels:
            raise ValueError("levels outside [1, n_levels]")
        topology = self.topology
        if topology is None:
            topology = RegionTopology(coords)
        elif topology.n != levels.size:
            raise ValueError("topology does not match the region")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "topology", topology)

    @classmethod
    def from_grid(cls, levels_3d, n_levels: int) -> "DiscretizedRegion":
        """Build from a 3D integer array where 0 marks voxels outside the region."""
        levels_3d = np.asarray(levels_3d)
        coords = np.argwhere(levels_3d > 0)
        levels = levels_3d[levels_3d > 0]
        edges = np.arange(n_levels + 1, dtype=float)
        return cls(levels, n_levels, edges, coords)

    @property
    def n_voxels(self) -> int:
        return int(self.levels.size)


def bin_levels(values: np.ndarray, bin_count: int) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-bin-count min-max binning; returns (levels, bin_edges)."""
    if bin_count < 2:
        raise ValueError("bin_count must be >= 2")
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise EmptyRegionError("cannot discretize an empty region")
    vmin, vmax = float(values.min()), float(values.max())
    if vmax == vmin:
        return np.ones(values.size, dtype=np.int64), vmin + np.arange(bin_count + 1) / bin_count
    levels = 1 + np.floor(bin_count * (values - vmin) / (vmax - vmin)).astype(np.int64)
    np.clip(levels, 1, bin_count, out=levels)
    return levels, np.linspace(vmin, vmax, bin_count + 1)


def discretize(
    volume: Volume,
    region: RegionMask,
    bin_count: int = 32,
    topology: RegionTopology | None = None,
) -> DiscretizedRegion:
    check_same_grid(volume, region, "volume")
    member = region.array
    if not member.any():
        raise EmptyRegionError(f"region {region.region!r} is empty")
    coords = np.argwhere(member)
    levels, edges = bin_levels(volume.array[member], bin_count)
    return DiscretizedRegion(levels, bin_count, edges, coords, topology)
