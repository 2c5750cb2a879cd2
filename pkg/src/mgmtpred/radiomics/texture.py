"""Texture matrices (GLCM, GLRLM, GLSZM, GLDM, NGTDM) on discretized regions.

All families run on the precomputed ``RegionTopology`` of the region (voxel
neighbor pairs per direction), so each costs a few O(N) array passes per
modality.  Distance is fixed at 1.  Direction-based families (GLCM, GLRLM)
report the unweighted mean of the per-direction features.  Undefined
features come back as NaN.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .discretize import DIRECTIONS_13, DiscretizedRegion

GLCM_FEATURES = (
    "Autocorrelation",
    "JointAverage",
    "Contrast",
    "Correlation",
    "DifferenceAverage",
    "InverseDifference",
    "InverseDifferenceMoment",
    "JointEnergy",
    "JointEntropy",
)
GLRLM_FEATURES = (
    "ShortRunEmphasis",
    "LongRunEmphasis",
    "GrayLevelNonUniformity",
    "GrayLevelNonUniformityNormalized",
    "RunLengthNonUniformityNormalized",
    "RunPercentage",
    "GrayLevelVariance",
    "RunVariance",
    "RunEntropy",
)
GLSZM_FEATURES = (
    "SmallAreaEmphasis",
    "LargeAreaEmphasis",
    "SmallAreaHighGrayLevelEmphasis",
    "SmallAreaLowGrayLevelEmphasis",
    "GrayLevelNonUniformityNormalized",
    "SizeZoneNonUniformityNormalized",
    "ZonePercentage",
    "ZoneEntropy",
)
GLDM_FEATURES = (
    "SmallDependenceEmphasis",
    "LargeDependenceEmphasis",
    "GrayLevelNonUniformity",
    "DependenceNonUniformity",
    "DependenceNonUniformityNormalized",
    "GrayLevelVariance",
    "DependenceEntropy",
)
NGTDM_FEATURES = ("Coarseness", "Contrast", "Busyness", "Complexity", "Strength")

# Coarseness when sum(p_i * s_i) == 0.
COARSENESS_CAP = 1e6

def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


def _nan_dict(names) -> dict[str, float]:
    return {name: float("nan") for name in names}


# ---------------------------------------------------------------------------
# GLCM
# ---------------------------------------------------------------------------


def glcm_matrices(disc: DiscretizedRegion) -> dict[tuple, np.ndarray]:
    """Symmetric co-occurrence counts per direction (directions without pairs omitted)."""
    ng = disc.n_levels
    lv = disc.levels - 1
    out = {}
    for d in DIRECTIONS_13:
        src, dst = disc.topology.pairs[d]
        if src.size == 0:
            continue
        counts = np.bincount(lv[src] * ng + lv[dst], minlength=ng * ng).reshape(ng, ng)
        out[d] = counts + counts.T
    return out


def _glcm_from_probabilities(p: np.ndarray) -> dict[str, np.ndarray]:
    """Features for a stack of normalized matrices ``p[k, i, j]``, one value per k."""
    ng = p.shape[-1]
    lv = np.arange(1, ng + 1, dtype=np.float64)
    i = lv[:, None]
    j = lv[None, :]
    px = p.sum(axis=2)
    mu = px @ lv
    var = np.einsum("ki,ki->k", (lv[None, :] - mu[:, None]) ** 2, px)
    auto = np.einsum("kij,ij->k", p, i * j)
    diff = np.abs(i - j)
    logp = np.log2(p, where=p > 0, out=np.zeros_like(p))
    safe_var = np.where(var > 0, var, 1.0)
    return {
        "Autocorrelation": auto,
        "JointAverage": mu,
        "Contrast": np.einsum("kij,ij->k", p, diff**2),
        "Correlation": np.where(var > 0, (auto - mu * mu) / safe_var, 1.0),
        "DifferenceAverage": np.einsum("kij,ij->k", p, diff),
        "InverseDifference": np.einsum("kij,ij->k", p, 1.0 / (1.0 + diff)),
        "InverseDifferenceMoment": np.einsum("kij,ij->k", p, 1.0 / (1.0 + diff**2)),
        "JointEnergy": np.einsum("kij,kij->k", p, p),
        "JointEntropy": -np.einsum("kij,kij->k", p, logp),
    }


def glcm_features(disc: DiscretizedRegion) -> dict[str, float]:
    mats = list(glcm_matrices(disc).values())
    if not mats:
        return _nan_dict(GLCM_FEATURES)
    P = np.stack(mats).astype(np.float64)
    per_direction = _glcm_from_probabilities(P / P.sum(axis=(1, 2), keepdims=True))
    return {name: float(np.mean(per_direction[name])) for name in GLCM_FEATURES}


# ---------------------------------------------------------------------------
# GLRLM
# ---------------------------------------------------------------------------


def glrlm_matrices(disc: DiscretizedRegion) -> dict[tuple, np.ndarray]:
    """Run-length counts ``P[level-1, length-1]`` per direction.

    Along one line run starts and run ends alternate, so in (line, position)
    order the k-th start and the k-th end bound the same run.
    """
    ng = disc.n_levels
    topo = disc.topology
    lv = disc.levels
    max_len = int(np.ptp(disc.coords, axis=0).max()) + 1
    out = {}
    for d in DIRECTIONS_13:
        src, dst = topo.pairs[d]
        same = lv[src] == lv[dst]
        has_next = np.zeros(topo.n, dtype=bool)
        has_prev = np.zeros(topo.n, dtype=bool)
        has_next[src[same]] = True
        has_prev[dst[same]] = True
        order = topo.line_order[d]
        code = topo.line_code[d]
        is_start = ~has_prev[order]
        lengths = code[~has_next[order]] - code[is_start] + 1
        level = lv[order[is_start]]
        idx = (level - 1) * max_len + (lengths - 1)
        out[d] = np.bincount(idx, minlength=ng * max_len).reshape(ng, max_len)
    return out


def _glrlm_from_counts(P: np.ndarray, n_voxels: int) -> dict[str, np.ndarray]:
    """Features for a stack of run-length matrices ``P[k, level, length]``."""
    _, ng, nl = P.shape
    li = np.arange(1, ng + 1, dtype=np.float64)
    lj = np.arange(1, nl + 1, dtype=np.float64)
    nr = P.sum(axis=(1, 2))
    p = P / nr[:, None, None]
    pi = p.sum(axis=2)
    pj = p.sum(axis=1)
    mu_i = pi @ li
    mu_j = pj @ lj
    gln = np.sum(P.sum(axis=2) ** 2, axis=1)
    logp = np.log2(p, where=p > 0, out=np.zeros_like(p))
    return {
        "ShortRunEmphasis": P.sum(axis=1) @ (1.0 / lj**2) / nr,
        "LongRunEmphasis": P.sum(axis=1) @ lj**2 / nr,
        "GrayLevelNonUniformity": gln / nr,
        "GrayLevelNonUniformityNormalized": gln / nr**2,
        "RunLengthNonUniformityNormalized": np.sum(P.sum(axis=1) ** 2, axis=1) / nr**2,
        "RunPercentage": nr / n_voxels,
        "GrayLevelVariance": np.sum(pi * (li[None, :] - mu_i[:, None]) ** 2, axis=1),
        "RunVariance": np.sum(pj * (lj[None, :] - mu_j[:, None]) ** 2, axis=1),
        "RunEntropy": -np.einsum("kij,kij->k", p, logp),
    }


def glrlm_features(disc: DiscretizedRegion) -> dict[str, float]:
    P = np.stack(list(glrlm_matrices(disc).values())).astype(np.float64)
    per_direction = _glrlm_from_counts(P, disc.n_voxels)
    return {name: float(np.mean(per_direction[name])) for name in GLRLM_FEATURES}


# ---------------------------------------------------------------------------
# GLSZM
# ---------------------------------------------------------------------------


def glszm_matrix(disc: DiscretizedRegion) -> np.ndarray:
    """Zone counts ``P[level-1, size-1]`` over 26-connected equal-level zones."""
    topo = disc.topology
    lv = disc.levels
    same = lv[topo.all_src] == lv[topo.all_dst]
    src = topo.all_src[same]
    dst = topo.all_dst[same]
    graph = sparse.coo_matrix((np.ones(src.size, dtype=np.int8), (src, dst)), shape=(topo.n, topo.n))
    n_zones, zone = connected_components(graph, directed=False)
    sizes = np.bincount(zone, minlength=n_zones)
    zone_level = np.empty(n_zones, dtype=np.int64)
    zone_level[zone] = lv
    ng = disc.n_levels
    max_size = int(sizes.max())
    flat = np.bincount((zone_level - 1) * max_size + (sizes - 1), minlength=ng * max_size)
    return flat.reshape(ng, max_size)


def glszm_features(disc: DiscretizedRegion) -> dict[str, float]:
    P = glszm_matrix(disc)
    ng, ns = P.shape
    i = np.arange(1, ng + 1, dtype=np.float64)[:, None]
    j = np.arange(1, ns + 1, dtype=np.float64)[None, :]
    nz = float(P.sum())
    return {
        "SmallAreaEmphasis": float(np.sum(P / j**2)) / nz,
        "LargeAreaEmphasis": float(np.sum(P * j**2)) / nz,
        "SmallAreaHighGrayLevelEmphasis": float(np.sum(P * i**2 / j**2)) / nz,
        "SmallAreaLowGrayLevelEmphasis": float(np.sum(P / (i**2 * j**2))) / nz,
        "GrayLevelNonUniformityNormalized": float(np.sum(P.sum(axis=1) ** 2)) / nz**2,
        "SizeZoneNonUniformityNormalized": float(np.sum(P.sum(axis=0) ** 2)) / nz**2,
        "ZonePercentage": nz / disc.n_voxels,
        "ZoneEntropy": _entropy((P / nz).ravel()),
    }


# ---------------------------------------------------------------------------
# GLDM and NGTDM (26-neighborhood statistics)
# ---------------------------------------------------------------------------


def dependence_counts(disc: DiscretizedRegion, alpha: int = 0) -> np.ndarray:
    """Per-voxel count of in-region 26-neighbors within ``alpha`` gray levels."""
    topo = disc.topology
    lv = disc.levels
    close = np.abs(lv[topo.all_src] - lv[topo.all_dst]) <= alpha
    return np.bincount(topo.all_src[close], minlength=topo.n) + np.bincount(
        topo.all_dst[close], minlength=topo.n
    )


def gldm_matrix(disc: DiscretizedRegion, alpha: int = 0) -> np.ndarray:
    """``P[level-1, dependence]`` with dependence in 0..26."""
    dep = dependence_counts(disc, alpha)
    ng = disc.n_levels
    return np.bincount((disc.levels - 1) * 27 + dep, minlength=ng * 27).reshape(ng, 27)


def gldm_features(disc: DiscretizedRegion, alpha: int = 0) -> dict[str, float]:
    P = gldm_matrix(disc, alpha)
    ng = P.shape[0]
    i = np.arange(1, ng + 1, dtype=np.float64)
    j = np.arange(1, 28, dtype=np.float64)[None, :]
    nz = float(P.sum())
    pi = P.sum(axis=1) / nz
    mu = float(np.sum(i * pi))
    dn = float(np.sum(P.sum(axis=0) ** 2))
    return {
        "SmallDependenceEmphasis": float(np.sum(P / j**2)) / nz,
        "LargeDependenceEmphasis": float(np.sum(P * j**2)) / nz,
        "GrayLevelNonUniformity": float(np.sum(P.sum(axis=1) ** 2)) / nz,
        "DependenceNonUniformity": dn / nz,
        "DependenceNonUniformityNormalized": dn / nz**2,
        "GrayLevelVariance": float(np.sum(pi * (i - mu) ** 2)),
        "DependenceEntropy": _entropy((P / nz).ravel()),
    }


def ngtdm_table(disc: DiscretizedRegion) -> tuple[np.ndarray, np.ndarray, int]:
    """Return (n_i, s_i, N_vp) over voxels with at least one in-region neighbor."""
    topo = disc.topology
    lv = disc.levels
    total = np.bincount(topo.all_src, weights=lv[topo.all_dst], minlength=topo.n) + np.bincount(
        topo.all_dst, weights=lv[topo.all_src], minlength=topo.n
    )
    valid = topo.degree > 0
    ng = disc.n_levels
    v = lv[valid]
    diff = np.abs(v - total[valid] / topo.degree[valid])
    n_i = np.bincount(v - 1, minlength=ng).astype(np.float64)
    s_i = np.bincount(v - 1, weights=diff, minlength=ng)
    return n_i, s_i, int(valid.sum())


def ngtdm_features(disc: DiscretizedRegion) -> dict[str, float]:
    n_i, s_i, nvp = ngtdm_table(disc)
    if nvp == 0:
        return _nan_dict(NGTDM_FEATURES)
    present = n_i > 0
    p = n_i[present] / nvp
    s = s_i[present]
    lv = np.flatnonzero(present).astype(np.float64) + 1.0
    ngp = p.size

    ps = float(np.sum(p * s))
    s_sum = float(np.sum(s))
    di = lv[:, None] - lv[None, :]
    ip = lv * p
    busy_den = float(np.sum(np.abs(ip[:, None] - ip[None, :])))
    pp = p[:, None] + p[None, :]
    ps_sum = (p * s)[:, None] + (p * s)[None, :]

    contrast = 0.0
    if ngp > 1:
        contrast = float(np.sum(p[:, None] * p[None, :] * di**2)) / (ngp * (ngp - 1)) * s_sum / nvp
    return {
        "Coarseness": 1.0 / ps if ps > 0 else COARSENESS_CAP,
        "Contrast": contrast,
        "Busyness": ps / busy_den if busy_den > 0 else float("nan"),
        "Complexity": float(np.sum(np.abs(di) * ps_sum / pp)) / nvp,
        "Strength": float(np.sum(pp * di**2)) / s_sum if s_sum > 0 else 0.0,
    }
