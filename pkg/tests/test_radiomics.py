import math

import numpy as np
import pytest

import oracles
from mgmtpred.nifti import LabelMask, RegionMask, Volume
from mgmtpred.radiomics import (
    FAMILY_FEATURES,
    DiscretizedRegion,
    EmptyRegionError,
    ExtractionConfig,
    discretize,
    extract_all,
    feature_names,
    first_order,
    glcm_features,
    gldm_features,
    glrlm_features,
    glszm_features,
    ngtdm_features,
    shape_features,
)
from mgmtpred.radiomics import texture
from mgmtpred.radiomics.firstorder import first_order_values

TEXTURE = {
    "glcm": glcm_features,
    "glrlm": glrlm_features,
    "glszm": glszm_features,
    "gldm": gldm_features,
    "ngtdm": ngtdm_features,
}
ORACLE = {
    "glcm": oracles.glcm,
    "glrlm": oracles.glrlm,
    "glszm": oracles.glszm,
    "gldm": oracles.gldm,
    "ngtdm": oracles.ngtdm,
}


def line(levels):
    arr = np.zeros((len(levels), 1, 1), dtype=int)
    arr[:, 0, 0] = levels
    return DiscretizedRegion.from_grid(arr, max(max(levels), 2))


def region_and_volume(values_3d, member_3d, spacing=(1.0, 1.0, 1.0)):
    return (
        Volume.from_array(values_3d, spacing),
        RegionMask.from_array(member_3d, spacing, "whole"),
    )


def random_case(rng, max_side=5):
    dims = tuple(rng.integers(1, max_side + 1, size=3))
    member = rng.random(dims) < rng.uniform(0.3, 1.0)
    if not member.any():
        member[tuple(rng.integers(0, d) for d in dims)] = True
    values = rng.normal(50, 20, size=dims)
    spacing = tuple(rng.uniform(0.5, 2.0, size=3))
    bins = int(rng.integers(2, 5))
    return values, member, spacing, bins


# --- discretization -------------------------------------------------------------


def _disc_of(values):
    values = np.asarray(values, dtype=float).reshape(-1, 1, 1)
    vol, reg = region_and_volume(values, np.ones_like(values, dtype=bool))
    return vol, reg


def test_discretize_uniform_spread():
    vol, reg = _disc_of([0, 1, 2, 3])
    assert discretize(vol, reg, 4).levels.tolist() == [1, 2, 3, 4]


def test_discretize_constant_region():
    vol, reg = _disc_of([5.0] * 4)
    disc = discretize(vol, reg, 7)
    assert disc.levels.tolist() == [1] * 4
    assert np.all(np.diff(disc.bin_edges) > 0)


def test_discretize_hand_example():
    vol, reg = _disc_of([0, 5, 10])
    assert discretize(vol, reg, 2).levels.tolist() == [1, 2, 2]


def test_discretize_empty_region():
    vol, reg = region_and_volume(np.zeros((2, 2, 2)), np.zeros((2, 2, 2), dtype=bool))
    with pytest.raises(EmptyRegionError):
        discretize(vol, reg, 4)


def test_discretize_invariants():
    rng = np.random.default_rng(3)
    vol, reg = _disc_of(rng.normal(size=30))
    disc = discretize(vol, reg, 8)
    assert disc.levels.min() >= 1 and disc.levels.max() <= 8
    assert disc.bin_edges.size == 9 and np.all(np.diff(disc.bin_edges) > 0)
    assert disc.n_voxels == 30


# --- first order ------------------------------------------------------------------


def test_first_order_symmetric_triple():
    f = first_order_values([1, 2, 3])
    assert f["Mean"] == 2 and f["Median"] == 2
    assert f["Variance"] == pytest.approx(2 / 3, abs=1e-15)
    assert f["MeanAbsoluteDeviation"] == pytest.approx(2 / 3, abs=1e-15)


def test_first_order_constant():
    f = first_order_values([1, 1, 1, 1])
    assert f["Variance"] == 0 and f["InterquartileRange"] == 0 and f["Range"] == 0
    assert f["Skewness"] == 0 and f["Kurtosis"] == 0


def test_first_order_linear_interpolation_percentiles():
    f = first_order_values(range(1, 11))
    assert f["Percentile10"] == pytest.approx(1.9, abs=1e-12)
    assert f["InterquartileRange"] == pytest.approx(4.5, abs=1e-12)


def test_first_order_empty_region():
    vol, reg = region_and_volume(np.zeros((2, 2, 2)), np.zeros((2, 2, 2), dtype=bool))
    with pytest.raises(EmptyRegionError):
        first_order(vol, reg)


# --- shape -------------------------------------------------------------------------


def _shape_of(points, dims, spacing=(1.0, 1.0, 1.0)):
    member = np.zeros(dims, dtype=bool)
    for p in points:
        member[p] = True
    return shape_features(RegionMask.from_array(member, spacing))


def test_shape_single_voxel():
    f = _shape_of([(0, 0, 0)], (1, 1, 1))
    assert f["Maximum3DDiameter"] == 0 and f["VoxelVolume"] == 1
    assert f["MajorAxisLength"] == 0 and f["LeastAxisLength"] == 0


def test_shape_three_four_five():
    f = _shape_of([(0, 0, 0), (3, 4, 0)], (4, 5, 1))
    assert f["Maximum3DDiameter"] == pytest.approx(5.0, abs=1e-12)


def test_shape_anisotropic_spacing():
    f = _shape_of([(0, 0, 0), (1, 0, 0)], (2, 1, 1), spacing=(2, 1, 1))
    assert f["Maximum3DDiameter"] == pytest.approx(2.0)
    assert f["VoxelVolume"] == pytest.approx(4.0)


def test_shape_diameter_matches_all_pairs_on_large_blob():
    # large enough to take the convex-hull path
    rng = np.random.default_rng(11)
    x, y, z = np.meshgrid(*[np.arange(12)] * 3, indexing="ij")
    member = (x - 6) ** 2 / 30 + (y - 5) ** 2 / 12 + (z - 6) ** 2 / 20 < 1
    member &= rng.random(member.shape) < 0.9
    spacing = (0.8, 1.1, 1.7)
    got = shape_features(RegionMask.from_array(member, spacing))
    want = oracles.shape([tuple(v) for v in np.argwhere(member)], spacing)
    for k, v in want.items():
        assert got[k] == pytest.approx(v, abs=1e-9), k


def test_shape_spacing_scaling():
    rng = np.random.default_rng(5)
    member = rng.random((5, 4, 6)) < 0.5
    a = shape_features(RegionMask.from_array(member, (1.0, 1.5, 0.7)))
    b = shape_features(RegionMask.from_array(member, (2.0, 3.0, 1.4)))
    assert b["Maximum3DDiameter"] == pytest.approx(2 * a["Maximum3DDiameter"], rel=1e-12)
    assert b["VoxelVolume"] == pytest.approx(8 * a["VoxelVolume"], rel=1e-12)


def test_shape_flat_region_falls_back_from_hull():
    member = np.zeros((10, 10, 1), dtype=bool)
    member[:, :, 0] = True
    f = shape_features(RegionMask.from_array(member))
    assert f["Maximum3DDiameter"] == pytest.approx(math.hypot(9, 9))


# --- GLCM ---------------------------------------------------------------------------


def test_glcm_two_voxel_pair():
    disc = line([1, 2])
    mats = texture.glcm_matrices(disc)
    assert list(mats) == [(1, 0, 0)]
    p = mats[(1, 0, 0)] / mats[(1, 0, 0)].sum()
    np.testing.assert_array_equal(p, [[0, 0.5], [0.5, 0]])
    assert glcm_features(disc)["Contrast"] == pytest.approx(1.0)


def test_glcm_constant_levels():
    disc = DiscretizedRegion.from_grid(np.full((3, 3, 3), 2), 4)
    f = glcm_features(disc)
    assert f["Contrast"] == 0 and f["JointEnergy"] == pytest.approx(1.0)


def test_glcm_single_voxel_missing():
    f = glcm_features(line([1]))
    assert all(math.isnan(v) for v in f.values())


def test_glcm_matrices_symmetric():
    rng = np.random.default_rng(0)
    for _ in range(20):
        grid = rng.integers(0, 5, size=(4, 4, 4))
        if not grid.any():
            continue
        for counts in texture.glcm_matrices(DiscretizedRegion.from_grid(grid, 4)).values():
            np.testing.assert_array_equal(counts, counts.T)


# --- GLRLM --------------------------------------------------------------------------


def test_glrlm_constant_line():
    disc = line([1, 1, 1])
    mats = texture.glrlm_matrices(disc)
    P = mats[(1, 0, 0)]
    assert P[0, 2] == 1 and P.sum() == 1
    assert texture._glrlm_from_counts(P[None].astype(float), 3)["LongRunEmphasis"][0] == 9
    for d, P in mats.items():
        if d != (1, 0, 0):
            assert P[0, 0] == 3 and P.sum() == 3


def test_glrlm_single_voxel():
    assert glrlm_features(line([1]))["ShortRunEmphasis"] == 1.0


def test_glrlm_alternating():
    disc = line([1, 2, 1])
    P = texture.glrlm_matrices(disc)[(1, 0, 0)]
    assert P[:, 0].sum() == 3 and P.sum() == 3
    assert texture._glrlm_from_counts(P[None].astype(float), 3)["RunPercentage"][0] == 1.0


def test_glrlm_runs_with_hole():
    # runs end at region boundaries, including interior holes
    disc = line([2, 2, 0, 2, 2, 2])
    P = texture.glrlm_matrices(disc)[(1, 0, 0)]
    assert P[1, 1] == 1 and P[1, 2] == 1 and P.sum() == 2


# --- GLSZM --------------------------------------------------------------------------


def test_glszm_constant_cube():
    disc = DiscretizedRegion.from_grid(np.full((2, 2, 2), 3), 4)
    P = texture.glszm_matrix(disc)
    assert P.sum() == 1 and P[2, 7] == 1
    assert glszm_features(disc)["SmallAreaEmphasis"] == pytest.approx(1 / 64)


def test_glszm_all_distinct():
    disc = line([1, 2, 3, 4])
    assert glszm_features(disc)["SmallAreaEmphasis"] == 1.0


def test_glszm_diagonal_neighbors_merge():
    grid = np.zeros((2, 2, 2), dtype=int)
    grid[0, 0, 0] = grid[1, 1, 1] = 2
    P = texture.glszm_matrix(DiscretizedRegion.from_grid(grid, 2))
    assert P[1, 1] == 1 and P.sum() == 1


# --- GLDM ---------------------------------------------------------------------------


def test_gldm_single_voxel():
    disc = line([1])
    P = texture.gldm_matrix(disc)
    assert P[0, 0] == 1 and P.sum() == 1
    assert gldm_features(disc)["SmallDependenceEmphasis"] == 1.0


def test_gldm_constant_pair():
    assert texture.dependence_counts(line([2, 2])).tolist() == [1, 1]


def test_gldm_center_of_constant_cube():
    disc = DiscretizedRegion.from_grid(np.ones((3, 3, 3), dtype=int), 2)
    dep = texture.dependence_counts(disc)
    center = np.flatnonzero((disc.coords == 1).all(axis=1))[0]
    assert dep[center] == 26


def test_gldm_alpha_widens_dependence():
    disc = line([1, 2, 1])
    assert texture.dependence_counts(disc, 0).tolist() == [0, 0, 0]
    assert texture.dependence_counts(disc, 1).tolist() == [1, 2, 1]


# --- NGTDM --------------------------------------------------------------------------


def test_ngtdm_constant_region():
    f = ngtdm_features(DiscretizedRegion.from_grid(np.full((3, 2, 2), 2), 3))
    assert f["Coarseness"] == texture.COARSENESS_CAP
    assert math.isnan(f["Busyness"])


def test_ngtdm_pair():
    disc = line([1, 2])
    n_i, s_i, nvp = texture.ngtdm_table(disc)
    assert s_i[:2].tolist() == [1.0, 1.0] and nvp == 2
    assert ngtdm_features(disc)["Busyness"] == pytest.approx(1.0)


def test_ngtdm_isolated_voxel_excluded():
    f = ngtdm_features(line([1]))
    assert all(math.isnan(v) for v in f.values())


# --- oracle equivalence (small sample; the acceptance module runs the full sweep) ----------


@pytest.mark.parametrize("seed", range(8))
def test_texture_matches_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    values, member, spacing, bins = random_case(rng)
    vol, reg = region_and_volume(values, member, spacing)
    disc = discretize(vol, reg, bins)
    ref_levels = oracles.discretize_values(values[member].tolist(), bins)
    assert disc.levels.tolist() == ref_levels
    lv = {tuple(c): level for c, level in zip(disc.coords.tolist(), ref_levels)}
    for family, fn in TEXTURE.items():
        got = fn(disc)
        want = ORACLE[family](lv, bins)
        if want is None:
            assert all(math.isnan(v) for v in got.values())
            continue
        for name in FAMILY_FEATURES[family]:
            g, w = got[name], want[name]
            if math.isnan(w):
                assert math.isnan(g), (family, name)
            else:
                assert g == pytest.approx(w, abs=1e-9), (family, name)


# --- invariances ------------------------------------------------------------------------


def test_translation_invariance():
    rng = np.random.default_rng(9)
    values, member, spacing, bins = random_case(rng)
    big_v = np.zeros(np.array(values.shape) + 3)
    big_m = np.zeros(big_v.shape, dtype=bool)
    big_v[2:2 + values.shape[0], 1:1 + values.shape[1], 3:] = values
    big_m[2:2 + values.shape[0], 1:1 + values.shape[1], 3:] = member
    a = region_and_volume(values, member, spacing)
    b = region_and_volume(big_v, big_m, spacing)
    da, db = discretize(*a, bins), discretize(*b, bins)
    for fn in TEXTURE.values():
        fa, fb = fn(da), fn(db)
        for k in fa:
            assert fa[k] == pytest.approx(fb[k], abs=1e-12) or (math.isnan(fa[k]) and math.isnan(fb[k]))
    sa, sb = shape_features(a[1]), shape_features(b[1])
    for k in sa:
        assert sa[k] == pytest.approx(sb[k], abs=1e-12)


# --- extract_all ---------------------------------------------------------------------


def _subject(rng, dims=(8, 8, 8), empty=False):
    lab = np.zeros(dims, dtype=int)
    if not empty:
        lab[2:6, 2:6, 2:6] = 2
        lab[3:5, 3:5, 3:5] = 4
        lab[3, 3, 3] = 1
    vols = {m: Volume.from_array(rng.normal(100, 10, dims), modality=m) for m in ("t1", "t1ce", "t2", "flair")}
    return vols, LabelMask.from_array(lab)


def test_extract_all_empty_mask():
    vols, mask = _subject(np.random.default_rng(0), empty=True)
    fv = extract_all(vols, mask)
    assert np.all(fv.values == 0.0)
    assert fv.missing == set(fv.names)


def test_extract_all_feature_count():
    cfg = ExtractionConfig()
    sizes = {f: len(v) for f, v in FAMILY_FEATURES.items()}
    expected = 3 * sizes["shape"] + 12 * sum(sizes[f] for f in sizes if f != "shape")
    assert len(feature_names(cfg)) == expected == 669
    vols, mask = _subject(np.random.default_rng(1))
    assert len(extract_all(vols, mask, cfg).names) == expected


def test_extract_all_deterministic():
    vols, mask = _subject(np.random.default_rng(2))
    a = extract_all(vols, mask)
    b = extract_all(vols, mask)
    assert a.values.tobytes() == b.values.tobytes() and a.missing == b.missing


def test_extract_all_naming_contract():
    vols, mask = _subject(np.random.default_rng(2))
    names = extract_all(vols, mask, ExtractionConfig(families=("shape", "firstorder"))).names
    assert "shape__Maximum3DDiameter__na__whole" in names
    assert "firstorder__Mean__t1ce__core" in names
    assert all(len(n.split("__")) == 4 for n in names)


def test_extract_all_flags_degenerate_features():
    # enhancing core of a single voxel: no GLCM pairs, no NGTDM neighbors
    vols, mask = _subject(np.random.default_rng(4))
    fv = extract_all(vols, mask)
    assert "glcm__Contrast__t1__enh" not in fv.missing
    arr = mask.array.copy()
    arr[arr == 4] = 1
    arr[4, 4, 4] = 4
    fv = extract_all(vols, LabelMask.from_array(arr))
    assert "glcm__Contrast__t1__enh" in fv.missing
    assert "ngtdm__Busyness__flair__enh" in fv.missing
    assert fv.as_dict()["glcm__Contrast__t1__enh"] == 0.0


def test_extract_all_dimension_mismatch():
    vols, mask = _subject(np.random.default_rng(0))
    vols["t2"] = Volume.from_array(np.zeros((8, 8, 7)))
    with pytest.raises(ValueError):
        extract_all(vols, mask)
