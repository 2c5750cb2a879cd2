import numpy as np
import pytest

from mgmtpred.nifti import derive_regions
from mgmtpred.radiomics import ExtractionConfig, extract_all
from mgmtpred.synth import SyntheticSpec, gen_synthetic_cohort, generate_subject


def test_labels_balanced_by_positive_fraction():
    cohort = gen_synthetic_cohort(SyntheticSpec(n_subjects=20, positive_fraction=0.25, seed=1), with_latent=False)
    assert sum(cohort.labels.values()) == 5
    assert cohort.latent is None


def test_subject_generation_is_seeded():
    spec = SyntheticSpec(n_subjects=4, seed=7)
    a, b = generate_subject(spec, 2, 1), generate_subject(spec, 2, 1)
    assert a.mask.labels.tobytes() == b.mask.labels.tobytes()
    assert all(a.volumes[m].data.tobytes() == b.volumes[m].data.tobytes() for m in a.volumes)
    c = generate_subject(SyntheticSpec(n_subjects=4, seed=8), 2, 1)
    assert a.volumes["t1"].data.tobytes() != c.volumes["t1"].data.tobytes()


def test_regions_nonempty_and_nested():
    for label in (0, 1):
        subject = generate_subject(SyntheticSpec(seed=3), 0, label)
        whole, core, enh = derive_regions(subject.mask)
        assert enh.n_voxels > 0
        assert np.all(enh.member <= core.member) and np.all(core.member <= whole.member)


def test_diameter_effect_and_core_intensity_effect():
    spec = SyntheticSpec(seed=4, noise_sd=0.0, core_intensity_sd=0.0, diameter_sd_mm=0.0)
    cfg = ExtractionConfig(families=("shape", "firstorder"), modalities=("t1ce",))
    small = extract_all(generate_subject(spec, 0, 0).volumes, generate_subject(spec, 0, 0).mask, cfg).as_dict()
    s1 = generate_subject(spec, 0, 1)
    large = extract_all(s1.volumes, s1.mask, cfg).as_dict()
    key = "shape__Maximum3DDiameter__na__whole"
    assert large[key] - small[key] == pytest.approx(8.0, abs=2.0)
    assert large["firstorder__Mean__t1ce__core"] - small["firstorder__Mean__t1ce__core"] > 30.0


def test_latent_shift_on_signal_dims_only():
    cohort = gen_synthetic_cohort(SyntheticSpec(n_subjects=200, latent_shift=2.0, latent_signal_dims=3, seed=5))
    y = np.array([cohort.labels[s] for s in cohort.latent.subject_ids])
    gap = cohort.latent.values[y == 1].mean(axis=0) - cohort.latent.values[y == 0].mean(axis=0)
    assert np.all(gap[:3] > 1.4) and np.all(np.abs(gap[3:]) < 0.6)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"dims": (16, 16, 16)},
        {"diameter_delta_mm": 30.0},
        {"n_subjects": 1},
        {"positive_fraction": 1.0},
        {"latent_signal_dims": 65},
    ],
)
def test_invalid_specs(kwargs):
    with pytest.raises(ValueError):
        SyntheticSpec(**kwargs)


def test_unknown_spec_key():
    with pytest.raises(ValueError, match="unknown"):
        SyntheticSpec.from_dict({"diameter": 3})
