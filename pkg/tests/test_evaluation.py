import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import auc_all_pairs

from mgmtpred.evaluation import (
    CvEnsemble,
    EvalReport,
    auc,
    cross_validate,
    ensemble_predict,
    kfold_splits,
    read_predictions,
    repeated_cv,
    write_oof_scores,
    write_predictions,
)
from mgmtpred.forest import ForestModel, ForestParams, Tree
from mgmtpred.selection import SelectionReport, ThresholdRule
from mgmtpred.tables import FeatureTable

FAST = ForestParams(n_trees=20, max_depth=4, min_samples_split=2, seed=1)


def test_auc_example():
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_auc_all_ties_and_perfect():
    assert auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    assert auc([0.1, 0.2, 0.3, 0.9], [0, 0, 1, 1]) == 1.0


def test_auc_single_class_error():
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 1])


def _random_instance(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 51))
    y = rng.integers(0, 2, n)
    y[:2] = (0, 1)
    scores = rng.integers(0, max(2, n // 3), n) / 7.0  # coarse grid -> many ties
    return scores, y


def test_auc_matches_oracle_on_random_instances():
    for seed in range(1000):
        scores, y = _random_instance(seed)
        assert abs(auc(scores, y) - auc_all_pairs(scores, y)) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["exp", "cube", "logistic"]))
def test_auc_monotone_invariance(seed, kind):
    scores, y = _random_instance(seed)
    f = {"exp": np.exp, "cube": lambda s: s**3 + 2 * s, "logistic": lambda s: 1 / (1 + np.exp(-s))}[kind]
    assert auc(f(scores), y) == auc(scores, y)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_auc_complement(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 40))
    y = rng.integers(0, 2, n)
    y[:2] = (0, 1)
    s = rng.permutation(n).astype(float)  # no ties
    assert auc(s, y) + auc(-s, y) == pytest.approx(1.0, abs=1e-12)


# --- fold plans ----------------------------------------------------------------------


def test_kfold_585_by_5():
    plan = kfold_splits(585, 5, seed=0)
    assert plan.k == 117
    assert plan.sizes() == [5] * 117


def test_kfold_small_cases():
    assert kfold_splits(10, 5, 0).k == 2
    plan = kfold_splits(12, 5, 0)
    assert plan.k == 3 and plan.sizes() == [5, 5, 2]


def test_kfold_holdout_too_large():
    with pytest.raises(ValueError):
        kfold_splits(5, 5, 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 300), st.integers(1, 20), st.integers(0, 2**40))
def test_fold_plan_is_partition(n, h, seed):
    if h >= n:
        return
    plan = kfold_splits(n, h, seed)
    sizes = plan.sizes()
    assert sum(sizes) == n
    assert all(s == h for s in sizes[:-1]) and 1 <= sizes[-1] <= h
    assert np.array_equal(plan.assignments, kfold_splits(n, h, seed).assignments)


# --- cross-validation -------------------------------------------------------------------


def _binary_cohort(n, seed, signal=True, flip=0.05):
    rng = np.random.default_rng(seed)
    y = rng.permutation(np.arange(n) % 2)
    cols = [rng.random(n) < 0.5 for _ in range(4)]
    if signal:
        cols.insert(0, (y == 1) ^ (rng.random(n) < flip))
    X = np.column_stack(cols).astype(float)
    names = tuple(f"f{j}" for j in range(X.shape[1]))
    return FeatureTable(tuple(f"s{i:03d}" for i in range(n)), names, X), y


def test_separable_cohort_high_auc():
    aucs = []
    for seed in range(3):
        table, y = _binary_cohort(50, seed, flip=0.0)
        aucs.append(cross_validate(table, y, FAST, h=5, seed=seed)[1].auc)
    assert np.mean(aucs) >= 0.95


def test_every_subject_scored_once_and_models_exclude_their_fold():
    table, y = _binary_cohort(37, 4)
    ens, rep = cross_validate(table, y, FAST, h=5, seed=9)
    assert rep.k == 8 and rep.n_scored == 37
    assert np.all(np.isfinite(ens.oof_scores))
    for j, model in enumerate(ens.models):
        held_out = ens.plan.fold(j).size
        # root of every tree sees exactly the bootstrap of the training complement
        assert all(t.value[0].sum() == 37 - held_out for t in model.trees)


def test_shuffled_labels_near_chance():
    aucs = []
    for seed in range(10):
        table, y = _binary_cohort(200, seed)
        y = np.random.default_rng(1000 + seed).permutation(y)
        aucs.append(cross_validate(table, y, FAST, h=5, seed=seed)[1].auc)
    assert 0.4 <= np.mean(aucs) <= 0.6


def test_single_class_complement_is_skipped(caplog):
    table, _ = _binary_cohort(10, 0)
    y = np.zeros(10, dtype=int)
    plan = kfold_splits(10, 5, 3)
    y[plan.fold(0)[:1]] = 1  # the only positive sits in fold 0
    with caplog.at_level(logging.WARNING):
        with pytest.raises(ValueError, match="both classes"):
            cross_validate(table, y, FAST, h=5, seed=3)
    assert "fold 0 skipped" in caplog.text


def test_determinism_and_worker_invariance():
    table, y = _binary_cohort(40, 2)
    e1, r1 = cross_validate(table, y, FAST, h=5, seed=5)
    e2, r2 = cross_validate(table, y, FAST, h=5, seed=5, workers=2)
    assert r1.to_json() == r2.to_json()
    assert np.array_equal(e1.oof_scores, e2.oof_scores)
    assert [m.to_json() for m in e1.models] == [m.to_json() for m in e2.models]


def test_repeats_one_equals_single_run():
    table, y = _binary_cohort(40, 3)
    _, single = cross_validate(table, y, FAST, h=5, seed=8)
    rep = repeated_cv(table, y, FAST, h=5, repeats=1, seed=8)
    assert rep.auc == single.auc and rep.repeat_aucs == (single.auc,)


def test_repeated_mean_is_arithmetic_mean():
    table, y = _binary_cohort(40, 3, flip=0.2)
    rep = repeated_cv(table, y, FAST, h=5, repeats=4, seed=8)
    assert len(rep.repeat_aucs) == 4
    assert rep.auc == pytest.approx(sum(rep.repeat_aucs) / 4, abs=1e-15)
    assert len(set(rep.repeat_aucs)) > 1  # reshuffled folds


def test_in_fold_selection_keeps_per_fold_reports():
    rng = np.random.default_rng(0)
    y = np.repeat([0, 1], 20)
    X = np.column_stack([y + rng.normal(0, 0.3, 40), rng.normal(size=(40, 3))])
    table = FeatureTable(tuple(f"s{i}" for i in range(40)), ("sig", "a", "b", "c"), X)
    ens, rep = cross_validate(table, y, FAST, h=5, seed=1, in_fold_p_min=0.05)
    assert ens.fold_reports is not None and len(ens.fold_reports) == 8
    assert all("sig" in r.selected_names for r in ens.fold_reports)
    assert rep.auc >= 0.9
    probs = ensemble_predict(ens, table)
    assert np.all((probs >= 0) & (probs <= 1))


def test_in_fold_empty_selection_scores_flat():
    rng = np.random.default_rng(0)
    y = np.repeat([0, 1], 10)
    table = FeatureTable(tuple(f"s{i}" for i in range(20)), ("a",), rng.normal(size=(20, 1)))
    ens, rep = cross_validate(table, y, FAST, h=5, seed=1, in_fold_p_min=0.0)
    assert all(m is None for m in ens.models)
    assert np.all(ens.oof_scores == 0.5)
    assert rep.auc == 0.5


def test_eval_report_json_roundtrip():
    table, y = _binary_cohort(30, 1)
    rep = repeated_cv(table, y, FAST, h=5, repeats=2, seed=4)
    assert EvalReport.from_json(rep.to_json()) == rep


# --- ensemble prediction --------------------------------------------------------------


def _stump_ensemble(votes_one, k):
    report = SelectionReport((ThresholdRule("raw", 0.0, 1e-6),), 5e-4)
    models = tuple(
        ForestModel((Tree([-1], [0.0], [-1], [-1], [[0, 1] if j < votes_one else [1, 0]]),),
                    ForestParams(n_trees=1), ("raw",))
        for j in range(k)
    )
    plan = kfold_splits(5 * k, 5, 0)
    return CvEnsemble(models, plan, tuple(f"s{i}" for i in range(5 * k)), np.zeros(5 * k), report)


@pytest.mark.parametrize("ones,expected", [(117, 1.0), (58, 58 / 117), (0, 0.0)])
def test_ensemble_average_of_hard_votes(ones, expected):
    ens = _stump_ensemble(ones, 117)
    p = ensemble_predict(ens, FeatureTable(("new",), ("raw",), [[3.0]]))
    assert p[0] == pytest.approx(expected, abs=1e-12)
    if ones == 58:
        assert round(p[0], 6) == 0.495726


def test_ensemble_requires_selected_columns():
    ens = _stump_ensemble(3, 4)
    with pytest.raises(KeyError):
        ensemble_predict(ens, FeatureTable(("new",), ("other",), [[3.0]]))


def test_ensemble_binarizes_with_stored_rules():
    table, y = _binary_cohort(30, 5, flip=0.0)
    report = SelectionReport(tuple(ThresholdRule(n, 0.5, 0.0) for n in table.feature_names), 1.0)
    ens, _ = cross_validate(table, y, FAST, h=5, seed=2, report=report)
    scaled = FeatureTable(table.subject_ids, table.feature_names, table.values * 0.9 + 0.05)
    np.testing.assert_array_equal(ensemble_predict(ens, table), ensemble_predict(ens, scaled))


def test_csv_writers(tmp_path):
    table, y = _binary_cohort(20, 1)
    ens, _ = cross_validate(table, y, FAST, h=5, seed=1)
    lines = write_oof_scores(tmp_path / "oof.csv", ens, y).read_text().splitlines()
    assert lines[0] == "subject_id,label,score" and len(lines) == 21
    path = write_predictions(tmp_path / "pred.csv", ["a", "b"], [0.25, 1.0])
    assert read_predictions(path) == {"a": 0.25, "b": 1.0}
