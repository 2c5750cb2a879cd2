"""Leave-h-out K-fold cross-validation, repeated CV, fold-ensemble prediction, AUC."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .forest import ForestModel, ForestParams, fit_forest
from .seeding import derive_seed
from .selection import SelectionReport, apply_rules, select_and_binarize
from .tables import FeatureTable

log = logging.getLogger(__name__)

NO_MODEL_SCORE = 0.5


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(positive outscores negative), ties counted half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1D arrays of equal length")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# --- fold plans -------------------------------------------------------------------


@dataclass(frozen=True)
class FoldPlan:
    """Subject index -> fold index; folds are contiguous chunks of a seeded shuffle."""

    assignments: np.ndarray
    h: int
    k: int

    def __post_init__(self):
        a = np.array(self.assignments, dtype=np.int64)
        a.setflags(write=False)
        object.__setattr__(self, "assignments", a)

    @property
    def n(self) -> int:
        return self.assignments.size

    def fold(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == j)

    def sizes(self) -> list[int]:
        return np.bincount(self.assignments, minlength=self.k).tolist()


def kfold_splits(n: int, h: int, seed: int) -> FoldPlan:
    if h < 1:
        raise ValueError("holdout size h must be >= 1")
    if h >= n:
        raise ValueError(f"holdout size h={h} must be smaller than n={n}")
    perm = np.random.default_rng(derive_seed(seed, "folds")).permutation(n)
    assignments = np.empty(n, dtype=np.int64)
    assignments[perm] = np.arange(n) // h
    return FoldPlan(assignments, h, math.ceil(n / h))


# --- cross-validation --------------------------------------------------------------


@dataclass(frozen=True)
class CvEnsemble:
    """Fold models of one CV run plus their out-of-fold scores.

    ``models[j]`` is None when fold j produced no model (single-class
    training complement, or nothing selected under in-fold selection).
    With in-fold selection each fold keeps its own report in
    ``fold_reports``; otherwise ``selection_report`` is shared by all folds
    (None when the caller trained on an already binary table without one).
    """

    models: tuple
    plan: FoldPlan
    subject_ids: tuple[str, ...]
    oof_scores: np.ndarray
    selection_report: SelectionReport | None = None
    fold_reports: tuple | None = None

    def report_for(self, j: int) -> SelectionReport | None:
        return self.fold_reports[j] if self.fold_reports is not None else self.selection_report


@dataclass(frozen=True)
class EvalReport:
    auc: float
    repeat_aucs: tuple[float, ...]
    n_subjects: int
    n_scored: int
    params: dict
    seed: int
    h: int
    k: int
    in_fold_p_min: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.auc <= 1.0:
            raise ValueError(f"auc {self.auc} outside [0, 1]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        d["repeat_aucs"] = tuple(d["repeat_aucs"])
        return cls(**d)


def _fold_seed(params: ForestParams, seed: int, j: int) -> ForestParams:
    return replace(params, seed=derive_seed(seed, "fold", j, "forest", params.seed))


def _fit_fold(task):
    """Train one fold; returns (model or None, held-out scores, fold report or None)."""
    X_train, y_train, X_test, params, p_min = task
    report = None
    if p_min is not None:
        report, binary = select_and_binarize(X_train, y_train, p_min)
        if binary.n_features == 0:
            # Nothing passes the filter.  The training prevalence would be the
            # natural prior, but removing the held-out subjects shifts it against
            # their labels, so a flat uninformative score is used instead.
            return None, np.full(X_test.n_subjects, NO_MODEL_SCORE), report
        X_train, X_test = binary, apply_rules(report, X_test)
    model = fit_forest(X_train, y_train, params)
    return model, model.predict_proba(X_test), report


def _map(fn, tasks: Sequence, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def cross_validate(
    table: FeatureTable,
    labels,
    params: ForestParams,
    h: int,
    seed: int,
    report: SelectionReport | None = None,
    in_fold_p_min: float | None = None,
    workers: int = 1,
) -> tuple[CvEnsemble, EvalReport]:
    """K-fold CV with out-of-fold forest vote fractions as scores.

    By default ``table`` is the already binarized selection output (selection
    ran once on the full cohort).  With ``in_fold_p_min`` set, ``table`` holds
    raw features and selection is redone on each fold's training complement.
    """
    y = np.asarray(labels, dtype=np.int64)
    if y.size != table.n_subjects:
        raise ValueError("labels length does not match table")
    if np.unique(y).size < 2 or not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1 with both classes present")
    plan = kfold_splits(table.n_subjects, h, seed)
    tasks, active = [], []
    for j in range(plan.k):
        test = plan.fold(j)
        train = np.flatnonzero(plan.assignments != j)
        if np.unique(y[train]).size < 2:
            log.warning("fold %d skipped: training complement has a single class", j)
            continue
        tasks.append((table.take(train), y[train], table.take(test), _fold_seed(params, seed, j), in_fold_p_min))
        active.append(j)
    results = _map(_fit_fold, tasks, workers)

    models = [None] * plan.k
    fold_reports = [None] * plan.k
    scores = np.full(table.n_subjects, np.nan)
    for j, (model, fold_scores, fold_report) in zip(active, results):
        models[j] = model
        fold_reports[j] = fold_report
        scores[plan.fold(j)] = fold_scores
    scored = np.isfinite(scores)
    ens = CvEnsemble(
        tuple(models),
        plan,
        table.subject_ids,
        scores,
        selection_report=report if in_fold_p_min is None else None,
        fold_reports=tuple(fold_reports) if in_fold_p_min is not None else None,
    )
    value = auc(scores[scored], y[scored])
    rep = EvalReport(value, (value,), table.n_subjects, int(scored.sum()), asdict(params), seed, h, plan.k,
                     in_fold_p_min)
    return ens, rep


def repeat_seed(seed: int, r: int) -> int:
    return seed if r == 0 else derive_seed(seed, "repeat", r)


def run_repeats(table, labels, params, h, repeats, seed, report=None, in_fold_p_min=None, workers=1):
    """``repeats`` CV runs on reshuffled folds; returns (EvalReport, ensembles)."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    runs = [
        cross_validate(table, labels, params, h, repeat_seed(seed, r), report, in_fold_p_min, workers)
        for r in range(repeats)
    ]
    aucs = tuple(r.auc for _, r in runs)
    first = runs[0][1]
    summary = replace(first, auc=float(np.mean(aucs)), repeat_aucs=aucs, seed=seed)
    return summary, [ens for ens, _ in runs]


def repeated_cv(table, labels, params, h, repeats, seed, report=None, in_fold_p_min=None, workers=1) -> EvalReport:
    return run_repeats(table, labels, params, h, repeats, seed, report, in_fold_p_min, workers)[0]


# --- ensemble prediction ------------------------------------------------------------


def ensemble_votes(ens: CvEnsemble, table: FeatureTable) -> np.ndarray:
    """(n_models, n_subjects) hard 0/1 predictions of every fold model.

    ``table`` holds raw features; each model's selection rules are applied
    before it predicts.  Without any stored report the table must already
    contain the binarized training features.
    """
    rows = []
    for j, model in enumerate(ens.models):
        if model is None:
            continue
        rules = ens.report_for(j)
        X = apply_rules(rules, table) if rules is not None else table
        rows.append(model.predict(X))
    if not rows:
        raise ValueError("ensemble has no trained fold models")
    return np.vstack(rows)


def ensemble_predict(ens: CvEnsemble, table: FeatureTable) -> np.ndarray:
    """Mean of the fold models' hard predictions, per subject."""
    return ensemble_votes(ens, table).mean(axis=0)


# --- persistence -------------------------------------------------------------------


def write_oof_scores(path, ens: CvEnsemble, labels) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", "label", "score"])
        for sid, y, s in zip(ens.subject_ids, labels, ens.oof_scores):
            writer.writerow([sid, int(y), repr(float(s))])
    return path


def write_predictions(path, subject_ids, probabilities) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", "probability"])
        for sid, p in zip(subject_ids, probabilities):
            writer.writerow([sid, repr(float(p))])
    return path


def read_predictions(path) -> dict[str, float]:
    out = {}
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or reader.fieldnames[:2] != ["subject_id", "probability"]:
            raise ValueError(f"{path}: header must be 'subject_id,probability'")
        for row in reader:
            if row["subject_id"] in out:
                raise ValueError(f"{path}: duplicate subject_id {row['subject_id']!r}")
            out[row["subject_id"]] = float(row["probability"])
    return out


def model_from_file(path) -> ForestModel:
    return ForestModel.from_json(Path(path).read_text())
