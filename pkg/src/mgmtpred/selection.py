"""Univariate feature selection by Fisher-optimal binarization.

For every feature, each midpoint between consecutive distinct values is a
candidate threshold.  The candidate whose (value > threshold) x label 2x2
table has the smallest two-sided Fisher exact p-value becomes the
feature's rule; features whose best p is below ``p_min`` are kept and
replaced by their 0/1 indicator.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from .tables import FeatureTable, TableError

# Tables whose probability is within this relative factor of the observed
# table's probability count as "at least as extreme".
FISHER_REL_TOL = 1e-7
_LOG_TOL = math.log1p(FISHER_REL_TOL)


@lru_cache(maxsize=16)
def _log_factorials(n: int) -> np.ndarray:
    lf = gammaln(np.arange(n + 1, dtype=np.float64) + 1.0)
    lf.setflags(write=False)
    return lf


def _support_logp(n: int, r1: np.ndarray, c1: int) -> np.ndarray:
    """Log hypergeometric probabilities, one row per first-row margin in ``r1``.

    Column ``x`` holds the table with top-left cell ``x``; cells outside the
    support are -inf.
    """
    lf = _log_factorials(n)
    x = np.arange(c1 + 1, dtype=np.int64)
    rx = r1[:, None] - x
    rest = n - c1 - rx
    valid = (rx >= 0) & (rest >= 0)
    rx = np.where(valid, rx, 0)
    rest = np.where(valid, rest, 0)
    logp = (lf[c1] + lf[n - c1] - lf[n] - lf[x] - lf[c1 - x]) - lf[rx] - lf[rest] + (lf[r1] + lf[n - r1])[:, None]
    return np.where(valid, logp, -np.inf)


def _fisher_many(a: np.ndarray, r1: np.ndarray, c1: int, n: int) -> np.ndarray:
    """Two-sided p for tables sharing column margin ``c1`` and total ``n``.

    ``a`` is the top-left cell and ``r1`` the first-row margin of each table.
    """
    a = np.asarray(a, dtype=np.int64)
    r1 = np.asarray(r1, dtype=np.int64)
    if n == 0:
        return np.ones(a.shape)
    logp = _support_logp(n, r1, c1)
    observed = np.take_along_axis(logp, a[:, None], axis=1)
    prob = np.exp(logp - logp.max(axis=1, keepdims=True))
    extreme = np.where(logp <= observed + _LOG_TOL, prob, 0.0).sum(axis=1)
    # normalizing by the total mass makes an all-inclusive sum exactly 1
    return np.minimum(extreme / prob.sum(axis=1), 1.0)


def fisher_exact_two_sided(a: int, b: int, c: int, d: int) -> float:
    """Two-sided Fisher exact p-value of the table [[a, b], [c, d]].

    Sums the hypergeometric probabilities of every table with the same
    margins whose probability does not exceed the observed one (relative
    tolerance 1e-7).  An all-zero table gives 1.0.
    """
    if min(a, b, c, d) < 0:
        raise ValueError("table cells must be nonnegative")
    n = a + b + c + d
    if n == 0:
        return 1.0
    r1, c1 = a + b, a + c
    lf = _log_factorials(n)
    x = np.arange(max(0, r1 + c1 - n), min(r1, c1) + 1)
    logp = (lf[c1] + lf[n - c1] - lf[n] + lf[r1] + lf[n - r1]) - (lf[x] + lf[c1 - x] + lf[r1 - x] + lf[n - c1 - r1 + x])
    observed = logp[a - x[0]]
    prob = np.exp(logp - logp.max())
    return min(float(prob[logp <= observed + _LOG_TOL].sum() / prob.sum()), 1.0)


@dataclass(frozen=True)
class ThresholdRule:
    """Binarization rule: value > threshold -> 1, else 0."""

    feature_name: str
    threshold: float
    p_value: float

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p_value {self.p_value} outside [0, 1]")

    def apply(self, values) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) > self.threshold).astype(np.float64)


def _candidate_tables(values: np.ndarray, labels: np.ndarray):
    """(thresholds, a, r1) for every midpoint between consecutive distinct values."""
    uniq, inverse = np.unique(values, return_inverse=True)
    counts = np.bincount(inverse)
    positives = np.bincount(inverse, weights=labels).astype(np.int64)
    lo, hi = uniq[:-1], uniq[1:]
    thresholds = lo / 2.0 + hi / 2.0
    # adjacent floats: the midpoint can round up onto hi
    thresholds = np.where(thresholds >= hi, lo, thresholds)
    r1 = values.size - np.cumsum(counts)[:-1]
    a = int(labels.sum()) - np.cumsum(positives)[:-1]
    return thresholds, a, r1


def best_threshold(values, labels, feature_name: str = "") -> ThresholdRule:
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if values.shape != labels.shape or values.ndim != 1:
        raise ValueError("values and labels must be 1D arrays of equal length")
    if values.size < 2:
        raise ValueError("need at least two subjects")
    if not np.all(np.isfinite(values)):
        raise ValueError(f"feature {feature_name!r} has non-finite values")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    thresholds, a, r1 = _candidate_tables(values, labels)
    if thresholds.size == 0:
        return ThresholdRule(feature_name, float(values[0]), 1.0)
    p = _fisher_many(a, r1, int(labels.sum()), values.size)
    k = int(np.argmin(p))  # first minimum = smallest threshold
    return ThresholdRule(feature_name, float(thresholds[k]), float(p[k]))


def contingency_table(values, labels, threshold: float) -> tuple[int, int, int, int]:
    """[[above & 1, above & 0], [below & 1, below & 0]] flattened."""
    above = np.asarray(values) > threshold
    y = np.asarray(labels) == 1
    return (int(np.sum(above & y)), int(np.sum(above & ~y)), int(np.sum(~above & y)), int(np.sum(~above & ~y)))


@dataclass(frozen=True)
class SelectionReport:
    rules: tuple[ThresholdRule, ...]
    p_min: float

    @property
    def selected(self) -> tuple[ThresholdRule, ...]:
        return tuple(r for r in self.rules if r.p_value < self.p_min)

    @property
    def selected_names(self) -> tuple[str, ...]:
        return tuple(r.feature_name for r in self.selected)

    def rule(self, name: str) -> ThresholdRule:
        for r in self.rules:
            if r.feature_name == name:
                return r
        raise KeyError(name)

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["feature_name", "threshold", "p_value", "selected"])
            for r in self.rules:
                writer.writerow([r.feature_name, repr(r.threshold), repr(r.p_value), int(r.p_value < self.p_min)])
        return path

    @classmethod
    def from_csv(cls, path, p_min: float) -> "SelectionReport":
        """Reload rules; ``p_min`` must reproduce the stored ``selected`` column."""
        rules = []
        with Path(path).open(newline="") as fh:
            for row in csv.DictReader(fh):
                rule = ThresholdRule(row["feature_name"], float(row["threshold"]), float(row["p_value"]))
                if (rule.p_value < p_min) != bool(int(row["selected"])):
                    raise TableError(f"{path}: selected flag of {rule.feature_name!r} disagrees with p_min={p_min}")
                rules.append(rule)
        return cls(tuple(rules), p_min)


def select_and_binarize(table: FeatureTable, labels, p_min: float) -> tuple[SelectionReport, FeatureTable]:
    labels = np.asarray(labels, dtype=np.int64)
    if table.n_subjects == 0 or table.n_features == 0:
        raise ValueError("cannot select from an empty table")
    if labels.size != table.n_subjects:
        raise ValueError("labels length does not match table")
    rules = tuple(
        best_threshold(table.values[:, k], labels, name) for k, name in enumerate(table.feature_names)
    )
    report = SelectionReport(rules, float(p_min))
    return report, apply_rules(report, table)


def apply_rules(report: SelectionReport, table: FeatureTable) -> FeatureTable:
    """Binarize the selected features of ``table`` with the stored thresholds."""
    selected = report.selected
    names = tuple(r.feature_name for r in selected)
    absent = [n for n in names if n not in table.feature_names]
    if absent:
        raise KeyError(f"table lacks selected feature(s): {absent[:5]}")
    cols = table.select_features(names)
    binary = np.column_stack([r.apply(cols.values[:, k]) for k, r in enumerate(selected)]) if names else np.zeros(
        (table.n_subjects, 0)
    )
    return FeatureTable(table.subject_ids, names, binary, cols.missing)


_CATEGORY = {
    "shape": "Shape",
    "firstorder": "First order",
    "glcm": "GLCM",
    "glrlm": "GLRLM",
    "glszm": "GLSZM",
    "gldm": "GLDM",
    "ngtdm": "NGTDM",
    "latent": "Latent",
}
_MODALITY = {"t1": "T1", "t1ce": "T1-ce", "t2": "T2", "flair": "FLAIR", "na": "-"}
_REGION = {"whole": "Whole", "core": "Core", "enh": "Enh-core", "na": "-"}


def format_selected(report: SelectionReport) -> str:
    """Selected features as a Category / Feature / Modality / Region / p table."""
    rows = [("Category", "Feature name", "Modality", "Region", "p-value")]
    for r in report.selected:
        parts = r.feature_name.split("__")
        if len(parts) == 4:
            fam, feat, mod, reg = parts
            rows.append((_CATEGORY.get(fam, fam), feat, _MODALITY.get(mod, mod), _REGION.get(reg, reg), f"{r.p_value:.3g}"))
        else:
            rows.append(("-", r.feature_name, "-", "-", f"{r.p_value:.3g}"))
    widths = [max(len(row[k]) for row in rows) for k in range(5)]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines)
