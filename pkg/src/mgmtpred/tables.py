"""Feature tables, their CSV persistence, latent-feature ingestion and merging."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_LATENT_DIM = 64


class TableError(ValueError):
    pass


def _fmt(v: float) -> str:
    # repr round-trips a float64 exactly (17 significant digits at most)
    return repr(float(v))


@dataclass(frozen=True)
class FeatureTable:
    """Subjects x named real-valued features.

    ``missing`` holds (subject_id, feature_name) pairs whose value was
    imputed because the feature was undefined for that subject.
    """

    subject_ids: tuple[str, ...]
    feature_names: tuple[str, ...]
    values: np.ndarray
    missing: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        subject_ids = tuple(str(s) for s in self.subject_ids)
        feature_names = tuple(self.feature_names)
        values = np.asarray(self.values, dtype=np.float64).reshape(len(subject_ids), len(feature_names))
        if len(set(subject_ids)) != len(subject_ids):
            raise TableError("duplicate subject_id")
        if len(set(feature_names)) != len(feature_names):
            raise TableError("duplicate feature name")
        if not np.all(np.isfinite(values)):
            raise TableError("feature table contains non-finite values")
        values = np.ascontiguousarray(values)
        values.setflags(write=False)
        object.__setattr__(self, "subject_ids", subject_ids)
        object.__setattr__(self, "feature_names", feature_names)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing", frozenset(self.missing))

    @classmethod
    def from_vectors(cls, subject_ids: Sequence[str], vectors) -> "FeatureTable":
        """Stack per-subject ``FeatureVector``s that share one name order."""
        vectors = list(vectors)
        if not vectors:
            return cls((), (), np.zeros((0, 0)))
        names = vectors[0].names
        if any(v.names != names for v in vectors):
            raise TableError("feature vectors disagree on feature names")
        missing = {(str(s), name) for s, v in zip(subject_ids, vectors) for name in v.missing}
        return cls(tuple(subject_ids), names, np.vstack([v.values for v in vectors]), missing)

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.feature_names.index(name)]
        except ValueError:
            raise KeyError(f"feature {name!r} not in table") from None

    def select_features(self, names: Iterable[str]) -> "FeatureTable":
        names = tuple(names)
        absent = [n for n in names if n not in self.feature_names]
        if absent:
            raise KeyError(f"features missing from table: {absent[:5]}{'...' if len(absent) > 5 else ''}")
        index = {n: k for k, n in enumerate(self.feature_names)}
        cols = [index[n] for n in names]
        keep = set(names)
        missing = {(s, f) for s, f in self.missing if f in keep}
        return FeatureTable(self.subject_ids, names, self.values[:, cols], missing)

    def select_subjects(self, subject_ids: Iterable[str]) -> "FeatureTable":
        subject_ids = tuple(str(s) for s in subject_ids)
        index = {s: k for k, s in enumerate(self.subject_ids)}
        absent = [s for s in subject_ids if s not in index]
        if absent:
            raise KeyError(f"subjects missing from table: {absent[:5]}")
        rows = [index[s] for s in subject_ids]
        keep = set(subject_ids)
        missing = {(s, f) for s, f in self.missing if s in keep}
        return FeatureTable(subject_ids, self.feature_names, self.values[rows], missing)

    def take(self, rows) -> "FeatureTable":
        rows = np.asarray(rows, dtype=np.int64)
        return self.select_subjects([self.subject_ids[r] for r in rows])

    # --- persistence ---------------------------------------------------------------

    def to_csv(self, path, missing_path=None) -> Path:
        """Write ``subject_id,<features...>`` and, if given, the missing-flag sidecar."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["subject_id", *self.feature_names])
            for sid, row in zip(self.subject_ids, self.values):
                writer.writerow([sid, *(_fmt(v) for v in row)])
        if missing_path is not None:
            write_missing(missing_path, self.missing, self.subject_ids, self.feature_names)
        return path

    @classmethod
    def from_csv(cls, path, missing_path=None) -> "FeatureTable":
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise TableError(f"{path}: empty file") from None
            if not header or header[0] != "subject_id":
                raise TableError(f"{path}: first column must be 'subject_id'")
            ids, rows = [], []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise TableError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
                ids.append(row[0])
                try:
                    rows.append([float(x) for x in row[1:]])
                except ValueError as exc:
                    raise TableError(f"{path}:{lineno}: {exc}") from None
        values = np.array(rows, dtype=np.float64).reshape(len(ids), len(header) - 1)
        if not np.all(np.isfinite(values)):
            raise TableError(f"{path}: non-finite value")
        if len(set(ids)) != len(ids):
            raise TableError(f"{path}: duplicate subject_id")
        missing = read_missing(missing_path) if missing_path is not None else frozenset()
        return cls(tuple(ids), tuple(header[1:]), values, missing)


def missing_sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + "_missing.csv")


def write_missing(path, missing, subject_order=(), feature_order=()) -> Path:
    srank = {s: k for k, s in enumerate(subject_order)}
    frank = {f: k for k, f in enumerate(feature_order)}
    rows = sorted(missing, key=lambda sf: (srank.get(sf[0], len(srank)), sf[0], frank.get(sf[1], len(frank)), sf[1]))
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", "feature_name"])
        writer.writerows(rows)
    return path


def read_missing(path) -> frozenset:
    path = Path(path)
    if not path.exists():
        return frozenset()
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        return frozenset((r["subject_id"], r["feature_name"]) for r in reader)


# --- latent features -----------------------------------------------------------------


def latent_feature_name(k: int) -> str:
    return f"latent__l{k:03d}__na__na"


def load_latent_csv(path, expected_dim: int = DEFAULT_LATENT_DIM) -> FeatureTable:
    """Read ``subject_id,l000,...`` latent vectors and rename columns to the naming contract."""
    raw = FeatureTable.from_csv(path)
    if raw.n_features != expected_dim:
        raise TableError(f"{path}: latent dimension {raw.n_features} != expected {expected_dim}")
    names = tuple(latent_feature_name(k) for k in range(expected_dim))
    return FeatureTable(raw.subject_ids, names, raw.values)


def write_latent_csv(path, subject_ids, vectors) -> Path:
    vectors = np.asarray(vectors, dtype=np.float64)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", *(f"l{k:03d}" for k in range(vectors.shape[1]))])
        for sid, row in zip(subject_ids, vectors):
            writer.writerow([sid, *(_fmt(v) for v in row)])
    return path


# --- merging -------------------------------------------------------------------------


def merge_tables(a: FeatureTable, b: FeatureTable) -> tuple[FeatureTable, list[str]]:
    """Inner-join on subject_id; ``a``'s columns first, rows in ``a``'s order.

    Returns the merged table and the sorted ids present in only one input.
    """
    clash = set(a.feature_names) & set(b.feature_names)
    if clash:
        raise TableError(f"feature name collision: {sorted(clash)[:5]}")
    in_b = set(b.subject_ids)
    common = [s for s in a.subject_ids if s in in_b]
    if not common:
        raise TableError("tables share no subjects")
    dropped = sorted(set(a.subject_ids).symmetric_difference(in_b))
    if dropped:
        log.warning("merge dropped %d subject(s) present in only one table: %s", len(dropped), dropped[:10])
    left = a.select_subjects(common)
    right = b.select_subjects(common)
    merged = FeatureTable(
        tuple(common),
        left.feature_names + right.feature_names,
        np.hstack([left.values, right.values]),
        left.missing | right.missing,
    )
    return merged, dropped


# --- labels --------------------------------------------------------------------------


def read_labels(path) -> dict[str, int]:
    """``subject_id,mgmt`` with values 0/1."""
    path = Path(path)
    out = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or reader.fieldnames[:2] != ["subject_id", "mgmt"]:
            raise TableError(f"{path}: header must be 'subject_id,mgmt'")
        for lineno, row in enumerate(reader, start=2):
            sid, value = row["subject_id"], (row["mgmt"] or "").strip()
            if value not in ("0", "1"):
                raise TableError(f"{path}:{lineno}: mgmt must be 0 or 1, got {value!r}")
            if sid in out:
                raise TableError(f"{path}:{lineno}: duplicate subject_id {sid!r}")
            out[sid] = int(value)
    return out


def write_labels(path, labels: dict[str, int]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", "mgmt"])
        for sid, y in labels.items():
            writer.writerow([sid, int(y)])
    return path


def align_labels(table: FeatureTable, labels: dict[str, int]) -> tuple[FeatureTable, np.ndarray]:
    """Restrict ``table`` to labelled subjects; return it with the label vector."""
    keep = [s for s in table.subject_ids if s in labels]
    unlabeled = table.n_subjects - len(keep)
    if unlabeled:
        log.warning("%d subject(s) without a label dropped", unlabeled)
    no_features = len(set(labels) - set(table.subject_ids))
    if no_features:
        log.warning("%d labelled subject(s) have no features", no_features)
    table = table.select_subjects(keep)
    return table, np.array([labels[s] for s in keep], dtype=np.int64)
