"""End-to-end commands: extract, run, predict, synth, evaluate.

Each ``cmd_*`` takes a :class:`PipelineConfig`, writes its artifacts under
``config.out_dir`` and returns an outcome object; the CLI maps outcomes
and exceptions to exit codes.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .evaluation import (
    CvEnsemble,
    EvalReport,
    auc,
    ensemble_predict,
    read_predictions,
    run_repeats,
    write_oof_scores,
    write_predictions,
)
from .forest import ForestModel, ForestParams
from .nifti import MODALITIES, LabelError, NiftiError, ShapeMismatchError, load_label_mask, load_volume
from .radiomics import FAMILIES, ExtractionConfig, extract_all, feature_names
from .selection import SelectionReport, format_selected, select_and_binarize
from .synth import SyntheticSpec, gen_synthetic_cohort, write_cohort
from .tables import (
    DEFAULT_LATENT_DIM,
    FeatureTable,
    TableError,
    align_labels,
    load_latent_csv,
    merge_tables,
    missing_sidecar_path,
    read_labels,
)

log = logging.getLogger(__name__)

BUNDLE_SCHEMA = "mgmtpred.bundle/1"
MANIFEST_HEADER = ["subject_id", *MODALITIES, "mask"]


class ConfigError(Exception):
    """Bad or incomplete configuration (exit code 1)."""


class DataError(Exception):
    """Input data that cannot be processed (exit code 2)."""


PATH_KEYS = ("manifest", "features", "latent", "labels", "out_dir", "bundle", "predictions")
# left out of every persisted config echo so artifacts do not depend on them
NON_ECHO_KEYS = PATH_KEYS + ("workers",)


@dataclass(frozen=True)
class PipelineConfig:
    bin_count: int = 32
    families: tuple[str, ...] = FAMILIES
    modalities: tuple[str, ...] = MODALITIES
    gldm_alpha: int = 0
    p_min: float = 5e-4
    h: int = 5
    repeats: int = 10
    n_trees: int = 100
    max_depth: int = 4
    min_samples_split: int = 2
    max_features: int | None = None
    in_fold_selection: bool = False
    latent_dim: int = DEFAULT_LATENT_DIM
    seed: int = 0
    workers: int = 1
    synthetic: dict = field(default_factory=dict)
    manifest: str | None = None
    features: str | None = None
    latent: str | None = None
    labels: str | None = None
    out_dir: str = "out"
    bundle: str | None = None
    predictions: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "families", tuple(self.families))
        object.__setattr__(self, "modalities", tuple(self.modalities))
        try:
            self.extraction_config()
            self.forest_params()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        if self.p_min < 0:
            raise ConfigError("p_min must be >= 0")
        if self.h < 1 or self.repeats < 1 or self.workers < 1 or self.latent_dim < 1:
            raise ConfigError("h, repeats, workers and latent_dim must be >= 1")

    @classmethod
    def from_mapping(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {unknown}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json_file(cls, path) -> "PipelineConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_mapping(d)

    def extraction_config(self) -> ExtractionConfig:
        return ExtractionConfig(self.bin_count, self.families, self.modalities, self.gldm_alpha)

    def forest_params(self) -> ForestParams:
        return ForestParams(self.n_trees, self.max_depth, self.min_samples_split, self.seed, self.max_features)

    def echo(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k not in NON_ECHO_KEYS}

    @property
    def out(self) -> Path:
        return Path(self.out_dir)


# --- extract ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExtractOutcome:
    table: FeatureTable
    skipped: tuple[tuple[str, str], ...]
    path: Path


def _read_manifest(path: Path) -> list[dict]:
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise DataError(f"cannot open manifest {path}: {exc}") from None
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_HEADER:
            raise DataError(f"{path}: manifest header must be {','.join(MANIFEST_HEADER)}")
        rows = list(reader)
    ids = [r["subject_id"] for r in rows]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate subject_id in manifest")
    return rows


def _extract_one(task):
    row, base, cfg = task
    sid = row["subject_id"]
    try:
        vols = {m: load_volume(base / row[m], modality=m) for m in cfg.modalities}
        mask = load_label_mask(base / row["mask"])
        return sid, extract_all(vols, mask, cfg), None
    except (NiftiError, LabelError, ShapeMismatchError, OSError) as exc:
        return sid, None, f"{type(exc).__name__}: {exc}"


def cmd_extract(config: PipelineConfig) -> ExtractOutcome:
    if not config.manifest:
        raise ConfigError("extract needs a manifest path")
    manifest = Path(config.manifest)
    rows = _read_manifest(manifest)
    cfg = config.extraction_config()
    tasks = [(row, manifest.parent, cfg) for row in rows]
    if config.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_extract_one, tasks))
    else:
        results = []
        for k, task in enumerate(tasks, 1):
            results.append(_extract_one(task))
            print(f"extract: {k}/{len(tasks)} {task[0]['subject_id']}", file=sys.stderr)
    ok = [(sid, vec) for sid, vec, _ in results if vec is not None]
    skipped = tuple((sid, reason) for sid, vec, reason in results if vec is None)
    if ok:
        table = FeatureTable.from_vectors([s for s, _ in ok], [v for _, v in ok])
    else:
        table = FeatureTable((), feature_names(cfg), np.zeros((0, len(feature_names(cfg)))))
    out = config.out
    path = table.to_csv(out / "features.csv", missing_sidecar_path(out / "features.csv"))
    if skipped:
        with (out / "skipped.csv").open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["subject_id", "reason"])
            writer.writerows(skipped)
        for sid, reason in skipped:
            print(f"extract: skipped {sid}: {reason}", file=sys.stderr)
    n_missing = len(table.missing)
    print(f"extract: {table.n_subjects} subject(s), {table.n_features} features, "
          f"{n_missing} imputed value(s), {len(skipped)} skipped", file=sys.stderr)
    return ExtractOutcome(table, skipped, path)


# --- run ---------------------------------------------------------------------------------


@dataclass(frozen=True)
class RunOutcome:
    selection: SelectionReport
    report: EvalReport
    out_dir: Path


def _load_inputs(config: PipelineConfig, features=None, latent=None) -> FeatureTable:
    features = config.features if features is None else features
    latent = config.latent if latent is None else latent
    tables = []
    if features:
        path = Path(features)
        sidecar = missing_sidecar_path(path)
        tables.append(FeatureTable.from_csv(path, sidecar if sidecar.exists() else None))
    if latent:
        tables.append(load_latent_csv(latent, config.latent_dim))
    if not tables:
        raise ConfigError("need a feature table and/or a latent CSV")
    table = tables[0]
    if len(tables) == 2:
        table, dropped = merge_tables(tables[0], tables[1])
        if dropped:
            print(f"merge: dropped {len(dropped)} subject(s) present in only one table", file=sys.stderr)
    return table


def _labelled(config: PipelineConfig, table: FeatureTable):
    if not config.labels:
        raise ConfigError("need a labels CSV")
    table, y = align_labels(table, read_labels(config.labels))
    if table.n_subjects < 2 or np.unique(y).size < 2:
        raise DataError("need labelled subjects from both classes")
    return table, y


def _write_bundle(config: PipelineConfig, bundle_dir: Path, ens: CvEnsemble, selection: SelectionReport,
                  uses: dict) -> Path:
    models_dir = bundle_dir / "models"
    models_dir.mkdir(parents=True, exist_ok=True)
    model_files, selection_files = [], []
    for j, model in enumerate(ens.models):
        name = None
        if model is not None:
            name = f"models/fold_{j:03d}.json"
            (bundle_dir / name).write_text(model.to_json())
        model_files.append(name)
        if ens.fold_reports is not None:
            sel = f"selection/fold_{j:03d}.csv"
            if ens.fold_reports[j] is not None:
                ens.fold_reports[j].to_csv(bundle_dir / sel)
            else:
                sel = None
            selection_files.append(sel)
    selection.to_csv(bundle_dir / "selection.csv")
    manifest = {
        "schema": BUNDLE_SCHEMA,
        "k": ens.plan.k,
        "models": model_files,
        "selection": "selection.csv" if ens.fold_reports is None else selection_files,
        "p_min": selection.p_min,
        "latent_dim": config.latent_dim,
        **uses,
    }
    (bundle_dir / "bundle.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (bundle_dir / "config.json").write_text(json.dumps(config.echo(), indent=2, sort_keys=True) + "\n")
    return bundle_dir


def cmd_run(config: PipelineConfig, stdout=None) -> RunOutcome:
    stdout = stdout or sys.stdout
    table, y = _labelled(config, _load_inputs(config))
    params = config.forest_params()
    selection, binary = select_and_binarize(table, y, config.p_min)
    if config.in_fold_selection:
        summary, ensembles = run_repeats(table, y, params, config.h, config.repeats, config.seed,
                                         in_fold_p_min=config.p_min, workers=config.workers)
    else:
        if binary.n_features == 0:
            best = min(r.p_value for r in selection.rules)
            raise DataError(
                f"no feature reached p < p_min={config.p_min:g} (smallest p = {best:.3g}); "
                "consider a larger p_min"
            )
        summary, ensembles = run_repeats(binary, y, params, config.h, config.repeats, config.seed,
                                         report=selection, workers=config.workers)
    out = config.out
    out.mkdir(parents=True, exist_ok=True)
    selection.to_csv(out / "selection.csv")
    (out / "eval_report.json").write_text(summary.to_json())
    write_oof_scores(out / "oof_scores.csv", ensembles[0], y)
    uses = {"uses_features": bool(config.features), "uses_latent": bool(config.latent)}
    _write_bundle(config, Path(config.bundle) if config.bundle else out / "bundle", ensembles[0], selection, uses)
    print(f"Selected features (p < {config.p_min:g}): {len(selection.selected)} of {len(selection.rules)}",
          file=stdout)
    print(format_selected(selection), file=stdout)
    print(f"CV AUC (mean of {config.repeats} repeat(s), h={config.h}): {summary.auc:.4f}", file=stdout)
    return RunOutcome(selection, summary, out)


# --- predict -----------------------------------------------------------------------------


def load_bundle(bundle_dir) -> tuple[CvEnsemble, dict]:
    bundle_dir = Path(bundle_dir)
    try:
        manifest = json.loads((bundle_dir / "bundle.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read bundle at {bundle_dir}: {exc}") from None
    if manifest.get("schema") != BUNDLE_SCHEMA:
        raise DataError(f"{bundle_dir}: unsupported bundle schema {manifest.get('schema')!r}")
    p_min = manifest["p_min"]
    models = tuple(
        ForestModel.from_json((bundle_dir / name).read_text()) if name else None for name in manifest["models"]
    )
    shared, per_fold = None, None
    if isinstance(manifest["selection"], str):
        shared = SelectionReport.from_csv(bundle_dir / manifest["selection"], p_min)
    else:
        per_fold = tuple(
            SelectionReport.from_csv(bundle_dir / name, p_min) if name else None for name in manifest["selection"]
        )
    ens = CvEnsemble(models, None, (), np.zeros(0), selection_report=shared, fold_reports=per_fold)
    return ens, manifest


def cmd_predict(config: PipelineConfig) -> Path:
    bundle_dir = Path(config.bundle) if config.bundle else config.out / "bundle"
    ens, manifest = load_bundle(bundle_dir)
    if manifest["uses_features"] and not config.features:
        raise ConfigError("this bundle was trained with radiomic features; pass a feature table")
    if manifest["uses_latent"] and not config.latent:
        raise ConfigError("this bundle was trained with latent features; pass a latent CSV")
    table = _load_inputs(
        PipelineConfig.from_mapping({**config.echo(), "latent_dim": manifest["latent_dim"]}),
        features=config.features if manifest["uses_features"] else "",
        latent=config.latent if manifest["uses_latent"] else "",
    )
    try:
        probs = ensemble_predict(ens, table)
    except KeyError as exc:
        raise DataError(f"feature table lacks columns required by the bundle: {exc}") from None
    path = Path(config.predictions) if config.predictions else config.out / "predictions.csv"
    return write_predictions(path, table.subject_ids, probs)


# --- synth and evaluate -------------------------------------------------------------------


def cmd_synth(config: PipelineConfig) -> dict[str, Path]:
    try:
        spec = SyntheticSpec.from_dict({"seed": config.seed, **config.synthetic})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"synthetic spec: {exc}") from None
    cohort = gen_synthetic_cohort(spec, with_latent=spec.latent_dim > 0)
    return write_cohort(cohort, config.out)


def cmd_evaluate(config: PipelineConfig, stdout=None) -> dict:
    stdout = stdout or sys.stdout
    if not config.predictions or not config.labels:
        raise ConfigError("evaluate needs a predictions CSV and a labels CSV")
    preds = read_predictions(config.predictions)
    labels = read_labels(config.labels)
    common = [s for s in preds if s in labels]
    if len(common) < len(preds):
        print(f"evaluate: {len(preds) - len(common)} prediction(s) without a label ignored", file=sys.stderr)
    y = np.array([labels[s] for s in common])
    if y.size == 0 or np.unique(y).size < 2:
        raise DataError("evaluation needs labelled predictions from both classes")
    result = {"auc": auc([preds[s] for s in common], y), "n_subjects": len(common)}
    print(json.dumps(result, sort_keys=True), file=stdout)
    return result


DATA_ERRORS = (DataError, TableError, NiftiError, LabelError, ShapeMismatchError, OSError, KeyError, ValueError)
