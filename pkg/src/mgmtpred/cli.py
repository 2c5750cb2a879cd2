"""``mgmtpred`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(including subjects skipped during extraction).
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .pipeline import (
    DATA_ERRORS,
    ConfigError,
    PipelineConfig,
    cmd_evaluate,
    cmd_extract,
    cmd_predict,
    cmd_run,
    cmd_synth,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv_list(text):
    return tuple(t.strip() for t in text.split(",") if t.strip())


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file with configuration keys")
    common.add_argument("--seed", type=int, help="root random seed")
    common.add_argument("--out-dir", dest="out_dir", help="directory for outputs")
    common.add_argument("--workers", type=int, help="worker processes (results do not depend on it)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="mgmtpred", description="MGMT methylation prediction from radiomic and latent features")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", parents=[common], help="radiomic features for a subject manifest")
    p.add_argument("--manifest", help="CSV: subject_id,t1,t1ce,t2,flair,mask")
    p.add_argument("--bin-count", dest="bin_count", type=int)
    p.add_argument("--families", type=_csv_list, help="comma-separated feature families")

    p = sub.add_parser("run", parents=[common], help="select features, cross-validate, write a model bundle")
    p.add_argument("--features", help="feature table CSV")
    p.add_argument("--latent", help="latent feature CSV")
    p.add_argument("--labels", help="CSV: subject_id,mgmt")
    p.add_argument("--p-min", dest="p_min", type=float)
    p.add_argument("--holdout", dest="h", type=int, help="subjects held out per fold")
    p.add_argument("--repeats", type=int)
    p.add_argument("--n-trees", dest="n_trees", type=int)
    p.add_argument("--max-depth", dest="max_depth", type=int, help="0 = unlimited")
    p.add_argument("--min-samples-split", dest="min_samples_split", type=int)
    p.add_argument("--in-fold-selection", dest="in_fold_selection", action="store_const", const=True,
                   help="redo selection inside each fold instead of once on all subjects")
    p.add_argument("--bundle", help="bundle output directory (default: <out-dir>/bundle)")

    p = sub.add_parser("predict", parents=[common], help="ensemble probabilities for new subjects")
    p.add_argument("--bundle", help="bundle directory written by 'run'")
    p.add_argument("--features", help="feature table CSV")
    p.add_argument("--latent", help="latent feature CSV")
    p.add_argument("--predictions", help="output CSV (default: <out-dir>/predictions.csv)")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic cohort")
    p.add_argument("--n-subjects", dest="n_subjects", type=int)
    p.add_argument("--diameter-delta", dest="diameter_delta_mm", type=float)
    p.add_argument("--core-delta", dest="core_intensity_delta", type=float)
    p.add_argument("--latent-shift", dest="latent_shift", type=float)
    p.add_argument("--noise", dest="noise_sd", type=float)

    p = sub.add_parser("evaluate", parents=[common], help="AUC of a predictions CSV against labels")
    p.add_argument("--predictions", help="CSV: subject_id,probability")
    p.add_argument("--labels", help="CSV: subject_id,mgmt")
    return parser


_SYNTH_FLAGS = ("n_subjects", "diameter_delta_mm", "core_intensity_delta", "latent_shift", "noise_sd")
_NOT_CONFIG = {"command", "config", "verbose"}


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    base = PipelineConfig.from_json_file(args.config) if args.config else PipelineConfig()
    values = base.__dict__.copy()
    synthetic = dict(values["synthetic"])
    for key, value in vars(args).items():
        if key in _NOT_CONFIG or value is None:
            continue
        if key in _SYNTH_FLAGS:
            synthetic[key] = value
        else:
            values[key] = value
    values["synthetic"] = synthetic
    return PipelineConfig.from_mapping(values)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = config_from_args(args)
        if args.command == "extract":
            outcome = cmd_extract(config)
            return EXIT_DATA if outcome.skipped else EXIT_OK
        if args.command == "run":
            cmd_run(config)
        elif args.command == "predict":
            print(cmd_predict(config))
        elif args.command == "synth":
            print(cmd_synth(config)["manifest"])
        elif args.command == "evaluate":
            cmd_evaluate(config)
    except ConfigError as exc:
        print(f"mgmtpred: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"mgmtpred: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
