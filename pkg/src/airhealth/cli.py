"""Operator command line: validate data, train, resample, evaluate,
predict one-off, and serve the HTTP API.

Every command reads one TOML config (--config); --seed overrides the
config's run seed. Reruns overwrite their outputs atomically, so a
config plus a seed always reproduces the same artifacts and reports.

Exit codes: 0 success, 2 usage or config error, 3 data validation,
4 training non-convergence, 5 artifact or filesystem IO.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from datetime import datetime
from typing import Mapping, Sequence

import numpy as np

from .aqi import PollutantKind, categorize, composite_aqi, default_table, subindex
from .config import AppConfig, load_config, with_seed
from .datasets import (
    SEVERITY_COLUMN,
    TARGET_COLUMNS,
    SplitConfig,
    drop_nulls,
    feature_scale,
    filter_india,
    load_air_dataset,
    load_patient_dataset,
    normalize_features,
    patient_matrix,
    split_indices,
)
from .errors import (
    AirHealthError,
    ConfigError,
    ConvergenceError,
    DataValidationError,
    DecodeError,
    DimensionError,
    DomainError,
    NumericError,
    TableOverflowError,
    VocabularyError,
)
from .imbalance import LabeledDataset, ResamplingPlan, resample_pipeline
from .pipeline import (
    _eval_regressor,
    _regression_metrics,
    air_feature_matrix,
    describe_extractor,
    fit_aqi_regressor,
    fit_severity_models,
    load_aqi_pipeline,
    load_severity_pipeline,
    save_aqi_pipeline,
    save_severity_pipeline,
)
from .service.jsonio import dumps_stable
from .service.state import AQI_SUBDIR, SEVERITY_SUBDIR
from .severity import EvalReport, aqi_to_exposure, evaluate
from .store import _atomic_write, load_regressor
from .vision import MetadataRecord, decode_image

POLLUTANT_LABELS = TARGET_COLUMNS[1:]
LABEL_TO_KIND = dict(zip(POLLUTANT_LABELS, PollutantKind))
EXPOSURE_FEATURE = "Air Pollution"

# isinstance checks in order; DivergenceError is a NumericError and the
# artifact errors are IOErrors, so the broad bases close each family.
_EXIT_BY_ERROR: tuple[tuple[type, int], ...] = (
    (ConfigError, 2),
    (DataValidationError, 3),
    (DecodeError, 3),
    (VocabularyError, 3),
    (TableOverflowError, 3),
    (DimensionError, 3),
    (DomainError, 3),
    (ConvergenceError, 4),
    (NumericError, 4),
    (IOError, 5),
)


# ---------------------------------------------------------------------------
# Shared data plumbing.


def _load_air_records(cfg: AppConfig):
    """Decode every usable air row into (images, metas, targets)."""
    if cfg.air_csv is None or cfg.image_root is None:
        raise ConfigError("data.air_csv and data.image_root are required in the config")
    loaded = load_air_dataset(cfg.air_csv, cfg.image_root)
    clean = drop_nulls(filter_india(loaded.records)).records
    if len(clean) < 2:
        raise DomainError(f"only {len(clean)} usable air rows after cleaning")
    images = []
    for rec in clean:
        with open(rec.image_path, "rb") as fh:
            images.append(decode_image(fh.read()))
    metas = [MetadataRecord(city=rec.city, timestamp=rec.timestamp) for rec in clean]
    targets = np.array(
        [[rec.targets[col] for col in TARGET_COLUMNS] for rec in clean],
        dtype=np.float64,
    )
    return images, metas, targets


def _load_patient_data(cfg: AppConfig) -> LabeledDataset:
    if cfg.patient_csv is None:
        raise ConfigError("data.patient_csv is required in the config")
    records = load_patient_dataset(cfg.patient_csv, cfg.patient_features)
    return patient_matrix(records, cfg.patient_features)


def _severity_data(cfg: AppConfig) -> LabeledDataset:
    """The matrix the severity trainer actually sees: resampled when
    the plan is enabled."""
    data = _load_patient_data(cfg)
    if cfg.severity.resample_targets is not None:
        plan = ResamplingPlan(targets=dict(cfg.severity.resample_targets))
        data = resample_pipeline(data, plan, cfg.severity.smote, rng=cfg.severity.seed)
    return data


# ---------------------------------------------------------------------------
# Report rendering: one table, accuracy to one decimal place.


def render_report(
    severity_reports: Mapping[str, Mapping[str, EvalReport]] | None,
    aqi_metrics: Mapping | None,
) -> str:
    lines: list[str] = []
    if severity_reports:
        lines.append(f"{'Model':<8}{'Train accuracy':<17}Test accuracy")
        for name in ("knn", "svc"):
            if name not in severity_reports:
                continue
            train = f"{severity_reports[name]['train'].accuracy * 100:.1f}%"
            test = f"{severity_reports[name]['test'].accuracy * 100:.1f}%"
            lines.append(f"{name.upper():<8}{train:<17}{test}")
    if aqi_metrics:
        if lines:
            lines.append("")
        lines.append(
            f"AQI regression: MSE {aqi_metrics['mse']:.6g}  "
            f"R^2 {aqi_metrics['r2_mean']:.4f}  "
            f"category accuracy {aqi_metrics['category_accuracy'] * 100:.1f}%"
        )
    if not lines:
        lines.append("no models to report")
    return "\n".join(lines) + "\n"


def report_payload(
    severity_reports: Mapping[str, Mapping[str, EvalReport]] | None,
    aqi_metrics: Mapping | None,
) -> dict:
    payload: dict = {}
    if severity_reports:
        payload["models"] = {
            name: {
                "train_accuracy": reports["train"].accuracy,
                "test_accuracy": reports["test"].accuracy,
                "confusion_test": reports["test"].confusion.tolist(),
            }
            for name, reports in severity_reports.items()
        }
    if aqi_metrics:
        payload["aqi"] = dict(aqi_metrics)
    return payload


def _write_text(path: str, text: str) -> None:
    _atomic_write(path, text.encode("utf-8"))


def _write_reports(cfg: AppConfig, name: str, text: str, payload: dict) -> None:
    os.makedirs(cfg.reports_dir, exist_ok=True)
    _write_text(os.path.join(cfg.reports_dir, f"{name}.txt"), text)
    _write_text(os.path.join(cfg.reports_dir, f"{name}.json"), dumps_stable(payload) + "\n")


def _counts_text(counts: Mapping[int, int]) -> str:
    return " ".join(f"{label}:{count}" for label, count in sorted(counts.items()))


# ---------------------------------------------------------------------------
# Commands.


def _cmd_ingest(cfg: AppConfig) -> int:
    if cfg.air_csv is None and cfg.patient_csv is None:
        raise ConfigError("ingest needs data.air_csv or data.patient_csv in the config")
    if cfg.air_csv is not None:
        if cfg.image_root is None:
            raise ConfigError("data.image_root is required alongside data.air_csv")
        loaded = load_air_dataset(cfg.air_csv, cfg.image_root)
        in_vocab = filter_india(loaded.records)
        clean = drop_nulls(in_vocab)
        print(
            f"air: rows={len(loaded.records) + loaded.dropped_missing_images}"
            f" dropped_missing_images={loaded.dropped_missing_images}"
            f" outside_vocabulary={len(loaded.records) - len(in_vocab)}"
            f" removed_nulls={clean.removed}"
            f" usable={len(clean.records)}"
        )
    if cfg.patient_csv is not None:
        data = _load_patient_data(cfg)
        print(f"patient: rows={data.n} classes=[{_counts_text(data.class_counts())}]")
    return 0


def _cmd_train_aqi(cfg: AppConfig) -> int:
    images, metas, targets = _load_air_records(cfg)
    extractor = cfg.extractor.build()
    features = air_feature_matrix(images, metas, extractor)
    result = fit_aqi_regressor(
        features, targets, cfg.aqi, extractor_meta=describe_extractor(extractor)
    )
    out = os.path.join(cfg.models_dir, AQI_SUBDIR)
    save_aqi_pipeline(out, result)
    text = render_report(None, result.metrics)
    payload = report_payload(None, result.metrics)
    payload["train_size"] = result.train_size
    payload["test_size"] = result.test_size
    _write_reports(cfg, "aqi_eval", text, payload)
    sys.stdout.write(text)
    print(f"saved {out}")
    return 0


def _cmd_train_severity(cfg: AppConfig) -> int:
    data = _load_patient_data(cfg)
    result = fit_severity_models(data, cfg.severity, feature_names=cfg.patient_features)
    out = os.path.join(cfg.models_dir, SEVERITY_SUBDIR)
    save_severity_pipeline(out, result)
    text = render_report(result.reports, None)
    payload = report_payload(result.reports, None)
    payload["class_counts"] = {str(k): v for k, v in sorted(result.class_counts.items())}
    payload["train_size"] = result.train_size
    payload["test_size"] = result.test_size
    _write_reports(cfg, "severity_eval", text, payload)
    sys.stdout.write(text)
    print(f"saved {out}")
    return 0


def _cmd_resample(cfg: AppConfig) -> int:
    if cfg.severity.resample_targets is None:
        raise ConfigError("resample.enabled is false in the config")
    data = _load_patient_data(cfg)
    before = data.class_counts()
    grown = _severity_data(cfg)
    os.makedirs(cfg.reports_dir, exist_ok=True)
    out_path = os.path.join(cfg.reports_dir, "resampled.csv")
    # synthetic rows interpolate between patients, so values are floats
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow([*cfg.patient_features, SEVERITY_COLUMN])
    for row, label in zip(grown.features, grown.labels):
        writer.writerow([*(repr(float(v)) for v in row), int(label)])
    _write_text(out_path, buf.getvalue())
    print(f"resampled: rows {data.n} -> {grown.n}")
    print(f"class counts before: {_counts_text(before)}")
    print(f"class counts after:  {_counts_text(grown.class_counts())}")
    print(f"saved {out_path}")
    return 0


def _evaluate_severity(cfg: AppConfig, directory: str) -> dict[str, dict[str, EvalReport]]:
    """Score saved classifiers on the same partition training used:
    identical resample and split seeds reproduce it exactly."""
    predictor = load_severity_pipeline(directory)
    data = _severity_data(cfg)
    train_idx, test_idx = split_indices(
        data.n,
        SplitConfig(test_fraction=cfg.severity.test_fraction, seed=cfg.severity.seed),
    )
    train_scaled, _ = normalize_features(data.subset(train_idx), spec=predictor.spec)
    test_scaled, _ = normalize_features(data.subset(test_idx), spec=predictor.spec)
    return {
        name: {
            "train": evaluate(model, train_scaled),
            "test": evaluate(model, test_scaled),
        }
        for name, model in (("knn", predictor.knn), ("svc", predictor.svc))
    }


def _evaluate_aqi(cfg: AppConfig, directory: str) -> Mapping:
    """Recompute regression metrics when air data is configured; fall
    back to the metrics recorded in the artifact otherwise."""
    if cfg.air_csv is None:
        _, artifact = load_regressor(directory)
        metrics = artifact.meta.get("extra", {}).get("metrics")
        if not metrics:
            raise ConfigError(
                "data.air_csv is required to evaluate the regressor: the "
                "artifact carries no recorded metrics"
            )
        return metrics
    predictor = load_aqi_pipeline(directory, onnx_path=cfg.extractor.path)
    images, metas, targets = _load_air_records(cfg)
    features = air_feature_matrix(images, metas, predictor.extractor)
    _, test_idx = split_indices(
        features.shape[0],
        SplitConfig(test_fraction=cfg.aqi.test_fraction, seed=cfg.aqi.seed),
    )
    predicted = _eval_regressor(
        predictor.model,
        predictor.feature_scaler,
        predictor.target_scaler,
        features[test_idx],
    )
    return _regression_metrics(predicted, targets[test_idx])


def _cmd_evaluate(cfg: AppConfig) -> int:
    sev_dir = os.path.join(cfg.models_dir, SEVERITY_SUBDIR)
    aqi_dir = os.path.join(cfg.models_dir, AQI_SUBDIR)
    severity_reports = _evaluate_severity(cfg, sev_dir) if os.path.isdir(sev_dir) else None
    aqi_metrics = _evaluate_aqi(cfg, aqi_dir) if os.path.isdir(aqi_dir) else None
    if severity_reports is None and aqi_metrics is None:
        print(f"no models found in {cfg.models_dir}")
        return 0
    text = render_report(severity_reports, aqi_metrics)
    _write_reports(cfg, "evaluate", text, report_payload(severity_reports, aqi_metrics))
    sys.stdout.write(text)
    return 0


def _cmd_predict_aqi(cfg: AppConfig, args: argparse.Namespace) -> int:
    if (args.readings is None) == (args.image is None):
        raise ConfigError("give exactly one of --readings or --image")
    if args.readings is not None:
        table = default_table()
        by_kind: dict[PollutantKind, float] = {}
        for label, value in args.readings.items():
            kind = LABEL_TO_KIND.get(label)
            if kind is None:
                raise VocabularyError(
                    f"unknown pollutant {label!r}",
                    value=label,
                    allowed=list(POLLUTANT_LABELS),
                )
            subindex(value, kind, table)  # validates the reading
            by_kind[kind] = value
        aqi_value, dominant = composite_aqi(by_kind, table)
        result = categorize(aqi_value)
        kind_to_label = {kind: label for label, kind in LABEL_TO_KIND.items()}
        payload = {
            "aqi": aqi_value,
            "category": result.category.value,
            "out_of_scale": result.out_of_scale,
            "dominant": kind_to_label[dominant],
        }
    else:
        if args.city is None or args.timestamp is None:
            raise ConfigError("--city and --timestamp are required with --image")
        predictor = load_aqi_pipeline(
            os.path.join(cfg.models_dir, AQI_SUBDIR), onnx_path=cfg.extractor.path
        )
        with open(args.image, "rb") as fh:
            image = decode_image(fh.read())
        outputs = predictor.predict(
            image, MetadataRecord(city=args.city, timestamp=args.timestamp)
        )
        aqi_value = max(outputs["AQI"], 0.0)  # regression can undershoot zero
        result = categorize(aqi_value)
        payload = {
            "pollutants": {label: outputs[label] for label in POLLUTANT_LABELS},
            "aqi": aqi_value,
            "category": result.category.value,
            "out_of_scale": result.out_of_scale,
        }
    print(dumps_stable(payload))
    return 0


def _cmd_predict_severity(cfg: AppConfig, args: argparse.Namespace) -> int:
    if args.features is None:
        raise ConfigError("--features is required")
    predictor = load_severity_pipeline(os.path.join(cfg.models_dir, SEVERITY_SUBDIR))
    known = set(predictor.feature_names)
    for name in args.features:
        if name not in known:
            raise DomainError(
                f"unknown feature {name!r}; expected {list(predictor.feature_names)}"
            )
    features = dict(args.features)
    exposure = None
    if EXPOSURE_FEATURE in known:
        if EXPOSURE_FEATURE in features:
            exposure = int(features[EXPOSURE_FEATURE])
        elif args.aqi is not None:
            exposure = aqi_to_exposure(args.aqi)
            features[EXPOSURE_FEATURE] = exposure
    for name, value in features.items():
        scale = feature_scale(name)
        if scale is not None and not scale[0] <= value <= scale[1]:
            raise DomainError(f"{name} must lie in {scale[0]}..{scale[1]}, got {value}")
    severity = predictor.predict(features, model=args.model)
    print(
        dumps_stable(
            {"severity": severity, "model_used": args.model, "exposure_level": exposure}
        )
    )
    return 0


def _cmd_serve(cfg: AppConfig, args: argparse.Namespace) -> int:
    import uvicorn  # noqa: PLC0415 -- only the server needs it

    from .service import create_app

    models = args.models if args.models is not None else cfg.models_dir
    onnx = cfg.extractor.path if cfg.extractor.type == "onnx" else None
    app = create_app(models, onnx_path=onnx, cors_origins=cfg.cors_origins)
    uvicorn.run(
        app,
        host=args.host if args.host is not None else cfg.host,
        port=args.port if args.port is not None else cfg.port,
    )
    return 0


# ---------------------------------------------------------------------------
# Argument parsing.


def _pairs_arg(text: str, cast):
    items = {}
    for chunk in text.split(","):
        name, eq, value = chunk.partition("=")
        if not eq or not name.strip():
            raise argparse.ArgumentTypeError(f"expected name=value, got {chunk!r}")
        try:
            items[name.strip()] = cast(value.strip())
        except ValueError:
            raise argparse.ArgumentTypeError(f"cannot parse value in {chunk!r}") from None
    if not items:
        raise argparse.ArgumentTypeError("empty name=value list")
    return items


def _readings_arg(text: str) -> dict[str, float]:
    return _pairs_arg(text, float)


def _features_arg(text: str) -> dict[str, int]:
    return _pairs_arg(text, int)


def _timestamp_arg(text: str) -> datetime:
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO timestamp: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    # the globals ride on a parent parser so they are accepted both
    # before and after the subcommand; SUPPRESS keeps a subcommand's
    # unset default from shadowing a value parsed earlier
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config", metavar="PATH", default=argparse.SUPPRESS, help="TOML config file"
    )
    common.add_argument(
        "--seed",
        type=int,
        metavar="N",
        default=argparse.SUPPRESS,
        help="override the config's run seed",
    )

    parser = argparse.ArgumentParser(
        prog="airhealth",
        description="Train, evaluate and serve air-quality and severity models.",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    sub.add_parser(
        "ingest", parents=[common], help="parse and validate the configured datasets"
    )
    sub.add_parser(
        "train-aqi", parents=[common], help="train the air-quality regressor"
    )
    sub.add_parser(
        "train-severity", parents=[common], help="train both severity classifiers"
    )
    sub.add_parser(
        "resample",
        parents=[common],
        help="rebalance the patient data and write the grown table",
    )
    sub.add_parser(
        "evaluate", parents=[common], help="score saved models and write a report"
    )

    predict = sub.add_parser(
        "predict", parents=[common], help="one-off prediction from saved models"
    )
    psub = predict.add_subparsers(dest="target", required=True, metavar="TARGET")
    aqi_p = psub.add_parser("aqi", parents=[common], help="air-quality index")
    aqi_p.add_argument(
        "--readings",
        type=_readings_arg,
        metavar="LIST",
        help='pollutant readings like "PM2.5=35,O3=61"',
    )
    aqi_p.add_argument("--image", metavar="PATH", help="photo for the regressor")
    aqi_p.add_argument("--city", metavar="NAME")
    aqi_p.add_argument("--timestamp", type=_timestamp_arg, metavar="ISO")
    sev_p = psub.add_parser("severity", parents=[common], help="lung-disease severity")
    sev_p.add_argument(
        "--features",
        type=_features_arg,
        metavar="LIST",
        help='patient features like "Age=44,Gender=1,Smoking=2"',
    )
    sev_p.add_argument(
        "--aqi", type=float, help="fill the exposure feature from this index value"
    )
    sev_p.add_argument("--model", choices=("knn", "svc"), default="knn")

    serve = sub.add_parser("serve", parents=[common], help="run the HTTP API")
    serve.add_argument("--host", metavar="ADDR")
    serve.add_argument("--port", type=int, metavar="N")
    serve.add_argument("--models", metavar="DIR", help="model directory override")
    return parser


def _dispatch(args: argparse.Namespace, cfg: AppConfig) -> int:
    if args.command == "ingest":
        return _cmd_ingest(cfg)
    if args.command == "train-aqi":
        return _cmd_train_aqi(cfg)
    if args.command == "train-severity":
        return _cmd_train_severity(cfg)
    if args.command == "resample":
        return _cmd_resample(cfg)
    if args.command == "evaluate":
        return _cmd_evaluate(cfg)
    if args.command == "predict":
        if args.target == "aqi":
            return _cmd_predict_aqi(cfg, args)
        return _cmd_predict_severity(cfg, args)
    return _cmd_serve(cfg, args)


def _exit_code(err: Exception) -> int:
    for kind, code in _EXIT_BY_ERROR:
        if isinstance(err, kind):
            return code
    return 1


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits itself: 0 for --help, 2 for usage
        return int(exc.code or 0)
    try:
        cfg = load_config(getattr(args, "config", None))
        seed = getattr(args, "seed", None)
        if seed is not None:
            cfg = with_seed(cfg, seed)
        return _dispatch(args, cfg)
    except (AirHealthError, OSError) as err:
        message = " ".join(str(err).split())
        print(f"airhealth: {type(err).__name__}: {message}", file=sys.stderr)
        return _exit_code(err)


if __name__ == "__main__":
    sys.exit(main())
