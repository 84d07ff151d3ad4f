"""TOML run configuration for the command-line tools.

One file carries dataset paths, the patient feature selection,
hyperparameters for both training pipelines, the resampling plan, and
service binding. Relative paths are resolved against the directory
containing the config file, so a config travels with its fixture data.
Unknown sections or keys are rejected rather than ignored.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, replace
from typing import Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .datasets import DEFAULT_PATIENT_FEATURES
from .errors import ConfigError
from .imbalance import DEFAULT_TARGETS_1550, SmoteParams
from .pipeline import AqiFitConfig, SeverityFitConfig
from .vision import FeatureExtractor, synthetic_extractor

_EXTRACTOR_TYPES = ("synthetic", "onnx")


@dataclass(frozen=True)
class ExtractorConfig:
    """Which image backbone to construct for training and serving."""

    type: str = "synthetic"
    seed: int = 0
    grid_size: int = 4
    path: str | None = None
    output_dim: int = 512
    name: str = "vgg16-onnx"

    def build(self) -> FeatureExtractor:
        if self.type == "synthetic":
            return synthetic_extractor(self.seed, self.grid_size)
        from .vision import OnnxExtractor  # noqa: PLC0415 -- optional heavy dependency

        # path presence was checked at load time; assert for direct construction
        if self.path is None:
            raise ConfigError("extractor.path is required when extractor.type = 'onnx'")
        return OnnxExtractor(self.path, output_dim=self.output_dim, name=self.name)


@dataclass(frozen=True)
class AppConfig:
    """Everything a command needs, with paths already resolved."""

    seed: int = 0
    models_dir: str = "models"
    reports_dir: str = "reports"
    air_csv: str | None = None
    image_root: str | None = None
    patient_csv: str | None = None
    patient_features: tuple[str, ...] = DEFAULT_PATIENT_FEATURES
    extractor: ExtractorConfig = ExtractorConfig()
    aqi: AqiFitConfig = AqiFitConfig()
    severity: SeverityFitConfig = SeverityFitConfig()
    host: str = "127.0.0.1"
    port: int = 8000
    cors_origins: tuple[str, ...] = ("*",)


def _check_unknown(section: str, table: Mapping, allowed: tuple[str, ...]) -> None:
    for key in table:
        if key not in allowed:
            where = f"{section}.{key}" if section else key
            raise ConfigError(f"unknown config key {where!r}")


def _get(table: Mapping, section: str, key: str, kind: type, default):
    """Fetch table[key] as kind, with bools never passing for ints."""
    if key not in table:
        return default
    value = table[key]
    where = f"{section}.{key}" if section else key
    if kind is float and type(value) in (int, float):
        return float(value)
    if type(value) is not kind:
        raise ConfigError(
            f"{where} must be {kind.__name__}, got {type(value).__name__}"
        )
    return value


def _get_str_list(table: Mapping, section: str, key: str, default) -> tuple[str, ...]:
    if key not in table:
        return default
    value = table[key]
    where = f"{section}.{key}"
    if not isinstance(value, list) or any(type(v) is not str for v in value):
        raise ConfigError(f"{where} must be a list of strings")
    return tuple(value)


def _get_int_list(table: Mapping, section: str, key: str, default) -> tuple[int, ...]:
    if key not in table:
        return default
    value = table[key]
    where = f"{section}.{key}"
    if not isinstance(value, list) or any(type(v) is not int for v in value):
        raise ConfigError(f"{where} must be a list of integers")
    return tuple(value)


def _get_table(raw: Mapping, name: str) -> Mapping:
    value = raw.get(name, {})
    if not isinstance(value, Mapping):
        raise ConfigError(f"{name} must be a table")
    return value


def _parse_targets(table: Mapping) -> dict[int, int]:
    """TOML keys are strings; the plan wants integer class labels."""
    targets: dict[int, int] = {}
    for key, value in table.items():
        try:
            label = int(key)
        except ValueError:
            raise ConfigError(
                f"resample.targets keys must be integer class labels, got {key!r}"
            ) from None
        if type(value) is not int:
            raise ConfigError(f"resample.targets.{key} must be an integer count")
        targets[label] = value
    return targets


def _resolve(base_dir: str, path: str | None) -> str | None:
    if path is None:
        return None
    if os.path.isabs(path):
        return path
    return os.path.normpath(os.path.join(base_dir, path))


def load_config(path: str | None = None) -> AppConfig:
    """Parse a TOML file into an AppConfig; None gives pure defaults.

    Raises ConfigError for syntax problems (message carries the parser's
    line and column) and for unknown or mistyped keys.
    """
    if path is None:
        return AppConfig()
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from None
    return _from_mapping(raw, base_dir=os.path.dirname(os.path.abspath(path)))


def _from_mapping(raw: Mapping, base_dir: str) -> AppConfig:
    _check_unknown(
        "", raw,
        ("seed", "paths", "data", "features", "extractor", "train", "resample", "service"),
    )
    seed = _get(raw, "", "seed", int, 0)

    paths = _get_table(raw, "paths")
    _check_unknown("paths", paths, ("models_dir", "reports_dir"))
    data = _get_table(raw, "data")
    _check_unknown("data", data, ("air_csv", "image_root", "patient_csv"))
    features = _get_table(raw, "features")
    _check_unknown("features", features, ("patient",))
    patient_features = _get_str_list(
        features, "features", "patient", DEFAULT_PATIENT_FEATURES
    )

    ext = _get_table(raw, "extractor")
    _check_unknown(
        "extractor", ext, ("type", "seed", "grid_size", "path", "output_dim", "name")
    )
    ext_type = _get(ext, "extractor", "type", str, "synthetic")
    if ext_type not in _EXTRACTOR_TYPES:
        raise ConfigError(
            f"extractor.type must be one of {_EXTRACTOR_TYPES}, got {ext_type!r}"
        )
    extractor = ExtractorConfig(
        type=ext_type,
        seed=_get(ext, "extractor", "seed", int, 0),
        grid_size=_get(ext, "extractor", "grid_size", int, 4),
        path=_resolve(base_dir, _get(ext, "extractor", "path", str, None)),
        output_dim=_get(ext, "extractor", "output_dim", int, 512),
        name=_get(ext, "extractor", "name", str, "vgg16-onnx"),
    )
    if extractor.type == "onnx" and extractor.path is None:
        raise ConfigError("extractor.path is required when extractor.type = 'onnx'")

    train = _get_table(raw, "train")
    _check_unknown("train", train, ("aqi", "severity"))
    aqi_raw = _get_table(train, "aqi")
    _check_unknown(
        "train.aqi", aqi_raw,
        ("hidden_widths", "dropout", "epochs", "batch_size", "learning_rate", "test_fraction"),
    )
    defaults = AqiFitConfig()
    widths = _get_int_list(aqi_raw, "train.aqi", "hidden_widths", defaults.hidden_widths)
    if len(widths) != 4:
        raise ConfigError(
            f"train.aqi.hidden_widths needs exactly 4 entries, got {len(widths)}"
        )
    aqi = AqiFitConfig(
        hidden_widths=widths,
        dropout_rate=_get(aqi_raw, "train.aqi", "dropout", float, defaults.dropout_rate),
        epochs=_get(aqi_raw, "train.aqi", "epochs", int, defaults.epochs),
        batch_size=_get(aqi_raw, "train.aqi", "batch_size", int, defaults.batch_size),
        learning_rate=_get(
            aqi_raw, "train.aqi", "learning_rate", float, defaults.learning_rate
        ),
        test_fraction=_get(
            aqi_raw, "train.aqi", "test_fraction", float, defaults.test_fraction
        ),
        seed=seed,
    )

    sev_raw = _get_table(train, "severity")
    _check_unknown(
        "train.severity", sev_raw, ("k", "c", "tol", "max_passes", "test_fraction")
    )
    res = _get_table(raw, "resample")
    _check_unknown(
        "resample", res,
        ("enabled", "targets", "k_neighbors", "m_neighbors", "extrapolation_step"),
    )
    enabled = _get(res, "resample", "enabled", bool, True)
    targets = (
        _parse_targets(_get_table(res, "targets"))
        if "targets" in res
        else dict(DEFAULT_TARGETS_1550)
    )
    smote = SmoteParams(
        k_neighbors=_get(res, "resample", "k_neighbors", int, 5),
        m_neighbors=_get(res, "resample", "m_neighbors", int, 10),
        extrapolation_step=_get(res, "resample", "extrapolation_step", float, 0.5),
    )
    sev_defaults = SeverityFitConfig()
    severity = SeverityFitConfig(
        k=_get(sev_raw, "train.severity", "k", int, sev_defaults.k),
        c=_get(sev_raw, "train.severity", "c", float, sev_defaults.c),
        tol=_get(sev_raw, "train.severity", "tol", float, sev_defaults.tol),
        max_passes=_get(
            sev_raw, "train.severity", "max_passes", int, sev_defaults.max_passes
        ),
        test_fraction=_get(
            sev_raw, "train.severity", "test_fraction", float, sev_defaults.test_fraction
        ),
        seed=seed,
        resample_targets=targets if enabled else None,
        smote=smote,
    )

    service = _get_table(raw, "service")
    _check_unknown("service", service, ("host", "port", "cors_origins"))

    return AppConfig(
        seed=seed,
        models_dir=_resolve(base_dir, _get(paths, "paths", "models_dir", str, "models")),
        reports_dir=_resolve(base_dir, _get(paths, "paths", "reports_dir", str, "reports")),
        air_csv=_resolve(base_dir, _get(data, "data", "air_csv", str, None)),
        image_root=_resolve(base_dir, _get(data, "data", "image_root", str, None)),
        patient_csv=_resolve(base_dir, _get(data, "data", "patient_csv", str, None)),
        patient_features=patient_features,
        extractor=extractor,
        aqi=aqi,
        severity=severity,
        host=_get(service, "service", "host", str, "127.0.0.1"),
        port=_get(service, "service", "port", int, 8000),
        cors_origins=_get_str_list(service, "service", "cors_origins", ("*",)),
    )


def with_seed(config: AppConfig, seed: int) -> AppConfig:
    """Rethread one run seed through every sub-config that uses it."""
    return replace(
        config,
        seed=seed,
        aqi=replace(config.aqi, seed=seed),
        severity=replace(config.severity, seed=seed),
    )
