"""End-to-end training and prediction flows.

Two pipelines live here. The air-quality pipeline turns images plus
capture metadata into a 7-output regressor (index value and six
pollutant readings). The severity pipeline rebalances the patient
survey, fits the two classifiers, and reports train/test accuracy for
both. Each pipeline has a matching save/load pair built on the artifact
store, and a predictor object the HTTP layer can call directly.
"""

import os
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Mapping, Sequence

import numpy as np

from .aqi import categorize, classification_accuracy
from .datasets import (
    DEFAULT_PATIENT_FEATURES,
    NormalizationSpec,
    SplitConfig,
    normalize_features,
    split_indices,
)
from .errors import ArtifactError, DomainError
from .imbalance import (
    DEFAULT_TARGETS_1550,
    LabeledDataset,
    ResamplingPlan,
    SmoteParams,
    resample_pipeline,
)
from .nn import OUTPUT_NAMES, MlpRegressor, Mode, mse_loss, r2_score
from .severity import EvalReport, KnnModel, SvcConfig, SvcModel, evaluate, knn_fit, svc_fit
from .store import load_knn, load_regressor, load_svc, save_knn, save_regressor, save_svc
from .tensor import derive_rng
from .training import TrainConfig, train_regressor
from .vision import (
    CITIES,
    META_DIM,
    FeatureExtractor,
    MetadataRecord,
    RawImage,
    SyntheticExtractor,
    encode_metadata,
    extract_features,
    fuse,
    preprocess,
    synthetic_extractor,
)

# ---------------------------------------------------------------------------
# Feature assembly.


def air_feature_matrix(
    images: Sequence[RawImage],
    metas: Sequence[MetadataRecord],
    extractor: FeatureExtractor,
) -> np.ndarray:
    """Run every image through preprocess -> backbone -> pooling, fuse
    with the encoded metadata, and stack into an (n, dim) matrix."""
    if len(images) != len(metas):
        raise DomainError(
            f"images and metadata counts differ: {len(images)} vs {len(metas)}"
        )
    if not images:
        raise DomainError("feature assembly needs at least one image")
    rows = []
    for img, meta in zip(images, metas):
        vec = extract_features(preprocess(img), extractor)
        rows.append(fuse(vec, encode_metadata(meta)))
    return np.stack(rows)


def describe_extractor(extractor: FeatureExtractor) -> dict:
    """JSON-safe recipe from which build_extractor can rebuild the
    backbone at serving time."""
    if isinstance(extractor, SyntheticExtractor):
        return {
            "type": "synthetic",
            "seed": extractor.seed,
            "grid_size": extractor.grid_size,
        }
    return {
        "type": "onnx",
        "name": extractor.name,
        "output_dim": extractor.output_dim,
        "fingerprint": extractor.fingerprint(),
    }


def build_extractor(meta: Mapping, onnx_path: str | None = None) -> FeatureExtractor:
    kind = meta.get("type")
    if kind == "synthetic":
        return synthetic_extractor(meta["seed"], meta["grid_size"])
    if kind == "onnx":
        if onnx_path is None:
            raise ArtifactError(
                "this model was trained with a file-based backbone; "
                "pass the backbone path to rebuild it"
            )
        from .vision import OnnxExtractor

        extractor = OnnxExtractor(
            onnx_path, output_dim=meta["output_dim"], name=meta["name"]
        )
        if extractor.fingerprint() != meta["fingerprint"]:
            raise ArtifactError(
                f"backbone at {onnx_path!r} does not match the recorded "
                f"fingerprint {meta['fingerprint'][:12]}..."
            )
        return extractor
    raise ArtifactError(f"unknown extractor type {kind!r}")


# ---------------------------------------------------------------------------
# Column standardization (regression works in centered units; the
# scalers are persisted so predictions invert exactly).


@dataclass(frozen=True)
class StandardScaler:
    center: np.ndarray
    scale: np.ndarray

    def __post_init__(self) -> None:
        center = np.asarray(self.center, dtype=np.float64).reshape(-1)
        scale = np.asarray(self.scale, dtype=np.float64).reshape(-1)
        if center.shape != scale.shape:
            raise DomainError("scaler center/scale lengths differ")
        if np.any(scale <= 0) or not np.all(np.isfinite(scale)):
            raise DomainError("scaler scale entries must be finite and > 0")
        center.setflags(write=False)
        scale.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "scale", scale)

    @classmethod
    def fit(cls, matrix: np.ndarray) -> "StandardScaler":
        matrix = np.asarray(matrix, dtype=np.float64)
        center = matrix.mean(axis=0)
        scale = matrix.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)  # constant columns pass through
        return cls(center=center, scale=scale)

    def transform(self, matrix: np.ndarray) -> np.ndarray:
        return (np.asarray(matrix, dtype=np.float64) - self.center) / self.scale

    def invert(self, matrix: np.ndarray) -> np.ndarray:
        return np.asarray(matrix, dtype=np.float64) * self.scale + self.center


# ---------------------------------------------------------------------------
# Air-quality regression pipeline.


@dataclass(frozen=True)
class AqiFitConfig:
    hidden_widths: tuple[int, int, int, int] = (512, 256, 128, 64)
    dropout_rate: float = 0.3
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 0.01
    test_fraction: float = 0.2
    seed: int = 0
    # explicit (epochs, lr) phases; None derives a 60/30/10 step decay
    schedule: tuple[tuple[int, float], ...] | None = None


def _decay_phases(epochs: int, lr: float) -> tuple[tuple[int, float], ...]:
    """Constant-rate Adam stalls at a loss floor proportional to the
    rate, so longer runs get two step-downs; short runs stay single
    phase."""
    if epochs < 10:
        return ((epochs, lr),)
    first = int(round(epochs * 0.6))
    second = int(round(epochs * 0.3))
    rest = epochs - first - second
    phases = [(first, lr), (second, lr / 10.0)]
    if rest > 0:
        phases.append((rest, lr / 50.0))
    return tuple(phases)


@dataclass(frozen=True)
class AqiTrainResult:
    model: MlpRegressor
    feature_scaler: StandardScaler
    target_scaler: StandardScaler
    extractor_meta: dict
    history: tuple[float, ...]
    metrics: dict
    train_size: int
    test_size: int


def _eval_regressor(
    model: MlpRegressor,
    feature_scaler: StandardScaler,
    target_scaler: StandardScaler,
    features: np.ndarray,
) -> np.ndarray:
    scaled, _, _ = model.forward(feature_scaler.transform(features), mode=Mode.EVAL)
    return target_scaler.invert(scaled)


def _regression_metrics(predicted: np.ndarray, actual: np.ndarray) -> dict:
    per_column = {
        name: r2_score(predicted[:, i], actual[:, i])
        for i, name in enumerate(OUTPUT_NAMES)
    }
    # a regressor can undershoot below zero; clamp before banding
    index_pred = np.maximum(predicted[:, 0], 0.0)
    return {
        "r2": per_column,
        "r2_mean": float(np.mean(list(per_column.values()))),
        "mse": mse_loss(predicted, actual),
        "category_accuracy": classification_accuracy(index_pred, actual[:, 0]),
    }


def fit_aqi_regressor(
    features: np.ndarray,
    targets: np.ndarray,
    config: AqiFitConfig | None = None,
    extractor_meta: Mapping | None = None,
) -> AqiTrainResult:
    """Split, standardize on the training part, train, and score the
    held-out part in natural units."""
    if config is None:
        config = AqiFitConfig()
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim != 2 or targets.shape[1] != len(OUTPUT_NAMES):
        raise DomainError(f"targets must be (n, {len(OUTPUT_NAMES)}), got {targets.shape}")
    train_idx, test_idx = split_indices(
        features.shape[0], SplitConfig(test_fraction=config.test_fraction, seed=config.seed)
    )
    x_train, x_test = features[train_idx], features[test_idx]
    y_train, y_test = targets[train_idx], targets[test_idx]

    feature_scaler = StandardScaler.fit(x_train)
    target_scaler = StandardScaler.fit(y_train)
    trained = MlpRegressor.create(
        input_dim=features.shape[1],
        hidden_widths=tuple(config.hidden_widths),
        dropout_rate=config.dropout_rate,
        seed=config.seed,
    )
    xs = feature_scaler.transform(x_train)
    ys = target_scaler.transform(y_train)
    phases = config.schedule or _decay_phases(config.epochs, config.learning_rate)
    history: list[float] = []
    for i, (phase_epochs, phase_lr) in enumerate(phases):
        trained, phase_history = train_regressor(
            trained,
            xs,
            ys,
            TrainConfig(
                epochs=phase_epochs,
                batch_size=config.batch_size,
                learning_rate=phase_lr,
                seed=config.seed + i,
            ),
        )
        history.extend(phase_history)
    predicted = _eval_regressor(trained, feature_scaler, target_scaler, x_test)
    metrics = _regression_metrics(predicted, y_test)
    return AqiTrainResult(
        model=trained,
        feature_scaler=feature_scaler,
        target_scaler=target_scaler,
        extractor_meta=dict(extractor_meta) if extractor_meta else {},
        history=tuple(history),
        metrics=metrics,
        train_size=int(train_idx.shape[0]),
        test_size=int(test_idx.shape[0]),
    )


class AqiPredictor:
    """Loaded air-quality model plus everything needed to serve it."""

    def __init__(
        self,
        model: MlpRegressor,
        feature_scaler: StandardScaler,
        target_scaler: StandardScaler,
        extractor: FeatureExtractor,
    ):
        expected = extractor.output_dim + META_DIM
        if model.input_dim != expected:
            raise ArtifactError(
                f"model expects {model.input_dim} inputs but extractor "
                f"plus metadata provide {expected}"
            )
        self.model = model
        self.feature_scaler = feature_scaler
        self.target_scaler = target_scaler
        self.extractor = extractor

    def predict(self, image: RawImage, meta: MetadataRecord) -> dict[str, float]:
        """Seven named outputs in natural units."""
        vec = fuse(
            extract_features(preprocess(image), self.extractor), encode_metadata(meta)
        )
        row = _eval_regressor(
            self.model, self.feature_scaler, self.target_scaler, vec[None, :]
        )[0]
        return {name: float(v) for name, v in zip(OUTPUT_NAMES, row)}


def save_aqi_pipeline(directory: str, result: AqiTrainResult) -> None:
    if not result.extractor_meta:
        raise ArtifactError("cannot persist a pipeline without its extractor recipe")
    save_regressor(
        directory,
        result.model,
        extra_meta={
            "extractor": result.extractor_meta,
            "metrics": result.metrics,
            "train_size": result.train_size,
            "test_size": result.test_size,
        },
        extra_arrays={
            "feature_center": result.feature_scaler.center,
            "feature_scale": result.feature_scaler.scale,
            "target_center": result.target_scaler.center,
            "target_scale": result.target_scaler.scale,
        },
    )


def load_aqi_pipeline(directory: str, onnx_path: str | None = None) -> AqiPredictor:
    model, artifact = load_regressor(directory)
    extra = artifact.meta.get("extra", {})
    if "extractor" not in extra:
        raise ArtifactError(f"artifact at {directory} lacks an extractor recipe")
    return AqiPredictor(
        model=model,
        feature_scaler=StandardScaler(
            center=artifact.arrays["feature_center"],
            scale=artifact.arrays["feature_scale"],
        ),
        target_scaler=StandardScaler(
            center=artifact.arrays["target_center"],
            scale=artifact.arrays["target_scale"],
        ),
        extractor=build_extractor(extra["extractor"], onnx_path=onnx_path),
    )


# ---------------------------------------------------------------------------
# Synthetic air corpus: block-structured images whose targets are a
# fixed linear function of the extracted features, so an end-to-end run
# has a known-learnable ground truth.

TARGET_RANGES = {
    "AQI": (10.0, 490.0),
    "PM2.5": (5.0, 240.0),
    "PM10": (10.0, 420.0),
    "O3": (5.0, 180.0),
    "CO": (0.5, 30.0),
    "SO2": (2.0, 290.0),
    "NO2": (5.0, 380.0),
}


@dataclass(frozen=True)
class SyntheticCorpus:
    images: tuple[RawImage, ...]
    metas: tuple[MetadataRecord, ...]
    features: np.ndarray
    targets: np.ndarray


def synthesize_air_corpus(
    n: int,
    seed: int = 0,
    extractor: FeatureExtractor | None = None,
    image_size: int = 48,
    cell_grid: int = 4,
    noise_sigma: float = 0.01,
) -> SyntheticCorpus:
    """Generate images of random constant blocks, push them through the
    real feature path, and emit targets that are affine in those
    features (plus tiny observation noise), each column rescaled into a
    plausible pollutant range."""
    if n < 10:
        raise DomainError(f"need at least 10 synthetic samples, got {n}")
    if extractor is None:
        extractor = synthetic_extractor(0)
    img_rng = derive_rng(seed, "images")
    meta_rng = derive_rng(seed, "meta")
    images = []
    metas = []
    base = datetime(2023, 1, 1)
    reps = -(-image_size // cell_grid)  # ceil division
    for _ in range(n):
        cells = img_rng.integers(0, 256, size=(cell_grid, cell_grid, 3))
        pixels = np.repeat(np.repeat(cells, reps, axis=0), reps, axis=1)
        pixels = pixels[:image_size, :image_size]
        jitter = img_rng.integers(-6, 7, size=pixels.shape)
        grid = np.clip(pixels + jitter, 0, 255).astype(np.uint8)
        images.append(RawImage(image_size, image_size, grid))
        metas.append(
            MetadataRecord(
                city=CITIES[int(meta_rng.integers(0, len(CITIES)))],
                timestamp=base
                + timedelta(
                    days=int(meta_rng.integers(0, 300)),
                    hours=int(meta_rng.integers(0, 24)),
                ),
            )
        )
    features = air_feature_matrix(images, metas, extractor)

    weights = derive_rng(seed, "linmap").normal(
        size=(features.shape[1], len(OUTPUT_NAMES))
    ) / np.sqrt(features.shape[1])
    raw = features @ weights
    lo = raw.min(axis=0)
    hi = raw.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    targets = np.empty_like(raw)
    for i, name in enumerate(OUTPUT_NAMES):
        out_lo, out_hi = TARGET_RANGES[name]
        targets[:, i] = out_lo + (raw[:, i] - lo[i]) / span[i] * (out_hi - out_lo)
    targets += derive_rng(seed, "noise").normal(0.0, noise_sigma, size=targets.shape)
    return SyntheticCorpus(
        images=tuple(images),
        metas=tuple(metas),
        features=features,
        targets=targets,
    )


# ---------------------------------------------------------------------------
# Severity classification pipeline.


@dataclass(frozen=True)
class SeverityFitConfig:
    k: int = 5
    c: float = 1.0
    tol: float = 1e-3
    max_passes: int = 10
    test_fraction: float = 0.2
    seed: int = 0
    resample_targets: Mapping[int, int] | None = field(
        default_factory=lambda: dict(DEFAULT_TARGETS_1550)
    )
    smote: SmoteParams = SmoteParams()


@dataclass(frozen=True)
class SeverityTrainResult:
    knn: KnnModel
    svc: SvcModel
    spec: NormalizationSpec
    feature_names: tuple[str, ...]
    reports: dict[str, dict[str, EvalReport]]
    class_counts: dict[int, int]
    train_size: int
    test_size: int


def fit_severity_models(
    data: LabeledDataset,
    config: SeverityFitConfig | None = None,
    feature_names: Sequence[str] | None = None,
) -> SeverityTrainResult:
    """Rebalance (optional), split, min-max scale on the training part,
    then fit and score both classifiers."""
    if config is None:
        config = SeverityFitConfig()
    if config.resample_targets is not None:
        plan = ResamplingPlan(targets=dict(config.resample_targets))
        data = resample_pipeline(data, plan, config.smote, rng=config.seed)
    train_idx, test_idx = split_indices(
        data.n, SplitConfig(test_fraction=config.test_fraction, seed=config.seed)
    )
    train, test = data.subset(train_idx), data.subset(test_idx)
    train_scaled, spec = normalize_features(train)
    test_scaled, _ = normalize_features(test, spec=spec)

    knn = knn_fit(train_scaled, k=config.k)
    svc = svc_fit(
        train_scaled,
        SvcConfig(c=config.c, tol=config.tol, max_passes=config.max_passes, seed=config.seed),
    )
    reports = {
        "knn": {
            "train": evaluate(knn, train_scaled),
            "test": evaluate(knn, test_scaled),
        },
        "svc": {
            "train": evaluate(svc, train_scaled),
            "test": evaluate(svc, test_scaled),
        },
    }
    names = tuple(feature_names) if feature_names else DEFAULT_PATIENT_FEATURES
    if len(names) != data.dim:
        raise DomainError(
            f"feature name count {len(names)} does not match data width {data.dim}"
        )
    return SeverityTrainResult(
        knn=knn,
        svc=svc,
        spec=spec,
        feature_names=names,
        reports=reports,
        class_counts=data.class_counts(),
        train_size=train.n,
        test_size=test.n,
    )


class SeverityPredictor:
    """Loaded classifiers plus the scaling and feature order needed to
    turn a named-feature mapping into a prediction."""

    def __init__(
        self,
        knn: KnnModel,
        svc: SvcModel,
        spec: NormalizationSpec,
        feature_names: Sequence[str],
    ):
        self.knn = knn
        self.svc = svc
        self.spec = spec
        self.feature_names = tuple(feature_names)

    def predict(self, features: Mapping[str, float], model: str = "knn") -> int:
        missing = [name for name in self.feature_names if name not in features]
        if missing:
            raise DomainError(f"missing features: {missing}")
        vec = np.array([float(features[name]) for name in self.feature_names])
        scaled = self.spec.transform(vec[None, :])
        if model == "knn":
            return self.knn.predict(scaled[0])
        if model == "svc":
            return self.svc.predict(scaled[0])
        raise DomainError(f"unknown severity model {model!r}; pick 'knn' or 'svc'")


def save_severity_pipeline(directory: str, result: SeverityTrainResult) -> None:
    save_knn(
        os.path.join(directory, "knn"),
        result.knn,
        spec=result.spec,
        feature_names=result.feature_names,
    )
    save_svc(
        os.path.join(directory, "svc"),
        result.svc,
        spec=result.spec,
        feature_names=result.feature_names,
    )


def load_severity_pipeline(directory: str) -> SeverityPredictor:
    knn, knn_spec, knn_names = load_knn(os.path.join(directory, "knn"))
    svc, _, _ = load_svc(os.path.join(directory, "svc"))
    if knn_spec is None or knn_names is None:
        raise ArtifactError(
            f"severity artifacts at {directory} lack scaling or feature names"
        )
    return SeverityPredictor(knn=knn, svc=svc, spec=knn_spec, feature_names=knn_names)
