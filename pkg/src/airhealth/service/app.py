"""HTTP API over the loaded models.

Endpoints:
  GET  /health            liveness plus loaded-model names
  GET  /schema            feature scales, category bands, vocabularies
  POST /predict/aqi       image+metadata through the regressor, or raw
                          pollutant readings through the index math
  POST /predict/severity  named patient features through a classifier
  POST /admin/reload      re-read artifacts and swap the snapshot

Every response body is rendered by the deterministic serializer, and
every error is a JSON object {code, message, field?}.
"""

import base64
import binascii
from typing import Mapping

from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware

from ..aqi import (
    CATEGORY_COLORS,
    CATEGORY_RANGES,
    PollutantKind,
    categorize,
    composite_aqi,
    subindex,
)
from ..datasets import SEVERITY_RANGE, TARGET_COLUMNS, feature_scale
from ..errors import (
    DecodeError,
    DomainError,
    TableOverflowError,
    VocabularyError,
)
from ..severity import aqi_to_exposure
from ..vision import CITIES, MetadataRecord, decode_image
from .jsonio import dumps_stable
from .schemas import AqiPredictRequest, SeverityPredictRequest
from .state import ServiceState, load_state

POLLUTANT_LABELS = TARGET_COLUMNS[1:]  # six pollutants; AQI is separate
LABEL_TO_KIND = dict(zip(POLLUTANT_LABELS, PollutantKind))
EXPOSURE_FEATURE = "Air Pollution"


class ApiError(Exception):
    """Structured request failure: HTTP status plus a machine code."""

    def __init__(self, status: int, code: str, message: str, field: str | None = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.field = field


class _StateBox:
    """Mutable holder so reload can swap the immutable snapshot."""

    def __init__(self, state: ServiceState):
        self.state = state


def _json(payload, status_code: int = 200) -> Response:
    return Response(
        content=dumps_stable(payload),
        status_code=status_code,
        media_type="application/json",
    )


def _error_payload(code: str, message: str, field: str | None) -> dict:
    payload = {"code": code, "message": message}
    if field is not None:
        payload["field"] = field
    return payload


def _health_payload(state: ServiceState) -> dict:
    return {"status": "ok", "models": state.model_names()}


def _schema_payload(state: ServiceState) -> dict:
    features = []
    for name in state.severity.feature_names:
        scale = feature_scale(name)
        if scale is None:
            raise ApiError(500, "schema_error", f"feature {name!r} has no declared scale")
        features.append({"name": name, "min": scale[0], "max": scale[1]})
    categories = [
        {"name": cat.value, "lo": lo, "hi": hi, "color": CATEGORY_COLORS[cat]}
        for cat, (lo, hi) in CATEGORY_RANGES.items()
    ]
    return {
        "features": features,
        "severity": {"min": SEVERITY_RANGE[0], "max": SEVERITY_RANGE[1]},
        "categories": categories,
        "cities": list(CITIES),
        "pollutants": list(POLLUTANT_LABELS),
    }


def _aqi_from_readings(readings: Mapping[str, float], state: ServiceState) -> dict:
    if not readings:
        raise ApiError(400, "invalid_request", "readings must not be empty", "readings")
    by_kind: dict[PollutantKind, float] = {}
    for label, value in readings.items():
        kind = LABEL_TO_KIND.get(label)
        if kind is None:
            raise ApiError(
                400,
                "unknown_pollutant",
                f"unknown pollutant {label!r}; expected one of {list(POLLUTANT_LABELS)}",
                label,
            )
        try:
            subindex(float(value), kind, state.table)
        except TableOverflowError as exc:
            raise ApiError(
                400,
                "reading_out_of_range",
                f"{label} reading {value} is beyond the index table "
                f"(max index {exc.max_index})",
                label,
            )
        except DomainError as exc:
            raise ApiError(400, "invalid_reading", str(exc), label)
        by_kind[kind] = float(value)
    aqi, dominant = composite_aqi(by_kind, state.table)
    result = categorize(aqi)
    pollutants = {
        label: by_kind.get(kind) for label, kind in LABEL_TO_KIND.items()
    }
    return {
        "pollutants": pollutants,
        "aqi": aqi,
        "category": result.category.value,
        "out_of_scale": result.out_of_scale,
        "dominant": {kind: label for label, kind in LABEL_TO_KIND.items()}[dominant],
    }


def _dominant_of_predictions(outputs: Mapping[str, float], state: ServiceState) -> str | None:
    """Dominant pollutant implied by predicted concentrations. Each
    value is clamped into its table's domain first; this is display
    metadata, not an index computation."""
    best: tuple[float, str] | None = None
    for label, kind in LABEL_TO_KIND.items():
        top = state.table.segments_for(kind)[-1].conc_hi
        value = min(max(outputs[label], 0.0), top)
        index = subindex(value, kind, state.table)
        if best is None or index > best[0]:
            best = (index, label)
    return best[1] if best else None


def _aqi_from_image(body: AqiPredictRequest, state: ServiceState) -> dict:
    for name in ("city", "timestamp"):
        if getattr(body, name) is None:
            raise ApiError(
                400, "missing_field", f"{name} is required with image_base64", name
            )
    try:
        raw_bytes = base64.b64decode(body.image_base64, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ApiError(400, "invalid_base64", f"image_base64 is not valid base64: {exc}",
                       "image_base64")
    try:
        image = decode_image(raw_bytes)
    except DecodeError as exc:
        raise ApiError(400, "bad_image", str(exc), "image_base64")
    try:
        meta = MetadataRecord(city=body.city, timestamp=body.timestamp)
        outputs = state.aqi.predict(image, meta)
    except VocabularyError as exc:
        raise ApiError(400, "unknown_city", str(exc), "city")
    aqi = max(outputs["AQI"], 0.0)  # regression can undershoot zero
    result = categorize(aqi)
    return {
        "pollutants": {label: outputs[label] for label in POLLUTANT_LABELS},
        "aqi": aqi,
        "category": result.category.value,
        "out_of_scale": result.out_of_scale,
        "dominant": _dominant_of_predictions(outputs, state),
    }


def _severity_response(body: SeverityPredictRequest, state: ServiceState) -> dict:
    predictor = state.severity
    known = set(predictor.feature_names)
    for name in body.features:
        if name not in known:
            raise ApiError(
                400,
                "unknown_feature",
                f"unknown feature {name!r}; expected {list(predictor.feature_names)}",
                name,
            )
    features = dict(body.features)
    exposure_level = None
    if EXPOSURE_FEATURE in known:
        if EXPOSURE_FEATURE in features:
            exposure_level = int(features[EXPOSURE_FEATURE])
        elif body.aqi is not None:
            try:
                exposure_level = aqi_to_exposure(body.aqi)
            except DomainError as exc:
                raise ApiError(400, "invalid_value", str(exc), "aqi")
            features[EXPOSURE_FEATURE] = exposure_level
    missing = [name for name in predictor.feature_names if name not in features]
    if missing:
        raise ApiError(
            400,
            "missing_feature",
            f"missing features: {missing}; pass them or supply aqi",
            missing[0],
        )
    for name, value in features.items():
        scale = feature_scale(name)
        if scale is not None and not scale[0] <= value <= scale[1]:
            raise ApiError(
                400,
                "invalid_feature",
                f"{name} must lie in {scale[0]}..{scale[1]}, got {value}",
                name,
            )
    severity = predictor.predict(features, model=body.model)
    return {
        "severity": severity,
        "model_used": body.model,
        "exposure_level": exposure_level,
    }


def create_app(
    models_dir: str,
    onnx_path: str | None = None,
    cors_origins: tuple[str, ...] = ("*",),
) -> FastAPI:
    """Load models (failing fast if the directory is unusable) and
    build the application around the resulting snapshot."""
    box = _StateBox(load_state(models_dir, onnx_path=onnx_path))
    app = FastAPI(title="airhealth", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(ApiError)
    async def handle_api_error(_request: Request, exc: ApiError) -> Response:
        return _json(_error_payload(exc.code, exc.message, exc.field), exc.status)

    @app.exception_handler(RequestValidationError)
    async def handle_validation(_request: Request, exc: RequestValidationError) -> Response:
        first = exc.errors()[0] if exc.errors() else {}
        loc = ".".join(str(part) for part in first.get("loc", ()) if part != "body")
        return _json(
            _error_payload("invalid_request", first.get("msg", "invalid request"),
                           loc or None),
            400,
        )

    @app.exception_handler(DomainError)
    async def handle_domain(_request: Request, exc: DomainError) -> Response:
        return _json(_error_payload("invalid_value", str(exc), None), 400)

    @app.get("/health")
    def health() -> Response:
        return _json(_health_payload(box.state))

    @app.get("/schema")
    def schema() -> Response:
        return _json(_schema_payload(box.state))

    @app.post("/predict/aqi")
    def predict_aqi(body: AqiPredictRequest) -> Response:
        has_image = body.image_base64 is not None
        has_readings = body.readings is not None
        if has_image == has_readings:
            raise ApiError(
                400,
                "invalid_request",
                "provide exactly one of image_base64 or readings",
                "image_base64" if has_image else "readings",
            )
        state = box.state
        if has_readings:
            return _json(_aqi_from_readings(body.readings, state))
        return _json(_aqi_from_image(body, state))

    @app.post("/predict/severity")
    def predict_severity(body: SeverityPredictRequest) -> Response:
        return _json(_severity_response(body, box.state))

    @app.post("/admin/reload")
    def reload_models() -> Response:
        box.state = load_state(box.state.models_dir, onnx_path=onnx_path)
        return _json(_health_payload(box.state))

    return app
