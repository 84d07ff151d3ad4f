"""Request bodies for the prediction endpoints."""

from datetime import datetime
from typing import Literal

from pydantic import BaseModel, ConfigDict


class AqiPredictRequest(BaseModel):
    """Exactly one of image_base64 or readings must be given; city and
    timestamp are required on the image path."""

    model_config = ConfigDict(extra="forbid")

    image_base64: str | None = None
    readings: dict[str, float] | None = None
    city: str | None = None
    timestamp: datetime | None = None


class SeverityPredictRequest(BaseModel):
    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    features: dict[str, int]
    aqi: float | None = None
    model: Literal["knn", "svc"] = "knn"
