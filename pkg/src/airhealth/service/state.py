"""Loaded-model snapshot shared by all request handlers.

A snapshot is immutable; reload builds a complete new one and swaps the
reference in a single assignment, so every request sees one coherent
set of models.
"""

import os
from dataclasses import dataclass

from ..aqi import BreakpointTable, default_table
from ..errors import ArtifactError
from ..pipeline import (
    AqiPredictor,
    SeverityPredictor,
    load_aqi_pipeline,
    load_severity_pipeline,
)

AQI_SUBDIR = "aqi"
SEVERITY_SUBDIR = "severity"


@dataclass(frozen=True)
class ServiceState:
    aqi: AqiPredictor
    severity: SeverityPredictor
    table: BreakpointTable
    models_dir: str

    def model_names(self) -> dict[str, str]:
        return {
            "aqi": f"mlp[{self.aqi.extractor.name}]",
            "knn": f"knn[k={self.severity.knn.k}]",
            "svc": f"svc[{self.severity.svc.config.kernel.kind}]",
        }


def load_state(models_dir: str, onnx_path: str | None = None) -> ServiceState:
    if not os.path.isdir(models_dir):
        raise ArtifactError(f"model directory {models_dir!r} does not exist")
    return ServiceState(
        aqi=load_aqi_pipeline(os.path.join(models_dir, AQI_SUBDIR), onnx_path=onnx_path),
        severity=load_severity_pipeline(os.path.join(models_dir, SEVERITY_SUBDIR)),
        table=default_table(),
        models_dir=models_dir,
    )
