"""On-disk model artifacts.

An artifact is a directory holding exactly two files:

  manifest.json   schema version, artifact kind, JSON metadata, and an
                  index of every array (name, dtype, shape, byte offset)
  weights.bin     the arrays themselves, concatenated little-endian

The weights file's sha256 is recorded in the manifest and re-checked on
load. Writes go through temporary files renamed into place, so a crash
never leaves a half-written artifact under the final names. Saving the
same model twice produces byte-identical files.
"""

import hashlib
import json
import math
import os
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .datasets import NormalizationSpec
from .errors import ArtifactError, ChecksumError, DomainError, SchemaVersionError
from .nn import BatchNormLayer, DenseLayer, DropoutLayer, MlpRegressor, ReluLayer
from .severity import BinarySvm, KernelSpec, KnnModel, SvcConfig, SvcModel
from .tensor import Tensor

SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"
WEIGHTS_NAME = "weights.bin"

# every array is stored in one of these explicit little-endian dtypes
_DTYPES = {"<f8", "<i8"}


@dataclass(frozen=True)
class Artifact:
    """Decoded artifact: kind tag, JSON metadata, named arrays."""

    kind: str
    meta: dict
    arrays: dict[str, np.ndarray]


def _storage_dtype(arr: np.ndarray) -> str:
    if arr.dtype.kind == "f":
        return "<f8"
    if arr.dtype.kind == "i":
        return "<i8"
    raise ArtifactError(f"cannot store array of dtype {arr.dtype}")


def _atomic_write(path: str, payload: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def write_artifact(
    directory: str, kind: str, meta: Mapping, arrays: Mapping[str, np.ndarray]
) -> None:
    """Serialize `arrays` plus `meta` under `directory`, creating it if
    needed. Array insertion order fixes the file layout."""
    os.makedirs(directory, exist_ok=True)
    index = []
    chunks = []
    offset = 0
    for name, raw in arrays.items():
        arr = np.asarray(raw)
        dtype = _storage_dtype(arr)
        data = np.ascontiguousarray(arr.astype(dtype, copy=False)).tobytes()
        index.append(
            {"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": offset}
        )
        chunks.append(data)
        offset += len(data)
    blob = b"".join(chunks)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "meta": dict(meta),
        "arrays": index,
        "weights_sha256": hashlib.sha256(blob).hexdigest(),
    }
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    # weights first: the manifest is the commit point
    _atomic_write(os.path.join(directory, WEIGHTS_NAME), blob)
    _atomic_write(os.path.join(directory, MANIFEST_NAME), text.encode("utf-8"))


def read_artifact(directory: str, expected_kind: str | None = None) -> Artifact:
    manifest_path = os.path.join(directory, MANIFEST_NAME)
    weights_path = os.path.join(directory, WEIGHTS_NAME)
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise ArtifactError(f"no manifest at {manifest_path}") from None
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"manifest at {manifest_path} is not valid JSON: {exc}")
    if not isinstance(manifest, dict):
        raise ArtifactError("manifest must be a JSON object")

    version = manifest.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"artifact schema version {version!r} is not supported "
            f"(expected {SCHEMA_VERSION})"
        )
    kind = manifest.get("kind")
    if expected_kind is not None and kind != expected_kind:
        raise ArtifactError(f"expected a {expected_kind!r} artifact, found {kind!r}")

    try:
        with open(weights_path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError:
        raise ArtifactError(f"no weights file at {weights_path}") from None
    digest = hashlib.sha256(blob).hexdigest()
    if digest != manifest.get("weights_sha256"):
        raise ChecksumError(
            f"weights checksum mismatch in {directory}: manifest says "
            f"{manifest.get('weights_sha256')}, file hashes to {digest}"
        )

    arrays: dict[str, np.ndarray] = {}
    for entry in manifest.get("arrays", []):
        name, dtype, shape = entry["name"], entry["dtype"], tuple(entry["shape"])
        if dtype not in _DTYPES:
            raise ArtifactError(f"array {name!r} has unsupported dtype {dtype!r}")
        count = math.prod(shape)
        start = entry["offset"]
        end = start + count * 8
        if end > len(blob):
            raise ArtifactError(f"array {name!r} runs past the end of the weights file")
        arrays[name] = (
            np.frombuffer(blob, dtype=dtype, count=count, offset=start)
            .reshape(shape)
            .copy()
        )
    return Artifact(kind=str(kind), meta=manifest.get("meta", {}), arrays=arrays)


# ---------------------------------------------------------------------------
# Regressor codec.

_REGRESSOR_KIND = "aqi-regressor"


def save_regressor(
    directory: str, model: MlpRegressor, extra_meta: Mapping | None = None,
    extra_arrays: Mapping[str, np.ndarray] | None = None,
) -> None:
    """Persist the full layer stack, including batch-norm running
    statistics, so eval-mode predictions reload bit-exact. `extra_*`
    let callers bundle pipeline state (e.g. feature scaling) alongside."""
    layer_specs = []
    arrays: dict[str, np.ndarray] = {}
    for i, layer in enumerate(model.layers):
        if isinstance(layer, DenseLayer):
            layer_specs.append({"type": "dense"})
            arrays[f"layer{i}.weights"] = layer.weights.array
            arrays[f"layer{i}.bias"] = layer.bias.array
        elif isinstance(layer, BatchNormLayer):
            layer_specs.append(
                {"type": "batchnorm", "epsilon": layer.epsilon, "momentum": layer.momentum}
            )
            arrays[f"layer{i}.gamma"] = layer.gamma.array
            arrays[f"layer{i}.beta"] = layer.beta.array
            arrays[f"layer{i}.running_mean"] = layer.running_mean.array
            arrays[f"layer{i}.running_var"] = layer.running_var.array
        elif isinstance(layer, ReluLayer):
            layer_specs.append({"type": "relu"})
        elif isinstance(layer, DropoutLayer):
            layer_specs.append({"type": "dropout", "rate": layer.rate})
        else:
            raise ArtifactError(f"cannot serialize layer of type {type(layer).__name__}")
    meta = {"input_dim": model.input_dim, "layers": layer_specs}
    if extra_meta:
        meta["extra"] = dict(extra_meta)
    if extra_arrays:
        overlap = set(extra_arrays) & set(arrays)
        if overlap:
            raise ArtifactError(f"extra array names collide with layers: {sorted(overlap)}")
        arrays.update({k: np.asarray(v) for k, v in extra_arrays.items()})
    write_artifact(directory, _REGRESSOR_KIND, meta, arrays)


def load_regressor(directory: str) -> tuple[MlpRegressor, Artifact]:
    """Rebuild the regressor; the raw artifact rides along so callers
    can pick up any extra arrays they stored."""
    artifact = read_artifact(directory, expected_kind=_REGRESSOR_KIND)
    layers: list = []
    for i, spec in enumerate(artifact.meta["layers"]):
        kind = spec["type"]
        if kind == "dense":
            layers.append(
                DenseLayer(
                    Tensor(artifact.arrays[f"layer{i}.weights"]),
                    Tensor(artifact.arrays[f"layer{i}.bias"]),
                )
            )
        elif kind == "batchnorm":
            layers.append(
                BatchNormLayer(
                    Tensor(artifact.arrays[f"layer{i}.gamma"]),
                    Tensor(artifact.arrays[f"layer{i}.beta"]),
                    running_mean=Tensor(artifact.arrays[f"layer{i}.running_mean"]),
                    running_var=Tensor(artifact.arrays[f"layer{i}.running_var"]),
                    epsilon=spec["epsilon"],
                    momentum=spec["momentum"],
                )
            )
        elif kind == "relu":
            layers.append(ReluLayer())
        elif kind == "dropout":
            layers.append(DropoutLayer(spec["rate"]))
        else:
            raise ArtifactError(f"unknown layer type {kind!r} in manifest")
    model = MlpRegressor(layers, input_dim=artifact.meta["input_dim"])
    return model, artifact


# ---------------------------------------------------------------------------
# Severity classifier codecs.

_KNN_KIND = "severity-knn"
_SVC_KIND = "severity-svc"


def _spec_meta(spec: NormalizationSpec | None) -> dict:
    return {"has_normalization": spec is not None}


def _spec_arrays(spec: NormalizationSpec | None) -> dict[str, np.ndarray]:
    if spec is None:
        return {}
    return {"norm.minima": spec.minima, "norm.maxima": spec.maxima}


def _spec_from(artifact: Artifact) -> NormalizationSpec | None:
    if not artifact.meta.get("has_normalization"):
        return None
    return NormalizationSpec(
        minima=artifact.arrays["norm.minima"], maxima=artifact.arrays["norm.maxima"]
    )


def _names_meta(feature_names: Sequence[str] | None) -> dict:
    if feature_names is None:
        return {}
    return {"feature_names": list(feature_names)}


def _names_from(artifact: Artifact) -> tuple[str, ...] | None:
    names = artifact.meta.get("feature_names")
    return tuple(names) if names is not None else None


def save_knn(
    directory: str,
    model: KnnModel,
    spec: NormalizationSpec | None = None,
    feature_names: Sequence[str] | None = None,
) -> None:
    meta = {"k": model.k, **_spec_meta(spec), **_names_meta(feature_names)}
    arrays = {"points": model.points, "labels": model.labels, **_spec_arrays(spec)}
    write_artifact(directory, _KNN_KIND, meta, arrays)


def load_knn(
    directory: str,
) -> tuple[KnnModel, NormalizationSpec | None, tuple[str, ...] | None]:
    artifact = read_artifact(directory, expected_kind=_KNN_KIND)
    model = KnnModel(
        points=artifact.arrays["points"],
        labels=artifact.arrays["labels"],
        k=artifact.meta["k"],
    )
    return model, _spec_from(artifact), _names_from(artifact)


def _kernel_meta(kernel: KernelSpec) -> dict:
    return {"kind": kernel.kind, "gamma": kernel.gamma}


def _kernel_from(meta: dict) -> KernelSpec:
    return KernelSpec(kind=meta["kind"], gamma=meta["gamma"])


def save_svc(
    directory: str,
    model: SvcModel,
    spec: NormalizationSpec | None = None,
    feature_names: Sequence[str] | None = None,
) -> None:
    pairs_meta = []
    arrays: dict[str, np.ndarray] = {}
    for j, pair in enumerate(sorted(model.machines)):
        svm = model.machines[pair]
        pairs_meta.append(
            {
                "classes": list(pair),
                "bias": svm.bias,
                "kernel": _kernel_meta(svm.kernel),
            }
        )
        arrays[f"svm{j}.support_vectors"] = svm.support_vectors
        arrays[f"svm{j}.dual_coef"] = svm.dual_coef
        arrays[f"svm{j}.support_indices"] = np.asarray(
            svm.support_indices, dtype=np.int64
        )
    config = model.config
    if config.kernel is None:
        raise DomainError("a fitted classifier must carry a resolved kernel")
    meta = {
        "classes": list(model.classes),
        "config": {
            "c": config.c,
            "tol": config.tol,
            "max_passes": config.max_passes,
            "seed": config.seed,
            "kernel": _kernel_meta(config.kernel),
        },
        "pairs": pairs_meta,
        **_spec_meta(spec),
        **_names_meta(feature_names),
    }
    write_artifact(directory, _SVC_KIND, meta, {**arrays, **_spec_arrays(spec)})


def load_svc(
    directory: str,
) -> tuple[SvcModel, NormalizationSpec | None, tuple[str, ...] | None]:
    artifact = read_artifact(directory, expected_kind=_SVC_KIND)
    cfg_meta = artifact.meta["config"]
    config = SvcConfig(
        c=cfg_meta["c"],
        kernel=_kernel_from(cfg_meta["kernel"]),
        tol=cfg_meta["tol"],
        max_passes=cfg_meta["max_passes"],
        seed=cfg_meta["seed"],
    )
    machines = {}
    for j, pair_meta in enumerate(artifact.meta["pairs"]):
        a, b = pair_meta["classes"]
        machines[(a, b)] = BinarySvm(
            support_vectors=artifact.arrays[f"svm{j}.support_vectors"],
            dual_coef=artifact.arrays[f"svm{j}.dual_coef"],
            bias=pair_meta["bias"],
            kernel=_kernel_from(pair_meta["kernel"]),
            support_indices=artifact.arrays[f"svm{j}.support_indices"].astype(np.intp),
        )
    model = SvcModel(classes=artifact.meta["classes"], machines=machines, config=config)
    return model, _spec_from(artifact), _names_from(artifact)
