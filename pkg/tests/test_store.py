"""Artifact serialization: bit-exact round trips and corruption checks."""

import json
import os

import numpy as np
import pytest

from airhealth.datasets import NormalizationSpec
from airhealth.errors import ArtifactError, ChecksumError, SchemaVersionError
from airhealth.imbalance import LabeledDataset
from airhealth.nn import BatchNormLayer, MlpRegressor, Mode
from airhealth.severity import (
    KernelSpec,
    SvcConfig,
    knn_fit,
    svc_fit,
)
from airhealth.store import (
    MANIFEST_NAME,
    WEIGHTS_NAME,
    load_knn,
    load_regressor,
    load_svc,
    read_artifact,
    save_knn,
    save_regressor,
    save_svc,
    write_artifact,
)
from airhealth.tensor import seeded_rng


def small_dataset(seed=0, n=24, dim=3, classes=(1, 2, 3)):
    rng = np.random.default_rng(seed)
    labels = np.array([classes[i % len(classes)] for i in range(n)])
    features = rng.normal(size=(n, dim)) + 6.0 * labels[:, None]
    return LabeledDataset(features, labels)


class TestRawArtifact:
    def test_round_trip_values_and_dtypes(self, tmp_path):
        arrays = {
            "floats": np.array([[1.5, -2.25], [0.0, 1e-300]]),
            "ints": np.array([3, -4, 5], dtype=np.int64),
            "empty": np.empty((0, 7)),
        }
        write_artifact(str(tmp_path), "demo", {"note": 1}, arrays)
        art = read_artifact(str(tmp_path))
        assert art.kind == "demo"
        assert art.meta == {"note": 1}
        for name, arr in arrays.items():
            got = art.arrays[name]
            assert got.shape == arr.shape
            assert got.dtype.kind == arr.dtype.kind
            assert got.tobytes() == np.ascontiguousarray(arr).tobytes()

    def test_write_is_deterministic(self, tmp_path):
        arrays = {"w": np.arange(6.0).reshape(2, 3)}
        a, b = tmp_path / "a", tmp_path / "b"
        write_artifact(str(a), "demo", {"x": 2}, arrays)
        write_artifact(str(b), "demo", {"x": 2}, arrays)
        assert (a / MANIFEST_NAME).read_bytes() == (b / MANIFEST_NAME).read_bytes()
        assert (a / WEIGHTS_NAME).read_bytes() == (b / WEIGHTS_NAME).read_bytes()

    def test_no_temp_files_left(self, tmp_path):
        write_artifact(str(tmp_path), "demo", {}, {"w": np.ones(4)})
        assert sorted(os.listdir(tmp_path)) == [MANIFEST_NAME, WEIGHTS_NAME]

    def test_flipped_byte_detected(self, tmp_path):
        write_artifact(str(tmp_path), "demo", {}, {"w": np.ones(4)})
        blob = bytearray((tmp_path / WEIGHTS_NAME).read_bytes())
        blob[5] ^= 0xFF
        (tmp_path / WEIGHTS_NAME).write_bytes(bytes(blob))
        with pytest.raises(ChecksumError):
            read_artifact(str(tmp_path))

    def test_future_schema_version_rejected(self, tmp_path):
        write_artifact(str(tmp_path), "demo", {}, {"w": np.ones(2)})
        manifest = json.loads((tmp_path / MANIFEST_NAME).read_text())
        manifest["schema_version"] = 99
        (tmp_path / MANIFEST_NAME).write_text(json.dumps(manifest))
        with pytest.raises(SchemaVersionError):
            read_artifact(str(tmp_path))

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ArtifactError):
            read_artifact(str(tmp_path / "nowhere"))

    def test_missing_weights(self, tmp_path):
        write_artifact(str(tmp_path), "demo", {}, {"w": np.ones(2)})
        os.remove(tmp_path / WEIGHTS_NAME)
        with pytest.raises(ArtifactError):
            read_artifact(str(tmp_path))

    def test_garbled_manifest(self, tmp_path):
        write_artifact(str(tmp_path), "demo", {}, {})
        (tmp_path / MANIFEST_NAME).write_text("{not json")
        with pytest.raises(ArtifactError):
            read_artifact(str(tmp_path))

    def test_kind_mismatch(self, tmp_path):
        write_artifact(str(tmp_path), "demo", {}, {})
        with pytest.raises(ArtifactError):
            read_artifact(str(tmp_path), expected_kind="other")

    def test_unsupported_dtype_rejected(self, tmp_path):
        with pytest.raises(ArtifactError):
            write_artifact(str(tmp_path), "demo", {}, {"w": np.array(["a", "b"])})

    def test_loaded_arrays_are_writable_copies(self, tmp_path):
        write_artifact(str(tmp_path), "demo", {}, {"w": np.ones(3)})
        art = read_artifact(str(tmp_path))
        art.arrays["w"][0] = 5.0
        again = read_artifact(str(tmp_path))
        assert again.arrays["w"][0] == 1.0


class TestRegressorCodec:
    def test_eval_predictions_bit_identical(self, tmp_path):
        model = MlpRegressor.create(input_dim=9, hidden_widths=(16, 12, 10, 8), seed=3)
        # give batch-norm non-trivial running stats before saving
        x = seeded_rng(1).normal(size=(32, 9))
        model.forward(x, mode=Mode.TRAIN, rng=seeded_rng(2))
        save_regressor(str(tmp_path), model)
        loaded, _ = load_regressor(str(tmp_path))
        before, _, _ = model.forward(x, mode=Mode.EVAL)
        after, _, _ = loaded.forward(x, mode=Mode.EVAL)
        assert before.tobytes() == after.tobytes()

    def test_every_parameter_restored_exactly(self, tmp_path):
        model = MlpRegressor.create(input_dim=5, hidden_widths=(8, 8, 8, 8), seed=7)
        save_regressor(str(tmp_path), model)
        loaded, _ = load_regressor(str(tmp_path))
        theirs = loaded.parameters()
        for key, arr in model.parameters().items():
            assert theirs[key].tobytes() == arr.tobytes()
        for mine, other in zip(model.layers, loaded.layers):
            assert type(mine) is type(other)
            if isinstance(mine, BatchNormLayer):
                assert other.running_mean.array.tobytes() == mine.running_mean.array.tobytes()
                assert other.running_var.array.tobytes() == mine.running_var.array.tobytes()
                assert other.epsilon == mine.epsilon

    def test_extra_payload_round_trips(self, tmp_path):
        model = MlpRegressor.create(input_dim=4, hidden_widths=(6, 6, 6, 6), seed=0)
        extra = {"target_center": np.array([1.0, 2.0]), "target_scale": np.array([3.0, 4.0])}
        save_regressor(str(tmp_path), model, extra_meta={"extractor": "synthetic-0-g4"},
                       extra_arrays=extra)
        _, artifact = load_regressor(str(tmp_path))
        assert artifact.meta["extra"]["extractor"] == "synthetic-0-g4"
        assert artifact.arrays["target_center"].tolist() == [1.0, 2.0]

    def test_extra_array_name_collision_rejected(self, tmp_path):
        model = MlpRegressor.create(input_dim=4, hidden_widths=(6, 6, 6, 6), seed=0)
        with pytest.raises(ArtifactError):
            save_regressor(str(tmp_path), model, extra_arrays={"layer0.weights": np.ones(2)})


class TestKnnCodec:
    def test_round_trip_predictions(self, tmp_path):
        data = small_dataset()
        model = knn_fit(data, k=3)
        spec = NormalizationSpec(minima=np.zeros(3), maxima=np.ones(3))
        save_knn(str(tmp_path), model, spec=spec)
        loaded, loaded_spec, names = load_knn(str(tmp_path))
        assert names is None
        assert loaded.k == 3
        assert loaded.points.tobytes() == model.points.tobytes()
        assert loaded.labels.tolist() == model.labels.tolist()
        assert loaded_spec is not None
        assert loaded_spec.minima.tolist() == [0.0, 0.0, 0.0]
        probes = np.random.default_rng(9).normal(size=(5, 3)) + 12.0
        assert loaded.predict_batch(probes).tolist() == model.predict_batch(probes).tolist()

    def test_spec_optional(self, tmp_path):
        model = knn_fit(small_dataset(), k=1)
        save_knn(str(tmp_path), model)
        _, spec, _ = load_knn(str(tmp_path))
        assert spec is None

    def test_feature_names_round_trip(self, tmp_path):
        model = knn_fit(small_dataset(), k=1)
        save_knn(str(tmp_path), model, feature_names=["a", "b", "c"])
        _, _, names = load_knn(str(tmp_path))
        assert names == ("a", "b", "c")


class TestSvcCodec:
    def test_round_trip_decisions_bit_identical(self, tmp_path):
        data = small_dataset(seed=2)
        model = svc_fit(data, SvcConfig(c=10.0, seed=1))
        save_svc(str(tmp_path), model)
        loaded, _, _ = load_svc(str(tmp_path))
        assert loaded.classes == model.classes
        assert set(loaded.machines) == set(model.machines)
        probes = np.random.default_rng(3).normal(size=(8, 3)) + 9.0
        for pair, machine in model.machines.items():
            other = loaded.machines[pair]
            assert other.bias == machine.bias
            assert other.kernel == machine.kernel
            assert other.support_vectors.tobytes() == machine.support_vectors.tobytes()
            assert other.dual_coef.tobytes() == machine.dual_coef.tobytes()
            assert other.support_indices.tolist() == machine.support_indices.tolist()
            assert (
                other.decision_function(probes).tobytes()
                == machine.decision_function(probes).tobytes()
            )
        assert loaded.predict_batch(probes).tolist() == model.predict_batch(probes).tolist()

    def test_linear_kernel_round_trip(self, tmp_path):
        data = small_dataset(seed=4, classes=(2, 5))
        model = svc_fit(data, SvcConfig(c=1.0, kernel=KernelSpec.linear(), seed=0))
        save_svc(str(tmp_path), model)
        loaded, _, _ = load_svc(str(tmp_path))
        assert loaded.machines[(2, 5)].kernel.kind == "linear"
