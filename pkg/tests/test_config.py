"""TOML config loading: defaults, overrides, path resolution, and
strict rejection of unknown or mistyped keys."""

import os

import pytest

from airhealth.config import AppConfig, ExtractorConfig, load_config, with_seed
from airhealth.datasets import DEFAULT_PATIENT_FEATURES
from airhealth.errors import ConfigError
from airhealth.imbalance import DEFAULT_TARGETS_1550


def write(tmp_path, text: str) -> str:
    path = os.path.join(str(tmp_path), "cfg.toml")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


FULL = """
seed = 7

[paths]
models_dir = "m"
reports_dir = "r"

[data]
air_csv = "air.csv"
image_root = "imgs"
patient_csv = "/abs/patients.csv"

[features]
patient = ["Age", "Gender", "Smoking"]

[extractor]
type = "synthetic"
seed = 3
grid_size = 2

[train.aqi]
hidden_widths = [16, 12, 10, 8]
dropout = 0.1
epochs = 12
batch_size = 8
learning_rate = 0.02
test_fraction = 0.25

[train.severity]
k = 3
c = 2.0
tol = 0.01
max_passes = 4
test_fraction = 0.3

[resample]
k_neighbors = 3
m_neighbors = 5
extrapolation_step = 0.4

[resample.targets]
1 = 50
2 = 60

[service]
host = "0.0.0.0"
port = 9001
cors_origins = ["http://localhost:5173"]
"""


class TestDefaults:
    def test_no_file_gives_defaults(self):
        cfg = load_config(None)
        assert cfg == AppConfig()
        assert cfg.seed == 0
        assert cfg.patient_features == DEFAULT_PATIENT_FEATURES
        assert cfg.severity.resample_targets == dict(DEFAULT_TARGETS_1550)
        assert cfg.extractor.type == "synthetic"
        assert cfg.port == 8000

    def test_empty_file_gives_defaults(self, tmp_path):
        cfg = load_config(write(tmp_path, ""))
        assert cfg.seed == 0
        assert cfg.aqi.epochs == 200
        assert cfg.severity.k == 5

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="not found"):
            load_config("/no/such/file.toml")


class TestParsing:
    def test_full_file(self, tmp_path):
        cfg = load_config(write(tmp_path, FULL))
        assert cfg.seed == 7
        assert cfg.patient_features == ("Age", "Gender", "Smoking")
        assert cfg.extractor == ExtractorConfig(type="synthetic", seed=3, grid_size=2)
        assert cfg.aqi.hidden_widths == (16, 12, 10, 8)
        assert cfg.aqi.dropout_rate == 0.1
        assert cfg.aqi.epochs == 12
        assert cfg.aqi.learning_rate == 0.02
        assert cfg.aqi.seed == 7
        assert cfg.severity.k == 3
        assert cfg.severity.c == 2.0
        assert cfg.severity.tol == 0.01
        assert cfg.severity.max_passes == 4
        assert cfg.severity.test_fraction == 0.3
        assert cfg.severity.seed == 7
        assert cfg.severity.resample_targets == {1: 50, 2: 60}
        assert cfg.severity.smote.k_neighbors == 3
        assert cfg.severity.smote.m_neighbors == 5
        assert cfg.severity.smote.extrapolation_step == 0.4
        assert cfg.host == "0.0.0.0"
        assert cfg.port == 9001
        assert cfg.cors_origins == ("http://localhost:5173",)

    def test_relative_paths_resolve_against_config_dir(self, tmp_path):
        cfg = load_config(write(tmp_path, FULL))
        assert cfg.models_dir == os.path.join(str(tmp_path), "m")
        assert cfg.air_csv == os.path.join(str(tmp_path), "air.csv")
        assert cfg.image_root == os.path.join(str(tmp_path), "imgs")

    def test_absolute_path_kept(self, tmp_path):
        cfg = load_config(write(tmp_path, FULL))
        assert cfg.patient_csv == "/abs/patients.csv"

    def test_resample_disabled_clears_targets(self, tmp_path):
        cfg = load_config(write(tmp_path, "[resample]\nenabled = false\n"))
        assert cfg.severity.resample_targets is None

    def test_integer_accepted_for_float_key(self, tmp_path):
        cfg = load_config(write(tmp_path, "[train.severity]\nc = 2\n"))
        assert cfg.severity.c == 2.0

    def test_with_seed_rethreads_everywhere(self, tmp_path):
        cfg = with_seed(load_config(write(tmp_path, FULL)), 99)
        assert cfg.seed == 99
        assert cfg.aqi.seed == 99
        assert cfg.severity.seed == 99

    def test_onnx_extractor_path_resolved(self, tmp_path):
        text = '[extractor]\ntype = "onnx"\npath = "vgg.onnx"\noutput_dim = 64\n'
        cfg = load_config(write(tmp_path, text))
        assert cfg.extractor.path == os.path.join(str(tmp_path), "vgg.onnx")
        assert cfg.extractor.output_dim == 64


class TestRejection:
    def test_syntax_error_carries_line_number(self, tmp_path):
        with pytest.raises(ConfigError, match=r"line 2"):
            load_config(write(tmp_path, "seed = 1\nport = \n"))

    def test_unknown_top_level_key(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown config key 'sede'"):
            load_config(write(tmp_path, "sede = 1\n"))

    def test_unknown_section_key(self, tmp_path):
        with pytest.raises(ConfigError, match="train.aqi.lr"):
            load_config(write(tmp_path, "[train.aqi]\nlr = 0.1\n"))

    def test_unknown_service_key(self, tmp_path):
        with pytest.raises(ConfigError, match="service.protocol"):
            load_config(write(tmp_path, '[service]\nprotocol = "h2"\n'))

    def test_bool_rejected_for_int(self, tmp_path):
        with pytest.raises(ConfigError, match="seed must be int"):
            load_config(write(tmp_path, "seed = true\n"))

    def test_string_rejected_for_int(self, tmp_path):
        with pytest.raises(ConfigError, match="port must be int"):
            load_config(write(tmp_path, '[service]\nport = "8000"\n'))

    def test_widths_must_have_four_entries(self, tmp_path):
        with pytest.raises(ConfigError, match="exactly 4"):
            load_config(write(tmp_path, "[train.aqi]\nhidden_widths = [8, 8]\n"))

    def test_widths_must_be_integers(self, tmp_path):
        with pytest.raises(ConfigError, match="list of integers"):
            load_config(write(tmp_path, "[train.aqi]\nhidden_widths = [8.5, 8, 8, 8]\n"))

    def test_features_must_be_strings(self, tmp_path):
        with pytest.raises(ConfigError, match="list of strings"):
            load_config(write(tmp_path, "[features]\npatient = [1, 2]\n"))

    def test_bad_extractor_type(self, tmp_path):
        with pytest.raises(ConfigError, match="extractor.type"):
            load_config(write(tmp_path, '[extractor]\ntype = "resnet"\n'))

    def test_onnx_requires_path(self, tmp_path):
        with pytest.raises(ConfigError, match="extractor.path is required"):
            load_config(write(tmp_path, '[extractor]\ntype = "onnx"\n'))

    def test_targets_keys_must_be_integers(self, tmp_path):
        text = "[resample]\n[resample.targets]\nlow = 5\n"
        with pytest.raises(ConfigError, match="integer class labels"):
            load_config(write(tmp_path, text))

    def test_targets_counts_must_be_integers(self, tmp_path):
        text = "[resample]\n[resample.targets]\n1 = 5.5\n"
        with pytest.raises(ConfigError, match="integer count"):
            load_config(write(tmp_path, text))
