import json

import pytest

from streamqa.backends import HttpEmbedder, MockEmbedder, MockGenerator
from streamqa.config import (
    PRESETS,
    BackendConfig,
    build_backends,
    build_engine,
    load_settings,
)
from streamqa.errors import ConfigError


class TestDefaults:
    def test_defaults_without_any_source(self):
        settings = load_settings(env={})
        thresholds = settings.engine.thresholds
        assert (thresholds.tau, thresholds.delta, thresholds.gamma) == (0.75, 0.9, 0.6)
        assert settings.engine.top_k == 5
        assert settings.engine.embedding_dim == 64
        temp = settings.engine.temperature
        assert (temp.scale_k, temp.t_min, temp.t_max, temp.t_default) == (
            250.0, 0.7, 1.2, 0.7)
        assert settings.embedding.kind == "mock"
        assert settings.generation.kind == "mock"
        assert settings.snapshot_path is None
        assert settings.autosave_interval_s is None


class TestPresets:
    def test_strict_reuse_trio(self):
        settings = load_settings(env={}, overrides={"preset": "strict_reuse"})
        thresholds = settings.engine.thresholds
        assert (thresholds.tau, thresholds.delta, thresholds.gamma) == (0.75, 0.9, 0.6)

    def test_eager_reuse_trio(self):
        settings = load_settings(env={}, overrides={"preset": "eager_reuse"})
        thresholds = settings.engine.thresholds
        assert (thresholds.tau, thresholds.delta, thresholds.gamma) == (0.75, 0.8, 0.7)

    def test_both_presets_validate(self):
        for name in PRESETS:
            load_settings(env={}, overrides={"preset": name})

    def test_unknown_preset_rejected(self):
        with pytest.raises(ConfigError, match="preset"):
            load_settings(env={}, overrides={"preset": "party_mode"})

    def test_scalar_beats_preset_within_one_layer(self):
        settings = load_settings(
            env={}, overrides={"preset": "eager_reuse", "gamma": 0.75})
        assert settings.engine.thresholds.gamma == 0.75
        assert settings.engine.thresholds.delta == 0.8

    def test_higher_layer_preset_beats_lower_layer_scalar(self, tmp_path):
        path = tmp_path / "conf.json"
        path.write_text(json.dumps({"delta": 0.95}))
        settings = load_settings(
            str(path), env={}, overrides={"preset": "eager_reuse"})
        assert settings.engine.thresholds.delta == 0.8


class TestFileLayer:
    def write(self, tmp_path, payload):
        path = tmp_path / "conf.json"
        path.write_text(json.dumps(payload) if isinstance(payload, dict) else payload)
        return str(path)

    def test_file_values_applied(self, tmp_path):
        path = self.write(tmp_path, {"tau": 0.7, "delta": 0.85, "top_k": 3})
        settings = load_settings(path, env={})
        assert settings.engine.thresholds.tau == 0.7
        assert settings.engine.thresholds.delta == 0.85
        assert settings.engine.top_k == 3

    def test_unknown_key_named_in_error(self, tmp_path):
        path = self.write(tmp_path, {"tau": 0.7, "taupe": 1})
        with pytest.raises(ConfigError, match="taupe"):
            load_settings(path, env={})

    def test_malformed_json_rejected(self, tmp_path):
        path = self.write(tmp_path, "{not json")
        with pytest.raises(ConfigError, match="JSON"):
            load_settings(path, env={})

    def test_non_object_rejected(self, tmp_path):
        path = self.write(tmp_path, "[1, 2]")
        with pytest.raises(ConfigError, match="object"):
            load_settings(path, env={})

    def test_wrong_type_names_key(self, tmp_path):
        path = self.write(tmp_path, {"tau": "loose"})
        with pytest.raises(ConfigError, match="tau"):
            load_settings(path, env={})

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="read"):
            load_settings(str(tmp_path / "absent.json"), env={})

    def test_integer_float_interplay(self, tmp_path):
        path = self.write(tmp_path, {"port": 9000.0, "gamma": 1})
        settings = load_settings(path, env={})
        assert settings.port == 9000
        assert settings.engine.thresholds.gamma == 1.0

    def test_fractional_int_rejected(self, tmp_path):
        path = self.write(tmp_path, {"top_k": 2.5})
        with pytest.raises(ConfigError, match="top_k"):
            load_settings(path, env={})


class TestEnvLayer:
    def test_env_values_applied(self):
        settings = load_settings(env={"STREAMQA_GAMMA": "0.7",
                                      "STREAMQA_PORT": "9001"})
        assert settings.engine.thresholds.gamma == 0.7
        assert settings.port == 9001

    def test_env_beats_file(self, tmp_path):
        path = tmp_path / "conf.json"
        path.write_text(json.dumps({"gamma": 0.65}))
        settings = load_settings(str(path), env={"STREAMQA_GAMMA": "0.7"})
        assert settings.engine.thresholds.gamma == 0.7

    def test_cli_beats_env(self):
        settings = load_settings(env={"STREAMQA_GAMMA": "0.7"},
                                 overrides={"gamma": 0.65})
        assert settings.engine.thresholds.gamma == 0.65

    def test_unparseable_env_value_names_variable(self):
        with pytest.raises(ConfigError, match="STREAMQA_PORT"):
            load_settings(env={"STREAMQA_PORT": "eighty"})

    def test_unrelated_env_vars_ignored(self):
        settings = load_settings(env={"STREAMQA_NOT_A_KEY": "x", "PATH": "/bin"})
        assert settings.engine.thresholds.tau == 0.75


class TestValidation:
    def test_threshold_ordering_enforced(self):
        with pytest.raises(ConfigError):
            load_settings(env={}, overrides={"tau": 0.9, "delta": 0.8})

    def test_http_backend_requires_url(self):
        with pytest.raises(ConfigError, match="url"):
            load_settings(env={}, overrides={"embedding_backend": "http",
                                             "embedding_model": "m"})

    def test_http_backend_requires_model(self):
        with pytest.raises(ConfigError, match="model"):
            load_settings(env={}, overrides={"embedding_backend": "http",
                                             "embedding_url": "http://x/v1"})

    def test_unknown_backend_kind_rejected(self):
        with pytest.raises(ConfigError, match="kind"):
            BackendConfig(kind="carrier_pigeon")

    def test_unknown_override_key_rejected(self):
        with pytest.raises(ConfigError):
            load_settings(env={}, overrides={"taupe": 1})


class TestBuilders:
    def test_mock_backends_by_default(self):
        settings = load_settings(env={})
        embedder, generator, scorer = build_backends(settings)
        assert isinstance(embedder, MockEmbedder)
        assert isinstance(generator, MockGenerator)
        assert embedder.dim == 64

    def test_mock_seed_flows_through(self):
        settings = load_settings(env={}, overrides={"mock_seed": 9})
        embedder, _, _ = build_backends(settings)
        assert embedder.seed == 9

    def test_http_embedder_built_when_configured(self):
        settings = load_settings(env={}, overrides={
            "embedding_backend": "http",
            "embedding_url": "http://localhost:9999/v1",
            "embedding_model": "embed-small",
        })
        embedder, generator, _ = build_backends(settings)
        assert isinstance(embedder, HttpEmbedder)
        assert isinstance(generator, MockGenerator)

    def test_build_engine_answers_end_to_end(self):
        settings = load_settings(env={}, overrides={"embedding_dim": 32})
        engine = build_engine(settings)
        result, outcome = engine.ask("a smoke test question",
                                     reference="mock reply for a smoke test question")
        assert result.score == 1.0
        assert outcome is not None
