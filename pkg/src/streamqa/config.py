"""Settings: defaults, presets, config file, environment, CLI overrides.

Sources are applied lowest to highest: built-in defaults, then the JSON
config file, then ``STREAMQA_*`` environment variables, then explicit CLI
values. Within each source a named preset is expanded first and that
source's own scalar keys are laid on top, so naming a preset at a higher
layer deliberately replaces threshold tweaks made at a lower one.

The config file is a single flat JSON object; every key has the same name
as its ``STREAMQA_`` variable, lowercased.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .backends import (
    HttpEmbedder,
    HttpGenerator,
    LexicalOverlapScorer,
    MockEmbedder,
    MockGenerator,
)
from .core import EngineConfig, TemperatureConfig, Thresholds
from .engine import Engine
from .errors import ConfigError
from .prompts import DEFAULT_ROLE

PRESETS: dict[str, dict[str, float]] = {
    "strict_reuse": {"tau": 0.75, "delta": 0.9, "gamma": 0.6},
    "eager_reuse": {"tau": 0.75, "delta": 0.8, "gamma": 0.7},
}

ENV_PREFIX = "STREAMQA_"

# key -> (type, default); empty string and 0.0 mean "unset" for optional keys
_SCHEMA: dict[str, tuple[type, object]] = {
    "preset": (str, ""),
    "tau": (float, 0.75),
    "delta": (float, 0.9),
    "gamma": (float, 0.6),
    "top_k": (int, 5),
    "embedding_dim": (int, 64),
    "temperature_scale_k": (float, 250.0),
    "temperature_min": (float, 0.7),
    "temperature_max": (float, 1.2),
    "temperature_default": (float, 0.7),
    "role": (str, DEFAULT_ROLE),
    "embedding_backend": (str, "mock"),
    "embedding_url": (str, ""),
    "embedding_model": (str, ""),
    "embedding_api_key_env": (str, ""),
    "embedding_timeout_s": (float, 30.0),
    "generation_backend": (str, "mock"),
    "generation_url": (str, ""),
    "generation_model": (str, ""),
    "generation_api_key_env": (str, ""),
    "generation_timeout_s": (float, 60.0),
    "mock_seed": (int, 0),
    "host": (str, "127.0.0.1"),
    "port": (int, 8080),
    "snapshot_path": (str, ""),
    "autosave_interval_s": (float, 0.0),
}


@dataclass(frozen=True)
class BackendConfig:
    kind: str
    url: str = ""
    model: str = ""
    api_key_env: str | None = None
    timeout_s: float = 30.0

    def __post_init__(self):
        if self.kind not in ("mock", "http"):
            raise ConfigError(f"backend kind must be mock or http, got {self.kind!r}")
        if self.kind == "http":
            if not self.url:
                raise ConfigError("http backend requires a url")
            if not self.model:
                raise ConfigError("http backend requires a model name")


@dataclass(frozen=True)
class Settings:
    engine: EngineConfig
    embedding: BackendConfig
    generation: BackendConfig
    role: str = DEFAULT_ROLE
    mock_seed: int = 0
    host: str = "127.0.0.1"
    port: int = 8080
    snapshot_path: str | None = None
    autosave_interval_s: float | None = None


def _coerce(key: str, raw, source: str):
    want, _ = _SCHEMA[key]
    try:
        if want is float and isinstance(raw, bool):
            raise ValueError("boolean")
        if want is int and isinstance(raw, bool):
            raise ValueError("boolean")
        if want is int and isinstance(raw, float) and not raw.is_integer():
            raise ValueError("not an integer")
        return want(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(
            f"{source}: cannot read {key!r} as {want.__name__} ({exc})") from exc


def _file_layer(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = sorted(set(raw) - set(_SCHEMA))
    if unknown:
        raise ConfigError(f"config file {path}: unknown keys {', '.join(unknown)}")
    return {key: _coerce(key, value, f"config file {path}")
            for key, value in raw.items()}


def _env_layer(env) -> dict:
    layer = {}
    for key in _SCHEMA:
        raw = env.get(ENV_PREFIX + key.upper())
        if raw is not None:
            layer[key] = _coerce(key, raw, f"environment {ENV_PREFIX}{key.upper()}")
    return layer


def _cli_layer(overrides: dict | None) -> dict:
    layer = {}
    for key, value in (overrides or {}).items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown setting {key!r}")
        if value is not None:
            layer[key] = _coerce(key, value, "command line")
    return layer


def _apply_layer(values: dict, layer: dict) -> None:
    preset = layer.get("preset", "")
    if preset:
        if preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {preset!r}; choose from {', '.join(sorted(PRESETS))}")
        values.update(PRESETS[preset])
        values["preset"] = preset
    for key, value in layer.items():
        if key != "preset":
            values[key] = value


def load_settings(config_path: str | None = None, *, env=None,
                  overrides: dict | None = None) -> Settings:
    values = {key: default for key, (_, default) in _SCHEMA.items()}
    layers = []
    if config_path:
        layers.append(_file_layer(config_path))
    layers.append(_env_layer(os.environ if env is None else env))
    layers.append(_cli_layer(overrides))
    for layer in layers:
        _apply_layer(values, layer)

    engine_config = EngineConfig(
        thresholds=Thresholds(tau=values["tau"], delta=values["delta"],
                              gamma=values["gamma"]),
        temperature=TemperatureConfig(
            scale_k=values["temperature_scale_k"],
            t_min=values["temperature_min"],
            t_max=values["temperature_max"],
            t_default=values["temperature_default"]),
        top_k=values["top_k"],
        embedding_dim=values["embedding_dim"],
    )
    embedding = BackendConfig(
        kind=values["embedding_backend"], url=values["embedding_url"],
        model=values["embedding_model"],
        api_key_env=values["embedding_api_key_env"] or None,
        timeout_s=values["embedding_timeout_s"])
    generation = BackendConfig(
        kind=values["generation_backend"], url=values["generation_url"],
        model=values["generation_model"],
        api_key_env=values["generation_api_key_env"] or None,
        timeout_s=values["generation_timeout_s"])
    return Settings(
        engine=engine_config,
        embedding=embedding,
        generation=generation,
        role=values["role"],
        mock_seed=values["mock_seed"],
        host=values["host"],
        port=values["port"],
        snapshot_path=values["snapshot_path"] or None,
        autosave_interval_s=values["autosave_interval_s"] or None,
    )


def build_backends(settings: Settings):
    dim = settings.engine.embedding_dim
    if settings.embedding.kind == "mock":
        embedder = MockEmbedder(dim=dim, seed=settings.mock_seed)
    else:
        embedder = HttpEmbedder(
            settings.embedding.url, settings.embedding.model, dim,
            api_key_env=settings.embedding.api_key_env,
            timeout_s=settings.embedding.timeout_s)
    if settings.generation.kind == "mock":
        generator = MockGenerator()
    else:
        generator = HttpGenerator(
            settings.generation.url, settings.generation.model,
            api_key_env=settings.generation.api_key_env,
            timeout_s=settings.generation.timeout_s)
    return embedder, generator, LexicalOverlapScorer()


def build_engine(settings: Settings) -> Engine:
    embedder, generator, scorer = build_backends(settings)
    return Engine(settings.engine, embedder, generator, scorer,
                  role=settings.role)
