"""Pipeline configuration: one YAML file, strict keys, env interpolation, digest."""

from __future__ import annotations

import dataclasses
import os
import re
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import yaml

from .backends import (
    Backends,
    MockExtractor,
    MockFeatures,
    MockGenerator,
    MockPerceptual,
    MockPolicy,
    MockScorer,
    ScriptedOracle,
)
from .control_maps import NativeCannyExtractor
from .curation import DEFAULT_BLOCKLIST, DEFAULT_TARGET_PER_TYPE
from .errors import ConfigurationError
from .selection import DEFAULT_K
from .training import TrainConfig
from .utils import json_digest


@dataclass
class BackendSpec:
    adapter: str = "mock"
    params: dict = field(default_factory=dict)


@dataclass
class BackendsConfig:
    policy: BackendSpec = field(default_factory=BackendSpec)
    generator: BackendSpec = field(default_factory=BackendSpec)
    scorer: BackendSpec = field(default_factory=lambda: BackendSpec("mock", {"raw_range": [0.0, 30.0], "salt": "semantic"}))
    alignment_scorer: BackendSpec = field(
        default_factory=lambda: BackendSpec("mock", {"raw_range": [-1.0, 1.0], "salt": "alignment"})
    )
    perceptual: BackendSpec = field(default_factory=BackendSpec)
    extractor: BackendSpec = field(default_factory=BackendSpec)
    oracle: BackendSpec = field(default_factory=BackendSpec)
    features: BackendSpec = field(default_factory=lambda: BackendSpec("mock", {"dim": 16}))


@dataclass
class CurationConfig:
    blocklist: list = field(default_factory=lambda: list(DEFAULT_BLOCKLIST))
    target_per_type: int = DEFAULT_TARGET_PER_TYPE
    concurrency: int = 8
    retries: int = 3
    backoff: float = 0.5


@dataclass
class SFTSection:
    learning_rate: float = 5e-6
    batch_size: int = 6
    steps: int | None = None
    epochs: int = 1


@dataclass
class RFTSection:
    group_size: int = 12
    kl_coefficient: float = 0.04
    learning_rate: float = 1e-5
    batch_size: int = 1
    steps: int | None = 2400
    temperature: float = 1.0
    epsilon: float = 1e-8
    clip_ratio: float | None = None
    # "init": snapshot of the starting policy; "base": a fresh base policy;
    # anything else is a checkpoint metadata path.
    reference: str | None = None


@dataclass
class TrainingConfig:
    sft: SFTSection = field(default_factory=SFTSection)
    rft: RFTSection = field(default_factory=RFTSection)


@dataclass
class InferenceSection:
    k: int = DEFAULT_K
    temperature: float = 1.0
    retry_budget: int = 3
    semantic_weight: float = 1.0
    structural_weight: float = 1.0
    normalize: bool = False
    fallback_to_original: bool = True


@dataclass
class MetricsConfig:
    edge_tolerance: int = 0
    scale100: bool = True


@dataclass
class PipelineConfig:
    seed: int = 0
    backends: BackendsConfig = field(default_factory=BackendsConfig)
    curation: CurationConfig = field(default_factory=CurationConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    inference: InferenceSection = field(default_factory=InferenceSection)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    digest: str = field(default="", compare=False)

    def sft_train_config(self, seed: int | None = None) -> TrainConfig:
        s = self.training.sft
        return TrainConfig.sft_defaults(
            learning_rate=s.learning_rate, batch_size=s.batch_size, steps=s.steps,
            epochs=s.epochs, seed=self.seed if seed is None else seed,
        )  # fmt: skip

    def rft_train_config(self, seed: int | None = None) -> TrainConfig:
        r = self.training.rft
        return TrainConfig.rft_defaults(
            group_size=r.group_size, kl_coefficient=r.kl_coefficient, learning_rate=r.learning_rate,
            batch_size=r.batch_size, steps=r.steps, temperature=r.temperature,
            epsilon=r.epsilon, clip_ratio=r.clip_ratio, seed=self.seed if seed is None else seed,
        )  # fmt: skip


_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}")


def _interpolate(value: Any, path: str) -> Any:
    if isinstance(value, str):

        def sub(m: re.Match) -> str:
            name, default = m.group(1), m.group(2)
            if name in os.environ:
                return os.environ[name]
            if default is not None:
                return default
            raise ConfigurationError(f"environment variable {name} referenced by {path} is not set")

        return _ENV_RE.sub(sub, value)
    if isinstance(value, dict):
        return {k: _interpolate(v, f"{path}.{k}" if path else str(k)) for k, v in value.items()}
    if isinstance(value, list):
        return [_interpolate(v, f"{path}[{i}]") for i, v in enumerate(value)]
    return value


def _coerce(tp, value, path: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, path)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"config key {path} must be a boolean")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"config key {path} must be an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"config key {path} must be a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"config key {path} must be a string")
        return value
    if tp in (dict, list) or origin in (dict, list):
        expected = origin or tp
        if not isinstance(value, expected):
            raise ConfigurationError(f"config key {path} must be a {expected.__name__}")
        return value
    return value


def _build(cls, data, path: str = ""):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"config section {path or '<root>'} must be a mapping")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls) if f.init and f.name != "digest"}
    for key in data:
        if key not in known:
            where = f"{path}.{key}" if path else str(key)
            raise ConfigurationError(f"unknown config key '{where}'")
    kwargs = {k: _coerce(hints[k], v, f"{path}.{k}" if path else k) for k, v in data.items()}
    return cls(**kwargs)


def config_from_dict(raw: dict | None) -> PipelineConfig:
    raw = raw or {}
    cfg = _build(PipelineConfig, _interpolate(raw, ""))
    # The digest covers the fully-defaulted config, except that backend
    # params are taken before interpolation so credentials never enter it.
    view = dataclasses.asdict(cfg)
    view.pop("digest", None)
    raw_backends = raw.get("backends") or {}
    for role, spec in view["backends"].items():
        raw_params = (raw_backends.get(role) or {}).get("params")
        if raw_params is not None:
            spec["params"] = raw_params
    cfg.digest = json_digest(view)
    try:
        cfg.sft_train_config()
        cfg.rft_train_config()
    except ConfigurationError as exc:
        raise ConfigurationError(f"invalid training config: {exc}") from exc
    return cfg


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return config_from_dict({})
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config {path} is not valid YAML: {exc}") from exc
    return config_from_dict(raw)


# --------------------------------------------------------------------------
# Adapter registry
# --------------------------------------------------------------------------

Factory = Callable[[dict, int, dict], Any]
ADAPTERS: dict[str, dict[str, Factory]] = {
    "policy": {"mock": lambda p, seed, ctx: MockPolicy(**{"seed": seed, **p})},
    "generator": {"mock": lambda p, seed, ctx: MockGenerator(**p)},
    "scorer": {"mock": lambda p, seed, ctx: MockScorer(**p)},
    "alignment_scorer": {"mock": lambda p, seed, ctx: MockScorer(**p)},
    "perceptual": {"mock": lambda p, seed, ctx: MockPerceptual(**p)},
    "extractor": {
        "mock": lambda p, seed, ctx: MockExtractor(**p),
        "native-canny": lambda p, seed, ctx: NativeCannyExtractor(),
    },
    "oracle": {"mock": lambda p, seed, ctx: ScriptedOracle(ctx.get("oracle_script", []))},
    "features": {"mock": lambda p, seed, ctx: MockFeatures(**{"seed": seed, **p})},
}


def register_adapter(role: str, name: str, factory: Factory) -> None:
    if role not in ADAPTERS:
        raise ConfigurationError(f"unknown backend role {role!r}")
    ADAPTERS[role][name] = factory


def build_backend(cfg: PipelineConfig, role: str, seed: int, context: dict | None = None):
    spec: BackendSpec = getattr(cfg.backends, role)
    try:
        factory = ADAPTERS[role][spec.adapter]
    except KeyError:
        raise ConfigurationError(f"no {role} adapter named {spec.adapter!r}") from None
    try:
        return factory(dict(spec.params), seed, context or {})
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for {role} adapter {spec.adapter!r}: {exc}") from exc


def build_backends(cfg: PipelineConfig, seed: int, roles=None, context: dict | None = None) -> Backends:
    roles = roles or [f.name for f in dataclasses.fields(BackendsConfig)]
    return Backends(**{role: build_backend(cfg, role, seed, context) for role in roles})
