"""Run configuration loading (JSON or TOML) with environment overrides."""

from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .evaluation import ScoreWeights
from .gateway import ModelConfig, MockProfile, resolve_endpoint

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SEED_ENV_PREFIX = "CRYPTOVOTE_SEED_"
STAGE_SEEDS = ("sample", "cv")


@dataclass
class RunConfig:
    models: list[ModelConfig]
    run_dir: Path = Path("run")
    templates_dir: Path | None = None
    significance: float = 0.001
    weights: ScoreWeights = field(default_factory=ScoreWeights)
    seeds: dict[str, int] = field(default_factory=lambda: {s: 0 for s in STAGE_SEEDS})
    per_stratum: int = 65
    k_folds: int = 5
    k_members: int = 3
    max_in_flight: int = 4
    dependency_cap: int = 64
    strict_parse: bool = False
    mock: MockProfile = field(default_factory=MockProfile)

    def __post_init__(self):
        if not self.models:
            raise ConfigError("config defines no models")
        ids = [m.model_id for m in self.models]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"model ids must be unique: {ids}")
        if not 0 < self.significance < 1:
            raise ConfigError("significance must be in (0, 1)")
        if self.k_members > len(self.models):
            raise ConfigError(f"k_members={self.k_members} exceeds {len(self.models)} models")
        if self.templates_dir is not None and not Path(self.templates_dir).is_dir():
            raise ConfigError(f"templates_dir not found: {self.templates_dir}")

    @property
    def ensemble_n(self) -> int:
        return len(self.models)

    def to_json(self) -> dict:
        d = asdict(self)
        d["run_dir"] = str(self.run_dir)
        d["templates_dir"] = None if self.templates_dir is None else str(self.templates_dir)
        d["mock"]["per_model_bias"] = dict(self.mock.per_model_bias)
        # resolved endpoints, so env overrides show up in the hash
        for m, model in zip(d["models"], self.models):
            m["endpoint"] = resolve_endpoint(model)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def _model(d: dict) -> ModelConfig:
    known = {f.name for f in fields(ModelConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown model keys: {sorted(unknown)}")
    try:
        return ModelConfig(**d)
    except TypeError as exc:
        raise ConfigError(f"bad model entry {d!r}: {exc}") from None


def config_from_dict(d: dict, base_dir: Path = Path("."), environ=None) -> RunConfig:
    env = os.environ if environ is None else environ
    d = dict(d)
    models = [_model(m) for m in d.pop("models", [])]
    kwargs: dict = {"models": models}
    if "run_dir" in d:
        kwargs["run_dir"] = base_dir / d.pop("run_dir")
    if d.get("templates_dir") is not None:
        kwargs["templates_dir"] = base_dir / d.pop("templates_dir")
    d.pop("templates_dir", None)
    if "weights" in d:
        kwargs["weights"] = ScoreWeights(**d.pop("weights"))
    if "mock" in d:
        kwargs["mock"] = MockProfile(**d.pop("mock"))
    seeds = {s: 0 for s in STAGE_SEEDS}
    seeds.update({k: int(v) for k, v in d.pop("seeds", {}).items()})
    for stage in list(seeds):
        override = env.get(SEED_ENV_PREFIX + stage.upper())
        if override is not None:
            seeds[stage] = int(override)
    kwargs["seeds"] = seeds
    known = {f.name for f in fields(RunConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs.update(d)
    try:
        return RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path, environ=None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        if path.suffix == ".toml":
            data = tomllib.loads(text)
        else:
            data = json.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    return config_from_dict(data, path.parent, environ)
