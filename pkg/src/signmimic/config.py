"""Run and sweep configuration files (versioned YAML)."""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .bundled import resolve
from .env import EpisodeConfig
from .errors import ConfigError, ContractError
from .reward import PRESETS, TERMS, RewardConfig
from .rl.ppo import TrainConfig

SCHEMA_VERSION = 1
DEFAULT_SCALE = 0.01
SWEEP_STRATEGIES = ("grid", "random")
SWEEP_OBJECTIVES = ("train", "estimate")


@dataclass
class RewardSpec:
    """Reward settings before they are bound to a model's joint sets."""

    preset: str | None = "final"
    factors: dict = field(default_factory=dict)  # k_pb ... k_r overrides
    end_effectors: tuple | None = None

    def __post_init__(self):
        if self.preset is not None and self.preset not in PRESETS:
            raise ConfigError(f"reward.preset: unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        allowed = {f"k_{t}" for t in TERMS}
        bad = set(self.factors) - allowed
        if bad:
            raise ConfigError(f"reward: unknown factor(s) {sorted(bad)}")
        for k, v in self.factors.items():
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise ConfigError(f"reward.{k}: must be a finite nonnegative number, got {v!r}")
        if self.end_effectors is not None:
            self.end_effectors = tuple(self.end_effectors)

    def build(self, model) -> RewardConfig:
        try:
            return RewardConfig.for_model(model, self.preset, self.end_effectors, **self.factors)
        except ContractError as exc:
            raise ConfigError(f"reward: {exc}") from exc

    def to_dict(self) -> dict:
        d = {"preset": self.preset, **self.factors}
        if self.end_effectors is not None:
            d["end_effectors"] = list(self.end_effectors)
        return d


@dataclass
class RunConfig:
    model: str = "bundled:signer.model"
    clips: list = field(default_factory=lambda: ["bundled:clips/00433.json"])
    reward: RewardSpec = field(default_factory=RewardSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    residual: bool = True
    kd_scale: dict = field(default_factory=dict)
    out: str = "runs"
    seeds: list = field(default_factory=lambda: [1])
    scale: float = DEFAULT_SCALE

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds: must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds: must be distinct, got {self.seeds}")
        if not all(isinstance(s, int) and not isinstance(s, bool) for s in self.seeds):
            raise ConfigError(f"seeds: must be integers, got {self.seeds}")
        if not self.clips:
            raise ConfigError("clips: must name at least one clip")
        if not (0.0 < self.scale <= 1.0):
            raise ConfigError(f"scale: must lie in (0, 1], got {self.scale}")

    def check_files(self):
        for p in [self.model, *self.clips]:
            if not resolve(p).is_file():
                raise ConfigError(f"referenced file does not exist: {p}")

    @property
    def scaled_total_steps(self) -> int:
        """Training budget after scaling, rounded up to whole rollouts."""
        per = self.train.steps_per_update
        return max(1, math.ceil(self.train.total_steps * self.scale / per - 1e-9)) * per

    def train_config(self, seed: int) -> TrainConfig:
        return replace(self.train, seed=int(seed), total_steps=self.scaled_total_steps)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "model": self.model,
            "clips": list(self.clips),
            "reward": self.reward.to_dict(),
            "train": self.train.to_dict(),
            "episode": self.episode.to_dict(),
            "residual": self.residual,
            "kd_scale": dict(self.kd_scale),
            "out": self.out,
            "seeds": list(self.seeds),
            "scale": self.scale,
        }

    def hash(self) -> str:
        return config_hash(self.to_dict())


def config_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _section(doc, key, cls, where):
    raw = doc.get(key, {}) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}.{key}: expected a mapping")
    known = {f.name for f in fields(cls)}
    bad = set(raw) - known
    if bad:
        raise ConfigError(f"{where}.{key}: unknown field(s) {sorted(bad)}")
    try:
        return cls(**raw)
    except (ContractError, TypeError) as exc:
        raise ConfigError(f"{where}.{key}: {exc}") from exc


def run_config_from_dict(doc: dict, where: str = "config") -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected a mapping at top level")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{where}: schema_version must be {SCHEMA_VERSION}, got {version!r}")
    allowed = {"schema_version", "model", "clips", "reward", "train", "episode", "residual", "kd_scale", "out",
               "seeds", "scale", "sweep"}
    bad = set(doc) - allowed
    if bad:
        raise ConfigError(f"{where}: unknown field(s) {sorted(bad)}")
    reward_doc = dict(doc.get("reward", {}) or {})
    preset = reward_doc.pop("preset", "final")
    ee = reward_doc.pop("end_effectors", None)
    clips = doc.get("clips", RunConfig().clips)
    if isinstance(clips, str):
        clips = [clips]
    kw = dict(
        reward=RewardSpec(preset, reward_doc, ee),
        train=_section(doc, "train", TrainConfig, where),
        episode=_section(doc, "episode", EpisodeConfig, where),
        clips=list(clips),
    )
    for key in ("model", "residual", "kd_scale", "out", "seeds", "scale"):
        if key in doc:
            kw[key] = doc[key]
    return RunConfig(**kw)


def load_run_config(path) -> RunConfig:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return run_config_from_dict(doc, str(path))


def dump_run_config(config: RunConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)


@dataclass
class SweepSpec:
    """Parameter axes to sweep and how to pick trials from them.

    Axis names are reward factors (``k_ph``) or train fields (``train.learning_rate``).
    """

    axes: dict
    strategy: str = "grid"
    n_trials: int = 8  # random strategy only
    budget_fraction: float = 0.5
    objective: str = "train"
    trace: str | None = None  # error trace for the estimate objective
    seed: int = 0

    def __post_init__(self):
        if not self.axes:
            raise ConfigError("sweep.axes: must be non-empty")
        for name, values in self.axes.items():
            if not isinstance(values, list) or not values:
                raise ConfigError(f"sweep.axes.{name}: expected a non-empty list")
            if not all(isinstance(v, (int, float)) and math.isfinite(v) for v in values):
                raise ConfigError(f"sweep.axes.{name}: values must be finite numbers")
        if self.strategy not in SWEEP_STRATEGIES:
            raise ConfigError(f"sweep.strategy: must be one of {SWEEP_STRATEGIES}")
        if self.objective not in SWEEP_OBJECTIVES:
            raise ConfigError(f"sweep.objective: must be one of {SWEEP_OBJECTIVES}")
        if not 0.0 < self.budget_fraction <= 1.0:
            raise ConfigError(f"sweep.budget_fraction: must lie in (0, 1], got {self.budget_fraction}")
        if self.n_trials < 1:
            raise ConfigError("sweep.n_trials: must be >= 1")

    def trials(self) -> list[dict]:
        names = list(self.axes)
        grid = [dict(zip(names, combo)) for combo in itertools.product(*(self.axes[n] for n in names))]
        if self.strategy == "grid":
            return grid
        rng = np.random.default_rng(self.seed)
        idx = rng.choice(len(grid), size=min(self.n_trials, len(grid)), replace=False)
        return [grid[i] for i in sorted(idx)]

    @classmethod
    def from_dict(cls, doc: dict) -> "SweepSpec":
        if not isinstance(doc, dict):
            raise ConfigError("sweep: expected a mapping")
        known = {f.name for f in fields(cls)}
        bad = set(doc) - known
        if bad:
            raise ConfigError(f"sweep: unknown field(s) {sorted(bad)}")
        if "axes" not in doc:
            raise ConfigError("sweep.axes: missing")
        return cls(**doc)


def apply_trial(config: RunConfig, trial: dict) -> RunConfig:
    """Copy of ``config`` with one sweep trial's values substituted."""
    factors = dict(config.reward.factors)
    train = config.train
    for name, value in trial.items():
        if name.startswith("train."):
            key = name.split(".", 1)[1]
            if key not in {f.name for f in fields(TrainConfig)}:
                raise ConfigError(f"sweep axis {name!r}: unknown train field")
            try:
                train = replace(train, **{key: type(getattr(train, key))(value)})
            except ContractError as exc:
                raise ConfigError(f"sweep axis {name!r}: {exc}") from exc
        elif name in {f"k_{t}" for t in TERMS}:
            factors[name] = float(value)
        else:
            raise ConfigError(f"sweep axis {name!r}: expected a reward factor k_* or train.<field>")
    return replace(config, reward=RewardSpec(config.reward.preset, factors, config.reward.end_effectors),
                   train=train)
