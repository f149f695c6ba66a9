"""Run configuration: defaults, JSON loading and flag overrides."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class ZoomoutConfig:
    k_final: int = 120
    step: int = 1


@dataclass
class TrainingConfig:
    lr: float = 1e-4
    steps: int = 100
    batch: int = 8
    seed: int = 0
    d_out: int | None = None


@dataclass
class DescriptorConfig:
    hks: int = 16
    wks: int = 16
    positional: int = 0  # anchor count; 0 disables
    positional_scale: float = 1.0


@dataclass
class PoseConfig:
    up: str = "y"
    forward: str = "z"


@dataclass
class RunConfig:
    k: int = 30
    k_partial: int = 60
    rank_cap: int = 40
    alpha: float = 1e-3
    mode: str = "commutativity_weighted"
    refine: bool = False
    zoomout: ZoomoutConfig = field(default_factory=ZoomoutConfig)
    loss_weights: tuple = (1.0, 1.0, 0.001)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    descriptors: DescriptorConfig = field(default_factory=DescriptorConfig)
    pose: PoseConfig | None = None
    jobs: int = 1

    def validate(self):
        counts = {
            "k": self.k, "k_partial": self.k_partial, "rank_cap": self.rank_cap,
            "zoomout.k_final": self.zoomout.k_final, "zoomout.step": self.zoomout.step,
            "training.steps": self.training.steps, "training.batch": self.training.batch,
            "jobs": self.jobs,
        }
        for name, value in counts.items():
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {value!r}")
        if len(self.loss_weights) != 3 or any(w < 0 for w in self.loss_weights):
            raise ConfigError("loss_weights must be three nonnegative numbers")
        if self.alpha < 0:
            raise ConfigError("alpha must be nonnegative")
        if self.mode not in ("plain_lsq", "commutativity_weighted"):
            raise ConfigError(f"mode must be plain_lsq or commutativity_weighted, got {self.mode!r}")
        if self.training.lr <= 0:
            raise ConfigError("training.lr must be positive")
        d = self.descriptors
        if min(d.hks, d.wks, d.positional) < 0 or d.hks + d.wks + d.positional == 0:
            raise ConfigError("descriptor counts must be >= 0 and not all zero")
        return self

    def to_dict(self):
        out = asdict(self)
        out["loss_weights"] = list(self.loss_weights)
        return out

    def sha256(self):
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()

    @property
    def k_match_basis(self):
        """Eigenpairs needed by ``match`` (more when refining)."""
        return max(self.k, self.zoomout.k_final) if self.refine else self.k


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


_NESTED = {
    "zoomout": ZoomoutConfig,
    "training": TrainingConfig,
    "descriptors": DescriptorConfig,
    "pose": PoseConfig,
}


def _build(cls, data, prefix=""):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config field {prefix}{sorted(unknown)[0]!r}")
    kwargs = {}
    for key, value in data.items():
        if key in _NESTED and cls is RunConfig:
            if value is None:
                kwargs[key] = None
                continue
            if not isinstance(value, dict):
                raise ConfigError(f"config field {prefix}{key!r} must be an object")
            kwargs[key] = _build(_NESTED[key], value, prefix=f"{key}.")
        elif key == "loss_weights":
            kwargs[key] = tuple(float(w) for w in value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return _build(RunConfig, data).validate()


def load_config(path=None, overrides=None):
    """Defaults, then the JSON file at ``path``, then dotted ``overrides``."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    cfg = config_from_dict(data)
    if overrides:
        merged = copy.deepcopy(cfg.to_dict())
        for dotted, value in overrides.items():
            if value is None:
                continue
            node = merged
            *parents, leaf = dotted.split(".")
            for p in parents:
                if node.get(p) is None:
                    node[p] = asdict(_NESTED[p]())
                node = node[p]
            node[leaf] = value
        cfg = config_from_dict(merged)
    return cfg
