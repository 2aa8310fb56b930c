"""Versioned JSON run configs with strict key checking."""

from __future__ import annotations

import dataclasses
import hashlib
import json

from . import __version__
from .dataset import DatasetConfig
from .errors import ConfigError
from .grasp_core import GripperSpec
from .labeler import LabelParams
from .losses import LossConfig
from .model import AEConfig
from .scene import SceneThresholds

CONFIG_VERSION = 1

SECTIONS = {
    "dataset": DatasetConfig,
    "gripper": GripperSpec,
    "labeler": LabelParams,
    "model": AEConfig,
    "loss": LossConfig,
    "scene": SceneThresholds,
}

COMMAND_SECTIONS = {
    "generate-data": ("dataset", "gripper", "labeler"),
    "label-grasps": ("gripper", "labeler"),
    "train-ae": ("model", "loss", "gripper"),
    "eval-ae": ("gripper",),
    "compose-scene": ("scene", "gripper"),
    "synth-scene": ("scene", "gripper"),
    "eval-metrics": ("gripper", "labeler"),
    "export": ("gripper", "scene"),
}


@dataclasses.dataclass
class RunConfig:
    command: str
    seed: int
    sections: dict

    def __getitem__(self, name):
        return self.sections[name]

    def materialized(self):
        """Plain dict with every default filled in."""
        out = {"version": CONFIG_VERSION, "seed": self.seed}
        for name, obj in self.sections.items():
            d = obj.to_dict() if hasattr(obj, "to_dict") else dataclasses.asdict(obj)
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
        return out

    def hash(self):
        blob = json.dumps(self.materialized(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _build_section(name, cls, values):
    if not isinstance(values, dict):
        raise ConfigError(f"section {name!r} must be an object", name)
    known = {f.name for f in dataclasses.fields(cls)}
    for k in values:
        if k not in known:
            raise ConfigError(f"unknown key {name}.{k}", f"{name}.{k}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid value in section {name!r}: {e}", name) from None


def parse_config(command, data=None, seed=None) -> RunConfig:
    """Validate a config dict for ``command``; missing sections take defaults."""
    data = dict(data or {})
    if command not in COMMAND_SECTIONS:
        raise ConfigError(f"unknown command {command!r}", "command")
    allowed = COMMAND_SECTIONS[command]
    version = data.pop("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version!r}", "version")
    cfg_seed = data.pop("seed", 0)
    if not isinstance(cfg_seed, int) or isinstance(cfg_seed, bool):
        raise ConfigError("seed must be an integer", "seed")
    for k in data:
        if k not in allowed:
            raise ConfigError(f"unknown key {k!r} for {command}", k)
    sections = {name: _build_section(name, SECTIONS[name], data.get(name, {})) for name in allowed}
    return RunConfig(command, cfg_seed if seed is None else seed, sections)


def load_config(command, path=None, seed=None) -> RunConfig:
    if path is None:
        return parse_config(command, {}, seed)
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})", "file") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object", "file")
    return parse_config(command, data, seed)


def provenance(run: RunConfig, threads: int, extra=None):
    rec = {
        "command": run.command,
        "package_version": __version__,
        "seed": run.seed,
        "threads": threads,
        "config": run.materialized(),
        "config_hash": run.hash(),
    }
    rec.update(extra or {})
    return rec
