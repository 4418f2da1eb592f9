"""Run configuration: INI files, command-line overrides, and the run manifest.

A train config has three sections::

    [run]            # what to run and where to put artifacts
    dataset = blobs  # blobs | smallimg | idx
    model = mlp_tiny
    out = runs/blobs
    checkpoint_every = 0   # epochs between checkpoints; 0 = final only

    [train]          # TrainConfig fields; remain_ratio is required
    remain_ratio = 0.5
    ...

    [data]           # dataset-specific keys, passed through typed
    classes = 2
    ...

Overrides use ``section.key=value`` and are applied before validation. All
timestamps live in the manifest only, so every other artifact of a seeded run
is byte-reproducible.
"""

from __future__ import annotations

import configparser
import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone

from .errors import ConfigError
from .training import TrainConfig

ENV_OUT_ROOT = "SPARSETRAIN_OUT"

_TRAIN_TYPES = {
    "remain_ratio": float,
    "alpha": float,
    "weight_lr": float,
    "structure_lr": float,
    "epochs": int,
    "batch_size": int,
    "seed": int,
    "resample_interval": int,
    "eval_samples": int,
    "eps": float,
    "log_every": int,
}

_DIAGNOSE_TYPES = {
    "mode": str,            # toy | checkpoint
    "channels": int,
    "alpha": float,
    "seed": int,
    "n_samples": int,
    "cond_samples": int,
    "offset": float,
    "s_values": str,        # comma-separated keep probabilities (toy mode)
    "checkpoint": str,      # checkpoint path (checkpoint mode)
    "batch_size": int,      # loss batch size (checkpoint mode)
    "max_enum_channels": int,
}


def read_config(path):
    """Parse an INI file into {section: {key: value}} (values are strings)."""
    parser = configparser.ConfigParser()
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return {section: dict(parser.items(section)) for section in parser.sections()}


def apply_overrides(cfg, overrides):
    """Apply ``section.key=value`` strings on top of a parsed config."""
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form section.key=value")
        target, value = item.split("=", 1)
        if "." not in target:
            raise ConfigError(f"override '{item}' is not of the form section.key=value")
        section, key = target.split(".", 1)
        cfg.setdefault(section, {})[key.strip()] = value.strip()
    return cfg


def _typed_section(cfg, section, types, required=()):
    raw = cfg.get(section, {})
    out = {}
    for key, value in raw.items():
        if key not in types:
            known = ", ".join(sorted(types))
            raise ConfigError(f"{section}.{key}: unknown key (known: {known})")
        try:
            out[key] = types[key](value)
        except (TypeError, ValueError):
            raise ConfigError(f"{section}.{key}: cannot parse {value!r}") from None
    for key in required:
        if key not in out:
            raise ConfigError(f"{section}.{key}: required key is missing")
    return out


def train_settings(cfg, overrides=(), seed=None, out=None):
    """Resolve a train run: returns (run dict, TrainConfig, data params dict).

    ``seed``/``out`` mirror the CLI flags and win over the file. Relative
    output directories are rooted at ``$SPARSETRAIN_OUT`` when that is set.
    """
    cfg = apply_overrides({k: dict(v) for k, v in cfg.items()}, overrides)
    run = dict(cfg.get("run", {}))
    for key in ("dataset", "model"):
        if key not in run:
            raise ConfigError(f"run.{key}: required key is missing")
    try:
        checkpoint_every = int(run.get("checkpoint_every", 0))
    except ValueError:
        raise ConfigError(
            f"run.checkpoint_every: cannot parse {run.get('checkpoint_every')!r}"
        ) from None
    if checkpoint_every < 0:
        raise ConfigError(f"run.checkpoint_every: must be >= 0, got {checkpoint_every}")
    train_kwargs = _typed_section(cfg, "train", _TRAIN_TYPES, required=("remain_ratio",))
    if seed is not None:
        train_kwargs["seed"] = int(seed)
    config = TrainConfig(**train_kwargs)
    out_dir = out or run.get("out") or os.path.join("runs", run["dataset"])
    run_resolved = {
        "dataset": run["dataset"],
        "model": run["model"],
        "out": resolve_out_dir(out_dir),
        "checkpoint_every": checkpoint_every,
    }
    return run_resolved, config, dict(cfg.get("data", {}))


def diagnose_settings(cfg, overrides=()):
    """Resolve a diagnose run: returns (run dict, diagnose params dict)."""
    cfg = apply_overrides({k: dict(v) for k, v in cfg.items()}, overrides)
    params = _typed_section(cfg, "diagnose", _DIAGNOSE_TYPES, required=("mode",))
    mode = params["mode"]
    if mode not in ("toy", "checkpoint"):
        raise ConfigError(f"diagnose.mode: must be 'toy' or 'checkpoint', got '{mode}'")
    if mode == "checkpoint" and "checkpoint" not in params:
        raise ConfigError("diagnose.checkpoint: required key is missing in checkpoint mode")
    if "s_values" in params:
        try:
            params["s_values"] = [float(v) for v in params["s_values"].split(",")]
        except ValueError:
            raise ConfigError(
                f"diagnose.s_values: cannot parse {params['s_values']!r}"
            ) from None
    run = dict(cfg.get("run", {}))
    out_dir = run.get("out") or os.path.join("runs", "diagnose")
    return {"out": resolve_out_dir(out_dir)}, params


def resolve_out_dir(out_dir):
    root = os.environ.get(ENV_OUT_ROOT)
    if root and not os.path.isabs(out_dir):
        return os.path.join(root, out_dir)
    return out_dir


@dataclass
class RunManifest:
    """What ran and where its artifacts live. This is the only artifact that
    carries a wall-clock timestamp."""

    command: str
    config: dict
    artifacts: dict
    package_version: str
    created: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    def to_json(self):
        return json.dumps({
            "command": self.command,
            "config": self.config,
            "artifacts": self.artifacts,
            "package_version": self.package_version,
            "created": self.created,
        }, indent=2, sort_keys=True)


def write_manifest(out_dir, manifest):
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as f:
        f.write(manifest.to_json())
        f.write("\n")
    return path
