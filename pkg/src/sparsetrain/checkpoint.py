"""Checkpointing: the full trainer state in one ``.npz`` container.

A checkpoint carries everything an exact resume needs — parameters, structure
vector, mask-sampler RNG state, epoch/iteration counters, the held mask, and
cumulative cost counters — plus echoes of the train config and architecture so
a checkpoint is self-describing. Loading validates magic, format version and
array shapes before touching any trainer state; a bad file never applies
partial state.
"""

from __future__ import annotations

import json
import os
import zipfile
from dataclasses import asdict

import numpy as np

from .errors import CheckpointError
from .network import NetworkSpec
from .structure import StructureVector

MAGIC = "sparsetrain-checkpoint"
FORMAT_VERSION = 1


def save_checkpoint(path, trainer):
    """Write ``trainer`` state atomically (tmp file + rename)."""
    meta = {
        "magic": MAGIC,
        "format_version": FORMAT_VERSION,
        "config": asdict(trainer.config),
        "spec": trainer.spec.to_dict(),
        "dataset": trainer.data.provenance,
        "epoch": trainer.epoch,
        "iteration": trainer.iteration,
        "held_left": trainer.held_left,
        "has_held_mask": trainer.held_mask is not None,
        "last_eval": trainer.last_eval,
        "cumulative_sparse_flops": trainer.cumulative_sparse_flops,
        "cumulative_dense_flops": trainer.cumulative_dense_flops,
        "sampler_state": trainer.sampler.state,
        "budget": trainer.structure.budget,
    }
    arrays = {
        "meta_json": np.array(json.dumps(meta)),
        "structure_values": trainer.structure.values,
        "held_mask": (trainer.held_mask if trainer.held_mask is not None
                      else np.zeros(0, dtype=np.uint8)),
    }
    for name, array in trainer.params.flat_items():
        arrays[f"param.{name}"] = array
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        np.savez(f, **arrays)
    os.replace(tmp, path)


def load_checkpoint(path):
    """Read and validate a checkpoint; returns (meta dict, arrays dict)."""
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {key: data[key] for key in data.files}
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    except (zipfile.BadZipFile, OSError, ValueError, EOFError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if "meta_json" not in arrays:
        raise CheckpointError(f"{path} is not a trainer checkpoint (no metadata entry)")
    try:
        meta = json.loads(str(arrays.pop("meta_json")))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint metadata in {path}: {exc}") from exc
    if meta.get("magic") != MAGIC:
        raise CheckpointError(f"{path} is not a trainer checkpoint (bad magic)")
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path} has format version {meta.get('format_version')}, "
            f"this build reads version {FORMAT_VERSION}"
        )
    return meta, arrays


def restore_trainer(path, data):
    """Rebuild a :class:`sparsetrain.training.Trainer` from a checkpoint and a
    dataset handle. The dataset is not stored in the checkpoint; the caller
    provides one matching the recorded provenance."""
    from .training import TrainConfig, Trainer

    meta, arrays = load_checkpoint(path)
    config = TrainConfig(**meta["config"])
    spec = NetworkSpec.from_dict(meta["spec"])

    expected = {f"param.{name}": shape for name, shape in _shapes_of(spec)}
    for key, shape in expected.items():
        if key not in arrays:
            raise CheckpointError(f"{path} is missing array '{key}'")
        if arrays[key].shape != shape:
            raise CheckpointError(
                f"{path} array '{key}' has shape {arrays[key].shape}, expected {shape}"
            )
    if arrays["structure_values"].shape != (spec.num_channels,):
        raise CheckpointError(
            f"{path} structure vector has shape {arrays['structure_values'].shape}, "
            f"expected {(spec.num_channels,)}"
        )

    trainer = Trainer(config, spec, data)
    for name, array in trainer.params.flat_items():
        array[...] = arrays[f"param.{name}"]
    trainer.structure = StructureVector(arrays["structure_values"].copy(),
                                        float(meta["budget"]))
    trainer.sampler.state = meta["sampler_state"]
    trainer.epoch = int(meta["epoch"])
    trainer.iteration = int(meta["iteration"])
    trainer.held_left = int(meta["held_left"])
    trainer.held_mask = (arrays["held_mask"].astype(np.uint8)
                         if meta["has_held_mask"] else None)
    trainer.last_eval = meta["last_eval"]
    trainer.cumulative_sparse_flops = float(meta["cumulative_sparse_flops"])
    trainer.cumulative_dense_flops = float(meta["cumulative_dense_flops"])
    return trainer


def _shapes_of(spec):
    """Expected parameter names/shapes for a spec (via a throwaway init)."""
    from .network import NetworkParams

    rng = np.random.Generator(np.random.PCG64(0))
    params = NetworkParams.init(spec, rng)
    return [(name, array.shape) for name, array in params.flat_items()]
