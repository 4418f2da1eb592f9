"""The training loop: paired sparse forwards drive the structure update, one
sparse backward drives the weight update, and a projection keeps the
keep-probabilities inside the budgeted box after every step.

Per iteration, on one minibatch:

1. sample mask m1 (held for ``resample_interval`` iterations) and a fresh m2;
2. two sparse forwards give L(m1) (with cache) and L(m2) (no cache);
3. s <- project(s - lr_s * (L(m1) - L(m2)) * h(s) * score(m1, s));
4. w <- w - lr_w * grad_w L(m1) from the sparse backward of the m1 cache.

No dense pass ever runs; pruned channels are not computed forward, receive no
error signal backward, and their weight gradients stay exactly zero.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import batches, num_batches
from .errors import ConfigError, DimensionError, NonFiniteLossError
from .estimators import vr_pge
from .flops import flops_report, forward_flops, savings_paired_sparse
from .network import NetworkParams, backward_weights, forward, forward_logits, sgd_step
from .structure import (DEFAULT_EPS, SeededSampler, derive_seed,
                        initial_structure, project, sample_mask)


@dataclass
class TrainConfig:
    """Algorithmic settings for one training run."""

    remain_ratio: float
    alpha: float = 0.5
    weight_lr: float = 0.1
    structure_lr: float = 12e-3
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    resample_interval: int = 1
    eval_samples: int = 5
    eps: float = DEFAULT_EPS
    log_every: int = 1

    def __post_init__(self):
        if not 0.0 < self.remain_ratio <= 1.0:
            raise ConfigError(f"train.remain_ratio: must be in (0, 1], got {self.remain_ratio}")
        if not 0.0 < self.eps < 0.1:
            raise ConfigError(f"train.eps: must be in (0, 0.1), got {self.eps}")
        if self.remain_ratio <= self.eps:
            raise ConfigError(
                f"train.remain_ratio: must exceed eps={self.eps}, got {self.remain_ratio}"
            )
        if not self.weight_lr > 0.0:
            raise ConfigError(f"train.weight_lr: must be positive, got {self.weight_lr}")
        if not self.structure_lr >= 0.0:
            raise ConfigError(f"train.structure_lr: must be >= 0, got {self.structure_lr}")
        if self.epochs < 1:
            raise ConfigError(f"train.epochs: must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size: must be >= 1, got {self.batch_size}")
        if self.resample_interval < 1:
            raise ConfigError(
                f"train.resample_interval: must be >= 1, got {self.resample_interval}"
            )
        if self.eval_samples < 1:
            raise ConfigError(f"train.eval_samples: must be >= 1, got {self.eval_samples}")
        if self.log_every < 1:
            raise ConfigError(f"train.log_every: must be >= 1, got {self.log_every}")


@dataclass
class MetricsRecord:
    """One JSON-lines metrics row. ``eval_accuracy`` holds the most recent
    epoch-end evaluation (null before the first one completes)."""

    epoch: int
    iteration: int
    train_loss: float
    eval_accuracy: float | None
    s_sum: float
    active_channels: int
    flops_iteration: float
    savings_iteration: float
    savings_cumulative: float

    def to_json(self):
        return json.dumps({
            "epoch": self.epoch,
            "iteration": self.iteration,
            "train_loss": self.train_loss,
            "eval_accuracy": self.eval_accuracy,
            "s_sum": self.s_sum,
            "active_channels": self.active_channels,
            "flops_iteration": self.flops_iteration,
            "savings_iteration": self.savings_iteration,
            "savings_cumulative": self.savings_cumulative,
        })


@dataclass
class FinalReport:
    """Training-end summary: the chosen subnetwork and its cost profile."""

    candidate_losses: list
    candidate_channels: list
    best_index: int
    mask: np.ndarray = field(repr=False)
    eval_accuracy: float = 0.0
    active_channels: int = 0
    total_channels: int = 0
    flops: dict = field(default_factory=dict)
    cumulative_savings: float = 0.0

    def to_dict(self):
        return {
            "candidate_losses": [float(v) for v in self.candidate_losses],
            "candidate_channels": [int(v) for v in self.candidate_channels],
            "best_index": self.best_index,
            "mask": self.mask.astype(int).tolist(),
            "eval_accuracy": self.eval_accuracy,
            "active_channels": self.active_channels,
            "total_channels": self.total_channels,
            "flops": self.flops,
            "cumulative_savings": self.cumulative_savings,
        }

    def table(self):
        lines = ["#   channels  train-loss"]
        for i, (loss, ch) in enumerate(zip(self.candidate_losses, self.candidate_channels)):
            marker = " <- best" if i == self.best_index else ""
            lines.append(f"{i:<3d} {ch:<9d} {loss:.6f}{marker}")
        f = self.flops
        lines.append(f"eval accuracy       {self.eval_accuracy:.4f}")
        lines.append(f"active channels     {self.active_channels}/{self.total_channels}")
        lines.append(f"params kept         {f['active_parameters']}/{f['total_parameters']}"
                     f" ({100.0 * f['active_parameters'] / f['total_parameters']:.1f}%)")
        lines.append(f"forward flops ratio {f['flops_ratio']:.4f}")
        lines.append(f"training savings    {f['savings']:.2f}x (model),"
                     f" {self.cumulative_savings:.2f}x (this run)")
        return "\n".join(lines)


class Trainer:
    """Stateful training driver; checkpointable mid-run with exact resume."""

    def __init__(self, config, spec, data):
        if data.input_shape != spec.input_shape:
            raise DimensionError(
                f"dataset shape {data.input_shape} != network input {spec.input_shape}"
            )
        if data.classes != spec.classes:
            raise DimensionError(
                f"dataset classes {data.classes} != network classes {spec.classes}"
            )
        self.config = config
        self.spec = spec
        self.data = data
        seed = config.seed
        self._data_seed = derive_seed(seed, "shuffle")
        self._final_seed = derive_seed(seed, "finalize")
        init_rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "init")))
        self.params = NetworkParams.init(spec, init_rng)
        self.sampler = SeededSampler(derive_seed(seed, "masks"))
        base = initial_structure(spec.num_channels, config.remain_ratio)
        self.structure = project(base.values, base.budget,
                                 lower=config.eps, upper=1.0 - config.eps)
        self.epoch = 0
        self.iteration = 0
        self.held_mask = None
        self.held_left = 0
        self.last_eval = None
        self.cumulative_sparse_flops = 0.0
        self.cumulative_dense_flops = 0.0
        self.snapshot_dir = None
        self._dense_flops = forward_flops(spec, None)

    # -- one run ------------------------------------------------------------

    def run(self, sink=None, epochs=None):
        """Train until ``epochs`` total epochs (default: config.epochs) are
        done, emitting :class:`MetricsRecord` objects to ``sink``."""
        target = self.config.epochs if epochs is None else int(epochs)
        while self.epoch < target:
            self._run_epoch(sink)
        return self

    def _run_epoch(self, sink):
        cfg = self.config
        shuffle_seed = derive_seed(self._data_seed, self.epoch)
        last_batch = num_batches(self.data, cfg.batch_size) - 1
        for b, (bx, by) in enumerate(batches(self.data, cfg.batch_size, shuffle_seed)):
            if self.held_left <= 0:
                self.held_mask = sample_mask(self.structure, self.sampler)
                self.held_left = cfg.resample_interval
            m1 = self.held_mask
            self.held_left -= 1
            m2 = sample_mask(self.structure, self.sampler)
            self.iteration += 1

            loss1, cache = forward(self.spec, self.params, m1, bx, by)
            loss2, _ = forward(self.spec, self.params, m2, bx, by, want_cache=False)
            if not (math.isfinite(loss1) and math.isfinite(loss2)):
                raise self._abort(loss1, loss2)

            if cfg.structure_lr > 0.0:
                est = vr_pge(loss1, loss2, m1, self.structure, cfg.alpha, cfg.eps)
                z = self.structure.values - cfg.structure_lr * est.values
                self.structure = project(z, self.structure.budget,
                                         lower=cfg.eps, upper=1.0 - cfg.eps)
            grads = backward_weights(cache)
            sgd_step(self.params, grads, cfg.weight_lr)

            n = bx.shape[0]
            f1 = forward_flops(self.spec, m1)
            f2 = forward_flops(self.spec, m2)
            sparse_cost = (3.0 * f1 + f2) * n
            dense_cost = 3.0 * self._dense_flops * n
            self.cumulative_sparse_flops += sparse_cost
            self.cumulative_dense_flops += dense_cost

            at_epoch_end = b == last_batch
            if at_epoch_end:
                self.last_eval = self.evaluate()
            if sink is not None and (at_epoch_end or self.iteration % cfg.log_every == 0):
                sink(MetricsRecord(
                    epoch=self.epoch,
                    iteration=self.iteration,
                    train_loss=loss1,
                    eval_accuracy=self.last_eval,
                    s_sum=float(self.structure.values.sum()),
                    active_channels=int(m1.sum()),
                    flops_iteration=sparse_cost,
                    savings_iteration=dense_cost / sparse_cost,
                    savings_cumulative=self.cumulative_dense_flops / self.cumulative_sparse_flops,
                ))
        self.epoch += 1

    def _abort(self, loss1, loss2):
        path = None
        if self.snapshot_dir is not None:
            from .checkpoint import save_checkpoint
            import os
            path = os.path.join(self.snapshot_dir, "abort_snapshot.npz")
            save_checkpoint(path, self)
        return NonFiniteLossError(
            f"non-finite training loss at iteration {self.iteration} "
            f"(loss1={loss1}, loss2={loss2})",
            snapshot_path=path,
        )

    # -- persistence ----------------------------------------------------------

    def checkpoint(self, path):
        from .checkpoint import save_checkpoint
        save_checkpoint(path, self)
        return path

    @classmethod
    def restore(cls, path, data):
        from .checkpoint import restore_trainer
        return restore_trainer(path, data)

    # -- evaluation / selection ----------------------------------------------

    def evaluate(self, mask=None):
        """Accuracy on the eval split under ``mask`` (default: the currently
        held training mask, i.e. the live subnetwork)."""
        if mask is None:
            mask = self.held_mask
        xs, ys = self.data.eval_arrays()
        correct = 0
        for start in range(0, xs.shape[0], self.config.batch_size):
            logits = forward_logits(self.spec, self.params,
                                    mask, xs[start : start + self.config.batch_size])
            correct += int((logits.argmax(axis=1) ==
                            ys[start : start + self.config.batch_size]).sum())
        return correct / xs.shape[0]

    def _mean_train_loss(self, mask):
        xs, ys = self.data.train_arrays()
        total = 0.0
        for start in range(0, xs.shape[0], self.config.batch_size):
            bx = xs[start : start + self.config.batch_size]
            by = ys[start : start + self.config.batch_size]
            loss, _ = forward(self.spec, self.params, mask, bx, by, want_cache=False)
            total += loss * bx.shape[0]
        return total / xs.shape[0]

    def finalize(self):
        """Draw ``eval_samples`` candidate masks from the trained s, score each
        by mean train loss, and report the best subnetwork.

        Deterministic given the run seed: the candidate sampler is re-derived
        from it, so re-running finalize (e.g. from a restored checkpoint)
        reproduces the same report.
        """
        sampler = SeededSampler(self._final_seed)
        losses, masks = [], []
        for _ in range(self.config.eval_samples):
            m = sample_mask(self.structure, sampler)
            masks.append(m)
            losses.append(self._mean_train_loss(m))
        best = int(np.argmin(losses))
        mask = masks[best]
        report = flops_report(self.spec, mask)
        cumulative = (self.cumulative_dense_flops / self.cumulative_sparse_flops
                      if self.cumulative_sparse_flops > 0 else 0.0)
        return FinalReport(
            candidate_losses=losses,
            candidate_channels=[int(m.sum()) for m in masks],
            best_index=best,
            mask=mask,
            eval_accuracy=self.evaluate(mask),
            active_channels=int(mask.sum()),
            total_channels=self.spec.num_channels,
            flops=report.to_dict(),
            cumulative_savings=cumulative,
        )
