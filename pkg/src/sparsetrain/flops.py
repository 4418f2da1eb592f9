"""Analytic FLOP accounting and the training-cost savings model.

Per-sample forward FLOPs count one multiply plus one add per
multiply-accumulate in conv and dense layers (norm/activation work is
excluded, matching the usual convention). The savings model prices a
backward pass at twice a forward pass:

* paired-sparse training spends two sparse forwards and one sparse backward
  per iteration: cost 4 f_S, against a dense iteration's 3 f_D, so the
  speed-up is 3 f_D / (4 f_S);
* a pipeline that only sparsifies the forward pass still pays a dense
  backward: 3 f_D / (f_S + 2 f_D), which can never exceed 1.5x.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .network import Conv, Dense, Flatten


def _active_counts(spec, mask):
    """Per-layer (in_active, out_active) sizes implied by a mask (None = dense)."""
    counts = []
    if mask is not None:
        mask = np.asarray(mask)
    last = len(spec.layers) - 1
    # active size flowing into the next compute layer
    flowing = spec.input_shape[0]
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Conv):
            start, count = spec.channel_slices[i]
            out = count if mask is None else int(mask[start : start + count].sum())
            counts.append((i, flowing, out))
            flowing = out
        elif isinstance(layer, Dense):
            if i == last:
                out = layer.out_units
            else:
                start, count = spec.channel_slices[i]
                out = count if mask is None else int(mask[start : start + count].sum())
            counts.append((i, flowing, out))
            flowing = out
        elif isinstance(layer, Flatten):
            in_shape = spec.in_shapes[i]
            flowing = flowing * in_shape[1] * in_shape[2]
    return counts


def forward_flops(spec, mask=None):
    """Per-sample forward FLOPs of the subnetwork selected by ``mask``
    (``None`` prices the dense network)."""
    total = 0.0
    for i, n_in, n_out in _active_counts(spec, mask):
        layer = spec.layers[i]
        if isinstance(layer, Conv):
            ho, wo = spec.out_shapes[i][1], spec.out_shapes[i][2]
            total += 2.0 * n_in * layer.kernel * layer.kernel * n_out * ho * wo
        else:
            total += 2.0 * n_in * n_out
    return total


def count_parameters(spec, mask=None):
    """Parameters attributable to the subnetwork selected by ``mask``
    (weights, biases, and per-channel affine-norm pairs)."""
    total = 0
    for i, n_in, n_out in _active_counts(spec, mask):
        layer = spec.layers[i]
        if isinstance(layer, Conv):
            total += n_out * n_in * layer.kernel * layer.kernel + n_out
        else:
            total += n_in * n_out + n_out
        if getattr(layer, "norm", False):
            total += 2 * n_out
    return total


def savings_paired_sparse(f_sparse, f_dense):
    """Dense-iteration cost over paired-sparse iteration cost: 3 f_D / (4 f_S).

    f_S = 0 (an entirely pruned network) yields an infinite ratio; that is
    reported as ``inf`` with a warning rather than an error, since callers hit
    it with degenerate masks, not bugs.
    """
    f_sparse = float(f_sparse)
    f_dense = float(f_dense)
    if f_dense <= 0.0:
        raise ParameterError(f"dense FLOPs must be positive, got {f_dense}")
    if f_sparse < 0.0:
        raise ParameterError(f"sparse FLOPs must be non-negative, got {f_sparse}")
    if f_sparse == 0.0:
        warnings.warn("sparse FLOPs are zero; savings ratio is infinite", UserWarning,
                      stacklevel=2)
        return math.inf
    return 3.0 * f_dense / (4.0 * f_sparse)


def savings_forward_only(f_sparse, f_dense):
    """Savings when only the forward pass is sparse: 3 f_D / (f_S + 2 f_D) < 1.5."""
    f_sparse = float(f_sparse)
    f_dense = float(f_dense)
    if f_dense <= 0.0:
        raise ParameterError(f"dense FLOPs must be positive, got {f_dense}")
    if f_sparse < 0.0:
        raise ParameterError(f"sparse FLOPs must be non-negative, got {f_sparse}")
    return 3.0 * f_dense / (f_sparse + 2.0 * f_dense)


@dataclass
class FlopsReport:
    """Cost summary for one mask over one architecture."""

    dense_flops: float
    sparse_flops: float
    flops_ratio: float
    savings: float
    savings_forward_only: float
    active_parameters: int
    total_parameters: int
    measured_multiplies: int | None = None

    def to_dict(self):
        return {
            "dense_flops": self.dense_flops,
            "sparse_flops": self.sparse_flops,
            "flops_ratio": self.flops_ratio,
            "savings": self.savings,
            "savings_forward_only": self.savings_forward_only,
            "active_parameters": self.active_parameters,
            "total_parameters": self.total_parameters,
            "measured_multiplies": self.measured_multiplies,
        }


def flops_report(spec, mask, measured_multiplies=None):
    f_dense = forward_flops(spec, None)
    f_sparse = forward_flops(spec, mask)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        ours = savings_paired_sparse(f_sparse, f_dense)
    return FlopsReport(
        dense_flops=f_dense,
        sparse_flops=f_sparse,
        flops_ratio=f_sparse / f_dense,
        savings=ours,
        savings_forward_only=savings_forward_only(f_sparse, f_dense),
        active_parameters=count_parameters(spec, mask),
        total_parameters=count_parameters(spec, None),
        measured_multiplies=measured_multiplies,
    )
