"""Stochastic structure-gradient estimators.

All three estimators produce a gradient w.r.t. the keep-probabilities s.
The paired-difference estimator needs two sparse forward losses and no
backward pass; the plain score estimator needs one loss; the straight-through
baseline needs a dense relaxed forward *and* a dense backward, which is
exactly the cost it exists to demonstrate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .network import backward_gates_relaxed
from .structure import DEFAULT_EPS, preconditioner, score

VR_PGE = "vr-pge"
PGE = "pge"
STE = "ste"


@dataclass
class GradEstimate:
    """A structure-gradient sample: values, producing estimator, loss inputs."""

    values: np.ndarray
    estimator: str
    losses: tuple


def _check_loss(value, name):
    value = float(value)
    if not np.isfinite(value):
        raise ParameterError(f"{name} is not finite: {value}")
    return value


def vr_pge(loss_a, loss_b, mask_a, structure, alpha=0.5, eps=DEFAULT_EPS):
    """Paired-difference score estimator.

    g = (L(m_a) - L(m_b)) * h(s) * score(m_a, s), where m_a and m_b are two
    independently sampled masks evaluated at the same weights and batch, and
    h(s) = (s(1-s))^alpha is the diagonal preconditioner. The second loss acts
    as a control variate: its expectation cancels, so the estimate stays
    unbiased for h(s) * grad of the expected loss, while the multiplier
    (L(m_a) - L(m_b)) is small whenever the two subnetworks behave alike.
    """
    la = _check_loss(loss_a, "loss_a")
    lb = _check_loss(loss_b, "loss_b")
    g = (la - lb) * preconditioner(structure, alpha) * score(mask_a, structure, eps)
    return GradEstimate(g, VR_PGE, (la, lb))


def pge(loss, mask, structure, eps=DEFAULT_EPS):
    """Plain score-function estimator g = L(m) * score(m, s).

    Unbiased for the gradient of the expected loss, but its magnitude scales
    with the full loss value, which is why it needs the paired variant in
    practice.
    """
    lv = _check_loss(loss, "loss")
    g = lv * score(mask, structure, eps)
    return GradEstimate(g, PGE, (lv,))


def ste_baseline(cache, structure):
    """Straight-through baseline: treat d(mask)/d(s) as identity, so the
    structure gradient is d(loss)/d(gate) from a dense relaxed pass.

    Requires a cache produced by :func:`sparsetrain.network.forward_relaxed`
    (a sparse cache raises, because the quantity differentiated here only
    exists on the dense path).
    """
    g = backward_gates_relaxed(cache)
    n = structure.num_channels if hasattr(structure, "num_channels") else len(structure)
    if g.shape != (n,):
        raise DimensionError(f"gate gradient length {g.shape} != structure length {n}")
    return GradEstimate(g, STE, (cache.loss,))
