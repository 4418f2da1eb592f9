"""Exact enumeration oracles and Monte-Carlo variance diagnostics.

For small channel counts the Bernoulli mask distribution can be enumerated,
which turns expectations and variances of the structure-gradient estimators
into exact sums. That gives ground truth for unbiasedness and for the
variance bound, and a way to sanity-check the Monte-Carlo report used on
real (non-enumerable) networks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .network import forward
from .structure import (DEFAULT_EPS, SeededSampler, StructureVector,
                        preconditioner, sample_mask, score)

#: enumeration is 2^C; keep it honest about what is tractable
MAX_ENUM_CHANNELS = 20


def enumerate_masks(num_channels):
    """All 2^C binary masks as a [2^C, C] uint8 array (row i = bits of i)."""
    n = int(num_channels)
    if n < 1 or n > MAX_ENUM_CHANNELS:
        raise ParameterError(
            f"enumeration supports 1..{MAX_ENUM_CHANNELS} channels, got {n}"
        )
    ids = np.arange(2 ** n, dtype=np.int64)
    return ((ids[:, None] >> np.arange(n)[None, :]) & 1).astype(np.uint8)


def mask_probabilities(masks, structure):
    """p(m | s) for every row of ``masks`` (independent Bernoulli product)."""
    s = structure.values if isinstance(structure, StructureVector) else np.asarray(structure, float)
    m = masks.astype(np.float64)
    logp = m @ np.log(s) + (1.0 - m) @ np.log1p(-s)
    return np.exp(logp)


def _loss_table(loss_fn, masks):
    return np.array([float(loss_fn(m)) for m in masks])


def _conditional_means(masks, probs, values, s):
    """E[values | m_j = 1] and E[values | m_j = 0] for every channel j."""
    m = masks.astype(np.float64)
    pv = probs * values
    num1 = pv @ m                      # sum over masks with m_j = 1
    total = pv.sum()
    cond1 = num1 / s
    cond0 = (total - num1) / (1.0 - s)
    return cond1, cond0


def exact_grad_phi(loss_fn, structure):
    """Exact gradient of Phi(s) = E_m[L(m)]: per channel,
    E[L | m_j = 1] - E[L | m_j = 0]."""
    s = structure.values
    masks = enumerate_masks(s.size)
    probs = mask_probabilities(masks, structure)
    losses = _loss_table(loss_fn, masks)
    cond1, cond0 = _conditional_means(masks, probs, losses, s)
    return cond1 - cond0


@dataclass
class EnumerationResult:
    expectation: np.ndarray
    grad_phi: np.ndarray
    estimator: str
    alpha: float


def enumerate_expectation(loss_fn, structure, alpha=0.5, estimator="vr-pge"):
    """Exact expectation of an estimator under full mask enumeration.

    For the plain score estimator the result should equal grad_phi; for the
    paired-difference estimator it should equal h(s) * grad_phi. Both
    identities are what the unbiasedness tests check, so this routine computes
    the expectations from the raw sums, not from the identities.
    """
    s = structure.values
    masks = enumerate_masks(s.size)
    probs = mask_probabilities(masks, structure)
    losses = _loss_table(loss_fn, masks)
    scores = (masks.astype(np.float64) - s) / (s * (1.0 - s))
    mean_loss = float(probs @ losses)
    e_loss_score = (probs * losses) @ scores
    e_score = probs @ scores
    cond1, cond0 = _conditional_means(masks, probs, losses, s)
    grad_phi = cond1 - cond0
    if estimator == "pge":
        expectation = e_loss_score
    elif estimator == "vr-pge":
        # E over independent pairs (m, m') factorises: the L(m') term carries
        # E[score(m)] with it, which is exactly the control-variate algebra.
        h = preconditioner(structure, alpha)
        expectation = h * (e_loss_score - mean_loss * e_score)
    else:
        raise ParameterError(f"unknown estimator '{estimator}' for enumeration")
    return EnumerationResult(expectation, grad_phi, estimator, float(alpha))


def variance_bound_terms(structure, alpha):
    """Per-channel factor s^(2a) (1-s)^(2a-1) + s^(2a-1) (1-s)^(2a) from the
    second-moment bound; monotone decreasing in alpha for s in (0, 1)."""
    s = structure.values if isinstance(structure, StructureVector) else np.asarray(structure, float)
    a = float(alpha)
    return s ** (2 * a) * (1 - s) ** (2 * a - 1) + s ** (2 * a - 1) * (1 - s) ** (2 * a)


@dataclass
class ExactMoments:
    """Closed-form moments of the estimators under full enumeration."""

    grad_phi: np.ndarray
    mean_loss: float
    e_loss_sq: float              # E[L^2]
    pair_variance: float          # V = E (L - L')^2 over independent pairs
    pair_variance_max: float      # max over (channel, bit) of the conditional version
    var_pge: np.ndarray           # per-channel variance of the plain estimator
    var_vr: np.ndarray            # per-channel variance of the paired estimator
    second_moment_vr: float       # E ||G||^2, the quantity the bound controls
    bound_value: float            # pair_variance_max * sum of bound terms
    alpha: float

    @property
    def total_var_pge(self):
        return float(self.var_pge.sum())

    @property
    def total_var_vr(self):
        return float(self.var_vr.sum())


def enumerate_variances(loss_fn, structure, alpha=0.5):
    """Exact variances of both estimators plus the bound ingredients."""
    s = structure.values
    masks = enumerate_masks(s.size)
    probs = mask_probabilities(masks, structure)
    losses = _loss_table(loss_fn, masks)
    scores = (masks.astype(np.float64) - s) / (s * (1.0 - s))
    h = preconditioner(structure, alpha)

    mean_loss = float(probs @ losses)
    e_loss_sq = float(probs @ losses ** 2)
    cond1_l, cond0_l = _conditional_means(masks, probs, losses, s)
    grad_phi = cond1_l - cond0_l

    # plain estimator: E[(L score_j)^2] - grad_phi_j^2
    e_sq_pge = (probs * losses ** 2) @ scores ** 2
    var_pge = e_sq_pge - grad_phi ** 2

    # paired estimator: the m' average of (L - L')^2 is L^2 - 2 L E[L] + E[L^2]
    pair_term = losses ** 2 - 2.0 * losses * mean_loss + e_loss_sq
    e_sq_vr = h ** 2 * ((probs * pair_term) @ scores ** 2)
    mean_vr = h * grad_phi
    var_vr = e_sq_vr - mean_vr ** 2

    pair_variance = 2.0 * (e_loss_sq - mean_loss ** 2)
    cond1_sq, cond0_sq = _conditional_means(masks, probs, losses ** 2, s)
    cond_pair_1 = cond1_sq - 2.0 * cond1_l * mean_loss + e_loss_sq
    cond_pair_0 = cond0_sq - 2.0 * cond0_l * mean_loss + e_loss_sq
    pair_variance_max = float(np.maximum(cond_pair_1, cond_pair_0).max())

    terms = variance_bound_terms(structure, alpha)
    return ExactMoments(
        grad_phi=grad_phi,
        mean_loss=mean_loss,
        e_loss_sq=e_loss_sq,
        pair_variance=pair_variance,
        pair_variance_max=pair_variance_max,
        var_pge=var_pge,
        var_vr=var_vr,
        second_moment_vr=float(e_sq_vr.sum()),
        bound_value=pair_variance_max * float(terms.sum()),
        alpha=float(alpha),
    )


# ---------------------------------------------------------------------------
# Monte-Carlo report for non-enumerable models
# ---------------------------------------------------------------------------

@dataclass
class VarianceReport:
    """Sampled variance diagnostics for a loss-over-masks model."""

    num_channels: int
    alpha: float
    n_samples: int
    cond_samples: int
    var_pge: np.ndarray = field(repr=False)
    var_vr: np.ndarray = field(repr=False)
    total_var_pge: float = 0.0
    total_var_vr: float = 0.0
    v_hat: float = 0.0            # E (L - L')^2 estimate
    v_max_hat: float = 0.0        # max conditional version over (channel, bit)
    e_loss_sq_hat: float = 0.0    # E[L^2] estimate
    bound_value: float = 0.0      # v_max_hat * sum of bound terms

    def to_dict(self):
        return {
            "num_channels": self.num_channels,
            "alpha": self.alpha,
            "n_samples": self.n_samples,
            "cond_samples": self.cond_samples,
            "total_var_pge": self.total_var_pge,
            "total_var_vr": self.total_var_vr,
            "variance_ratio": (self.total_var_pge / self.total_var_vr
                               if self.total_var_vr > 0 else float("inf")),
            "v_hat": self.v_hat,
            "v_max_hat": self.v_max_hat,
            "e_loss_sq_hat": self.e_loss_sq_hat,
            "bound_value": self.bound_value,
            "var_pge": self.var_pge.tolist(),
            "var_vr": self.var_vr.tolist(),
        }


def variance_report(loss_fn, structure, alpha=0.5, n_samples=1000,
                    cond_samples=None, seed=0, eps=DEFAULT_EPS):
    """Monte-Carlo estimates of estimator variances and the bound ingredients.

    ``n_samples`` independent mask pairs feed the estimator variances and the
    unconditional pair statistic; ``cond_samples`` pairs per (channel, bit)
    condition feed the conditional maximum. Interval-scale accuracy only —
    this is a diagnostic, not an oracle.
    """
    n_samples = int(n_samples)
    if n_samples < 100:
        raise ParameterError(f"n_samples must be >= 100, got {n_samples}")
    if cond_samples is None:
        cond_samples = max(100, n_samples // 4)
    cond_samples = int(cond_samples)
    sampler = SeededSampler(seed)
    s = structure.values
    n = s.size

    masks_a = np.stack([sample_mask(structure, sampler) for _ in range(n_samples)])
    masks_b = np.stack([sample_mask(structure, sampler) for _ in range(n_samples)])
    loss_a = _loss_table(loss_fn, masks_a)
    loss_b = _loss_table(loss_fn, masks_b)

    scores = (masks_a.astype(np.float64) - s) / (s * (1.0 - s))
    h = preconditioner(structure, alpha)
    samples_pge = loss_a[:, None] * scores
    samples_vr = (loss_a - loss_b)[:, None] * (h * scores)
    var_pge = samples_pge.var(axis=0, ddof=1)
    var_vr = samples_vr.var(axis=0, ddof=1)

    both = np.concatenate([loss_a, loss_b])
    v_hat = float(((loss_a - loss_b) ** 2).mean())
    e_loss_sq_hat = float((both ** 2).mean())

    v_max_hat = -np.inf
    for j in range(n):
        for bit in (0, 1):
            m = np.stack([sample_mask(structure, sampler) for _ in range(cond_samples)])
            m[:, j] = bit
            mp = np.stack([sample_mask(structure, sampler) for _ in range(cond_samples)])
            diffs = _loss_table(loss_fn, m) - _loss_table(loss_fn, mp)
            v_max_hat = max(v_max_hat, float((diffs ** 2).mean()))

    terms = variance_bound_terms(structure, alpha)
    return VarianceReport(
        num_channels=n,
        alpha=float(alpha),
        n_samples=n_samples,
        cond_samples=cond_samples,
        var_pge=var_pge,
        var_vr=var_vr,
        total_var_pge=float(var_pge.sum()),
        total_var_vr=float(var_vr.sum()),
        v_hat=v_hat,
        v_max_hat=v_max_hat,
        e_loss_sq_hat=e_loss_sq_hat,
        bound_value=v_max_hat * float(terms.sum()),
    )


# ---------------------------------------------------------------------------
# toy loss models and the network adapter
# ---------------------------------------------------------------------------

def toy_linear(num_channels, seed=0, offset=2.0):
    """L(m) = offset + a . m with per-channel weights a."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(-0.5, 1.0, num_channels)

    def loss_fn(mask):
        return offset + float(a @ mask)

    return loss_fn


def toy_quadratic(num_channels, seed=0, offset=2.0):
    """L(m) = offset + a . m + m^T Q m with weak random couplings."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(-0.6, 0.9, num_channels)
    q = rng.normal(0.0, 0.15, (num_channels, num_channels))
    q = 0.5 * (q + q.T)

    def loss_fn(mask):
        m = mask.astype(np.float64)
        return offset + float(a @ m + m @ q @ m)

    return loss_fn


def toy_table(num_channels, seed=0, offset=2.0, spread=0.8):
    """Fully general loss: an independent random value per mask."""
    rng = np.random.default_rng(seed)
    table = offset + rng.uniform(0.0, spread, 2 ** num_channels)

    def loss_fn(mask):
        idx = int(np.asarray(mask, dtype=np.int64) @ (1 << np.arange(num_channels)))
        return float(table[idx])

    return loss_fn


def toy_exponential(num_channels, seed=0, offset=1.5):
    """Smooth non-polynomial interaction: offset + 0.5 exp(0.3 a . m)."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(-0.8, 0.8, num_channels)

    def loss_fn(mask):
        return offset + 0.5 * float(np.exp(0.3 * (a @ mask)))

    return loss_fn


def network_loss(spec, params, inputs, labels):
    """Adapter turning a fixed (network, batch) into a loss-over-masks model."""

    def loss_fn(mask):
        loss, _ = forward(spec, params, mask, inputs, labels, want_cache=False)
        return loss

    return loss_fn
