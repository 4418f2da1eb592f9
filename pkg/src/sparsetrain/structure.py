"""Keep-probabilities over the channel set: sampling, score function,
preconditioning, and Euclidean projection onto the budgeted box.

Each prunable channel c carries an independent Bernoulli keep-probability
s_c. Masks are sampled from it, the score function (m - s) / (s (1 - s))
turns sampled losses into stochastic gradients w.r.t. s, and the projection
keeps s inside {s in [0,1]^C : sum(s) <= budget} after every update.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, DimensionError, ParameterError

#: Default half-width of the interval excluded around 0 and 1. Keeping s away
#: from the boundary bounds the score magnitude by 1/eps.
DEFAULT_EPS = 1e-4

#: Budget feasibility is always checked up to this additive slack.
FEASIBILITY_SLACK = 1e-9

_BISECT_TOL = 1e-10
_BISECT_MAX_ITER = 200


def derive_seed(parent_seed, index):
    """Deterministic stream split: hash (parent seed, stream index) into a
    fresh 63-bit seed. Children with different indices are decorrelated."""
    digest = hashlib.sha256(f"{int(parent_seed)}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass
class StructureVector:
    """Per-channel keep probabilities plus the global budget ``sum(s) <= budget``."""

    values: np.ndarray
    budget: float

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise DimensionError(f"structure values must be 1-d, got shape {self.values.shape}")
        self.budget = float(self.budget)
        if not self.budget > 0.0:
            raise ParameterError(f"budget must be positive, got {self.budget}")
        if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise ContractViolation("structure values outside [0, 1]")

    @property
    def num_channels(self):
        return self.values.size

    @property
    def remain_ratio(self):
        return self.budget / self.values.size

    def is_feasible(self, slack=FEASIBILITY_SLACK):
        return float(self.values.sum()) <= self.budget + slack

    def copy(self):
        return StructureVector(self.values.copy(), self.budget)


def initial_structure(num_channels, remain_ratio):
    """Uniform start s = remain_ratio * 1, budget = remain_ratio * |C|."""
    if not 0.0 < remain_ratio <= 1.0:
        raise ParameterError(f"remain_ratio must be in (0, 1], got {remain_ratio}")
    n = int(num_channels)
    if n <= 0:
        raise ParameterError(f"num_channels must be positive, got {num_channels}")
    return StructureVector(np.full(n, float(remain_ratio)), remain_ratio * n)


class SeededSampler:
    """Deterministic mask source backed by PCG64.

    The same seed and the same call sequence reproduce the same stream
    bit-for-bit. ``spawn(index)`` derives an independent child stream;
    ``state`` is JSON-serialisable for checkpointing.
    """

    def __init__(self, seed):
        self.seed = int(seed)
        self._rng = np.random.Generator(np.random.PCG64(self.seed))

    def sample(self, structure):
        s = _values_of(structure)
        u = self._rng.random(s.size)
        return (u < s).astype(np.uint8)

    def spawn(self, index):
        return SeededSampler(derive_seed(self.seed, index))

    @property
    def state(self):
        return self._rng.bit_generator.state

    @state.setter
    def state(self, value):
        self._rng.bit_generator.state = value


def sample_mask(structure, sampler):
    """Draw one mask m with independent entries m_c ~ Bernoulli(s_c)."""
    return sampler.sample(structure)


def _values_of(structure):
    if isinstance(structure, StructureVector):
        return structure.values
    return np.ascontiguousarray(structure, dtype=np.float64)


def score(mask, structure, eps=DEFAULT_EPS):
    """Gradient of the mask log-probability w.r.t. s: (m - s) / (s (1 - s)).

    Requires all entries of s inside [eps, 1 - eps]; outside that interval the
    denominator is no longer safely bounded and the caller has skipped the
    interior clamp, which is a contract violation rather than a numeric issue.
    Its expectation over m is exactly the zero vector for any s.
    """
    s = _values_of(structure)
    m = np.asarray(mask)
    if m.shape != s.shape:
        raise DimensionError(f"mask shape {m.shape} != structure shape {s.shape}")
    if s.size and (s.min() < eps or s.max() > 1.0 - eps):
        raise ContractViolation(
            f"structure values outside the clamped interior [{eps}, {1.0 - eps}]"
        )
    return (m.astype(np.float64) - s) / (s * (1.0 - s))


def preconditioner(structure, alpha):
    """Diagonal damping h(s) = (s (1 - s))^alpha applied to score-based updates.

    alpha in [0.5, 1) keeps the variance guarantee; other values are legal but
    warned about. alpha = 0 returns all ones (no damping).
    """
    alpha = float(alpha)
    if alpha != 0.0 and not (0.5 <= alpha < 1.0):
        warnings.warn(
            f"alpha={alpha} is outside [0.5, 1); the variance guarantee no longer applies",
            UserWarning,
            stacklevel=2,
        )
    s = _values_of(structure)
    return (s * (1.0 - s)) ** alpha


def clamp_interior(structure, eps=DEFAULT_EPS):
    """Clip every entry of s into [eps, 1 - eps]."""
    if not 0.0 < eps < 0.1:
        raise ParameterError(f"eps must be in (0, 0.1), got {eps}")
    s = _values_of(structure)
    clipped = np.clip(s, eps, 1.0 - eps)
    if isinstance(structure, StructureVector):
        return StructureVector(clipped, structure.budget)
    return clipped


def project(z, budget, lower=0.0, upper=1.0):
    """Euclidean projection of z onto {s in [lower, upper]^n : sum(s) <= budget}.

    The optimum has the closed form clip(z - v, lower, upper) for a scalar
    shift v = max(0, v*), where v* is a root of the budget residual
    g(v) = sum(clip(z - v, lower, upper)) - budget. g is piecewise linear and
    non-increasing, so bisection on [min(z) - upper, max(z) - lower] converges
    unconditionally; iteration stops at |g| <= 1e-10 or 200 halvings. If the
    box-clipped point already satisfies the budget it is returned unchanged,
    which also makes the projection exactly idempotent.
    """
    z = np.ascontiguousarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise DimensionError(f"projection input must be 1-d, got shape {z.shape}")
    budget = float(budget)
    if not budget > 0.0:
        raise ParameterError(f"budget must be positive, got {budget}")
    lower = float(lower)
    upper = float(upper)
    if not lower < upper:
        raise ParameterError(f"empty box: lower={lower} >= upper={upper}")
    if budget < z.size * lower - FEASIBILITY_SLACK:
        raise ParameterError(
            f"budget {budget} is below the box floor {z.size * lower}; the set is empty"
        )

    clipped = np.clip(z, lower, upper)
    if clipped.sum() <= budget + FEASIBILITY_SLACK:
        return StructureVector(clipped, budget)

    lo = float(z.min()) - upper
    hi = float(z.max()) - lower
    for _ in range(_BISECT_MAX_ITER):
        v = 0.5 * (lo + hi)
        g = np.clip(z - v, lower, upper).sum() - budget
        if abs(g) <= _BISECT_TOL:
            break
        if g > 0.0:
            lo = v
        else:
            hi = v
    v = max(0.0, v)
    return StructureVector(np.clip(z - v, lower, upper), budget)


def reference_projection(z, budget, lower=0.0, upper=1.0):
    """Exact projection via the piecewise-linear optimality conditions.

    Solves the same problem as :func:`project` by walking the sorted
    breakpoints of the budget residual g(v) = sum(clip(z - v, lo, hi)) - budget
    and solving the linear segment that brackets the root in closed form.
    Algorithmically independent of the bisection path; used by the
    ``project-check`` self-test and the test suite.
    """
    z = np.asarray(z, dtype=np.float64).ravel()
    budget = float(budget)
    s0 = np.clip(z, lower, upper)
    if s0.sum() <= budget:
        return s0

    def residual(v):
        return np.clip(z - v, lower, upper).sum() - budget

    breakpoints = np.unique(np.concatenate([z - upper, z - lower]))
    breakpoints = breakpoints[breakpoints > 0.0]
    prev = 0.0
    bracket_end = None
    for b in breakpoints:
        if residual(b) <= 0.0:
            bracket_end = b
            break
        prev = b
    if bracket_end is None:
        # residual stays positive through every breakpoint; beyond the last
        # one all entries sit at `lower`, so this only happens for an empty
        # feasible set, which `project` rejects up front as well
        raise ParameterError(f"budget {budget} is below the box floor {z.size * lower}")
    mid = 0.5 * (prev + bracket_end)
    shifted = z - mid
    interior = (shifted > lower) & (shifted < upper)
    n_upper = int((shifted >= upper).sum())
    n_lower = int((shifted <= lower).sum())
    k = int(interior.sum())
    if k == 0:
        v = bracket_end
    else:
        v = (z[interior].sum() + n_upper * upper + n_lower * lower - budget) / k
    return np.clip(z - v, lower, upper)
