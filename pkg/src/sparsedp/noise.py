"""Two-sided geometric noise, exact binomial counts and clamping.

Powers of alpha are evaluated as ``exp(k * log(alpha))`` so large
exponents underflow gracefully instead of through repeated products.
Noise magnitudes are capped where the tail probability drops below
``2**-60``, below the resolution of a single uniform draw.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from typing import Optional

import numpy as np

TAIL_RESOLUTION = 2.0 ** -60


@dataclasses.dataclass(frozen=True)
class NoiseSpec:
    """Privacy parameters for the geometric mechanism.

    Attributes:
        epsilon: privacy budget, > 0.
        sensitivity: integer sensitivity Delta >= 1.
    """

    epsilon: float
    sensitivity: int = 1

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if int(self.sensitivity) != self.sensitivity or self.sensitivity < 1:
            raise ValueError(f"sensitivity must be a positive integer, got {self.sensitivity}")
        object.__setattr__(self, "sensitivity", int(self.sensitivity))

    @property
    def log_alpha(self) -> float:
        return -self.epsilon / self.sensitivity

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)

    def scaled(self, factor: int) -> "NoiseSpec":
        """Same budget, sensitivity multiplied by ``factor``."""
        return NoiseSpec(self.epsilon, self.sensitivity * int(factor))

    @property
    def max_magnitude(self) -> int:
        """Largest noise magnitude whose tail mass is >= 2**-60."""
        a = self.alpha
        # tail Pr[|X| >= k] = 2 a^k / (1 + a)
        k = (math.log(TAIL_RESOLUTION) - math.log(2.0 / (1.0 + a))) / self.log_alpha
        return int(math.ceil(k))


def alpha_pow(log_alpha: float, k):
    return np.exp(np.multiply(k, log_alpha, dtype=np.float64))


# ---------------------------------------------------------------------------
# Random streams


class RngHandle:
    """Seeded source of independent, labelled numpy generators.

    ``RngHandle(7).stream("anonymize")`` always yields the same generator
    state; different labels give statistically independent streams.
    """

    def __init__(self, seed: Optional[int] = None):
        if seed is None:
            seed = int(np.random.SeedSequence().entropy % (2**63))
        self.seed = int(seed)

    @staticmethod
    def _label_key(label: str) -> int:
        digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")

    def stream(self, label: str = "default") -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self._label_key(label),))
        return np.random.Generator(np.random.PCG64(ss))

    def spawn(self, label: str) -> "RngHandle":
        child = self.stream(label).integers(0, 2**63 - 1)
        return RngHandle(int(child))

    def __repr__(self):
        return f"RngHandle(seed={self.seed})"


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngHandle):
        return rng.stream()
    return np.random.default_rng(rng)


def uniform_open_closed(rng: np.random.Generator, size=None):
    """Uniform draws on (0, 1]."""
    return 1.0 - rng.random(size)


# ---------------------------------------------------------------------------
# Geometric mechanism


def geom_pmf(spec: NoiseSpec, x):
    """Pr[X = x] = (1 - a) / (1 + a) * a^|x| for the symmetric geometric law."""
    a = spec.alpha
    return (1.0 - a) / (1.0 + a) * alpha_pow(spec.log_alpha, np.abs(x))


def geom_abs_mean(spec: NoiseSpec) -> float:
    """E|X| = 2a / (1 - a^2)."""
    a = spec.alpha
    return 2.0 * a / -math.expm1(2.0 * spec.log_alpha)


def geom_variance(spec: NoiseSpec) -> float:
    """Var X = 2a / (1 - a)^2."""
    a = spec.alpha
    return 2.0 * a / math.expm1(spec.log_alpha) ** 2


def sample_geometric(spec: NoiseSpec, rng: np.random.Generator, size=None):
    """Draws symmetric geometric noise by inverse transform.

    The magnitude K satisfies Pr[K >= k] = 2 a^k / (1 + a) for k >= 1; it is
    recovered from one uniform u in (0, 1] as the largest k with
    Pr[K >= k] >= u. A fair coin then fixes the sign.

    Args:
        spec: noise parameters.
        rng: numpy Generator.
        size: output shape; None returns a Python int.
    """
    a = spec.alpha
    u = uniform_open_closed(rng, size)
    # largest k with 2 a^k / (1+a) >= u  <=>  k <= log(u (1+a) / 2) / log a
    t = np.log(u * ((1.0 + a) / 2.0)) / spec.log_alpha
    mag = np.where(t >= 0.0, np.floor(np.maximum(t, 0.0)), 0.0)
    mag = np.minimum(mag, spec.max_magnitude).astype(np.int64)
    sign = rng.integers(0, 2, size=size, dtype=np.int64) * 2 - 1
    out = mag * sign
    if size is None:
        return int(out)
    return out


def sample_binomial(trials: int, p: float, rng: np.random.Generator) -> int:
    """Exact Binomial(trials, p) variate.

    numpy's sampler uses inversion when ``trials * p <= 30`` and the BTPE
    accept/reject method above that; both are exact.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be a probability, got {p}")
    trials = int(trials)
    if trials < 0:
        raise ValueError("trials must be non-negative")
    if trials == 0 or p == 0.0:
        return 0
    if p == 1.0:
        return trials
    return int(rng.binomial(trials, p))


def clamp_nonnegative(obj):
    """Rounds negative values up to 0.

    Scalars and arrays are clamped elementwise. A Summary loses every entry
    whose value is <= 0 after clamping.
    """
    from .summary import Summary

    if isinstance(obj, Summary):
        return obj.select(obj.values > 0)
    if np.ndim(obj) == 0:
        return max(obj, 0)
    return np.maximum(np.asarray(obj), 0)
