"""Seeded Monte Carlo plumbing shared by every executor in the package.

Streams are counter-based (Philox) and derived from ``(seed, *path)``, so the
stream for a given path is a pure function of the root seed: trial chunk i
always sees the same randomness no matter how many workers run, and pool
streams never collide with trial streams because they live under a different
path prefix.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

# Trials are processed in fixed-size chunks; chunk index = stream index, so
# results are bit-identical for any worker count.
CHUNK = 1 << 16

# Path namespaces (first path component after the seed).
NS_TRIALS = 0
NS_POOL = 1


def stream(seed: int, *path: int) -> np.random.Generator:
    """Generator that is a pure function of (seed, path)."""
    entropy = (int(seed),) + tuple(int(p) for p in path)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def wilson_interval(successes: float, count: int, confidence: float = 0.999) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if not 0 <= successes <= count:
        raise ValueError("successes must lie in [0, count]")
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    z = NormalDist().inv_cdf((1 + confidence) / 2)
    p = successes / count
    denom = 1 + z * z / count
    center = (p + z * z / (2 * count)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / count + z * z / (4 * count * count))
    return (max(0.0, center - half), min(1.0, center + half))


@dataclass(frozen=True)
class RateEstimate:
    """Empirical conditional rate with a Wilson interval."""

    successes: float
    conditioning_count: int
    confidence: float = 0.999

    @property
    def point(self) -> float:
        if self.conditioning_count == 0:
            return 0.0
        return self.successes / self.conditioning_count

    @property
    def ci_low(self) -> float:
        if self.conditioning_count == 0:
            return 0.0
        return wilson_interval(self.successes, self.conditioning_count, self.confidence)[0]

    @property
    def ci_high(self) -> float:
        if self.conditioning_count == 0:
            return 1.0
        return wilson_interval(self.successes, self.conditioning_count, self.confidence)[1]

    @property
    def half_width(self) -> float:
        return (self.ci_high - self.ci_low) / 2


@dataclass(frozen=True)
class MeanEstimate:
    """Empirical mean of a real-valued outcome with a normal-theory interval.

    Used where the per-trial outcome is a fraction that is not 0/1 (service
    values); the interval uses the sample variance, so unlike Wilson it does
    not assume Bernoulli outcomes.
    """

    total: float
    total_sq: float
    count: int
    confidence: float = 0.999

    @property
    def point(self) -> float:
        if self.count == 0:
            return 0.0
        return self.total / self.count

    @property
    def half_width(self) -> float:
        if self.count < 2:
            return float("inf")
        z = NormalDist().inv_cdf((1 + self.confidence) / 2)
        var = max(0.0, self.total_sq / self.count - self.point**2)
        return z * math.sqrt(var / self.count)

    @property
    def ci_low(self) -> float:
        return self.point - self.half_width

    @property
    def ci_high(self) -> float:
        return self.point + self.half_width


def run_trials(experiment, trials: int, seed: int, workers: int = 1, confidence: float = 0.999) -> dict:
    """Run ``experiment(rng, m)`` over ``trials`` trials in deterministic chunks.

    The experiment returns ``{key: (successes, count)}`` (or
    ``(total, total_sq, count)`` for real-valued outcomes); tuples are summed
    componentwise in chunk order, so the aggregate is bit-identical for fixed
    (seed, trials) regardless of ``workers``.  Pairs come back as
    RateEstimate, triples as MeanEstimate.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    chunks = [(i, min(CHUNK, trials - i * CHUNK)) for i in range((trials + CHUNK - 1) // CHUNK)]

    def one(chunk):
        index, m = chunk
        return experiment(stream(seed, NS_TRIALS, index), m)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, chunks))
    else:
        results = [one(chunk) for chunk in chunks]

    sums: dict = {}
    for result in results:  # fixed chunk order keeps float sums deterministic
        for key, value in result.items():
            if key in sums:
                sums[key] = tuple(a + b for a, b in zip(sums[key], value))
            else:
                sums[key] = tuple(value)

    estimates = {}
    for key, value in sums.items():
        if len(value) == 2:
            estimates[key] = RateEstimate(value[0], int(value[1]), confidence)
        elif len(value) == 3:
            estimates[key] = MeanEstimate(value[0], value[1], int(value[2]), confidence)
        else:
            raise ValueError(f"experiment value for {key!r} must be a 2- or 3-tuple")
    return estimates
