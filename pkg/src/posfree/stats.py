"""Streaming mean/variance accumulation (Welford updates, Chan merges)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class EstimateAccumulator:
    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    time_ns: int = 0
    rejected: int = 0

    def update(self, sample: float) -> "EstimateAccumulator":
        if not math.isfinite(sample):
            self.rejected += 1
            return self
        self.count += 1
        delta = sample - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (sample - self.mean)
        return self

    def update_batch(self, samples) -> "EstimateAccumulator":
        x = np.asarray(samples, dtype=float).ravel()
        ok = np.isfinite(x)
        self.rejected += int(x.size - ok.sum())
        x = x[ok]
        if x.size:
            mu = float(x.mean())
            self.merge(EstimateAccumulator(int(x.size), mu, float(((x - mu) ** 2).sum())))
        return self

    def merge(self, other: "EstimateAccumulator") -> "EstimateAccumulator":
        n = self.count + other.count
        if other.count:
            delta = other.mean - self.mean
            self.mean += delta * other.count / n
            self.m2 += other.m2 + delta * delta * self.count * other.count / n
            self.count = n
        self.time_ns += other.time_ns
        self.rejected += other.rejected
        return self

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0

    @property
    def stderr(self) -> float:
        return math.sqrt(self.variance / self.count) if self.count > 1 else math.inf

    @property
    def ns_per_eval(self) -> float:
        return self.time_ns / self.count if self.count else math.nan


def welford_update(acc: EstimateAccumulator, sample: float) -> EstimateAccumulator:
    return acc.update(sample)


def combined_z(mean_a, se_a, mean_b, se_b):
    """|a - b| in units of the combined standard error."""
    se = np.sqrt(np.asarray(se_a) ** 2 + np.asarray(se_b) ** 2)
    diff = np.abs(np.asarray(mean_a) - np.asarray(mean_b))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(diff > 0, np.inf, 0.0))
