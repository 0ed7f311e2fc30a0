"""Closed-form and empirical channel metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np


def caf(n: int, m: int = 0, s: int = 0) -> float:
    """Message bits per pointer bit; a pointer costs at least one bit."""
    if n < 1 or m < 0 or s < 0:
        raise ValueError("need n >= 1 and m, s >= 0")
    return n / max(1, m + s)


def expected_attempts(n: int) -> int:
    if n < 0:
        raise ValueError("n must be >= 0")
    return 2 ** n


def expected_bits_per_attempt(n: int) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    return n / 2 ** n


def phi_ratio(measured_bits_per_attempt: float, n: int) -> float:
    return measured_bits_per_attempt / expected_bits_per_attempt(n)


def fitness(bps: float, n_ecc: int, n_pr: int, caf_value: float) -> float:
    """bps weighted by the share of pointers that survived ECC; zero when CAF <= 1."""
    if caf_value <= 1 or n_pr <= 0:
        return 0.0
    return bps * n_ecc / n_pr


def sbw(legit_bits: float, mean_distance: Optional[float]) -> Optional[float]:
    """Legitimate bits per average match distance; None without matches."""
    if mean_distance is None or mean_distance <= 0:
        return None
    return legit_bits / mean_distance


def mean_distance(distances) -> Optional[float]:
    if len(distances) == 0:
        return None
    return float(np.mean(distances))


def geometric_trials(n: int, draws: int, seed: int = 0) -> np.ndarray:
    """POIs per match when every POI yields ``n`` i.i.d. uniform bits.

    Matching targets are themselves random, so the draw is a success with
    probability ``2**-n``; returns the inter-match distances.
    """
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2 ** n, draws)
    target = rng.integers(0, 2 ** n, draws)
    hits = np.flatnonzero(bits == target)
    return np.diff(np.concatenate(([-1], hits)))


@dataclass(frozen=True)
class MetricSet:
    caf: float
    ea: int
    e_bits: float
    phi: Optional[float]
    distance_mean: Optional[float]
    sbw: Optional[float]
    bps: float
    fitness: float

    UNITS = {
        "caf": "ratio", "ea": "attempts", "e_bits": "bits/attempt", "phi": "ratio",
        "distance_mean": "POIs", "sbw": "bits/s", "bps": "bits/s", "fitness": "bits/s",
    }

    def labeled(self) -> dict:
        return {k: {"value": v, "unit": self.UNITS[k]} for k, v in asdict(self).items()}

    def check(self) -> None:
        for k, v in asdict(self).items():
            if v is not None and not math.isfinite(v):
                raise ValueError(f"metric {k} is not finite")
        if self.caf <= 1 and self.fitness != 0:
            raise ValueError("fitness must be zero when CAF <= 1")


def metric_set(report) -> MetricSet:
    """Collect the headline metrics of a session report."""
    return MetricSet(report.caf, expected_attempts(report.bitlength),
                     expected_bits_per_attempt(report.bitlength), report.phi,
                     report.mean_distance, report.sbw, report.bps, report.fitness)
