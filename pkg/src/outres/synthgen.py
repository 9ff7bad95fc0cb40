"""Synthetic bivariate datasets with injected outliers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, Dataset
from .samplers import make_rng

OUTLIER_SD = 0.25
OUTLIER_MEANS = {"dist1": ((4.0, 0.0),), "dist2": ((4.0, 0.0), (0.0, 6.0))}


@dataclass(frozen=True)
class SynthSpec:
    n: int = 1000
    outlier_distribution: str = "dist1"
    rate: float = 0.05
    seed: int = 0
    base_mean: tuple[float, float] = (0.0, 0.0)
    base_sds: tuple[float, float] = (1.0, 2.0)

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"n={self.n} must be >= 1")
        if not 0.0 <= self.rate < 1.0:
            raise ConfigError(f"rate={self.rate} outside [0, 1)")
        if self.outlier_distribution not in OUTLIER_MEANS:
            raise ConfigError(f"unknown outlier distribution {self.outlier_distribution!r}; expected dist1 or dist2")

    @property
    def n_outliers(self) -> int:
        # round half up, not Python's banker's rounding
        return int(math.floor(self.rate * self.n + 0.5))

    @property
    def dataset_id(self) -> str:
        return f"synth-{self.outlier_distribution}-g{self.rate:g}-n{self.n}-s{self.seed}"


def generate(spec: SynthSpec) -> Dataset:
    """Independent bivariate normal inliers with ``round(rate*n)`` outliers.

    Outlier rows sit at uniformly random positions. ``dist1`` outliers come
    from N((4,0), 0.25^2 I); ``dist2`` outliers pick N((4,0), .) or
    N((0,6), .) with probability 1/2 each.
    """
    rng = make_rng(spec.seed)
    n = spec.n
    values = rng.normal(spec.base_mean, spec.base_sds, size=(n, 2))
    k = spec.n_outliers
    gt = np.zeros(n, dtype=bool)
    if k:
        pos = rng.choice(n, size=k, replace=False)
        gt[pos] = True
        means = np.asarray(OUTLIER_MEANS[spec.outlier_distribution])
        comp = rng.integers(len(means), size=k)
        values[pos] = means[comp] + rng.normal(0.0, OUTLIER_SD, size=(k, 2))
    return Dataset(values, ("x1", "x2"), gt, spec.dataset_id)


def outlier_components(dataset: Dataset) -> np.ndarray:
    """Component index (0: near (4,0), 1: near (0,6)) of each true outlier."""
    out = dataset.values[dataset.ground_truth]
    means = np.asarray(OUTLIER_MEANS["dist2"])
    d = ((out[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d, axis=1)


FIG1_N = 1500
FIG1_MEAN = (-1.0, 1.0)
FIG1_VAR = (1.015, 1.035)


def generate_fig1(seed: int = 0) -> Dataset:
    """1,500 independent bivariate normal points, mean (-1, 1), variances (1.015, 1.035)."""
    rng = make_rng(seed)
    values = rng.normal(FIG1_MEAN, np.sqrt(FIG1_VAR), size=(FIG1_N, 2))
    return Dataset(values, ("x1", "x2"), None, f"fig1-s{seed}")
