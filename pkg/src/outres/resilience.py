"""Resilience to sampling: exact metric, expected-overlap model, estimators.

Resilience compares the outliers a method finds when run on a sample,
``O^S``, with the whole-dataset detections restricted to the sampled rows,
``O[S]``:  ``rho = 2|O^S & O[S]| / (|O^S| + |O[S]|)``, defined as 1 when
both sets are empty.

Two estimators are provided. *Exact* mode runs the detector on the whole
dataset once and on every sample. *Blind* mode never touches the whole
dataset: on each sample it fits the EM ensemble over a panel of detectors to
obtain sample sensitivity/specificity, takes the across-sample average of
those estimates as the whole-dataset rates, and plugs both panels into the
expected-overlap model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import DataError, Dataset, DimensionError, RangeError, RatePanel
from .detectors import DetectorConfig, run_detector
from .ensemble import INLIER, OUTLIER, EnsembleModel, em_fit
from .samplers import SampleIndex, block_sample, derive_seed, partition, random_sample

MODES = ("exact", "blind")
SCHEMES = ("random", "block", "partition")


# ---------------------------------------------------------------- the metric


def resilience_exact(sample_flags, whole_flags_restricted) -> float:
    """Harmonic-mean agreement of two flag vectors over the same sampled rows."""
    a = np.asarray(sample_flags, dtype=bool)
    b = np.asarray(whole_flags_restricted, dtype=bool)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"flag vectors differ in shape: {a.shape} vs {b.shape}")
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        return 1.0
    return 2 * int(np.sum(a & b)) / denom


@dataclass(frozen=True)
class OverlapCounts:
    both: float
    neither: float
    sample_only: float
    whole_only: float

    @property
    def total(self) -> float:
        return self.both + self.neither + self.sample_only + self.whole_only


def expected_overlaps(sample_size: float, whole: RatePanel, sample: RatePanel) -> OverlapCounts:
    """Expected agreement counts under conditionally independent whole/sample runs.

    ``whole`` holds the whole-dataset sensitivity/specificity, ``sample`` the
    sample ones; both must carry the same prevalence.
    """
    for p in (whole, sample):
        for name in ("alpha", "beta", "gamma"):
            val = getattr(p, name)
            if not 0.0 <= val <= 1.0:
                raise DataError(f"{name}={val!r} is not a probability")
    if not math.isclose(whole.gamma, sample.gamma, rel_tol=0, abs_tol=1e-12):
        raise DataError(f"prevalence differs between panels: {whole.gamma} vs {sample.gamma}")
    g, a, b = whole.gamma, whole.alpha, whole.beta
    aS, bS = sample.alpha, sample.beta
    S = sample_size
    return OverlapCounts(
        both=S * (g * a * aS + (1 - g) * (1 - b) * (1 - bS)),
        neither=S * ((1 - g) * b * bS + g * (1 - a) * (1 - aS)),
        sample_only=S * (g * (1 - a) * aS + (1 - g) * b * (1 - bS)),
        whole_only=S * (g * a * (1 - aS) + (1 - g) * (1 - b) * bS),
    )


def resilience_from_expectations(oc: OverlapCounts) -> float:
    denom = 2 * oc.both + oc.sample_only + oc.whole_only
    if denom <= 0:
        return 1.0
    return 2 * oc.both / denom


# ---------------------------------------------------------------- sampling


@dataclass(frozen=True)
class SchemeSpec:
    """A sampling scheme and its parameters.

    ``size`` (random) is an absolute row count when >= 1 and a fraction of
    the dataset when < 1.
    """

    kind: str
    size: float = 0.0
    n_blocks: int = 0
    block_size: int = 0
    k: int = 0

    def __post_init__(self):
        if self.kind not in SCHEMES:
            raise DataError(f"unknown scheme {self.kind!r}; expected one of {SCHEMES}")

    @classmethod
    def random(cls, size) -> "SchemeSpec":
        return cls("random", size=size)

    @classmethod
    def block(cls, n_blocks: int, block_size: int) -> "SchemeSpec":
        return cls("block", n_blocks=n_blocks, block_size=block_size)

    @classmethod
    def partition(cls, k: int) -> "SchemeSpec":
        return cls("partition", k=k)

    def sample_size(self, n: int) -> int:
        if self.kind == "random":
            return int(round(self.size * n)) if self.size < 1 else int(self.size)
        if self.kind == "block":
            return self.n_blocks * self.block_size
        return -(-n // self.k)

    def label(self) -> str:
        if self.kind == "random":
            return f"random({self.size:g})"
        if self.kind == "block":
            return f"block({self.n_blocks}-{self.block_size})"
        return f"partition({self.k})"

    def draw(self, n: int, seed: int) -> list[SampleIndex]:
        """Samples for one replicate: one for random/block, ``k`` for partition."""
        if self.kind == "random":
            return [random_sample(n, self.sample_size(n), seed)]
        if self.kind == "block":
            return [block_sample(n, self.n_blocks, self.block_size, seed)]
        return partition(n, self.k, seed)


def draw_replicates(n: int, scheme: SchemeSpec, replicates: int, seed: int) -> list[tuple[int, int, SampleIndex]]:
    """``(replicate, part, sample)`` triples; replicate ``r`` uses its own seed substream."""
    if replicates < 1:
        raise RangeError(f"replicates={replicates} must be >= 1")
    out = []
    for r in range(replicates):
        for part, s in enumerate(scheme.draw(n, derive_seed(seed, "sample", r))):
            out.append((r, part, s))
    return out


def detector_seed(seed: int, cfg: DetectorConfig) -> int:
    """Seed of every run of ``cfg`` under ``seed``, whole-dataset and per-sample alike.

    Sharing it makes a run on a sample equal to the whole rows reproduce the
    whole-dataset run exactly, even for seeded methods.
    """
    return derive_seed(seed, "detector", cfg.method)


# ---------------------------------------------------------------- estimates


@dataclass(frozen=True, eq=False)
class ResilienceEstimate:
    per_replicate: np.ndarray
    mode: str
    method: str
    scheme: str
    sample_size: int
    replicate_keys: tuple = ()

    def __post_init__(self):
        v = np.asarray(self.per_replicate, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "per_replicate", v)

    @property
    def mean(self) -> float:
        return float(self.per_replicate.mean())

    @property
    def point(self) -> float:
        return self.mean

    @property
    def sd(self) -> Optional[float]:
        if self.per_replicate.size < 2:
            return None
        return float(self.per_replicate.std(ddof=1))


def run_whole(dataset: Dataset, cfgs: Sequence[DetectorConfig], seed: int) -> list[np.ndarray]:
    """Whole-dataset flags of every method."""
    return [run_detector(dataset, c, None, detector_seed(seed, c)).record_flags for c in cfgs]


def run_samples(dataset: Dataset, cfgs: Sequence[DetectorConfig], samples, seed: int) -> np.ndarray:
    """Sample-run flags, an object array of shape (n_samples, M) holding flag vectors."""
    out = np.empty((len(samples), len(cfgs)), dtype=object)
    for i, (_, _, s) in enumerate(samples):
        for m, c in enumerate(cfgs):
            out[i, m] = run_detector(dataset, c, s, detector_seed(seed, c)).record_flags
    return out


def exact_values(whole: Sequence[np.ndarray], sample_runs: np.ndarray, samples) -> np.ndarray:
    """Exact resilience for every (sample, method), shape (n_samples, M)."""
    out = np.empty(sample_runs.shape)
    for i, (_, _, s) in enumerate(samples):
        for m in range(sample_runs.shape[1]):
            out[i, m] = resilience_exact(sample_runs[i, m], whole[m][s.indices])
    return out


def exact_table(dataset: Dataset, cfgs: Sequence[DetectorConfig], samples, seed: int) -> np.ndarray:
    """Exact resilience of every method on every sample, shape (n_samples, M)."""
    return exact_values(run_whole(dataset, cfgs, seed), run_samples(dataset, cfgs, samples, seed), samples)


@dataclass(frozen=True, eq=False)
class BlindFit:
    """Per-sample EM estimates behind a blind resilience estimate."""

    alpha_sample: np.ndarray  # (n_samples, M)
    beta_sample: np.ndarray
    gamma_sample: np.ndarray  # (n_samples,)
    sizes: np.ndarray
    models: tuple[EnsembleModel, ...]

    @property
    def alpha_whole(self) -> np.ndarray:
        return self.alpha_sample.mean(axis=0)

    @property
    def beta_whole(self) -> np.ndarray:
        return self.beta_sample.mean(axis=0)

    @property
    def gamma(self) -> float:
        return float(self.gamma_sample.mean())

    def resilience(self) -> np.ndarray:
        """Blind resilience of every method on every sample, shape (n_samples, M)."""
        n_s, n_m = self.alpha_sample.shape
        g = self.gamma
        out = np.empty((n_s, n_m))
        for m in range(n_m):
            whole = RatePanel(float(self.alpha_whole[m]), float(self.beta_whole[m]), g)
            for i in range(n_s):
                sample = RatePanel(float(self.alpha_sample[i, m]), float(self.beta_sample[i, m]), g)
                out[i, m] = resilience_from_expectations(expected_overlaps(self.sizes[i], whole, sample))
        return out


def blind_fit_runs(sample_runs: np.ndarray, **em_kwargs) -> BlindFit:
    """Fit the EM ensemble on each sample's panel votes."""
    n_s, n_m = sample_runs.shape
    a = np.empty((n_s, n_m))
    b = np.empty((n_s, n_m))
    g = np.empty(n_s)
    sizes = np.empty(n_s)
    models = []
    for i in range(n_s):
        votes = np.column_stack(list(sample_runs[i]))
        model = em_fit(votes, **em_kwargs)
        a[i] = model.pi[:, OUTLIER, OUTLIER]
        b[i] = model.pi[:, INLIER, INLIER]
        g[i] = model.p_outlier
        sizes[i] = votes.shape[0]
        models.append(model)
    return BlindFit(a, b, g, sizes, tuple(models))


def blind_fit(dataset: Dataset, panel: Sequence[DetectorConfig], samples, seed: int, **em_kwargs) -> BlindFit:
    """Run the detector panel on every sample and fit the EM ensemble there."""
    return blind_fit_runs(run_samples(dataset, panel, samples, seed), **em_kwargs)


def default_panel(cfg: DetectorConfig, methods: Sequence[str] = ("three_sigma", "boxplot", "chi_square", "mad")):
    """The EM panel used when none is given: ``cfg`` plus default univariate rules."""
    panel = [cfg]
    panel += [DetectorConfig(m, aggregation=cfg.aggregation) for m in methods if m != cfg.method]
    return panel


def estimate_resilience(
    dataset: Dataset,
    detector_cfg: DetectorConfig,
    scheme: SchemeSpec,
    replicates: int,
    mode: str = "exact",
    seed: int = 0,
    panel: Optional[Sequence[DetectorConfig]] = None,
) -> ResilienceEstimate:
    """Resilience of one detector under a sampling scheme, over ``replicates`` draws.

    For partitioning every part of every replicate contributes one value.
    In blind mode ``panel`` lists the detectors whose EM ensemble supplies
    the rate estimates; it must contain ``detector_cfg``.
    """
    if mode not in MODES:
        raise DataError(f"unknown mode {mode!r}; expected one of {MODES}")
    samples = draw_replicates(dataset.n, scheme, replicates, seed)
    if mode == "exact":
        values = exact_table(dataset, [detector_cfg], samples, seed)[:, 0]
    else:
        panel = list(panel) if panel is not None else default_panel(detector_cfg)
        if detector_cfg not in panel:
            raise DataError("blind mode needs the estimated detector in the EM panel")
        values = blind_fit(dataset, panel, samples, seed).resilience()[:, panel.index(detector_cfg)]
    return ResilienceEstimate(
        per_replicate=values,
        mode=mode,
        method=detector_cfg.method,
        scheme=scheme.label(),
        sample_size=scheme.sample_size(dataset.n),
        replicate_keys=tuple((r, p) for r, p, _ in samples),
    )


# ---------------------------------------------------------------- ensembles


def consensus_rates(model: EnsembleModel) -> tuple[float, float]:
    """Posterior-weighted sensitivity and specificity of the consensus labels."""
    p_out = model.posteriors[:, OUTLIER]
    lab = model.labels
    mass_out = p_out.sum()
    mass_in = (1 - p_out).sum()
    alpha = float((p_out * lab).sum() / mass_out) if mass_out > 0 else 1.0
    beta = float(((1 - p_out) * ~lab).sum() / mass_in) if mass_in > 0 else 1.0
    return alpha, beta


def ensemble_exact_values(whole: Sequence[np.ndarray], sample_runs: np.ndarray, samples, **em_kwargs) -> np.ndarray:
    """Exact resilience of the EM consensus built from member runs, one value per sample."""
    whole_labels = em_fit(np.column_stack(list(whole)), **em_kwargs).labels
    return np.array(
        [
            resilience_exact(em_fit(np.column_stack(list(sample_runs[i])), **em_kwargs).labels, whole_labels[s.indices])
            for i, (_, _, s) in enumerate(samples)
        ]
    )


def ensemble_blind_values(sample_runs: np.ndarray, **em_kwargs) -> np.ndarray:
    """Blind resilience of the EM consensus, one value per sample."""
    fits = [em_fit(np.column_stack(list(row)), **em_kwargs) for row in sample_runs]
    rates = np.array([consensus_rates(f) for f in fits])
    g = float(np.mean([f.p_outlier for f in fits]))
    whole = RatePanel(float(rates[:, 0].mean()), float(rates[:, 1].mean()), g)
    return np.array(
        [
            resilience_from_expectations(
                expected_overlaps(f.labels.size, whole, RatePanel(float(a), float(b), g))
            )
            for f, (a, b) in zip(fits, rates)
        ]
    )


def ensemble_resilience(
    dataset: Dataset,
    members: Sequence[DetectorConfig],
    scheme: SchemeSpec,
    replicates: int,
    mode: str = "exact",
    seed: int = 0,
) -> ResilienceEstimate:
    """Resilience of the EM ensemble, treated as a single black-box detector."""
    members = list(members)
    if not members:
        raise DataError("an ensemble needs at least one member")
    if mode not in MODES:
        raise DataError(f"unknown mode {mode!r}; expected one of {MODES}")
    samples = draw_replicates(dataset.n, scheme, replicates, seed)
    runs = run_samples(dataset, members, samples, seed)
    if mode == "exact":
        values = ensemble_exact_values(run_whole(dataset, members, seed), runs, samples)
    else:
        values = ensemble_blind_values(runs)
    name = "ensemble(" + "+".join(c.method for c in members) + ")"
    return ResilienceEstimate(
        per_replicate=values,
        mode=mode,
        method=name,
        scheme=scheme.label(),
        sample_size=scheme.sample_size(dataset.n),
        replicate_keys=tuple((r, p) for r, p, _ in samples),
    )
