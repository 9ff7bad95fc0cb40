"""The seven outlier detectors.

Univariate rules (``three_sigma``, ``boxplot``, ``chi_square``, ``mad``) are
applied to each column separately and the per-cell flags are aggregated to
records. Multivariate methods (``mahalanobis``, ``kmeans``, ``lof``) score
each record and flag a fixed top fraction of them.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import stats

from . import kernels
from .core import (
    AGGREGATION_RULES,
    ConfigError,
    Dataset,
    DataError,
    DegenerateInputWarning,
    DetectionResult,
    DimensionError,
    RangeError,
    aggregate_cells,
)
from .samplers import SampleIndex, make_rng

UNIVARIATE = ("three_sigma", "boxplot", "chi_square", "mad")
MULTIVARIATE = ("mahalanobis", "kmeans", "lof")
METHODS = UNIVARIATE + MULTIVARIATE

MAD_CONSISTENCY = 1.4826


@dataclass(frozen=True)
class DetectorConfig:
    method: str
    top_fraction: float = 0.10
    k_clusters: int = 5
    min_pts: int = 10
    chi_sq_quantile: float = 0.975
    mad_multiplier: float = 3.0
    ridge_epsilon: float = 1e-8
    aggregation: str = "any"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; valid methods: {', '.join(METHODS)}")
        if not 0.0 < self.top_fraction <= 1.0:
            raise ConfigError(f"top_fraction={self.top_fraction} outside (0, 1]")
        if self.k_clusters < 1 or self.min_pts < 1:
            raise ConfigError("k_clusters and min_pts must be >= 1")
        if not 0.0 < self.chi_sq_quantile < 1.0:
            raise ConfigError(f"chi_sq_quantile={self.chi_sq_quantile} outside (0, 1)")
        if self.mad_multiplier <= 0:
            raise ConfigError("mad_multiplier must be positive")
        if self.ridge_epsilon < 0:
            raise ConfigError("ridge_epsilon must be non-negative")
        if self.aggregation not in AGGREGATION_RULES:
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")

    def effective_params(self) -> dict:
        """Only the parameters the configured method actually reads."""
        used = {
            "three_sigma": ("aggregation",),
            "boxplot": ("aggregation",),
            "chi_square": ("chi_sq_quantile", "aggregation"),
            "mad": ("mad_multiplier", "aggregation"),
            "mahalanobis": ("top_fraction", "ridge_epsilon"),
            "kmeans": ("top_fraction", "k_clusters"),
            "lof": ("top_fraction", "min_pts"),
        }[self.method]
        d = asdict(self)
        return {k: d[k] for k in used}


# ---------------------------------------------------------------- univariate


def _column(col, min_len: int) -> np.ndarray:
    x = np.asarray(col, dtype=float)
    if x.ndim != 1:
        raise DimensionError("expected a single column")
    if x.size < min_len:
        raise DimensionError(f"need at least {min_len} values, got {x.size}")
    return x


def detect_three_sigma(col) -> np.ndarray:
    """Flag values more than three sample standard deviations from the mean."""
    x = _column(col, 2)
    sd = x.std(ddof=1)
    if sd == 0:
        return np.zeros(x.size, dtype=bool)
    return np.abs(x - x.mean()) > 3.0 * sd


def quantile_linear(x, q):
    """Quantile interpolating the sorted values at position ``1 + (n-1) q``."""
    return np.quantile(x, q, method="linear")


def detect_boxplot(col, whisker: float = 1.5) -> np.ndarray:
    """Flag values outside Tukey's inner fences ``Q1 - 1.5 IQR, Q3 + 1.5 IQR``."""
    x = _column(col, 4)
    q1, q3 = quantile_linear(x, [0.25, 0.75])
    iqr = q3 - q1
    return (x < q1 - whisker * iqr) | (x > q3 + whisker * iqr)


def detect_mad(col, multiplier: float = 3.0) -> np.ndarray:
    """Flag values more than ``multiplier * 1.4826 * MAD`` from the median.

    Emits :class:`DegenerateInputWarning` and flags nothing when MAD is zero.
    """
    x = _column(col, 2)
    med = np.median(x)
    mad = np.median(np.abs(x - med))
    if mad == 0:
        warnings.warn("MAD is zero; no values flagged", DegenerateInputWarning, stacklevel=2)
        return np.zeros(x.size, dtype=bool)
    return np.abs(x - med) > multiplier * MAD_CONSISTENCY * mad


def chi2_cutoff(quantile: float = 0.975) -> float:
    return float(stats.chi2.ppf(quantile, df=1))


def detect_chi_square(col, quantile: float = 0.975) -> np.ndarray:
    """Flag values whose squared standardized deviation exceeds a chi-square(1) quantile."""
    x = _column(col, 2)
    var = x.var(ddof=1)
    if var == 0:
        warnings.warn("zero variance; no values flagged", DegenerateInputWarning, stacklevel=2)
        return np.zeros(x.size, dtype=bool)
    return (x - x.mean()) ** 2 / var > chi2_cutoff(quantile)


# -------------------------------------------------------------- multivariate


def n_top(fraction: float, n: int) -> int:
    """``ceil(fraction * n)``, robust to representation error in ``fraction``."""
    return min(n, max(0, math.ceil(round(fraction * n, 9))))


def top_flags(scores, fraction: float) -> np.ndarray:
    """Flag the ``ceil(fraction * n)`` largest scores; ties favor lower indices."""
    s = np.asarray(scores, dtype=float)
    order = np.argsort(-s, kind="stable")
    flags = np.zeros(s.size, dtype=bool)
    flags[order[: n_top(fraction, s.size)]] = True
    return flags


def _matrix(data) -> np.ndarray:
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DimensionError("expected an N x V matrix")
    return X


def mahalanobis_scores(data, ridge_epsilon: float = 1e-8) -> np.ndarray:
    """Squared Mahalanobis distance of each row from the sample mean.

    The sample covariance (divisor N-1) is regularized by adding
    ``ridge_epsilon * trace / V`` to its diagonal.
    """
    X = _matrix(data)
    n, v = X.shape
    if n <= v:
        raise DataError(f"Mahalanobis distance is ill-posed with N={n} <= V={v}")
    centered = X - X.mean(axis=0)
    cov = np.atleast_2d(np.cov(X, rowvar=False))
    cov = cov + ridge_epsilon * np.trace(cov) / v * np.eye(v)
    try:
        chol = np.linalg.cholesky(cov)
        z = np.linalg.solve(chol, centered.T)
        return np.einsum("ij,ij->j", z, z)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(cov, centered.T, rcond=None)[0]
        return np.einsum("ij,ji->i", centered, sol)


def detect_mahalanobis(data, cfg: Optional[DetectorConfig] = None) -> np.ndarray:
    cfg = cfg or DetectorConfig("mahalanobis")
    return top_flags(mahalanobis_scores(data, cfg.ridge_epsilon), cfg.top_fraction)


def _kmeans_pp(X, k, rng) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    _, d2 = kernels.nearest_centroid(X, centers[:1])
    for c in range(1, k):
        total = d2.sum()
        if total > 0:
            i = rng.choice(n, p=d2 / total)
        else:
            i = rng.integers(n)
        centers[c] = X[i]
        _, d2_new = kernels.nearest_centroid(X, centers[c : c + 1])
        d2 = np.minimum(d2, d2_new)
    return centers


def lloyd(X, centers, max_iter: int = 100, rel_tol: float = 1e-6):
    """Lloyd iterations from ``centers``; returns ``(centers, labels, sq_dist, inertia)``.

    A cluster that loses all its points keeps its previous centroid.
    """
    X = _matrix(X)
    centers = np.array(centers, dtype=float)
    k = centers.shape[0]
    labels, d2 = kernels.nearest_centroid(X, centers)
    inertia = d2.sum()
    for _ in range(max_iter):
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, X)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        labels, d2 = kernels.nearest_centroid(X, centers)
        new_inertia = d2.sum()
        done = abs(inertia - new_inertia) <= rel_tol * max(inertia, np.finfo(float).tiny)
        inertia = new_inertia
        if done:
            break
    return centers, labels, d2, inertia


def kmeans(X, k: int, seed, max_iter: int = 100, rel_tol: float = 1e-6):
    """k-means++ seeding followed by :func:`lloyd`."""
    X = _matrix(X)
    if X.shape[0] < k:
        raise RangeError(f"k-means needs N >= k, got N={X.shape[0]}, k={k}")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    return lloyd(X, _kmeans_pp(X, k, rng), max_iter, rel_tol)


def kmeans_scores(data, k_clusters: int = 5, seed=0) -> np.ndarray:
    """Euclidean distance of each row to its nearest final centroid."""
    _, _, d2, _ = kmeans(data, k_clusters, seed)
    return np.sqrt(d2)


def detect_kmeans(data, cfg: Optional[DetectorConfig] = None, seed=0) -> np.ndarray:
    cfg = cfg or DetectorConfig("kmeans")
    return top_flags(kmeans_scores(data, cfg.k_clusters, seed), cfg.top_fraction)


def lof_scores(data, min_pts: int = 10) -> np.ndarray:
    X = _matrix(data)
    if X.shape[0] <= min_pts:
        raise RangeError(f"LOF needs N > min_pts, got N={X.shape[0]}, min_pts={min_pts}")
    lof, _ = kernels.lof_scores(np.ascontiguousarray(X), int(min_pts))
    return lof


def detect_lof(data, cfg: Optional[DetectorConfig] = None) -> np.ndarray:
    cfg = cfg or DetectorConfig("lof")
    return top_flags(lof_scores(data, cfg.min_pts), cfg.top_fraction)


# ------------------------------------------------------------------ dispatch


def _univariate(method: str, cfg: DetectorConfig):
    if method == "three_sigma":
        return detect_three_sigma
    if method == "boxplot":
        return detect_boxplot
    if method == "chi_square":
        return lambda c: detect_chi_square(c, cfg.chi_sq_quantile)
    return lambda c: detect_mad(c, cfg.mad_multiplier)


def run_detector(
    dataset: Dataset,
    cfg: DetectorConfig,
    scope: Optional[SampleIndex] = None,
    seed: int = 0,
) -> DetectionResult:
    """Run one detector on the whole dataset or on the rows in ``scope``."""
    if scope is not None:
        if scope.parent_n != dataset.n:
            raise DataError(f"scope drawn from {scope.parent_n} rows, dataset has {dataset.n}")
        X = dataset.values[scope.indices]
    else:
        X = dataset.values
    cells = scores = None
    notes: list[str] = []
    if cfg.method in UNIVARIATE:
        rule = _univariate(cfg.method, cfg)
        cols = []
        for j in range(X.shape[1]):
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", DegenerateInputWarning)
                cols.append(rule(X[:, j]))
            notes += [f"{dataset.column_names[j]}: {w.message}" for w in caught
                      if issubclass(w.category, DegenerateInputWarning)]
        cells = np.column_stack(cols)
        flags = aggregate_cells(cells, cfg.aggregation)
    else:
        if cfg.method == "mahalanobis":
            scores = mahalanobis_scores(X, cfg.ridge_epsilon)
        elif cfg.method == "kmeans":
            scores = kmeans_scores(X, cfg.k_clusters, seed)
        else:
            scores = lof_scores(X, cfg.min_pts)
        flags = top_flags(scores, cfg.top_fraction)
    return DetectionResult(
        method=cfg.method,
        params=cfg.effective_params(),
        record_flags=flags,
        cell_flags=cells,
        dataset_id=dataset.id,
        scope=scope,
        seed=seed,
        scores=scores,
        warnings=tuple(notes),
    )


def write_detection_csv(result: DetectionResult, path, extra_comments=()) -> None:
    """Serialize flags as ``record_index,flag`` rows with provenance comments."""
    scope = "whole" if result.scope is None else f"sample:{result.scope.describe()}"
    with open(path, "w") as fh:
        fh.write(f"# method={result.method}\n")
        fh.write("# params=" + ";".join(f"{k}={v}" for k, v in sorted(result.params.items())) + "\n")
        fh.write(f"# dataset={result.dataset_id}\n# scope={scope}\n# seed={result.seed}\n")
        for w in result.warnings:
            fh.write(f"# warning={w}\n")
        for line in extra_comments:
            fh.write(f"# {line}\n")
        fh.write("record_index,flag\n")
        for i, f in zip(result.row_indices, result.record_flags):
            fh.write(f"{int(i)},{int(f)}\n")


def read_detection_csv(path) -> tuple[dict, np.ndarray, np.ndarray]:
    """Return ``(metadata, record_indices, flags)`` from :func:`write_detection_csv` output."""
    meta = {}
    idx, flags = [], []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k] = v
            elif line and line != "record_index,flag":
                a, b = line.split(",")
                idx.append(int(a))
                flags.append(b == "1")
    return meta, np.asarray(idx, dtype=np.int64), np.asarray(flags, dtype=bool)
