"""Experiment configuration: a flat ``key = value`` text format with dotted keys.

Example::

    # dist1 grid, partitioning
    name = dist1-partition
    master_seed = 7
    replicates = 100
    mode = blind

    dataset.source = synth
    dataset.distribution = dist1, dist2
    dataset.rate = 0.05, 0.10
    dataset.n = 1000, 10000

    detectors = three_sigma, boxplot
    detector.lof.min_pts = 20
    detector.aggregation = any

    scheme.partition.k = 10, 20
    scheme.random.size = 0.05, 0.1, 500
    scheme.block.pairs = 1-20, 5-4

    ensemble = mahalanobis, kmeans, lof

Comma-separated values are lists and expand into the grid. Unknown or
repeated keys are configuration errors.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from .core import ConfigError
from .detectors import METHODS, DetectorConfig
from .resilience import MODES, SchemeSpec
from .synthgen import SynthSpec

SOURCES = ("synth", "csv", "fig1")

_DETECTOR_FIELDS = {f.name: f.type for f in fields(DetectorConfig) if f.name != "method"}
_SIMPLE_KEYS = {
    "name",
    "master_seed",
    "replicates",
    "mode",
    "output_dir",
    "jobs",
    "detectors",
    "ensemble",
    "dataset.source",
    "dataset.path",
    "dataset.gt_column",
    "dataset.distribution",
    "dataset.rate",
    "dataset.n",
    "dataset.seed",
    "scheme.random.size",
    "scheme.block.pairs",
    "scheme.partition.k",
}
_KEY_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")


def parse_text(text: str, origin: str = "<config>") -> dict[str, str]:
    """Split config text into a ``key -> raw value`` mapping."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not _KEY_RE.match(key):
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {raw!r}")
        if key in out:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _list(raw: str) -> list[str]:
    return [p.strip() for p in raw.split(",") if p.strip()]


def _num(key: str, tok: str, kind):
    try:
        if kind is int:
            return int(tok)
        return float(tok)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {tok!r} as {kind.__name__}") from None


def _block_pair(tok: str) -> tuple[int, int]:
    m = re.fullmatch(r"\s*(\d+)\s*[-x]\s*(\d+)\s*", tok)
    if not m:
        raise ConfigError(f"scheme.block.pairs: {tok!r} is not 'n_blocks-block_size'")
    return int(m.group(1)), int(m.group(2))


@dataclass(frozen=True)
class DatasetSource:
    """Where one grid dataset comes from."""

    source: str
    path: Optional[str] = None
    gt_column: Optional[str] = None
    synth: Optional[SynthSpec] = None
    seed: int = 0

    def label(self) -> str:
        if self.source == "synth":
            return self.synth.dataset_id
        if self.source == "fig1":
            return f"fig1-s{self.seed}"
        return self.path


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: tuple[DatasetSource, ...]
    detectors: tuple[DetectorConfig, ...]
    schemes: tuple[SchemeSpec, ...]
    replicates: int = 100
    master_seed: int = 0
    mode: str = "exact"
    output_dir: str = "results"
    name: str = "experiment"
    ensemble: tuple[DetectorConfig, ...] = ()
    jobs: int = 1
    canonical: str = field(default="", compare=False)

    def __post_init__(self):
        if not self.detectors:
            raise ConfigError("at least one detector is required")
        if not self.schemes:
            raise ConfigError("at least one sampling scheme is required")
        if not self.datasets:
            raise ConfigError("at least one dataset is required")
        if self.replicates < 1:
            raise ConfigError(f"replicates={self.replicates} must be >= 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode={self.mode!r}; expected one of {MODES}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    @property
    def config_hash(self) -> str:
        # worker count and output location do not change results
        lines = [ln for ln in self.canonical.splitlines() if not ln.startswith(("jobs ", "output_dir "))]
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()

    def with_overrides(self, seed=None, mode=None, output_dir=None, jobs=None) -> "ExperimentConfig":
        """Re-parse with CLI overrides applied, so derived seeds and the hash follow them."""
        kv = dict(line.split(" = ", 1) for line in self.canonical.splitlines() if line)
        for key, val in (("master_seed", seed), ("mode", mode), ("output_dir", output_dir), ("jobs", jobs)):
            if val is not None:
                kv[key] = str(val)
        return from_mapping(kv)


def _detector(method: str, kv: dict[str, str], used: set) -> DetectorConfig:
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; valid methods: {', '.join(METHODS)}")
    params = {}
    for scope in ("detector", f"detector.{method}"):
        for name, typ in _DETECTOR_FIELDS.items():
            key = f"{scope}.{name}"
            if key in kv:
                used.add(key)
                if name == "aggregation":
                    params[name] = kv[key]
                else:
                    params[name] = _num(key, kv[key], int if typ in (int, "int") else float)
    return DetectorConfig(method, **params)


def _datasets(kv: dict[str, str], master_seed: int) -> tuple[DatasetSource, ...]:
    from .samplers import derive_seed

    source = kv.get("dataset.source", "synth")
    if source not in SOURCES:
        raise ConfigError(f"dataset.source={source!r}; expected one of {SOURCES}")
    if source == "csv":
        paths = _list(kv.get("dataset.path", ""))
        if not paths:
            raise ConfigError("dataset.source = csv needs dataset.path")
        gt = kv.get("dataset.gt_column") or None
        return tuple(DatasetSource("csv", path=p, gt_column=gt) for p in paths)
    if source == "fig1":
        seeds = [_num("dataset.seed", s, int) for s in _list(kv.get("dataset.seed", ""))]
        seeds = seeds or [derive_seed(master_seed, "dataset-gen", "fig1") % (2**32)]
        return tuple(DatasetSource("fig1", seed=s) for s in seeds)
    dists = _list(kv.get("dataset.distribution", "dist1"))
    rates = [_num("dataset.rate", r, float) for r in _list(kv.get("dataset.rate", "0.05"))]
    ns = [_num("dataset.n", n, int) for n in _list(kv.get("dataset.n", "1000"))]
    fixed_seed = kv.get("dataset.seed")
    out = []
    for d in dists:
        for r in rates:
            for n in ns:
                if fixed_seed is not None:
                    seed = _num("dataset.seed", fixed_seed, int)
                else:
                    seed = derive_seed(master_seed, "dataset-gen", d, f"{r!r}", n) % (2**32)
                out.append(DatasetSource("synth", synth=SynthSpec(n=n, outlier_distribution=d, rate=r, seed=seed)))
    return tuple(out)


def _schemes(kv: dict[str, str]) -> tuple[SchemeSpec, ...]:
    out = []
    for tok in _list(kv.get("scheme.random.size", "")):
        size = _num("scheme.random.size", tok, float)
        if size <= 0:
            raise ConfigError(f"scheme.random.size: {tok} must be positive")
        out.append(SchemeSpec.random(size))
    for tok in _list(kv.get("scheme.block.pairs", "")):
        nb, bs = _block_pair(tok)
        if nb < 1 or bs < 1:
            raise ConfigError(f"scheme.block.pairs: {tok} needs positive counts")
        out.append(SchemeSpec.block(nb, bs))
    for tok in _list(kv.get("scheme.partition.k", "")):
        k = _num("scheme.partition.k", tok, int)
        if k < 1:
            raise ConfigError(f"scheme.partition.k: {tok} must be >= 1")
        out.append(SchemeSpec.partition(k))
    return tuple(out)


def from_mapping(kv: dict[str, str]) -> ExperimentConfig:
    used = set()
    for key in kv:
        if key in _SIMPLE_KEYS:
            used.add(key)
    master_seed = _num("master_seed", kv.get("master_seed", "0"), int)
    detectors = tuple(_detector(m, kv, used) for m in _list(kv.get("detectors", "")))
    if len({d.method for d in detectors}) != len(detectors):
        raise ConfigError("detectors lists a method twice")
    ensemble = tuple(_detector(m, kv, used) for m in _list(kv.get("ensemble", "")))
    unknown = sorted(set(kv) - used)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    canonical = "".join(f"{k} = {kv[k]}\n" for k in sorted(kv))
    return ExperimentConfig(
        datasets=_datasets(kv, master_seed),
        detectors=detectors,
        schemes=_schemes(kv),
        replicates=_num("replicates", kv.get("replicates", "100"), int),
        master_seed=master_seed,
        mode=kv.get("mode", "exact"),
        output_dir=kv.get("output_dir", "results"),
        name=kv.get("name", "experiment"),
        ensemble=ensemble,
        jobs=_num("jobs", kv.get("jobs", "1"), int),
        canonical=canonical,
    )


def loads(text: str, origin: str = "<config>") -> ExperimentConfig:
    return from_mapping(parse_text(text, origin))


def load(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return loads(text, str(path))
