"""Experiment grid runner, results tables and reports.

A grid cell is one (dataset, sampling scheme, method). Every cell yields
either a summary row backed by its replicate rows, or a skipped row with a
reason. Cells sharing a dataset and scheme are computed together so each
sample is drawn, and each detector run on it, exactly once.

All randomness derives from ``master_seed`` through named substreams, so
results do not depend on the number of worker processes.
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import DatasetSource, ExperimentConfig
from .core import ConfigError, DataError, Dataset, OutresError, confusion, load_csv, rates
from .detectors import DetectorConfig, run_detector
from .ensemble import em_fit
from .resilience import (
    SchemeSpec,
    blind_fit_runs,
    detector_seed,
    draw_replicates,
    ensemble_blind_values,
    resilience_exact,
)
from .samplers import derive_seed
from .synthgen import generate, generate_fig1

ENSEMBLE = "ensemble"
# errors that make a cell infeasible rather than the run invalid
CELL_ERRORS = (OutresError, ValueError, ArithmeticError, np.linalg.LinAlgError)

REPLICATE_COLUMNS = (
    "dataset", "method", "scheme", "params", "replicate", "part", "sample_size",
    "rho_exact", "rho_blind", "alpha_hat", "beta_hat", "gamma_hat",
    "alpha_true", "beta_true", "precision", "recall", "f1",
)
SUMMARY_COLUMNS = (
    "dataset", "method", "scheme", "params", "sample_size", "n_values",
    "mean_exact", "sd_exact", "mean_blind", "sd_blind", "mse",
    "rmse_alpha", "rmse_beta", "precision", "recall", "f1",
)
SKIPPED_COLUMNS = ("dataset", "method", "scheme", "params", "reason")
QUALITY_COLUMNS = (
    "dataset", "method", "scheme", "params", "mean_exact",
    "precision_whole", "recall_whole", "f1_whole",
)
SD_COLUMNS = ("sd_exact", "sd_blind")


def scheme_params(scheme: SchemeSpec) -> str:
    if scheme.kind == "random":
        return f"size={scheme.size:g}"
    if scheme.kind == "block":
        return f"n_blocks={scheme.n_blocks};block_size={scheme.block_size}"
    return f"k={scheme.k}"


# ---------------------------------------------------------------- statistics


def mean(xs: Sequence[float]) -> float:
    return math.fsum(xs) / len(xs)


def sd(xs: Sequence[float]) -> Optional[float]:
    if len(xs) < 2:
        return None
    m = mean(xs)
    return math.sqrt(math.fsum((x - m) ** 2 for x in xs) / (len(xs) - 1))


def mse(est: Sequence[float], ref: Sequence[float]) -> float:
    return math.fsum((a - b) ** 2 for a, b in zip(est, ref)) / len(est)


def rmse(est: Sequence[float], ref: Sequence[Optional[float]]) -> Optional[float]:
    pairs = [(a, b) for a, b in zip(est, ref) if a is not None and b is not None]
    if not pairs:
        return None
    return math.sqrt(math.fsum((a - b) ** 2 for a, b in pairs) / len(pairs))


def _defined_mean(xs) -> Optional[float]:
    xs = [x for x in xs if x is not None]
    return mean(xs) if xs else None


def summarize(rows: Sequence[dict]) -> dict:
    """Summary statistics of one cell, computed only from its replicate rows."""
    first = rows[0]
    exact = [r["rho_exact"] for r in rows]
    out = {k: first[k] for k in ("dataset", "method", "scheme", "params")}
    out["sample_size"] = first["sample_size"]
    out["n_values"] = len(rows)
    out["mean_exact"] = mean(exact)
    out["sd_exact"] = sd(exact)
    blind = [r["rho_blind"] for r in rows]
    if all(b is not None for b in blind):
        out["mean_blind"] = mean(blind)
        out["sd_blind"] = sd(blind)
        out["mse"] = mse(blind, exact)
    if all(r["alpha_hat"] is not None for r in rows):
        out["rmse_alpha"] = rmse([r["alpha_hat"] for r in rows], [r["alpha_true"] for r in rows])
        out["rmse_beta"] = rmse([r["beta_hat"] for r in rows], [r["beta_true"] for r in rows])
    for k in ("precision", "recall", "f1"):
        out[k] = _defined_mean(r[k] for r in rows)
    return out


# ---------------------------------------------------------------- datasets


def load_source(src: DatasetSource) -> Dataset:
    if src.source == "synth":
        return generate(src.synth)
    if src.source == "fig1":
        return generate_fig1(src.seed)
    return load_csv(src.path, src.gt_column)


def _members(cfg: ExperimentConfig) -> list[DetectorConfig]:
    """Every detector the grid needs: configured methods, then extra ensemble members."""
    out = list(cfg.detectors)
    out += [e for e in cfg.ensemble if e not in out]
    return out


def _quality(flags, truth) -> dict:
    r = rates(confusion(flags, truth))
    return {"precision": r["precision"], "recall": r["recall"], "f1": r["f1"]}


@dataclass
class CellOutput:
    rows: list = field(default_factory=list)
    summaries: list = field(default_factory=list)
    skipped: list = field(default_factory=list)


@dataclass(frozen=True)
class _Task:
    dataset: Dataset
    scheme: SchemeSpec
    cfg: ExperimentConfig
    whole: dict  # method -> flags, or an error string


def _run_cell_group(task: _Task) -> CellOutput:
    ds, scheme, cfg, whole = task.dataset, task.scheme, task.cfg, task.whole
    out = CellOutput()
    label, params = scheme.label(), scheme_params(scheme)
    methods = [d.method for d in cfg.detectors] + ([ENSEMBLE] if cfg.ensemble else [])

    def skip(method, reason):
        out.skipped.append(dict(dataset=ds.id, method=method, scheme=label, params=params, reason=reason))

    run_seed = derive_seed(cfg.master_seed, "detector-runs", ds.id)
    try:
        samples = draw_replicates(ds.n, scheme, cfg.replicates, derive_seed(cfg.master_seed, "cell", ds.id, label))
    except CELL_ERRORS as e:
        for m in methods:
            skip(m, f"infeasible scheme: {e}")
        return out

    members = _members(cfg)
    runs: dict[str, list] = {}
    errors: dict[str, str] = {}
    for c in members:
        if isinstance(whole[c.method], str):
            errors[c.method] = f"whole-dataset run failed: {whole[c.method]}"
            continue
        try:
            runs[c.method] = [
                run_detector(ds, c, s, detector_seed(run_seed, c)).record_flags for _, _, s in samples
            ]
        except CELL_ERRORS as e:
            errors[c.method] = f"sample run failed: {e}"

    gt = ds.ground_truth
    blind_by_method = {}
    blind_error = None
    if cfg.mode == "blind":
        panel = [d.method for d in cfg.detectors]
        bad = [m for m in panel if m in errors]
        if bad:
            blind_error = f"blind panel member {bad[0]} failed"
        else:
            grid = np.empty((len(samples), len(panel)), dtype=object)
            for j, m in enumerate(panel):
                for i in range(len(samples)):
                    grid[i, j] = runs[m][i]
            fit = blind_fit_runs(grid)
            rho = fit.resilience()
            for j, m in enumerate(panel):
                blind_by_method[m] = (rho[:, j], fit.alpha_sample[:, j], fit.beta_sample[:, j], fit.gamma_sample)

    def emit(method, sample_flags, whole_flags, blind):
        rows = []
        for i, (r, p, s) in enumerate(samples):
            row = dict.fromkeys(REPLICATE_COLUMNS)
            row.update(dataset=ds.id, method=method, scheme=label, params=params, replicate=r, part=p,
                       sample_size=len(s))
            row["rho_exact"] = resilience_exact(sample_flags[i], whole_flags[s.indices])
            if blind is not None:
                row["rho_blind"] = float(blind[0][i])
                if len(blind) > 1:
                    row["alpha_hat"] = float(blind[1][i])
                    row["beta_hat"] = float(blind[2][i])
                    row["gamma_hat"] = float(blind[3][i])
            if gt is not None:
                truth = gt[s.indices]
                rr = rates(confusion(sample_flags[i], truth))
                row["alpha_true"] = rr["sensitivity"]
                row["beta_true"] = rr["specificity"]
                row.update(_quality(sample_flags[i], truth))
            rows.append(row)
        out.rows.extend(rows)
        out.summaries.append(summarize(rows))

    for d in cfg.detectors:
        m = d.method
        if m in errors:
            skip(m, errors[m])
        elif cfg.mode == "blind" and blind_error:
            skip(m, blind_error)
        else:
            emit(m, runs[m], whole[m], blind_by_method.get(m))

    if cfg.ensemble:
        bad = [e.method for e in cfg.ensemble if e.method in errors]
        if bad:
            skip(ENSEMBLE, f"ensemble member {bad[0]}: {errors[bad[0]]}")
        else:
            member_runs = [runs[e.method] for e in cfg.ensemble]
            labels = [em_fit(np.column_stack([mr[i] for mr in member_runs])).labels for i in range(len(samples))]
            blind = None
            if cfg.mode == "blind":
                grid = np.empty((len(samples), len(member_runs)), dtype=object)
                for j, mr in enumerate(member_runs):
                    for i in range(len(samples)):
                        grid[i, j] = mr[i]
                blind = (ensemble_blind_values(grid),)
            emit(ENSEMBLE, labels, whole[ENSEMBLE], blind)
    return out


# ---------------------------------------------------------------- experiment


@dataclass
class ResultsTable:
    replicates: list
    summary: list
    skipped: list
    quality: list
    grid_size: int
    config: ExperimentConfig

    def provenance(self, table: str) -> list[str]:
        return [
            f"generator=outres {__version__}",
            f"config_sha256={self.config.config_hash}",
            f"master_seed={self.config.master_seed}",
            f"mode={self.config.mode}",
            f"replicates={self.config.replicates}",
            f"table={table}",
        ]


def _whole_runs(ds: Dataset, cfg: ExperimentConfig) -> dict:
    seed = derive_seed(cfg.master_seed, "detector-runs", ds.id)
    whole = {}
    for c in _members(cfg):
        try:
            whole[c.method] = run_detector(ds, c, None, detector_seed(seed, c)).record_flags
        except CELL_ERRORS as e:
            whole[c.method] = str(e)
    if cfg.ensemble:
        bad = [e.method for e in cfg.ensemble if isinstance(whole[e.method], str)]
        if bad:
            whole[ENSEMBLE] = f"member {bad[0]}: {whole[bad[0]]}"
        else:
            whole[ENSEMBLE] = em_fit(np.column_stack([whole[e.method] for e in cfg.ensemble])).labels
    return whole


def run_experiment(cfg: ExperimentConfig) -> ResultsTable:
    """Run the full grid. Output order follows the config, not completion order."""
    tasks = []
    quality = []
    for src in cfg.datasets:
        ds = load_source(src)
        whole = _whole_runs(ds, cfg)
        tasks += [_Task(ds, sc, cfg, whole) for sc in cfg.schemes]
    if cfg.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            outputs = list(pool.map(_run_cell_group, tasks))
    else:
        outputs = [_run_cell_group(t) for t in tasks]

    rows, summary, skipped = [], [], []
    for o in outputs:
        rows += o.rows
        summary += o.summaries
        skipped += o.skipped
    for t, o in zip(tasks, outputs):
        if t.dataset.ground_truth is None:
            continue
        for s in o.summaries:
            w = t.whole[s["method"]]
            q = _quality(w, t.dataset.ground_truth)
            quality.append(dict(
                dataset=s["dataset"], method=s["method"], scheme=s["scheme"], params=s["params"],
                mean_exact=s["mean_exact"], precision_whole=q["precision"], recall_whole=q["recall"],
                f1_whole=q["f1"],
            ))
    n_methods = len(cfg.detectors) + (1 if cfg.ensemble else 0)
    grid = len(cfg.datasets) * len(cfg.schemes) * n_methods
    return ResultsTable(rows, summary, skipped, quality, grid, cfg)


# ---------------------------------------------------------------- CSV I/O


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, columns: Sequence[str], rows: Sequence[dict], comments: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def read_table(path) -> tuple[dict, list[dict]]:
    """Return ``(comment key/values, rows)``; cells stay strings."""
    meta = {}
    with open(path, newline="") as fh:
        lines = []
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k] = v
            else:
                lines.append(line)
    return meta, list(csv.DictReader(lines))


def write_results(results: ResultsTable, out_dir) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    summary_cols = SUMMARY_COLUMNS
    if results.config.replicates == 1:
        summary_cols = tuple(c for c in SUMMARY_COLUMNS if c not in SD_COLUMNS)
    written = []
    for name, cols, rows in (
        ("replicates.csv", REPLICATE_COLUMNS, results.replicates),
        ("summary.csv", summary_cols, results.summary),
        ("skipped.csv", SKIPPED_COLUMNS, results.skipped),
    ):
        path = os.path.join(out_dir, name)
        comments = results.provenance(name[:-4])
        if name == "summary.csv":
            comments.append(f"grid_size={results.grid_size}")
        write_table(path, cols, rows, comments)
        written.append(path)
    if results.quality:
        path = os.path.join(out_dir, "quality.csv")
        write_table(path, QUALITY_COLUMNS, results.quality, results.provenance("quality"))
        written.append(path)
    return written


# ---------------------------------------------------------------- report


def _f(s: str) -> Optional[float]:
    return None if s == "" else float(s)


def _parse_replicates(rows: list[dict]) -> list[dict]:
    out = []
    for r in rows:
        d = dict(r)
        for k in ("replicate", "part", "sample_size"):
            d[k] = int(d[k])
        for k in REPLICATE_COLUMNS[7:]:
            d[k] = _f(d[k])
        out.append(d)
    return out


def _key(r) -> tuple:
    return (r["dataset"], r["method"], r["scheme"], r["params"])


def recompute_summary(replicate_rows: list[dict]) -> dict:
    """Group parsed replicate rows by cell and summarize each group."""
    groups: dict[tuple, list] = {}
    for r in replicate_rows:
        groups.setdefault(_key(r), []).append(r)
    return {k: summarize(v) for k, v in groups.items()}


SUMMARY_TOLERANCE = 1e-12


def check_summary(stored: list[dict], recomputed: dict, source: str) -> None:
    """Stored summary rows must match a recomputation from replicate rows."""
    for s in stored:
        k = _key(s)
        if k not in recomputed:
            raise DataError(f"{source}: summary row {k} has no replicate rows")
        rc = recomputed[k]
        for col in SUMMARY_COLUMNS[6:]:
            if col not in s:
                continue
            a, b = _f(s[col]), rc.get(col)
            if (a is None) != (b is None) or (a is not None and abs(a - b) > SUMMARY_TOLERANCE):
                raise DataError(f"{source}: summary {col} of {k} is {a}, replicate rows give {b}")


def _median(xs):
    return float(np.median(np.asarray(xs, dtype=float)))


def build_report(result_dirs: Sequence[str]) -> dict[str, tuple[tuple, list]]:
    """Plot-ready tables over one or more result directories, grouped by dataset id."""
    reps, stored, qual, hashes = [], [], [], []
    for d in result_dirs:
        rp = os.path.join(d, "replicates.csv")
        sp = os.path.join(d, "summary.csv")
        if not (os.path.isfile(rp) and os.path.isfile(sp)):
            raise ConfigError(f"{d}: no experiment results (replicates.csv and summary.csv) found")
        meta, rrows = read_table(rp)
        _, srows = read_table(sp)
        parsed = _parse_replicates(rrows)
        check_summary(srows, recompute_summary(parsed), d)
        reps += parsed
        stored += srows
        hashes.append(meta.get("config_sha256", ""))
        qp = os.path.join(d, "quality.csv")
        if os.path.isfile(qp):
            qual += read_table(qp)[1]
    if not reps:
        raise ConfigError("results contain no replicate rows")
    summ = recompute_summary(reps)
    keys = sorted(summ)  # dataset id first, so rows group per dataset

    by_scheme = []
    for k in keys:
        s = summ[k]
        base = dict(dataset=k[0], method=k[1], scheme=k[2], params=k[3], sample_size=s["sample_size"])
        by_scheme.append({**base, "estimator": "exact", "mean": s["mean_exact"], "sd": s["sd_exact"],
                          "n_values": s["n_values"]})
        if "mean_blind" in s:
            by_scheme.append({**base, "estimator": "blind", "mean": s["mean_blind"], "sd": s["sd_blind"],
                              "n_values": s["n_values"]})

    joint = []
    for q in sorted(qual, key=_key):
        s = summ.get(_key(q))
        if s is None:
            continue
        joint.append({**{c: q[c] for c in ("dataset", "method", "scheme", "params")},
                      "resilience": s["mean_exact"], "precision": _f(q["precision_whole"]),
                      "recall": _f(q["recall_whole"]), "f1": _f(q["f1_whole"])})

    ens = []
    cells: dict[tuple, dict] = {}
    for k in keys:
        cells.setdefault((k[0], k[2], k[3]), {})[k[1]] = summ[k]
    for (dsid, scheme, params), by_m in sorted(cells.items()):
        if ENSEMBLE not in by_m:
            continue
        comps = {m: s for m, s in by_m.items() if m != ENSEMBLE}
        for est, col in (("exact", "mean_exact"), ("blind", "mean_blind")):
            if col not in by_m[ENSEMBLE] or not comps or any(col not in s for s in comps.values()):
                continue
            vals = [s[col] for s in comps.values()]
            e = by_m[ENSEMBLE][col]
            med = _median(vals)
            ens.append(dict(dataset=dsid, scheme=scheme, params=params, estimator=est, ensemble=e,
                            component_median=med, component_min=min(vals), component_max=max(vals),
                            n_components=len(vals), ensemble_ge_median=int(e >= med)))

    mse_rows = [dict(dataset=k[0], scheme=k[2], params=k[3], method=k[1], mse=summ[k]["mse"],
                     mean_exact=summ[k]["mean_exact"], mean_blind=summ[k]["mean_blind"])
                for k in keys if "mse" in summ[k]]
    rmse_rows = [dict(dataset=k[0], scheme=k[2], params=k[3], method=k[1],
                      rmse_alpha=summ[k]["rmse_alpha"], rmse_beta=summ[k]["rmse_beta"])
                 for k in keys if "rmse_alpha" in summ[k]]

    digest = hashlib.sha256("\n".join(hashes).encode()).hexdigest()
    return {
        "_provenance": ((f"generator=outres {__version__}", f"inputs_sha256={digest}",
                         "sources=" + ";".join(f"{h}" for h in hashes)), []),
        "resilience_by_scheme.csv": (("dataset", "method", "scheme", "params", "sample_size", "estimator",
                                      "mean", "sd", "n_values"), by_scheme),
        "resilience_quality.csv": (("dataset", "method", "scheme", "params", "resilience", "precision",
                                    "recall", "f1"), joint),
        "ensemble_vs_components.csv": (("dataset", "scheme", "params", "estimator", "ensemble",
                                        "component_median", "component_min", "component_max",
                                        "n_components", "ensemble_ge_median"), ens),
        "mse.csv": (("dataset", "scheme", "params", "method", "mse", "mean_exact", "mean_blind"), mse_rows),
        "rmse.csv": (("dataset", "scheme", "params", "method", "rmse_alpha", "rmse_beta"), rmse_rows),
    }


def write_report(result_dirs: Sequence[str], out_dir) -> list[str]:
    tables = build_report(result_dirs)
    prov = list(tables.pop("_provenance")[0])
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name, (cols, rows) in tables.items():
        path = os.path.join(out_dir, name)
        write_table(path, cols, rows, prov + [f"table={name[:-4]}"])
        written.append(path)
    return written
