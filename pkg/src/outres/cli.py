"""Command-line entry point: ``outres <subcommand> ...``.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import config as config_mod
from .core import ConfigError, DataError, NumericalError, RangeError, load_csv, write_csv
from .detectors import METHODS, DetectorConfig, run_detector, write_detection_csv
from .ensemble import em_fit
from .harness import run_experiment, write_report, write_results, write_table
from .resilience import MODES, SchemeSpec, ensemble_resilience, estimate_resilience
from .samplers import SampleIndex, full_index
from .synthgen import SynthSpec, generate, generate_fig1

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _provenance(args: argparse.Namespace, seed) -> list[str]:
    """Header lines: version, hash of the invocation's settings, seed."""
    settings = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out")}
    text = "\n".join(f"{k}={v}" for k, v in settings.items())
    return [
        f"generator=outres {__version__}",
        f"config_sha256={hashlib.sha256(text.encode()).hexdigest()}",
        f"seed={seed}",
        "command=" + " ".join(f"{k}={v}" for k, v in settings.items()),
    ]


def _detector_from_args(method: str, args) -> DetectorConfig:
    return DetectorConfig(
        method,
        top_fraction=args.top_fraction,
        k_clusters=args.k_clusters,
        min_pts=args.min_pts,
        chi_sq_quantile=args.chi_sq_quantile,
        mad_multiplier=args.mad_multiplier,
        ridge_epsilon=args.ridge_epsilon,
        aggregation=args.aggregation,
    )


def _scheme_from_args(args) -> SchemeSpec:
    if args.scheme == "random":
        if args.size is None:
            raise UsageError("--scheme random needs --size")
        return SchemeSpec.random(args.size)
    if args.scheme == "block":
        if args.n_blocks is None or args.block_size is None:
            raise UsageError("--scheme block needs --n-blocks and --block-size")
        return SchemeSpec.block(args.n_blocks, args.block_size)
    if args.k is None:
        raise UsageError("--scheme partition needs --k")
    return SchemeSpec.partition(args.k)


def _load(args):
    return load_csv(args.data, args.gt_column)


def _load_sample(path, n) -> Optional[SampleIndex]:
    if path is None:
        return None
    s = SampleIndex.from_csv(path)
    if s.parent_n != n:
        raise DataError(f"{path}: sample was drawn from {s.parent_n} rows, dataset has {n}")
    return s


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    if args.fig1:
        ds = generate_fig1(args.seed)
    else:
        try:
            spec = SynthSpec(n=args.n, outlier_distribution=args.dist, rate=args.rate, seed=args.seed)
        except ConfigError as e:
            raise UsageError(str(e)) from None
        ds = generate(spec)
    write_csv(ds, args.out, comments=_provenance(args, args.seed) + [f"dataset={ds.id}"])
    print(f"wrote {ds.n} rows to {args.out}")
    return EXIT_OK


def cmd_detect(args) -> int:
    ds = _load(args)
    cfg = _detector_from_args(args.method, args)
    scope = _load_sample(args.sample, ds.n)
    res = run_detector(ds, cfg, scope, args.seed)
    write_detection_csv(res, args.out, _provenance(args, args.seed))
    print(f"{res.method}: {res.n_flagged} of {res.record_flags.size} records flagged")
    return EXIT_OK


def cmd_sample(args) -> int:
    if (args.n is None) == (args.data is None):
        raise UsageError("give exactly one of --n or --data")
    n = args.n if args.n is not None else _load(args).n
    scheme = _scheme_from_args(args)
    samples = scheme.draw(n, args.seed)
    if len(samples) == 1:
        samples[0].to_csv(args.out)
        print(f"wrote {len(samples[0])} indices to {args.out}")
        return EXIT_OK
    os.makedirs(args.out, exist_ok=True)
    for s in samples:
        path = os.path.join(args.out, f"part{s.param_dict['part_id']}.csv")
        s.to_csv(path)
    print(f"wrote {len(samples)} parts to {args.out}")
    return EXIT_OK


def cmd_resilience(args) -> int:
    ds = _load(args)
    cfg = _detector_from_args(args.method, args)
    scheme = _scheme_from_args(args)
    panel = None
    if args.panel:
        panel = [_detector_from_args(m, args) for m in args.panel]
        if cfg not in panel:
            panel.insert(0, cfg)
    est = estimate_resilience(ds, cfg, scheme, args.replicates, args.mode, args.seed, panel)
    rows = [
        dict(replicate=r, part=p, rho=float(v))
        for (r, p), v in zip(est.replicate_keys, est.per_replicate)
    ]
    comments = _provenance(args, args.seed) + [
        f"dataset={ds.id}", f"method={est.method}", f"scheme={est.scheme}", f"mode={est.mode}",
        f"mean={est.mean!r}", f"sd={'' if est.sd is None else repr(est.sd)}",
    ]
    write_table(args.out, ("replicate", "part", "rho"), rows, comments)
    sd = "n/a" if est.sd is None else f"{est.sd:.6f}"
    print(f"{est.method} {est.scheme} {est.mode}: mean {est.mean:.6f} sd {sd} over {len(rows)} samples")
    return EXIT_OK


def cmd_ensemble(args) -> int:
    ds = _load(args)
    cfgs = [_detector_from_args(m, args) for m in args.methods]
    if args.scheme:
        est = ensemble_resilience(ds, cfgs, _scheme_from_args(args), args.replicates, args.mode, args.seed)
        rows = [dict(replicate=r, part=p, rho=float(v)) for (r, p), v in zip(est.replicate_keys, est.per_replicate)]
        write_table(args.out, ("replicate", "part", "rho"), rows,
                    _provenance(args, args.seed) + [f"dataset={ds.id}", f"method={est.method}",
                                                    f"mean={est.mean!r}"])
        print(f"{est.method} {est.scheme} {est.mode}: mean {est.mean:.6f}")
        return EXIT_OK
    scope = _load_sample(args.sample, ds.n)
    results = [run_detector(ds, c, scope, args.seed) for c in cfgs]
    model = em_fit(np.column_stack([r.record_flags for r in results]))
    model = dataclasses.replace(model, method_ids=tuple(args.methods))
    idx = (scope or full_index(ds.n)).indices
    rows = [dict(record_index=int(i), flag=int(f), p_outlier=float(p))
            for i, f, p in zip(idx, model.labels, model.posteriors[:, 0])]
    write_table(args.out, ("record_index", "flag", "p_outlier"), rows,
                _provenance(args, args.seed) + [f"dataset={ds.id}", "method=ensemble(" + "+".join(args.methods) + ")"])
    report = model.report()
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(report)
    sys.stdout.write(report)
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = config_mod.load(args.config)
    cfg = cfg.with_overrides(seed=args.seed, mode=args.mode, output_dir=args.out, jobs=args.jobs)
    results = run_experiment(cfg)
    written = write_results(results, cfg.output_dir)
    print(f"{len(results.summary)} cells summarized, {len(results.skipped)} skipped, grid size {results.grid_size}")
    for p in written:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_report(args) -> int:
    written = write_report(args.results, args.out)
    for p in written:
        print(f"wrote {p}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_detector_flags(p, multi=False):
    if multi:
        p.add_argument("--methods", nargs="+", choices=METHODS, required=True, metavar="METHOD")
    else:
        p.add_argument("--method", required=True, help=f"one of: {', '.join(METHODS)}")
    p.add_argument("--top-fraction", type=float, default=0.10)
    p.add_argument("--k-clusters", type=int, default=5)
    p.add_argument("--min-pts", type=int, default=10)
    p.add_argument("--chi-sq-quantile", type=float, default=0.975)
    p.add_argument("--mad-multiplier", type=float, default=3.0)
    p.add_argument("--ridge-epsilon", type=float, default=1e-8)
    p.add_argument("--aggregation", choices=("any", "majority"), default="any")


def _add_data_flags(p, required=True):
    p.add_argument("--data", required=required, help="input CSV")
    p.add_argument("--gt-column", default=None, help="0/1 ground-truth column, excluded from the features")


def _add_scheme_flags(p, required=True):
    p.add_argument("--scheme", choices=("random", "block", "partition"), required=required)
    p.add_argument("--size", type=float, help="random: row count, or fraction when < 1")
    p.add_argument("--n-blocks", type=int)
    p.add_argument("--block-size", type=int)
    p.add_argument("--k", type=int, help="partition: number of parts")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="outres", description="Resilience of outlier detectors to sampling.")
    ap.add_argument("--version", action="version", version=f"outres {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--dist", choices=("dist1", "dist2"), default="dist1")
    p.add_argument("--rate", type=float, default=0.05)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--fig1", action="store_true", help="the plain bivariate normal illustration dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("detect", help="run one detector")
    _add_data_flags(p)
    _add_detector_flags(p)
    p.add_argument("--sample", help="row-index CSV written by 'sample'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("sample", help="draw a sample")
    _add_data_flags(p, required=False)
    p.add_argument("--n", type=int, help="parent dataset size")
    _add_scheme_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV path; a directory for partitions")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("resilience", help="estimate one detector's resilience")
    _add_data_flags(p)
    _add_detector_flags(p)
    _add_scheme_flags(p)
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--mode", choices=MODES, default="exact")
    p.add_argument("--panel", nargs="+", choices=METHODS, help="blind mode: EM panel methods")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_resilience)

    p = sub.add_parser("ensemble", help="EM consensus of several detectors, or its resilience")
    _add_data_flags(p)
    _add_detector_flags(p, multi=True)
    p.add_argument("--sample", help="row-index CSV written by 'sample'")
    _add_scheme_flags(p, required=False)
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--mode", choices=MODES, default="exact")
    p.add_argument("--report", help="also write the text report here")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("experiment", help="run a configured experiment grid")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="override master_seed")
    p.add_argument("--mode", choices=MODES, help="override mode")
    p.add_argument("--out", help="override output_dir")
    p.add_argument("--jobs", type=int, help="worker processes")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="plot-ready tables from experiment results")
    p.add_argument("results", nargs="+", help="experiment output directories")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"outres: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, RangeError, OSError) as e:
        print(f"outres: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as e:
        print(f"outres: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
