"""Command-line entry points.

Subcommands:
  run <config.json>        run a configured sweep, writing report.csv + summary.json
  gen <config.json>        export one generated dataset as per-user CSVs + manifest
  cluster <points.csv>     run a clustering algorithm on a bare point file
  report <dir>             re-summarize an existing report.csv

Progress goes to stderr; data only to files or stdout.  Exit codes:
0 success, 1 some report rows failed, 2 configuration problems.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .clustering import (GridSpec, clusterpath_select, convex_cluster, estimate_k,
                         kmeans, spectral_kmeans)
from .data import export_dataset, ingest_labeled_table
from .errors import ConfigError, ConvergenceError, DataFormatError
from .experiment import (ExperimentConfig, build_dataset, read_report, run_experiment,
                         write_summary)

logger = logging.getLogger("oneshotcl")


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr,
                        level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        return args.func(args)
    except (ConfigError, DataFormatError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        return 2
    except ConvergenceError as exc:
        logger.error("%s", exc)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oneshotcl",
                                     description="One-shot clustered learning simulator")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config", type=Path)
    p_run.add_argument("--seed-override", type=int, default=None,
                       help="replace the config's seed list with this single seed")
    p_run.add_argument("--threads", type=int, default=1,
                       help="worker threads over (n, seed) cells")
    p_run.set_defaults(func=_cmd_run)

    p_gen = sub.add_parser("gen", help="generate and export one dataset")
    p_gen.add_argument("config", type=Path)
    p_gen.add_argument("--out", type=Path, required=True)
    p_gen.add_argument("--n", type=int, default=None,
                       help="per-user samples (default: first sweep entry)")
    p_gen.add_argument("--seed-override", type=int, default=None)
    p_gen.set_defaults(func=_cmd_gen)

    p_cluster = sub.add_parser("cluster", help="cluster a CSV point file")
    p_cluster.add_argument("points", type=Path,
                           help="CSV of points; every column is a coordinate")
    p_cluster.add_argument("--algo", required=True,
                           choices=["kmeans_pp", "kmeans_spectral", "convex_cc",
                                    "clusterpath", "kmeans_estimated"])
    p_cluster.add_argument("--k", type=int, default=None)
    p_cluster.add_argument("--lambda", dest="lam", type=float, default=None)
    p_cluster.add_argument("--k-max", type=int, default=None)
    p_cluster.add_argument("--metric", choices=["elbow", "silhouette"],
                           default="silhouette")
    p_cluster.add_argument("--seed", type=int, default=0)
    p_cluster.add_argument("--out", type=Path, default=None,
                           help="write the result JSON here instead of stdout")
    p_cluster.set_defaults(func=_cmd_cluster)

    p_report = sub.add_parser("report", help="re-summarize an existing report")
    p_report.add_argument("dir", type=Path)
    p_report.set_defaults(func=_cmd_report)
    return parser


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    report, summary, failed = run_experiment(cfg, threads=max(1, args.threads),
                                             seed_override=args.seed_override)
    logger.info("wrote %s and %s", report, summary)
    return 1 if failed else 0


def _cmd_gen(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    n = args.n if args.n is not None else int(cfg.sweep[0])
    seed = args.seed_override if args.seed_override is not None else int(cfg.seeds[0])
    ds = build_dataset(cfg.data, n, seed)
    out = export_dataset(ds, args.out)
    logger.info("exported %d shards to %s", ds.m, out)
    return 0


def _load_points(path: Path) -> np.ndarray:
    rows = []
    for ln, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append([float(cell) for cell in line.split(",")])
        except ValueError as exc:
            raise DataFormatError(f"{path}, line {ln}: non-numeric cell ({exc})") from None
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DataFormatError(f"{path}: ragged rows (widths {sorted(widths)})")
    return np.asarray(rows, dtype=float)


def _cmd_cluster(args) -> int:
    pts = _load_points(args.points)
    payload = {}
    if args.algo == "kmeans_pp":
        if args.k is None:
            raise ConfigError("--k is required for kmeans_pp")
        result = kmeans(pts, args.k, seed=args.seed)
    elif args.algo == "kmeans_spectral":
        if args.k is None:
            raise ConfigError("--k is required for kmeans_spectral")
        result = spectral_kmeans(pts, args.k, seed=args.seed)
    elif args.algo == "convex_cc":
        if args.lam is None:
            raise ConfigError("--lambda is required for convex_cc")
        result = convex_cluster(pts, args.lam)
    elif args.algo == "clusterpath":
        lam, result, trace = clusterpath_select(pts, GridSpec())
        payload["selected_lambda"] = lam
        payload["path"] = [{"lambda": t[0], "k": t[1], "objective": t[2],
                            "verified": t[3]} for t in trace]
    else:
        k_max = args.k_max or pts.shape[0]
        k_hat = estimate_k(pts, k_max, metric=args.metric, seed=args.seed)
        result = kmeans(pts, k_hat, seed=args.seed)
        payload["estimated_k"] = k_hat
    payload.update(result.to_json())
    text = json.dumps(payload, indent=2)
    if args.out:
        args.out.write_text(text)
        logger.info("wrote %s", args.out)
    else:
        print(text)
    return 0


def _cmd_report(args) -> int:
    report = args.dir / "report.csv"
    if not report.exists():
        raise ConfigError(f"{report}: not found")
    rows = read_report(report)
    summary = write_summary(args.dir, rows)
    logger.info("wrote %s", summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
