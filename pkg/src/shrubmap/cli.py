"""Command-line interface.

Subcommands: evaluate, evaluate-by-size, sweep, postprocess, density,
histogram, validate, classify. Exit codes: 0 on success, 1 on usage
errors, 2 on data errors. All outputs are deterministic byte-for-byte
for fixed inputs and configuration.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import io as sio
from . import mapstats, pipeline, validation
from .errors import SchemaError, ShrubMapError
from .matching import MatchConfig, Metric, evaluate_scene
from .metrics import (
    ScoreRow,
    classify_size,
    evaluate_by_size,
    precision_recall_f1,
    scores_csv_text,
)

logger = logging.getLogger(__name__)

USAGE_EXIT = 1
DATA_EXIT = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; this toolkit reserves 2 for data errors."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise SystemExit(USAGE_EXIT)


def _load_feature_pair(dets_path: str, gts_path: str):
    dets_file = sio.read_feature_collection(dets_path)
    gts_file = sio.read_feature_collection(gts_path)
    if dets_file.crs != gts_file.crs:
        raise SchemaError(
            f"CRS mismatch: {dets_path} has {dets_file.crs!r}, {gts_path} has {gts_file.crs!r}"
        )
    return dets_file.detections + gts_file.detections, dets_file.groundtruths + gts_file.groundtruths


def _base_config(args: argparse.Namespace) -> sio.RunConfig:
    cfg = sio.load_config(args.config) if getattr(args, "config", None) else sio.RunConfig()
    for arg_name, cfg_name in (
        ("metric", "metric"),
        ("thr", "overlap_threshold"),
        ("theta", "score_threshold"),
        ("min_alt", "min_altitude"),
        ("min_area", "min_area"),
        ("score_field", "score_field"),
        ("match_set_rule", "match_set_rule"),
    ):
        value = getattr(args, arg_name, None)
        if value is not None:
            setattr(cfg, cfg_name, value)
    return cfg


def _cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _base_config(args)
    dets, gts = _load_feature_pair(args.dets, args.gts)
    result = evaluate_scene(dets, gts, cfg.to_match_config())
    row = ScoreRow(
        data=args.label or Path(args.dets).stem,
        metric=cfg.metric,
        threshold=cfg.overlap_threshold,
        size="All",
        counts=result.counts,
        scores=precision_recall_f1(result.counts),
    )
    _emit_scores(args.out, [row])
    return 0


def _cmd_evaluate_by_size(args: argparse.Namespace) -> int:
    cfg = _base_config(args)
    dets, gts = _load_feature_pair(args.dets, args.gts)
    evaluation = evaluate_by_size(dets, gts, cfg.to_match_config())
    label = args.label or Path(args.dets).stem
    rows = [
        ScoreRow(
            data=label,
            metric=cfg.metric,
            threshold=cfg.overlap_threshold,
            size=cls.name,
            counts=counts,
            scores=precision_recall_f1(counts),
        )
        for cls, counts in evaluation.counts_by_class.items()
    ]
    rows.append(
        ScoreRow(
            data=label,
            metric=cfg.metric,
            threshold=cfg.overlap_threshold,
            size="All",
            counts=evaluation.total,
            scores=evaluation.total_scores(),
        )
    )
    _emit_scores(args.out, rows)
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _base_config(args)
    dets, gts = _load_feature_pair(args.dets, args.gts)
    steps = int(round(1.0 / args.step))
    lines = ["data,metric,threshold,theta,TP,FP,FN,P,R,F1"]
    label = args.label or Path(args.dets).stem
    for i in range(steps + 1):
        theta = i / steps
        match_cfg = MatchConfig(
            metric=Metric(cfg.metric),
            overlap_threshold=cfg.overlap_threshold,
            score_threshold=theta,
            min_label_fraction=cfg.match_set_rule,
        )
        counts = evaluate_scene(dets, gts, match_cfg).counts
        scores = precision_recall_f1(counts)
        lines.append(
            f"{label},{cfg.metric},{cfg.overlap_threshold:g},{theta:g},"
            f"{counts.tp},{counts.fp},{counts.fn},"
            f"{scores.precision:.2f},{scores.recall:.2f},{scores.f1:.2f}"
        )
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_postprocess(args: argparse.Namespace) -> int:
    cfg = _base_config(args)
    if args.strict and args.score_field is None:
        print("error: --strict requires an explicit --score-field", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)
    tiles = sio.read_tile_manifest(args.tiles)
    dem = sio.read_dem(args.dem)
    if args.detections_dir:
        detector: pipeline.DetectorPort = pipeline.FixtureDetector(args.detections_dir)
    else:
        detector = pipeline.SubprocessDetector(args.detector_cmd)
    final = pipeline.run_pipeline(
        tiles,
        dem,
        detector,
        min_altitude_m=cfg.min_altitude,
        min_area_m2=cfg.min_area,
        score_field=cfg.score_field,
        score_threshold=cfg.score_threshold,
        snap_tolerance_m=args.snap_tol,
        altitude_statistic=args.alt_statistic,
        max_workers=args.max_workers,
    )
    sio.write_map(args.out, final, crs=args.crs)
    print(f"wrote {len(final)} shrubs to {args.out}")
    return 0


def _cmd_density(args: argparse.Namespace) -> int:
    map_dets = sio.read_map(args.map)
    if args.extent:
        extent = tuple(args.extent)
    else:
        if not map_dets:
            raise SchemaError(f"{args.map}: empty map needs an explicit --extent")
        xs0, ys0, xs1, ys1 = zip(*(d.region.bounds for d in map_dets))
        extent = (min(xs0), min(ys0), max(xs1), max(ys1))
    grid = mapstats.density_grid(map_dets, extent)
    if args.format == "geojson":
        mapstats.write_density_geojson(grid, args.out)
    else:
        mapstats.write_density_csv(grid, args.out)
    print(f"{grid.total} shrubs gridded, max {grid.max_per_cell} per hectare")
    return 0


def _cmd_histogram(args: argparse.Namespace) -> int:
    map_dets = sio.read_map(args.map)
    dem = sio.read_dem(args.dem)
    hist = mapstats.altitude_histogram(map_dets, dem, by_size=args.by_size)
    mapstats.write_histogram_csv(hist, args.out)
    total = hist.total()
    print(f"{total} shrubs binned, {hist.skipped_no_coverage} without DEM coverage")
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    sites = sio.read_sites(args.sites)
    _, observed = sio.read_features(args.obs)
    predicted = sio.read_map(args.map)
    series = validation.build_site_series(sites, observed, predicted, kind=args.kind)
    stats = validation.error_stats(series)
    if args.out:
        validation.write_series_csv(series, args.out)
    print(f"sites={len(series)} unit={series.unit}")
    print(f"rmse={stats.rmse:.4f} mae={stats.mae:.4f} mbe={stats.mbe:.4f}")
    if stats.r2 is not None:
        print(f"r2_identity={stats.r2:.4f}")
    if stats.r2_fit is not None:
        print(f"r2_fit={stats.r2_fit:.4f} pearson_r={validation.pearson_r(series):.4f}")
    return 0


def _cmd_classify(args: argparse.Namespace) -> int:
    for value in args.areas:
        print(f"{value:g},{classify_size(value).name}")
    return 0


def _emit_scores(out: str | None, rows) -> None:
    text = scores_csv_text(rows)
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser() -> _Parser:
    parser = _Parser(prog="shrubmap", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add_eval_args(p: _Parser) -> None:
        p.add_argument("--dets", required=True, help="detections feature file")
        p.add_argument("--gts", required=True, help="ground-truth feature file")
        p.add_argument("--metric", choices=[m.value for m in Metric])
        p.add_argument("--thr", type=float, help="overlap threshold in (0,1]")
        p.add_argument("--theta", type=float, help="confidence score cutoff")
        p.add_argument("--match-set-rule", dest="match_set_rule", type=float)
        p.add_argument("--label", help="dataset label for the CSV 'data' column")
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--out", help="output CSV (default: stdout)")

    p = sub.add_parser("evaluate", help="scene TP/FP/FN and P/R/F1")
    add_eval_args(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("evaluate-by-size", help="scores stratified by shrub size")
    add_eval_args(p)
    p.set_defaults(func=_cmd_evaluate_by_size)

    p = sub.add_parser("sweep", help="score-threshold sweep from 0 to 1")
    add_eval_args(p)
    p.add_argument("--step", type=float, default=0.05)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("postprocess", help="tiles + DEM + detector to final map")
    p.add_argument("--tiles", required=True, help="tile manifest CSV")
    p.add_argument("--dem", required=True, help="ESRI ASCII elevation grid")
    p.add_argument("--min-alt", dest="min_alt", type=float)
    p.add_argument("--min-area", dest="min_area", type=float)
    p.add_argument("--score-field", dest="score_field", choices=pipeline.SCORE_FIELDS)
    p.add_argument("--theta", type=float)
    p.add_argument(
        "--alt-statistic", dest="alt_statistic", choices=("max", "mean"), default="max"
    )
    p.add_argument("--snap-tol", type=float, default=pipeline.DEFAULT_SNAP_TOLERANCE_M)
    p.add_argument("--max-workers", type=int, default=None)
    p.add_argument("--crs", default=sio.DEFAULT_CRS)
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--strict", action="store_true", help="require an explicit --score-field")
    p.add_argument("--out", required=True, help="output map GeoJSON")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--detector-cmd", help="subprocess template, see docs")
    group.add_argument("--detections-dir", help="directory of per-tile feature files")
    p.set_defaults(func=_cmd_postprocess)

    p = sub.add_parser("density", help="per-hectare density grid from a map")
    p.add_argument("--map", required=True)
    p.add_argument("--extent", type=float, nargs=4, metavar=("X0", "Y0", "X1", "Y1"))
    p.add_argument("--format", choices=("csv", "geojson"), default="csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_density)

    p = sub.add_parser("histogram", help="altitudinal distribution from a map")
    p.add_argument("--map", required=True)
    p.add_argument("--dem", required=True)
    p.add_argument("--by-size", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_histogram)

    p = sub.add_parser("validate", help="observed vs predicted site statistics")
    p.add_argument("--sites", required=True, help="site footprints feature file")
    p.add_argument("--obs", required=True, help="observed ground-truth feature file")
    p.add_argument("--map", required=True, help="predicted map feature file")
    p.add_argument("--kind", choices=("cover", "count"), required=True)
    p.add_argument("--out", help="scatter CSV output")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("classify", help="size class of one or more areas in m2")
    p.add_argument("areas", type=float, nargs="+")
    p.set_defaults(func=_cmd_classify)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Run the CLI; returns the process exit code."""
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else USAGE_EXIT
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return USAGE_EXIT
    try:
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else USAGE_EXIT
    except (ShrubMapError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except ValueError as exc:
        # Parameter ranges (thresholds, fractions) are usage problems;
        # file-level problems surface as ShrubMapError subclasses.
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT


def console_main() -> None:  # pragma: no cover - thin wrapper
    sys.exit(main())
