"""shrubmap: evaluation and map post-processing for shrub instance detections.

Evaluates instance-segmentation outputs with plain IoU and a soft
overlap metric tailored to polymorphic shrubs, and post-processes tiled
wall-to-wall detections (altitude filter, cross-tile dissolve, area
filter) into a final vector map with density, altitude and validation
statistics.
"""

from .errors import (
    DegenerateBBox,
    DegenerateVariance,
    DetectorUnavailable,
    EmptyMatchSet,
    InvalidGeometry,
    NoDemCoverage,
    NonPositiveArea,
    ParseError,
    SchemaError,
    ShrubMapError,
)
from .geometry import Region, area, intersection, union
from .matching import (
    ConfusionCounts,
    Detection,
    GroundTruth,
    MatchConfig,
    Metric,
    SceneResult,
    Source,
    evaluate_scene,
    evaluate_scenes,
    iou,
    s_iou_label,
    s_iou_prediction,
)
from .metrics import (
    ScoreTriple,
    SizeClass,
    classify_size,
    evaluate_by_size,
    precision_recall_f1,
)
from .pipeline import (
    DemGrid,
    DissolvedDetection,
    Tile,
    TileGrid,
    altitude_filter,
    area_filter,
    build_tile_grid,
    dissolve,
    merge_map,
    run_detector,
    run_pipeline,
)
from .mapstats import (
    AltitudeHistogram,
    DensityGrid,
    altitude_histogram,
    canopy_cover,
    density_grid,
)
from .validation import (
    ErrorStats,
    PairedSeries,
    build_site_series,
    error_stats,
    pearson_r,
)

__version__ = "0.1.0"

__all__ = [
    "AltitudeHistogram",
    "ConfusionCounts",
    "DegenerateBBox",
    "DegenerateVariance",
    "DemGrid",
    "DensityGrid",
    "Detection",
    "DetectorUnavailable",
    "DissolvedDetection",
    "EmptyMatchSet",
    "ErrorStats",
    "GroundTruth",
    "InvalidGeometry",
    "MatchConfig",
    "Metric",
    "NoDemCoverage",
    "NonPositiveArea",
    "PairedSeries",
    "ParseError",
    "Region",
    "SceneResult",
    "SchemaError",
    "ScoreTriple",
    "ShrubMapError",
    "SizeClass",
    "Source",
    "Tile",
    "TileGrid",
    "altitude_filter",
    "altitude_histogram",
    "area",
    "area_filter",
    "build_site_series",
    "build_tile_grid",
    "canopy_cover",
    "classify_size",
    "density_grid",
    "dissolve",
    "error_stats",
    "evaluate_by_size",
    "evaluate_scene",
    "evaluate_scenes",
    "intersection",
    "iou",
    "merge_map",
    "pearson_r",
    "precision_recall_f1",
    "run_detector",
    "run_pipeline",
    "s_iou_label",
    "s_iou_prediction",
    "union",
]
