"""File formats: GeoJSON feature files, map files, ESRI ASCII DEMs,
tile manifests and the flat run configuration.

The vector carrier is a GeoJSON FeatureCollection restricted to Polygon
and MultiPolygon geometries, with coordinates in projected meters and
the CRS recorded as a top-level ``crs`` property. The CRS is recorded
but never transformed; mixing files with different CRS tags is a hard
error at the CLI level.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import InvalidGeometry, ParseError, SchemaError
from .geometry import Region
from .matching import Detection, GroundTruth, MatchConfig, Metric, Source
from .pipeline import DemGrid, DissolvedDetection, Tile

DEFAULT_CRS = "local-meters"

_GEOMETRY_TYPES = ("Polygon", "MultiPolygon")


def _region_from_geojson(geometry: dict) -> Region:
    gtype = geometry.get("type")
    coords = geometry.get("coordinates")
    if gtype == "Polygon":
        parts = [coords]
    elif gtype == "MultiPolygon":
        parts = coords
    else:
        raise SchemaError(f"geometry type {gtype!r} not in {_GEOMETRY_TYPES}")
    return Region.from_parts([(rings[0], rings[1:]) for rings in parts])


def _region_to_geojson(region: Region) -> dict:
    parts = region.parts
    if len(parts) == 1:
        return {
            "type": "Polygon",
            "coordinates": [[list(pt) for pt in ring] for ring in parts[0]],
        }
    return {
        "type": "MultiPolygon",
        "coordinates": [
            [[list(pt) for pt in ring] for ring in part] for part in parts
        ],
    }


@dataclass
class FeatureFile:
    """Parsed contents of a detection/ground-truth feature file."""

    detections: list[Detection]
    groundtruths: list[GroundTruth]
    crs: str = DEFAULT_CRS


def _load_json(path: str | Path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: malformed JSON: {exc}") from exc


def read_feature_collection(path: str | Path) -> FeatureFile:
    """Read and validate a feature file; problems name the feature index."""
    payload = _load_json(path)
    if payload.get("type") != "FeatureCollection":
        raise SchemaError(f"{path}: expected a FeatureCollection")
    crs = payload.get("crs", DEFAULT_CRS)
    detections: list[Detection] = []
    groundtruths: list[GroundTruth] = []
    problems: list[str] = []
    for index, feature in enumerate(payload.get("features", [])):
        try:
            props = feature.get("properties") or {}
            geometry = feature.get("geometry")
            if geometry is None:
                raise SchemaError("missing geometry")
            region = _region_from_geojson(geometry)
            role = props.get("role")
            if role == "detection":
                if "score" not in props:
                    raise SchemaError("detection missing 'score'")
                detections.append(
                    Detection(
                        region=region,
                        score=float(props["score"]),
                        tile_id=props.get("tile_id"),
                    )
                )
            elif role == "groundtruth":
                gt_id = props.get("id", index)
                source = Source(props.get("source", "PI"))
                groundtruths.append(GroundTruth(region=region, id=gt_id, source=source))
            else:
                raise SchemaError(f"role {role!r} not 'detection' or 'groundtruth'")
        except (SchemaError, InvalidGeometry, ValueError) as exc:
            problems.append(f"feature {index}: {exc}")
    if problems:
        raise SchemaError(f"{path}: " + "; ".join(problems))
    return FeatureFile(detections=detections, groundtruths=groundtruths, crs=crs)


def read_features(path: str | Path) -> tuple[list[Detection], list[GroundTruth]]:
    """Typed detections and ground truths from a feature file."""
    parsed = read_feature_collection(path)
    return parsed.detections, parsed.groundtruths


def write_features(
    path: str | Path,
    detections: Sequence[Detection] = (),
    groundtruths: Sequence[GroundTruth] = (),
    crs: str = DEFAULT_CRS,
) -> None:
    """Write a feature file; output bytes are deterministic."""
    features: list[dict] = []
    for det in detections:
        props: dict[str, Any] = {"role": "detection", "score": det.score}
        if det.tile_id is not None:
            props["tile_id"] = det.tile_id
        features.append(
            {
                "type": "Feature",
                "geometry": _region_to_geojson(det.region),
                "properties": props,
            }
        )
    for gt in groundtruths:
        features.append(
            {
                "type": "Feature",
                "geometry": _region_to_geojson(gt.region),
                "properties": {"role": "groundtruth", "id": gt.id, "source": gt.source.value},
            }
        )
    payload = {"type": "FeatureCollection", "crs": crs, "features": features}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_sites(path: str | Path) -> list[tuple[str, Region]]:
    """Site footprints: every polygonal feature with its 'id' property."""
    payload = _load_json(path)
    if payload.get("type") != "FeatureCollection":
        raise SchemaError(f"{path}: expected a FeatureCollection")
    sites: list[tuple[str, Region]] = []
    for index, feature in enumerate(payload.get("features", [])):
        geometry = feature.get("geometry")
        if geometry is None:
            raise SchemaError(f"{path}: feature {index}: missing geometry")
        props = feature.get("properties") or {}
        try:
            region = _region_from_geojson(geometry)
        except (SchemaError, InvalidGeometry) as exc:
            raise SchemaError(f"{path}: feature {index}: {exc}") from exc
        sites.append((str(props.get("id", index)), region))
    return sites


def write_map(
    path: str | Path,
    dissolved: Sequence[DissolvedDetection],
    crs: str = DEFAULT_CRS,
) -> None:
    """Write a final-map feature file with the aggregated scores."""
    features = []
    for det in dissolved:
        features.append(
            {
                "type": "Feature",
                "geometry": _region_to_geojson(det.region),
                "properties": {
                    "role": "detection",
                    "score_avg": det.score_avg,
                    "score_median": det.score_median,
                    "score_max": det.score_max,
                    "member_count": det.member_count,
                    "source_tiles": sorted(det.source_tiles),
                    "area_m2": det.region.area,
                },
            }
        )
    payload = {"type": "FeatureCollection", "crs": crs, "features": features}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_map(path: str | Path) -> list[DissolvedDetection]:
    """Read a final-map feature file back into dissolved detections."""
    payload = _load_json(path)
    if payload.get("type") != "FeatureCollection":
        raise SchemaError(f"{path}: expected a FeatureCollection")
    out: list[DissolvedDetection] = []
    for index, feature in enumerate(payload.get("features", [])):
        props = feature.get("properties") or {}
        try:
            region = _region_from_geojson(feature.get("geometry") or {})
            out.append(
                DissolvedDetection(
                    region=region,
                    score_avg=float(props.get("score_avg", props.get("score", 1.0))),
                    score_median=float(props.get("score_median", props.get("score", 1.0))),
                    score_max=float(props.get("score_max", props.get("score", 1.0))),
                    member_count=int(props.get("member_count", 1)),
                    source_tiles=frozenset(props.get("source_tiles", ())),
                )
            )
        except (SchemaError, InvalidGeometry, ValueError) as exc:
            raise SchemaError(f"{path}: feature {index}: {exc}") from exc
    return out


# --- ESRI ASCII grid -------------------------------------------------------

_DEM_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize")


def read_dem(path: str | Path) -> DemGrid:
    """Read an ESRI ASCII grid (row-major, first row northernmost)."""
    header: dict[str, float] = {}
    with open(path) as fh:
        text = fh.read()
    tokens = text.split()
    pos = 0
    nodata = -9999.0
    while pos + 1 < len(tokens):
        key = tokens[pos].lower()
        if key in _DEM_HEADER_KEYS:
            header[key] = float(tokens[pos + 1])
            pos += 2
        elif key == "nodata_value":
            nodata = float(tokens[pos + 1])
            pos += 2
        else:
            break
    missing = [k for k in _DEM_HEADER_KEYS if k not in header]
    if missing:
        raise ParseError(f"{path}: DEM header missing {missing}")
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    body = tokens[pos:]
    if len(body) != nrows * ncols:
        raise ParseError(
            f"{path}: expected {nrows * ncols} DEM values, found {len(body)}"
        )
    try:
        values = np.array(body, dtype=float).reshape(nrows, ncols)
        return DemGrid(
            xll=header["xllcorner"],
            yll=header["yllcorner"],
            cell_size=header["cellsize"],
            values=values,
            nodata=nodata,
        )
    except ValueError as exc:
        raise ParseError(f"{path}: bad DEM: {exc}") from exc


def write_dem(path: str | Path, dem: DemGrid) -> None:
    with open(path, "w") as fh:
        fh.write(f"ncols {dem.ncols}\n")
        fh.write(f"nrows {dem.nrows}\n")
        fh.write(f"xllcorner {dem.xll:g}\n")
        fh.write(f"yllcorner {dem.yll:g}\n")
        fh.write(f"cellsize {dem.cell_size:g}\n")
        fh.write(f"NODATA_value {dem.nodata:g}\n")
        for row in dem.values:
            fh.write(" ".join(f"{v:g}" for v in row))
            fh.write("\n")


# --- Tile manifest ---------------------------------------------------------

_MANIFEST_COLUMNS = ("tile_id", "x0", "y0", "cols", "rows", "gsd", "image_path")


def read_tile_manifest(path: str | Path) -> list[Tile]:
    """Tiles from a manifest CSV with the standard columns."""
    tiles: list[Tile] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in _MANIFEST_COLUMNS[:-1] if c not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError(f"{path}: manifest missing columns {missing}")
        for line, row in enumerate(reader, start=2):
            try:
                tiles.append(
                    Tile(
                        tile_id=row["tile_id"],
                        x0=float(row["x0"]),
                        y0=float(row["y0"]),
                        cols=int(row["cols"]),
                        rows=int(row["rows"]),
                        gsd=float(row["gsd"]),
                        image_path=(row.get("image_path") or None),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise SchemaError(f"{path}: line {line}: {exc}") from exc
    return tiles


def write_tile_manifest(path: str | Path, tiles: Sequence[Tile]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_MANIFEST_COLUMNS)
        for t in tiles:
            writer.writerow(
                [t.tile_id, f"{t.x0:g}", f"{t.y0:g}", t.cols, t.rows, f"{t.gsd:g}", t.image_path or ""]
            )


# --- Run configuration -----------------------------------------------------


@dataclass
class RunConfig:
    """Toolkit defaults, serialized as a flat key=value file."""

    metric: str = "siou"
    overlap_threshold: float = 0.5
    score_threshold: float = 0.5
    min_altitude: float = 1900.0
    min_area: float = 1.04
    score_field: str = "max"
    match_set_rule: float = 0.0  # minimum intersection-over-label fraction

    def to_match_config(self) -> MatchConfig:
        return MatchConfig(
            metric=Metric(self.metric),
            overlap_threshold=self.overlap_threshold,
            score_threshold=self.score_threshold,
            min_label_fraction=self.match_set_rule,
        )


def load_config(path: str | Path) -> RunConfig:
    """Parse a flat key=value config file ('#' starts a comment)."""
    known = {f.name: f.type for f in fields(RunConfig)}
    values: dict[str, Any] = {}
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}: line {line_no}: expected key=value")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in known:
                raise SchemaError(f"{path}: line {line_no}: unknown key {key!r}")
            try:
                values[key] = value if key in ("metric", "score_field") else float(value)
            except ValueError as exc:
                raise SchemaError(f"{path}: line {line_no}: {exc}") from exc
    return RunConfig(**values)


def save_config(path: str | Path, cfg: RunConfig) -> None:
    with open(path, "w") as fh:
        for f in fields(RunConfig):
            value = getattr(cfg, f.name)
            fh.write(f"{f.name}={value:g}\n" if isinstance(value, float) else f"{f.name}={value}\n")
