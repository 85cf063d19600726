"""Wall-to-wall post-processing: tiling, altitude filter, dissolve, merge.

The deployment flow over a territory is:

1. lay a tile grid over the bounding box (or load a tile manifest),
2. drop tiles whose maximum elevation is below the altitude cutoff,
3. run a pluggable detector per surviving tile,
4. dissolve overlapping or abutting detections of the same shrub into
   one geometry with aggregated scores,
5. drop dissolved detections below the minimum area,
6. threshold on an aggregated score and emit the final map in a stable
   order.

The detector is a port, not an embedded model: tests use a file-backed
stub, production uses a subprocess adapter exchanging polygon files.
"""

from __future__ import annotations

import logging
import math
import statistics
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np
from shapely import STRtree

from .errors import (
    DegenerateBBox,
    DetectorUnavailable,
    InvalidGeometry,
    NoDemCoverage,
    TileDetectionError,
)
from .geometry import Region, union
from .matching import Detection

logger = logging.getLogger(__name__)

DEFAULT_TILE_SIZE_PX = 448
DEFAULT_GSD_M = 0.13
DEFAULT_MIN_ALTITUDE_M = 1900.0
DEFAULT_MIN_AREA_M2 = 1.04
DEFAULT_SNAP_TOLERANCE_M = 0.01
DEFAULT_SCORE_FIELD = "max"
SCORE_FIELDS = ("avg", "median", "max")

BBox = tuple[float, float, float, float]


@dataclass(frozen=True)
class Tile:
    """One detector input tile with its georeference."""

    tile_id: str
    x0: float
    y0: float
    cols: int  # width in pixels
    rows: int  # height in pixels
    gsd: float  # meters per pixel
    image_path: str | None = None

    @property
    def width_m(self) -> float:
        return self.cols * self.gsd

    @property
    def height_m(self) -> float:
        return self.rows * self.gsd

    @property
    def bounds(self) -> BBox:
        return (self.x0, self.y0, self.x0 + self.width_m, self.y0 + self.height_m)


@dataclass(frozen=True)
class TileGrid:
    """A deterministic grid of equal square tiles covering a bounding box.

    Tiles are half-open in both axes, so every point of the box belongs
    to exactly one tile.
    """

    x0: float
    y0: float
    tile_size_px: int
    gsd: float
    rows: int
    cols: int

    @property
    def tile_edge_m(self) -> float:
        return self.tile_size_px * self.gsd

    def tiles(self) -> list[Tile]:
        edge = self.tile_edge_m
        out = []
        for r in range(self.rows):
            for c in range(self.cols):
                out.append(
                    Tile(
                        tile_id=f"r{r:03d}c{c:03d}",
                        x0=self.x0 + c * edge,
                        y0=self.y0 + r * edge,
                        cols=self.tile_size_px,
                        rows=self.tile_size_px,
                        gsd=self.gsd,
                    )
                )
        return out


def build_tile_grid(
    bbox: BBox,
    tile_size_px: int = DEFAULT_TILE_SIZE_PX,
    gsd: float = DEFAULT_GSD_M,
) -> TileGrid:
    """Grid of tiles covering ``bbox`` (minx, miny, maxx, maxy).

    Raises:
        DegenerateBBox: when the box has no extent or gsd is not positive.
    """
    x0, y0, x1, y1 = bbox
    if not (x1 > x0 and y1 > y0):
        raise DegenerateBBox(f"bbox {bbox} has no extent")
    if gsd <= 0 or tile_size_px <= 0:
        raise DegenerateBBox(f"invalid tile size {tile_size_px}px at {gsd} m/px")
    edge = tile_size_px * gsd
    cols = max(1, math.ceil((x1 - x0) / edge - 1e-12))
    rows = max(1, math.ceil((y1 - y0) / edge - 1e-12))
    return TileGrid(x0=x0, y0=y0, tile_size_px=tile_size_px, gsd=gsd, rows=rows, cols=cols)


@dataclass
class DemGrid:
    """Regular elevation raster in meters (ESRI ASCII layout).

    ``values`` is row-major with the FIRST row northernmost, matching the
    on-disk order. ``nodata`` cells are ignored by all queries.
    """

    xll: float
    yll: float
    cell_size: float
    values: np.ndarray
    nodata: float = -9999.0

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("DEM values must be a 2-D array")
        if self.cell_size <= 0:
            raise ValueError("DEM cell size must be positive")

    @property
    def nrows(self) -> int:
        return self.values.shape[0]

    @property
    def ncols(self) -> int:
        return self.values.shape[1]

    @property
    def bounds(self) -> BBox:
        return (
            self.xll,
            self.yll,
            self.xll + self.ncols * self.cell_size,
            self.yll + self.nrows * self.cell_size,
        )

    def _valid_mask(self, block: np.ndarray) -> np.ndarray:
        return np.isfinite(block) & (block != self.nodata)

    def elevation_at(self, x: float, y: float) -> float | None:
        """Elevation of the cell containing (x, y); None outside or nodata."""
        c = math.floor((x - self.xll) / self.cell_size)
        r_from_bottom = math.floor((y - self.yll) / self.cell_size)
        if not (0 <= c < self.ncols and 0 <= r_from_bottom < self.nrows):
            return None
        v = self.values[self.nrows - 1 - r_from_bottom, c]
        if not np.isfinite(v) or v == self.nodata:
            return None
        return float(v)

    def _covered_block(self, bounds: BBox) -> np.ndarray | None:
        bx0, by0, bx1, by1 = bounds
        c0 = max(0, math.floor((bx0 - self.xll) / self.cell_size))
        c1 = min(self.ncols, math.ceil((bx1 - self.xll) / self.cell_size))
        rb0 = max(0, math.floor((by0 - self.yll) / self.cell_size))
        rb1 = min(self.nrows, math.ceil((by1 - self.yll) / self.cell_size))
        if c0 >= c1 or rb0 >= rb1:
            return None
        block = self.values[self.nrows - rb1 : self.nrows - rb0, c0:c1]
        valid = self._valid_mask(block)
        if not valid.any():
            return None
        return block[valid]

    def max_over(self, bounds: BBox) -> float | None:
        """Maximum elevation over cells that positively overlap ``bounds``.

        Returns None when no covered cell holds a valid value.
        """
        covered = self._covered_block(bounds)
        return None if covered is None else float(covered.max())

    def mean_over(self, bounds: BBox) -> float | None:
        """Mean elevation over cells that positively overlap ``bounds``."""
        covered = self._covered_block(bounds)
        return None if covered is None else float(covered.mean())


def altitude_filter(
    grid: TileGrid | Iterable[Tile],
    dem: DemGrid,
    min_altitude_m: float = DEFAULT_MIN_ALTITUDE_M,
    statistic: str = "max",
) -> set[str]:
    """Tile ids whose covered elevation reaches the cutoff.

    A tile's altitude is the maximum DEM value over its footprint;
    ``statistic="mean"`` switches to the mean-based alternative (off by
    default). A tile with no valid DEM coverage is dropped and logged.
    If NO tile has coverage at all the DEM clearly does not belong to
    this grid and ``NoDemCoverage`` is raised instead.
    """
    if statistic not in ("max", "mean"):
        raise ValueError(f"statistic must be 'max' or 'mean', got {statistic!r}")
    tiles = grid.tiles() if isinstance(grid, TileGrid) else list(grid)
    kept: set[str] = set()
    covered = 0
    for tile in tiles:
        altitude = (
            dem.max_over(tile.bounds) if statistic == "max" else dem.mean_over(tile.bounds)
        )
        if altitude is None:
            logger.warning("tile %s has no DEM coverage, dropping it", tile.tile_id)
            continue
        covered += 1
        if altitude >= min_altitude_m:
            kept.add(tile.tile_id)
    if tiles and covered == 0:
        raise NoDemCoverage("no tile overlaps a valid DEM cell")
    logger.info(
        "altitude filter kept %d of %d tiles (cutoff %.0f m, %s)",
        len(kept),
        len(tiles),
        min_altitude_m,
        statistic,
    )
    return kept


class DetectorPort(Protocol):
    """Anything that can produce detections for one tile.

    ``detect`` returns detections in TILE-LOCAL coordinates (meters,
    origin at the tile's lower-left corner). ``run_detector`` shifts
    them to world coordinates and tags the tile id.
    """

    def detect(self, tile: Tile) -> list[Detection]: ...


class FixtureDetector:
    """File-backed stub: reads ``<tile_id>.geojson`` from a directory.

    Feature files use the standard detection schema with tile-local
    coordinates. Tiles without a file yield no detections.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise DetectorUnavailable(f"fixture directory {self.directory} does not exist")

    def detect(self, tile: Tile) -> list[Detection]:
        from . import io as _io  # local import, io depends on this module

        path = self.directory / f"{tile.tile_id}.geojson"
        if not path.exists():
            return []
        dets, _ = _io.read_features(path)
        return dets


class SubprocessDetector:
    """Production adapter: one subprocess invocation per tile.

    The command template is formatted with ``{image}``, ``{out}``,
    ``{x0}``, ``{y0}``, ``{cols}``, ``{rows}``, ``{gsd}`` and
    ``{tile_id}``; the process must write a polygon feature file (the
    standard detection schema, tile-local coordinates) to ``{out}``.
    A nonzero exit code fails that tile only.
    """

    def __init__(self, command_template: str, timeout_s: float = 600.0):
        if "{out}" not in command_template:
            raise DetectorUnavailable("detector command template must use {out}")
        self.command_template = command_template
        self.timeout_s = timeout_s

    def detect(self, tile: Tile) -> list[Detection]:
        from . import io as _io  # local import, io depends on this module

        if tile.image_path is None:
            raise TileDetectionError(f"tile {tile.tile_id} has no image path")
        with tempfile.TemporaryDirectory() as tmp:
            out_path = Path(tmp) / f"{tile.tile_id}.geojson"
            command = self.command_template.format(
                image=tile.image_path,
                out=out_path,
                x0=tile.x0,
                y0=tile.y0,
                cols=tile.cols,
                rows=tile.rows,
                gsd=tile.gsd,
                tile_id=tile.tile_id,
            )
            try:
                proc = subprocess.run(
                    command, shell=True, capture_output=True, timeout=self.timeout_s
                )
            except FileNotFoundError as exc:  # pragma: no cover - shell=True rarely hits
                raise DetectorUnavailable(str(exc)) from exc
            if proc.returncode != 0:
                raise TileDetectionError(
                    f"detector exited {proc.returncode} on tile {tile.tile_id}: "
                    f"{proc.stderr.decode(errors='replace').strip()}"
                )
            if not out_path.exists():
                raise TileDetectionError(
                    f"detector wrote no output for tile {tile.tile_id}"
                )
            dets, _ = _io.read_features(out_path)
            return dets


def _shift_region(region: Region, dx: float, dy: float) -> Region:
    parts = []
    for rings in region.parts:
        outer = [(x + dx, y + dy) for x, y in rings[0]]
        holes = [[(x + dx, y + dy) for x, y in hole] for hole in rings[1:]]
        parts.append((outer, holes))
    return Region.from_parts(parts)


def run_detector(
    tiles: Sequence[Tile],
    detector: DetectorPort,
    max_workers: int | None = None,
) -> list[Detection]:
    """Run the detector over tiles, returning world-coordinate detections.

    Tiles are processed in parallel with a bounded worker count; the
    output order is by tile id then per-tile order, independent of
    scheduling. Per-tile failures are logged and skipped; only a
    detector that is unusable outright aborts the run.
    """
    ordered = sorted(tiles, key=lambda t: t.tile_id)

    def _one(tile: Tile) -> list[Detection]:
        local = detector.detect(tile)
        return [
            Detection(
                region=_shift_region(d.region, tile.x0, tile.y0),
                score=d.score,
                tile_id=tile.tile_id,
            )
            for d in local
        ]

    results: list[list[Detection]] = []
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = [(tile, pool.submit(_one, tile)) for tile in ordered]
        for tile, fut in futures:
            try:
                results.append(fut.result())
            except DetectorUnavailable:
                raise
            except Exception as exc:
                logger.warning("tile %s failed: %s", tile.tile_id, exc)
    return [d for batch in results for d in batch]


@dataclass(frozen=True)
class DissolvedDetection:
    """A connected group of detections merged into one geometry.

    Scores aggregate the member detections three ways; which one is
    thresholded downstream is a configuration choice.
    """

    region: Region
    score_avg: float
    score_median: float
    score_max: float
    member_count: int
    source_tiles: frozenset[str] = field(default_factory=frozenset)


def _item_score(item: Detection | DissolvedDetection) -> float:
    return item.score if isinstance(item, Detection) else item.score_max


def _item_tiles(item: Detection | DissolvedDetection) -> frozenset[str]:
    if isinstance(item, Detection):
        return frozenset({item.tile_id} if item.tile_id else ())
    return item.source_tiles


def _item_members(item: Detection | DissolvedDetection) -> int:
    return 1 if isinstance(item, Detection) else item.member_count


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def join(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def dissolve(
    dets: Sequence[Detection | DissolvedDetection],
    snap_tolerance_m: float = DEFAULT_SNAP_TOLERANCE_M,
) -> list[DissolvedDetection]:
    """Union detections of the same physical object into one geometry.

    Two detections are adjacent when they overlap with positive area or
    their boundaries come within ``snap_tolerance_m`` (tile-cropped
    halves touch but need not overlap). Connected components of that
    adjacency graph are unioned; each yields one result with the
    average, median and maximum of the member scores. Output regions
    are pairwise non-adjacent, so dissolving again is a no-op.

    Components whose union fails are skipped and logged. Output order is
    by (y, x) of the region centroid.
    """
    live = [d for d in dets if not d.region.is_empty]
    if len(live) < len(dets):
        logger.warning("dissolve dropping %d empty detection(s)", len(dets) - len(live))
    if not live:
        return []

    tree = STRtree([d.region.geom for d in live])
    uf = _UnionFind(len(live))
    for i, det in enumerate(live):
        for j in tree.query(det.region.geom, predicate="dwithin", distance=snap_tolerance_m):
            j = int(j)
            if j > i:
                uf.join(i, j)

    components: dict[int, list[int]] = {}
    for i in range(len(live)):
        components.setdefault(uf.find(i), []).append(i)

    out: list[DissolvedDetection] = []
    for root in sorted(components):
        members = components[root]
        try:
            merged = union([live[i].region for i in members])
        except InvalidGeometry as exc:
            logger.warning("dissolve skipping component of %d members: %s", len(members), exc)
            continue
        scores = [_item_score(live[i]) for i in members]
        tiles: frozenset[str] = frozenset()
        for i in members:
            tiles = tiles | _item_tiles(live[i])
        out.append(
            DissolvedDetection(
                region=merged,
                score_avg=sum(scores) / len(scores),
                score_median=float(statistics.median(scores)),
                score_max=max(scores),
                member_count=sum(_item_members(live[i]) for i in members),
                source_tiles=tiles,
            )
        )
    out.sort(key=lambda d: (d.region.centroid[1], d.region.centroid[0]))
    return out


def area_filter(
    dets: Sequence[DissolvedDetection],
    min_area_m2: float = DEFAULT_MIN_AREA_M2,
) -> list[DissolvedDetection]:
    """Keep detections with area at or above the cutoff (inclusive)."""
    kept = [d for d in dets if d.region.area >= min_area_m2]
    removed = len(dets) - len(kept)
    if removed:
        logger.info("area filter removed %d detection(s) under %.2f m2", removed, min_area_m2)
    return kept


def _chosen_score(det: DissolvedDetection, score_field: str) -> float:
    if score_field == "avg":
        return det.score_avg
    if score_field == "median":
        return det.score_median
    if score_field == "max":
        return det.score_max
    raise ValueError(f"unknown score field {score_field!r}, expected one of {SCORE_FIELDS}")


def merge_map(
    dets: Sequence[DissolvedDetection],
    score_field: str = DEFAULT_SCORE_FIELD,
    score_threshold: float = 0.5,
) -> list[DissolvedDetection]:
    """Final map: threshold on the chosen aggregated score, stable order.

    Detections whose chosen score is below ``score_threshold`` are
    removed (the threshold itself is kept). Output is ordered by (y, x)
    of the region centroid so map files are reproducible.
    """
    if score_field not in SCORE_FIELDS:
        raise ValueError(f"unknown score field {score_field!r}, expected one of {SCORE_FIELDS}")
    kept = [d for d in dets if _chosen_score(d, score_field) >= score_threshold]
    kept.sort(key=lambda d: (d.region.centroid[1], d.region.centroid[0]))
    return kept


def run_pipeline(
    tiles: Sequence[Tile],
    dem: DemGrid,
    detector: DetectorPort,
    *,
    min_altitude_m: float = DEFAULT_MIN_ALTITUDE_M,
    min_area_m2: float = DEFAULT_MIN_AREA_M2,
    score_field: str = DEFAULT_SCORE_FIELD,
    score_threshold: float = 0.5,
    snap_tolerance_m: float = DEFAULT_SNAP_TOLERANCE_M,
    altitude_statistic: str = "max",
    max_workers: int | None = None,
) -> list[DissolvedDetection]:
    """Altitude filter, detect, dissolve, area filter, merge. Whole flow."""
    kept_ids = altitude_filter(tiles, dem, min_altitude_m, statistic=altitude_statistic)
    kept_tiles = [t for t in tiles if t.tile_id in kept_ids]
    detections = run_detector(kept_tiles, detector, max_workers=max_workers)
    logger.info("detector produced %d detections on %d tiles", len(detections), len(kept_tiles))
    dissolved = dissolve(detections, snap_tolerance_m=snap_tolerance_m)
    filtered = area_filter(dissolved, min_area_m2=min_area_m2)
    final = merge_map(filtered, score_field=score_field, score_threshold=score_threshold)
    logger.info(
        "pipeline: %d detections -> %d dissolved -> %d after area filter -> %d final",
        len(detections),
        len(dissolved),
        len(filtered),
        len(final),
    )
    return final
