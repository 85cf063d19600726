"""Map summaries: per-hectare density, altitudinal histograms, canopy cover."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Region, intersection, union
from .metrics import SizeClass, classify_size
from .pipeline import BBox, DemGrid, DissolvedDetection

logger = logging.getLogger(__name__)

HECTARE_CELL_M = 100.0
ALTITUDE_MIN_M = 1900.0
ALTITUDE_MAX_M = 3500.0
ALTITUDE_STEP_M = 100.0

# Stratum key for the unstratified histogram.
ALL_SIZES = "all"


def _regions(map_dets: Sequence[DissolvedDetection]) -> list[Region]:
    return [d.region for d in map_dets]


@dataclass
class DensityGrid:
    """Hectare-aligned cells holding detection-centroid counts.

    ``counts[row, col]`` with row 0 at the SOUTH edge; cells are
    half-open [x, x + 100) by [y, y + 100), so a centroid exactly on a
    shared edge belongs to the cell to the right/up.
    """

    x0: float
    y0: float
    cell_size: float
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def max_per_cell(self) -> int:
        return int(self.counts.max()) if self.counts.size else 0


def density_grid(map_dets: Sequence[DissolvedDetection], extent: BBox) -> DensityGrid:
    """Count detection centroids per hectare cell over ``extent``.

    The grid anchor is the extent's lower-left corner snapped DOWN to
    100 m multiples (density maxima depend on this phase, so it is
    fixed). Detections with centroids outside the extent are not
    counted.
    """
    x0, y0, x1, y1 = extent
    gx0 = math.floor(x0 / HECTARE_CELL_M) * HECTARE_CELL_M
    gy0 = math.floor(y0 / HECTARE_CELL_M) * HECTARE_CELL_M
    cols = max(1, math.ceil((x1 - gx0) / HECTARE_CELL_M))
    rows = max(1, math.ceil((y1 - gy0) / HECTARE_CELL_M))
    counts = np.zeros((rows, cols), dtype=int)
    for det in map_dets:
        cx, cy = det.region.centroid
        if not (x0 <= cx < x1 and y0 <= cy < y1):
            continue
        c = int(math.floor((cx - gx0) / HECTARE_CELL_M))
        r = int(math.floor((cy - gy0) / HECTARE_CELL_M))
        counts[r, c] += 1
    return DensityGrid(x0=gx0, y0=gy0, cell_size=HECTARE_CELL_M, counts=counts)


@dataclass
class AltitudeHistogram:
    """Counts of shrubs per 100 m altitude band, optionally per size class.

    Bin edges run from 1900 m to 3500 m exactly. Shrubs whose elevation
    falls outside that range are tracked in ``below``/``above`` so the
    per-stratum totals still account for every shrub with DEM coverage.
    ``medians`` holds the median centroid elevation per stratum.
    """

    bin_edges: np.ndarray
    counts: dict[str, np.ndarray] = field(default_factory=dict)
    below: dict[str, int] = field(default_factory=dict)
    above: dict[str, int] = field(default_factory=dict)
    medians: dict[str, float] = field(default_factory=dict)
    skipped_no_coverage: int = 0

    def total(self, stratum: str = ALL_SIZES) -> int:
        if stratum not in self.counts:
            return 0
        return (
            int(self.counts[stratum].sum())
            + self.below.get(stratum, 0)
            + self.above.get(stratum, 0)
        )


def altitude_histogram(
    map_dets: Sequence[DissolvedDetection],
    dem: DemGrid,
    by_size: bool = False,
) -> AltitudeHistogram:
    """Bin shrubs by the DEM elevation at their centroid.

    Shrubs over nodata or outside the DEM are excluded and logged. With
    ``by_size`` the counts are additionally stratified by size class.
    """
    edges = np.arange(ALTITUDE_MIN_M, ALTITUDE_MAX_M + ALTITUDE_STEP_M, ALTITUDE_STEP_M)
    nbins = len(edges) - 1
    hist = AltitudeHistogram(bin_edges=edges)
    elevations: dict[str, list[float]] = {}

    def strata_for(det: DissolvedDetection) -> list[str]:
        keys = [ALL_SIZES]
        if by_size:
            keys.append(classify_size(det.region.area).name)
        return keys

    skipped = 0
    for det in map_dets:
        cx, cy = det.region.centroid
        elev = dem.elevation_at(cx, cy)
        if elev is None:
            skipped += 1
            continue
        for key in strata_for(det):
            counts = hist.counts.setdefault(key, np.zeros(nbins, dtype=int))
            elevations.setdefault(key, []).append(elev)
            if elev < ALTITUDE_MIN_M:
                hist.below[key] = hist.below.get(key, 0) + 1
            elif elev >= ALTITUDE_MAX_M:
                hist.above[key] = hist.above.get(key, 0) + 1
            else:
                counts[int((elev - ALTITUDE_MIN_M) // ALTITUDE_STEP_M)] += 1
    if skipped:
        logger.warning("altitude histogram skipped %d shrub(s) without DEM coverage", skipped)
    hist.skipped_no_coverage = skipped
    if ALL_SIZES not in hist.counts:
        hist.counts[ALL_SIZES] = np.zeros(nbins, dtype=int)
    for key, values in elevations.items():
        hist.medians[key] = float(np.median(values))
    return hist


def cover_percent(regions: Sequence[Region], site: Region) -> float:
    """Percent of the site covered by the union of the given regions."""
    if site.is_empty:
        raise ValueError("site region is empty")
    live = [r for r in regions if not r.is_empty]
    if not live:
        return 0.0
    covered = intersection(union(live), site).area
    return 100.0 * covered / site.area


def canopy_cover(map_dets: Sequence[DissolvedDetection], site: Region) -> float:
    """Percent of the site covered by the union of shrub polygons.

    Overlapping detections count once (union semantics).
    """
    return cover_percent(_regions(map_dets), site)


def write_density_csv(grid: DensityGrid, path: str | Path) -> None:
    """Cell rows as (x0, y0, count), south-to-north then west-to-east."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cell_x0", "cell_y0", "count"])
        rows, cols = grid.counts.shape
        for r in range(rows):
            for c in range(cols):
                writer.writerow(
                    [
                        f"{grid.x0 + c * grid.cell_size:g}",
                        f"{grid.y0 + r * grid.cell_size:g}",
                        int(grid.counts[r, c]),
                    ]
                )


def write_density_geojson(grid: DensityGrid, path: str | Path) -> None:
    """Cell polygons with a count property, plot-ready."""
    features = []
    rows, cols = grid.counts.shape
    for r in range(rows):
        for c in range(cols):
            x, y = grid.x0 + c * grid.cell_size, grid.y0 + r * grid.cell_size
            ring = [
                [x, y],
                [x + grid.cell_size, y],
                [x + grid.cell_size, y + grid.cell_size],
                [x, y + grid.cell_size],
                [x, y],
            ]
            features.append(
                {
                    "type": "Feature",
                    "geometry": {"type": "Polygon", "coordinates": [ring]},
                    "properties": {"count": int(grid.counts[r, c])},
                }
            )
    payload = {"type": "FeatureCollection", "features": features}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_histogram_csv(hist: AltitudeHistogram, path: str | Path) -> None:
    """Rows of (size, bin_start, bin_end, count) plus per-stratum medians."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["size", "bin_start_m", "bin_end_m", "count"])
        order = [ALL_SIZES] + [cls.name for cls in SizeClass]
        for key in order:
            if key not in hist.counts:
                continue
            for b, count in enumerate(hist.counts[key]):
                writer.writerow(
                    [
                        key,
                        f"{hist.bin_edges[b]:g}",
                        f"{hist.bin_edges[b + 1]:g}",
                        int(count),
                    ]
                )
        writer.writerow([])
        writer.writerow(["size", "median_altitude_m", "", ""])
        for key in order:
            if key in hist.medians:
                writer.writerow([key, f"{hist.medians[key]:.2f}", "", ""])
