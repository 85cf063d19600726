"""Observed-versus-predicted statistics for map validation.

Statistics over per-site pairs (canopy-cover percent, or shrub counts
normalized to individuals per hectare):

* pearson_r: product-moment correlation.
* rmse = sqrt(mean((pred - obs)^2))
* mae  = mean(|pred - obs|)
* mbe  = mean(pred - obs), positive when the map overpredicts.
* r2 (identity) = 1 - sum((pred - obs)^2) / sum((obs - mean(obs))^2),
  agreement with the 1:1 line; r2_fit = pearson_r^2 is also reported
  since either reading of "R squared" is common.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from shapely.geometry import Point

from .errors import DegenerateVariance
from .geometry import Region
from .mapstats import cover_percent
from .matching import GroundTruth
from .pipeline import DissolvedDetection

SQM_PER_HECTARE = 10_000.0


@dataclass(frozen=True)
class PairedSeries:
    """Per-site (observed, predicted) pairs with a unit tag."""

    site_ids: tuple[str, ...]
    observed: tuple[float, ...]
    predicted: tuple[float, ...]
    unit: str  # "percent_cover" | "count_per_ha"

    def __post_init__(self) -> None:
        if not (len(self.site_ids) == len(self.observed) == len(self.predicted)):
            raise ValueError("site_ids, observed and predicted must have equal lengths")

    def __len__(self) -> int:
        return len(self.site_ids)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.observed, dtype=float), np.asarray(self.predicted, dtype=float)


def pearson_r(s: PairedSeries) -> float:
    """Product-moment correlation in [-1, 1].

    Raises:
        DegenerateVariance: fewer than 2 pairs, or zero variance on
            either side.
    """
    obs, pred = s.arrays()
    if len(obs) < 2:
        raise DegenerateVariance("correlation needs at least 2 pairs")
    d_obs = obs - obs.mean()
    d_pred = pred - pred.mean()
    denom = math.sqrt(float((d_obs * d_obs).sum()) * float((d_pred * d_pred).sum()))
    if denom == 0.0:
        raise DegenerateVariance("correlation undefined for constant series")
    return float((d_obs * d_pred).sum() / denom)


@dataclass(frozen=True)
class ErrorStats:
    """Error summary of a paired series; r2 fields are None below n=2."""

    rmse: float
    mae: float
    mbe: float
    r2: float | None  # against the 1:1 line
    r2_fit: float | None  # squared correlation


def error_stats(s: PairedSeries) -> ErrorStats:
    """RMSE, MAE, MBE and both R-squared readings.

    MBE is predicted minus observed, so positive values mean
    overprediction. ``r2`` needs at least 2 pairs and nonzero observed
    variance; ``r2_fit`` additionally needs nonzero predicted variance
    (it is None when that fails).

    Raises:
        DegenerateVariance: for r2 when the observations are constant
            (2 or more pairs with zero variance).
    """
    obs, pred = s.arrays()
    if len(obs) == 0:
        raise ValueError("error stats need at least 1 pair")
    err = pred - obs
    rmse = float(np.sqrt(np.mean(err * err)))
    mae = float(np.mean(np.abs(err)))
    mbe = float(np.mean(err))
    r2: float | None = None
    r2_fit: float | None = None
    if len(obs) >= 2:
        ss_tot = float(np.sum((obs - obs.mean()) ** 2))
        if ss_tot == 0.0:
            raise DegenerateVariance("r2 undefined for constant observations")
        r2 = 1.0 - float(np.sum(err * err)) / ss_tot
        try:
            r2_fit = pearson_r(s) ** 2
        except DegenerateVariance:
            r2_fit = None
    return ErrorStats(rmse=rmse, mae=mae, mbe=mbe, r2=r2, r2_fit=r2_fit)


def _count_in_site(regions: Sequence[Region], site: Region) -> int:
    site_geom = site.geom
    n = 0
    for region in regions:
        if region.is_empty:
            continue
        cx, cy = region.centroid
        if site_geom.intersects(Point(cx, cy)):
            n += 1
    return n


def build_site_series(
    sites: Sequence[tuple[str, Region]],
    observed_gts: Sequence[GroundTruth],
    predicted_map: Sequence[DissolvedDetection],
    kind: str,
) -> PairedSeries:
    """Pair observed against predicted values per site footprint.

    ``kind`` selects the quantity: "cover" pairs canopy-cover percents,
    "count" pairs shrub counts normalized by the exact site polygon
    area to individuals per hectare. Membership for counts is centroid
    within the site.
    """
    if kind not in ("cover", "count"):
        raise ValueError(f"kind must be 'cover' or 'count', got {kind!r}")
    obs_regions = [g.region for g in observed_gts]
    pred_regions = [d.region for d in predicted_map]
    ids, obs_vals, pred_vals = [], [], []
    for site_id, site in sites:
        if kind == "cover":
            obs_value = cover_percent(obs_regions, site)
            pred_value = cover_percent(pred_regions, site)
        else:
            hectares = site.area / SQM_PER_HECTARE
            obs_value = _count_in_site(obs_regions, site) / hectares
            pred_value = _count_in_site(pred_regions, site) / hectares
        ids.append(str(site_id))
        obs_vals.append(obs_value)
        pred_vals.append(pred_value)
    unit = "percent_cover" if kind == "cover" else "count_per_ha"
    return PairedSeries(
        site_ids=tuple(ids),
        observed=tuple(obs_vals),
        predicted=tuple(pred_vals),
        unit=unit,
    )


def write_series_csv(s: PairedSeries, path: str | Path) -> None:
    """Scatter export feeding external plotting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["site_id", "observed", "predicted", "unit"])
        for site_id, obs, pred in zip(s.site_ids, s.observed, s.predicted):
            writer.writerow([site_id, f"{obs:.6f}", f"{pred:.6f}", s.unit])
