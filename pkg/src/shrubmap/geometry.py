"""Planar polygon arithmetic: areas, intersections, unions, normalization.

Every region is a set of polygonal parts (outer rings plus holes) in a
projected coordinate system with meter units. Geometries are normalized on
construction: invalid rings are repaired with a buffer-by-zero style fix,
non-polygonal residue is discarded, and overlapping parts are merged so the
parts of a ``Region`` are always pairwise non-overlapping. ``Region`` values
are immutable and all operations here are pure functions, so they are safe
to use from multiple threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from shapely.errors import GEOSException
from shapely.geometry import GeometryCollection, MultiPolygon, Polygon, box
from shapely.geometry.base import BaseGeometry
from shapely.ops import unary_union
from shapely.validation import make_valid

from .errors import InvalidGeometry

# Regions with less area than this are treated as empty in all predicates,
# so floating-point slivers from clipping cannot create spurious matches.
EMPTY_AREA_EPS = 1e-12

Ring = Sequence[tuple[float, float]]


def _check_ring(ring: Ring) -> list[tuple[float, float]]:
    """Validate one coordinate ring; returns it as a list of (x, y) pairs."""
    coords = [(float(x), float(y)) for x, y in ring]
    for x, y in coords:
        if not (math.isfinite(x) and math.isfinite(y)):
            raise InvalidGeometry(f"non-finite coordinate ({x}, {y}) in ring")
    distinct = set(coords)
    # A closed ring repeats its first vertex; require 3 distinct ones.
    if len(distinct) < 3:
        raise InvalidGeometry(
            f"ring has {len(distinct)} distinct vertices, need at least 3"
        )
    return coords


def _polygonal_parts(geom: BaseGeometry) -> list[Polygon]:
    """Extract polygonal components, dropping lines and points."""
    if isinstance(geom, Polygon):
        return [] if geom.is_empty else [geom]
    if isinstance(geom, MultiPolygon):
        return [p for p in geom.geoms if not p.is_empty]
    if isinstance(geom, GeometryCollection):
        parts: list[Polygon] = []
        for sub in geom.geoms:
            parts.extend(_polygonal_parts(sub))
        return parts
    return []


def normalize_geometry(geom: BaseGeometry) -> BaseGeometry:
    """Repair and canonicalize a polygonal geometry.

    Self-intersections and spikes are repaired, non-polygonal residue is
    dropped, parts below ``EMPTY_AREA_EPS`` are removed, and overlapping
    parts are merged. Normalization is idempotent.

    Raises:
        InvalidGeometry: if the geometry cannot be repaired.
    """
    try:
        # Repair each part on its own; repairing a whole multi-part shape
        # would treat overlapping parts with even-odd semantics instead of
        # merging them.
        repaired: list[Polygon] = []
        for part in _polygonal_parts(geom):
            if part.is_valid:
                repaired.append(part)
            else:
                repaired.extend(_polygonal_parts(make_valid(part)))
        parts = [p for p in repaired if p.area > EMPTY_AREA_EPS]
        if not parts:
            return Polygon()
        merged = unary_union(parts)
    except GEOSException as exc:
        raise InvalidGeometry(f"unrepairable geometry: {exc}") from exc
    parts = [p for p in _polygonal_parts(merged) if p.area > EMPTY_AREA_EPS]
    if not parts:
        return Polygon()
    if len(parts) == 1:
        return parts[0]
    return MultiPolygon(parts)


def _closed(coords: Sequence[tuple[float, float]]) -> tuple[tuple[float, float], ...]:
    pts = tuple((x, y) for x, y in coords)
    if pts and pts[0] != pts[-1]:
        pts = pts + (pts[0],)
    return pts


@dataclass(frozen=True)
class Region:
    """An immutable polygonal region (possibly multi-part, possibly empty).

    Wraps a normalized shapely geometry. Construct through the class
    methods rather than passing raw geometries, so that every ``Region``
    in the system is already repaired and canonical.
    """

    geom: BaseGeometry

    @classmethod
    def empty(cls) -> "Region":
        return cls(Polygon())

    @classmethod
    def from_shapely(cls, geom: BaseGeometry) -> "Region":
        """Wrap an arbitrary polygonal geometry, normalizing it first."""
        return cls(normalize_geometry(geom))

    @classmethod
    def from_polygon(cls, shell: Ring, holes: Iterable[Ring] = ()) -> "Region":
        """Build a single-part region from an outer ring and optional holes."""
        shell_coords = _check_ring(shell)
        hole_coords = [_check_ring(h) for h in holes]
        return cls.from_shapely(Polygon(shell_coords, hole_coords))

    @classmethod
    def from_parts(cls, parts: Iterable[tuple[Ring, Iterable[Ring]]]) -> "Region":
        """Build a multi-part region from (shell, holes) pairs."""
        polys = []
        for shell, holes in parts:
            polys.append(Polygon(_check_ring(shell), [_check_ring(h) for h in holes]))
        if not polys:
            return cls.empty()
        return cls.from_shapely(MultiPolygon(polys) if len(polys) > 1 else polys[0])

    @classmethod
    def rectangle(cls, x0: float, y0: float, x1: float, y1: float) -> "Region":
        """Axis-aligned rectangle, a convenience for fixtures and tests."""
        if not (x1 > x0 and y1 > y0):
            raise InvalidGeometry(f"degenerate rectangle ({x0},{y0})-({x1},{y1})")
        return cls(box(x0, y0, x1, y1))

    @property
    def area(self) -> float:
        return self.geom.area

    @property
    def is_empty(self) -> bool:
        return self.geom.is_empty or self.geom.area < EMPTY_AREA_EPS

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(minx, miny, maxx, maxy); raises on empty regions."""
        if self.is_empty:
            raise InvalidGeometry("empty region has no bounds")
        return self.geom.bounds

    @property
    def centroid(self) -> tuple[float, float]:
        """Centroid (x, y) of the region; raises on empty regions."""
        if self.is_empty:
            raise InvalidGeometry("empty region has no centroid")
        c = self.geom.centroid
        return (c.x, c.y)

    @property
    def parts(self) -> list[tuple[tuple[tuple[float, float], ...], ...]]:
        """Per-part ring tuples: each part is (outer, hole, hole, ...).

        Rings are explicitly closed (first vertex equals last).
        """
        out = []
        for poly in _polygonal_parts(self.geom):
            rings = [_closed(poly.exterior.coords)]
            rings.extend(_closed(interior.coords) for interior in poly.interiors)
            out.append(tuple(rings))
        return out

    @property
    def rings(self) -> list[tuple[tuple[float, float], ...]]:
        """All rings of all parts, outer rings first within each part."""
        flat: list[tuple[tuple[float, float], ...]] = []
        for part in self.parts:
            flat.extend(part)
        return flat

    @property
    def part_count(self) -> int:
        return len(_polygonal_parts(self.geom))

    def distance(self, other: "Region") -> float:
        return self.geom.distance(other.geom)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Region(area={self.area:.6g}, parts={self.part_count})"


def area(r: Region) -> float:
    """Total planar area in m2 of all parts minus holes; 0 for empty."""
    return r.area


def intersection(a: Region, b: Region) -> Region:
    """Region of overlap between two regions; empty when disjoint."""
    if a.is_empty or b.is_empty:
        return Region.empty()
    try:
        raw = a.geom.intersection(b.geom)
    except GEOSException as exc:
        raise InvalidGeometry(f"intersection failed: {exc}") from exc
    return Region(normalize_geometry(raw))


def union(regions: Sequence[Region]) -> Region:
    """Union of regions covering every input point exactly once.

    An empty input list yields an empty region.
    """
    geoms = [r.geom for r in regions if not r.is_empty]
    if not geoms:
        return Region.empty()
    try:
        raw = unary_union(geoms)
    except GEOSException as exc:
        raise InvalidGeometry(f"union failed: {exc}") from exc
    return Region(normalize_geometry(raw))
