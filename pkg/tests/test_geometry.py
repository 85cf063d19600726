import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from shrubmap.errors import InvalidGeometry
from shrubmap.geometry import Region, area, intersection, normalize_geometry, union

UNIT = Region.rectangle(0, 0, 1, 1)


def rect_strategy(low=-100.0, high=100.0, max_side=50.0):
    coord = st.floats(low, high, allow_nan=False, allow_infinity=False)
    side = st.floats(0.1, max_side, allow_nan=False, allow_infinity=False)
    return st.builds(
        lambda x0, y0, w, h: Region.rectangle(x0, y0, x0 + w, y0 + h),
        coord,
        coord,
        side,
        side,
    )


class TestArea:
    def test_unit_square(self):
        assert area(UNIT) == pytest.approx(1.0)

    def test_empty_region(self):
        assert area(Region.empty()) == 0.0

    def test_square_with_hole(self):
        # 2x2 square minus a 1x1 hole: 4 - 1 = 3
        shell = [(0, 0), (2, 0), (2, 2), (0, 2), (0, 0)]
        hole = [(0.5, 0.5), (1.5, 0.5), (1.5, 1.5), (0.5, 1.5), (0.5, 0.5)]
        region = Region.from_polygon(shell, holes=[hole])
        assert area(region) == pytest.approx(3.0)


class TestIntersection:
    def test_half_overlap(self):
        other = Region.rectangle(0.5, 0, 1.5, 1)
        assert intersection(UNIT, other).area == pytest.approx(0.5)

    def test_self_intersection_is_identity(self):
        assert intersection(UNIT, UNIT).area == pytest.approx(UNIT.area)

    def test_disjoint_is_empty(self):
        far = Region.rectangle(10, 10, 11, 11)
        assert intersection(UNIT, far).is_empty

    def test_touching_edges_have_no_area(self):
        adjacent = Region.rectangle(1, 0, 2, 1)
        assert intersection(UNIT, adjacent).is_empty


class TestUnion:
    def test_disjoint_squares_add(self):
        far = Region.rectangle(5, 5, 6, 6)
        assert union([UNIT, far]).area == pytest.approx(2.0)

    def test_overlapping_inclusion_exclusion(self):
        other = Region.rectangle(0.5, 0, 1.5, 1)
        assert union([UNIT, other]).area == pytest.approx(1.5)

    def test_single_region_identity(self):
        assert union([UNIT]).area == pytest.approx(UNIT.area)

    def test_empty_input(self):
        assert union([]).is_empty


class TestNormalization:
    def test_bowtie_is_repaired(self):
        # Self-intersecting "bow-tie"; valid area is two triangles of 0.25.
        region = Region.from_polygon([(0, 0), (1, 1), (1, 0), (0, 1), (0, 0)])
        assert region.area == pytest.approx(0.5)

    def test_idempotent(self):
        region = Region.from_polygon([(0, 0), (1, 1), (1, 0), (0, 1), (0, 0)])
        again = Region.from_shapely(region.geom)
        assert again.area == pytest.approx(region.area)
        assert again.part_count == region.part_count

    def test_overlapping_parts_are_merged(self):
        region = Region.from_parts(
            [
                ([(0, 0), (2, 0), (2, 2), (0, 2)], []),
                ([(1, 1), (3, 1), (3, 3), (1, 3)], []),
            ]
        )
        assert region.part_count == 1
        assert region.area == pytest.approx(7.0)

    def test_degenerate_ring_rejected(self):
        with pytest.raises(InvalidGeometry):
            Region.from_polygon([(0, 0), (1, 1), (0, 0)])

    def test_non_finite_coordinate_rejected(self):
        with pytest.raises(InvalidGeometry):
            Region.from_polygon([(0, 0), (1, 0), (math.nan, 1)])

    def test_degenerate_rectangle_rejected(self):
        with pytest.raises(InvalidGeometry):
            Region.rectangle(0, 0, 0, 1)

    def test_rings_are_explicitly_closed(self):
        region = Region.from_polygon([(0, 0), (2, 0), (2, 2), (0, 2)])
        for ring in region.rings:
            assert ring[0] == ring[-1]
            assert len(set(ring)) >= 3


class TestProperties:
    @given(rect_strategy(), rect_strategy())
    def test_inclusion_exclusion(self, a, b):
        lhs = area(a) + area(b)
        rhs = intersection(a, b).area + union([a, b]).area
        assert abs(lhs - rhs) <= 1e-9 * max(1.0, lhs)

    @given(rect_strategy(), rect_strategy())
    def test_intersection_monotonicity(self, a, b):
        assert intersection(a, b).area <= min(area(a), area(b)) + 1e-12

    @given(st.lists(rect_strategy(), min_size=1, max_size=5))
    def test_union_subadditive(self, regions):
        total = sum(area(r) for r in regions)
        assert union(regions).area <= total + 1e-9 * max(1.0, total)

    @given(rect_strategy())
    def test_normalize_idempotent_on_random_rects(self, r):
        geom = normalize_geometry(r.geom)
        again = normalize_geometry(geom)
        assert again.area == pytest.approx(geom.area, abs=1e-12)


class TestRegionAccessors:
    def test_centroid(self):
        assert Region.rectangle(0, 0, 2, 4).centroid == pytest.approx((1.0, 2.0))

    def test_bounds(self):
        assert Region.rectangle(1, 2, 3, 5).bounds == (1, 2, 3, 5)

    def test_empty_has_no_centroid(self):
        with pytest.raises(InvalidGeometry):
            Region.empty().centroid

    def test_multipart_parts_survive_roundtrip(self):
        region = Region.from_parts(
            [
                ([(0, 0), (1, 0), (1, 1), (0, 1)], []),
                ([(5, 5), (6, 5), (6, 6), (5, 6)], []),
            ]
        )
        assert region.part_count == 2
        rebuilt = Region.from_parts([(p[0], list(p[1:])) for p in region.parts])
        assert rebuilt.area == pytest.approx(region.area)
