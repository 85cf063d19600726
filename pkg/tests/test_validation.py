import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shrubmap.errors import DegenerateVariance
from shrubmap.geometry import Region
from shrubmap.matching import GroundTruth
from shrubmap.pipeline import DissolvedDetection
from shrubmap.validation import (
    PairedSeries,
    build_site_series,
    error_stats,
    pearson_r,
    write_series_csv,
)


def series(obs, pred, unit="count_per_ha"):
    ids = tuple(f"s{i}" for i in range(len(obs)))
    return PairedSeries(site_ids=ids, observed=tuple(obs), predicted=tuple(pred), unit=unit)


def finite_series(min_size=2):
    values = st.floats(-1e4, 1e4, allow_nan=False, allow_infinity=False)
    return st.lists(st.tuples(values, values), min_size=min_size, max_size=40).map(
        lambda pairs: series([a for a, _ in pairs], [b for _, b in pairs])
    )


class TestPearson:
    def test_identity(self):
        s = series([1, 2, 3, 4], [1, 2, 3, 4])
        assert pearson_r(s) == pytest.approx(1.0)

    def test_anti_identity(self):
        s = series([1, 2, 3, 4], [9, 8, 7, 6])
        assert pearson_r(s) == pytest.approx(-1.0)

    def test_four_point_series_matches_direct_formula(self):
        obs = [1.0, 2.0, 3.0, 5.0]
        pred = [2.0, 1.0, 4.0, 6.0]
        mean_o, mean_p = sum(obs) / 4, sum(pred) / 4
        num = sum((o - mean_o) * (p - mean_p) for o, p in zip(obs, pred))
        den = math.sqrt(
            sum((o - mean_o) ** 2 for o in obs) * sum((p - mean_p) ** 2 for p in pred)
        )
        assert pearson_r(series(obs, pred)) == pytest.approx(num / den, abs=1e-12)

    def test_too_few_pairs(self):
        with pytest.raises(DegenerateVariance):
            pearson_r(series([1.0], [1.0]))

    def test_constant_series(self):
        with pytest.raises(DegenerateVariance):
            pearson_r(series([2, 2, 2], [1, 2, 3]))

    @given(
        finite_series(),
        st.floats(0.1, 50, allow_nan=False),
        st.floats(-100, 100, allow_nan=False),
    )
    def test_affine_invariance(self, s, scale, shift):
        obs, pred = s.arrays()
        if np.std(obs) < 1e-6 or np.std(pred) < 1e-6:
            return
        rescaled = series(obs, scale * pred + shift, s.unit)
        assert pearson_r(rescaled) == pytest.approx(pearson_r(s), abs=1e-9)


class TestErrorStats:
    def test_perfect_prediction(self):
        stats = error_stats(series([1, 2, 3], [1, 2, 3]))
        assert (stats.rmse, stats.mae, stats.mbe) == (0.0, 0.0, 0.0)
        assert stats.r2 == pytest.approx(1.0)

    def test_constant_offset(self):
        stats = error_stats(series([1, 2, 3, 4], [3, 4, 5, 6]))
        assert stats.rmse == pytest.approx(2.0)
        assert stats.mae == pytest.approx(2.0)
        assert stats.mbe == pytest.approx(2.0)

    def test_three_point_hand_series(self):
        obs = [10.0, 20.0, 30.0]
        pred = [12.0, 17.0, 31.0]
        errors = [2.0, -3.0, 1.0]
        stats = error_stats(series(obs, pred))
        assert stats.rmse == pytest.approx(math.sqrt(sum(e * e for e in errors) / 3))
        assert stats.mae == pytest.approx(sum(abs(e) for e in errors) / 3)
        assert stats.mbe == pytest.approx(sum(errors) / 3)
        ss_res = sum(e * e for e in errors)
        ss_tot = sum((o - 20.0) ** 2 for o in obs)
        assert stats.r2 == pytest.approx(1 - ss_res / ss_tot)

    def test_mbe_sign_is_overprediction(self):
        stats = error_stats(series([10, 20], [12, 23]))
        assert stats.mbe > 0

    def test_single_pair_has_no_r2(self):
        stats = error_stats(series([5.0], [7.0]))
        assert stats.rmse == pytest.approx(2.0)
        assert stats.r2 is None
        assert stats.r2_fit is None

    def test_constant_observations_degenerate_for_r2(self):
        with pytest.raises(DegenerateVariance):
            error_stats(series([5, 5, 5], [4, 5, 6]))

    def test_r2_fit_equals_squared_pearson_on_linear_data(self):
        obs = [1.0, 2.0, 3.0, 4.0, 5.0]
        pred = [2.1 * o + 0.5 for o in obs]
        s = series(obs, pred)
        stats = error_stats(s)
        assert stats.r2_fit == pytest.approx(pearson_r(s) ** 2, abs=1e-12)
        assert stats.r2_fit == pytest.approx(1.0)

    @given(finite_series(min_size=1))
    def test_error_chain_inequality(self, s):
        stats_ok = True
        try:
            stats = error_stats(s)
        except DegenerateVariance:
            stats_ok = False
        if stats_ok:
            assert stats.rmse >= stats.mae - 1e-12
            assert stats.mae >= abs(stats.mbe) - 1e-12


def dissolved(x0, y0, x1, y1):
    region = Region.rectangle(x0, y0, x1, y1)
    return DissolvedDetection(
        region=region, score_avg=0.9, score_median=0.9, score_max=0.9, member_count=1
    )


class TestBuildSiteSeries:
    # 50 m x 51.0136 m = 2550.68 m2, the nominal survey-site footprint.
    SITE = ("site-1", Region.rectangle(0, 0, 50, 51.0136))

    def test_count_normalized_per_hectare(self):
        gts = [
            GroundTruth(region=Region.rectangle(5 * i, 5, 5 * i + 2, 7), id=i)
            for i in range(1, 6)
        ]
        preds = [dissolved(5 * i, 20, 5 * i + 2, 22) for i in range(1, 6)]
        s = build_site_series([self.SITE], gts, preds, kind="count")
        expected = 5 / (2550.68 / 10_000)
        assert s.observed[0] == pytest.approx(expected, rel=1e-6)
        assert s.predicted[0] == pytest.approx(expected, rel=1e-6)
        assert s.unit == "count_per_ha"

    def test_empty_site(self):
        s = build_site_series([self.SITE], [], [], kind="count")
        assert s.observed[0] == 0.0
        assert s.predicted[0] == 0.0
        s2 = build_site_series([self.SITE], [], [], kind="cover")
        assert (s2.observed[0], s2.predicted[0]) == (0.0, 0.0)

    def test_cover_pairs(self):
        site = ("sq", Region.rectangle(0, 0, 10, 10))
        gts = [GroundTruth(region=Region.rectangle(0, 0, 10, 5), id="a")]
        preds = [dissolved(0, 0, 10, 2.5)]
        s = build_site_series([site], gts, preds, kind="cover")
        assert s.observed[0] == pytest.approx(50.0)
        assert s.predicted[0] == pytest.approx(25.0)
        assert s.unit == "percent_cover"

    def test_centroid_membership(self):
        # Shrub centered outside the site does not count even if it pokes in.
        site = ("sq", Region.rectangle(0, 0, 10, 10))
        gts = [GroundTruth(region=Region.rectangle(9, 0, 13, 2), id="out")]
        s = build_site_series([site], gts, [], kind="count")
        assert s.observed[0] == 0.0

    def test_synthetic_offsets_flow_through_error_stats(self):
        rng = random.Random(41)
        sites, gts, preds = [], [], []
        gt_id = 0
        observed_counts = []
        for i in range(10):
            x0 = 200.0 * i
            site = Region.rectangle(x0, 0, x0 + 100, 100)  # exactly 1 ha
            sites.append((f"s{i}", site))
            n_obs = rng.randint(2, 8)
            observed_counts.append(n_obs)
            for k in range(n_obs):
                gts.append(
                    GroundTruth(
                        region=Region.rectangle(x0 + 3 * k + 1, 10, x0 + 3 * k + 2, 11),
                        id=gt_id,
                    )
                )
                gt_id += 1
            for k in range(n_obs + 2):  # constant overprediction of 2/ha
                preds.append(dissolved(x0 + 3 * k + 1, 50, x0 + 3 * k + 2, 51))
        s = build_site_series(sites, gts, preds, kind="count")
        stats = error_stats(s)
        assert stats.rmse == pytest.approx(2.0)
        assert stats.mae == pytest.approx(2.0)
        assert stats.mbe == pytest.approx(2.0)

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            build_site_series([self.SITE], [], [], kind="area")

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ValueError):
            PairedSeries(site_ids=("a",), observed=(1.0, 2.0), predicted=(1.0,), unit="x")


class TestSeriesCsv:
    def test_export(self, tmp_path):
        s = series([1.0, 2.0], [1.5, 2.5])
        out = tmp_path / "scatter.csv"
        write_series_csv(s, out)
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "site_id,observed,predicted,unit"
        assert lines[1] == "s0,1.000000,1.500000,count_per_ha"
