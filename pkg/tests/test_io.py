import json

import numpy as np
import pytest

from shrubmap.errors import ParseError, SchemaError
from shrubmap.geometry import Region
from shrubmap.matching import Detection, GroundTruth, Source
from shrubmap.pipeline import DemGrid, DissolvedDetection, Tile
from shrubmap import io as sio


def det(x0, y0, x1, y1, score=0.9, tile_id=None):
    return Detection(region=Region.rectangle(x0, y0, x1, y1), score=score, tile_id=tile_id)


def gt(x0, y0, x1, y1, gt_id, source=Source.PI):
    return GroundTruth(region=Region.rectangle(x0, y0, x1, y1), id=gt_id, source=source)


class TestFeatureFiles:
    def test_minimal_detection_file(self, tmp_path):
        payload = {
            "type": "FeatureCollection",
            "crs": "EPSG:25830",
            "features": [
                {
                    "type": "Feature",
                    "geometry": {
                        "type": "Polygon",
                        "coordinates": [[[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]]],
                    },
                    "properties": {"role": "detection", "score": 0.7},
                }
            ],
        }
        path = tmp_path / "one.geojson"
        path.write_text(json.dumps(payload))
        dets, gts = sio.read_features(path)
        assert len(dets) == 1 and len(gts) == 0
        assert dets[0].score == 0.7
        assert dets[0].region.area == pytest.approx(1.0)

    def test_missing_score_names_feature(self, tmp_path):
        payload = {
            "type": "FeatureCollection",
            "features": [
                {
                    "type": "Feature",
                    "geometry": {
                        "type": "Polygon",
                        "coordinates": [[[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]]],
                    },
                    "properties": {"role": "detection"},
                }
            ],
        }
        path = tmp_path / "bad.geojson"
        path.write_text(json.dumps(payload))
        with pytest.raises(SchemaError, match="feature 0"):
            sio.read_features(path)

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "bad.geojson"
        path.write_text("{not json")
        with pytest.raises(ParseError):
            sio.read_features(path)

    def test_unsupported_geometry_type(self, tmp_path):
        payload = {
            "type": "FeatureCollection",
            "features": [
                {
                    "type": "Feature",
                    "geometry": {"type": "Point", "coordinates": [0, 0]},
                    "properties": {"role": "detection", "score": 0.5},
                }
            ],
        }
        path = tmp_path / "pt.geojson"
        path.write_text(json.dumps(payload))
        with pytest.raises(SchemaError, match="Point"):
            sio.read_features(path)

    def test_bad_role(self, tmp_path):
        payload = {
            "type": "FeatureCollection",
            "features": [
                {
                    "type": "Feature",
                    "geometry": {
                        "type": "Polygon",
                        "coordinates": [[[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]]],
                    },
                    "properties": {"role": "shrub"},
                }
            ],
        }
        path = tmp_path / "role.geojson"
        path.write_text(json.dumps(payload))
        with pytest.raises(SchemaError, match="role"):
            sio.read_features(path)

    def test_roundtrip_preserves_areas(self, tmp_path):
        hole = [(2.5, 2.5), (3.5, 2.5), (3.5, 3.5), (2.5, 3.5), (2.5, 2.5)]
        fancy = Region.from_polygon(
            [(2, 2), (5, 2), (5, 5), (2, 5), (2, 2)], holes=[hole]
        )
        dets = [det(0, 0, 1.25, 1.125, 0.55, tile_id="t1")]
        gts = [
            GroundTruth(region=fancy, id="g1", source=Source.FW),
            gt(10, 10, 12.5, 13.5, "g2"),
        ]
        path = tmp_path / "rt.geojson"
        sio.write_features(path, detections=dets, groundtruths=gts, crs="EPSG:25830")
        parsed = sio.read_feature_collection(path)
        assert parsed.crs == "EPSG:25830"
        assert len(parsed.detections) == 1
        assert len(parsed.groundtruths) == 2
        assert parsed.detections[0].region.area == pytest.approx(
            dets[0].region.area, abs=1e-9
        )
        assert parsed.detections[0].tile_id == "t1"
        by_id = {g.id: g for g in parsed.groundtruths}
        assert by_id["g1"].region.area == pytest.approx(fancy.area, abs=1e-9)
        assert by_id["g1"].source is Source.FW

    def test_write_is_deterministic(self, tmp_path):
        dets = [det(0, 0, 1, 1, 0.5)]
        a, b = tmp_path / "a.geojson", tmp_path / "b.geojson"
        sio.write_features(a, detections=dets)
        sio.write_features(b, detections=dets)
        assert a.read_bytes() == b.read_bytes()


class TestMapFiles:
    def test_roundtrip(self, tmp_path):
        dd = DissolvedDetection(
            region=Region.rectangle(0, 0, 2, 2),
            score_avg=0.6,
            score_median=0.65,
            score_max=0.9,
            member_count=3,
            source_tiles=frozenset({"a", "b"}),
        )
        path = tmp_path / "map.geojson"
        sio.write_map(path, [dd], crs="EPSG:25830")
        back = sio.read_map(path)
        assert len(back) == 1
        assert back[0].score_avg == pytest.approx(0.6)
        assert back[0].score_median == pytest.approx(0.65)
        assert back[0].score_max == pytest.approx(0.9)
        assert back[0].member_count == 3
        assert back[0].source_tiles == frozenset({"a", "b"})
        assert back[0].region.area == pytest.approx(4.0, abs=1e-9)


class TestSites:
    def test_read_sites(self, tmp_path):
        payload = {
            "type": "FeatureCollection",
            "features": [
                {
                    "type": "Feature",
                    "geometry": {
                        "type": "Polygon",
                        "coordinates": [[[0, 0], [50, 0], [50, 50], [0, 50], [0, 0]]],
                    },
                    "properties": {"id": "fw-7"},
                }
            ],
        }
        path = tmp_path / "sites.geojson"
        path.write_text(json.dumps(payload))
        sites = sio.read_sites(path)
        assert sites[0][0] == "fw-7"
        assert sites[0][1].area == pytest.approx(2500.0)


class TestDemAscii:
    def test_roundtrip(self, tmp_path):
        dem = DemGrid(
            xll=100.0,
            yll=200.0,
            cell_size=2.0,
            values=np.array([[1900.0, 1910.0], [1880.0, -9999.0]]),
        )
        path = tmp_path / "dem.asc"
        sio.write_dem(path, dem)
        back = sio.read_dem(path)
        assert back.xll == 100.0
        assert back.yll == 200.0
        assert back.cell_size == 2.0
        assert back.nodata == -9999.0
        assert np.array_equal(back.values, dem.values)
        # Orientation: first row is north.
        assert back.elevation_at(101.0, 203.0) == 1900.0
        assert back.elevation_at(101.0, 201.0) == 1880.0
        assert back.elevation_at(103.0, 201.0) is None  # nodata

    def test_header_validation(self, tmp_path):
        path = tmp_path / "bad.asc"
        path.write_text("ncols 2\nnrows 2\n1 2 3 4\n")
        with pytest.raises(ParseError, match="header"):
            sio.read_dem(path)

    def test_value_count_checked(self, tmp_path):
        path = tmp_path / "short.asc"
        path.write_text(
            "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2 3\n"
        )
        with pytest.raises(ParseError, match="expected 4"):
            sio.read_dem(path)


class TestTileManifest:
    def test_roundtrip(self, tmp_path):
        tiles = [
            Tile("a", 0.0, 0.0, 448, 448, 0.13, image_path="/imgs/a.png"),
            Tile("b", 58.24, 0.0, 448, 448, 0.13),
        ]
        path = tmp_path / "tiles.csv"
        sio.write_tile_manifest(path, tiles)
        back = sio.read_tile_manifest(path)
        assert back == tiles

    def test_missing_columns(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("tile_id,x0\nq,1\n")
        with pytest.raises(SchemaError, match="missing columns"):
            sio.read_tile_manifest(path)


class TestRunConfig:
    def test_defaults_match_operating_points(self):
        cfg = sio.RunConfig()
        assert cfg.overlap_threshold == 0.5
        assert cfg.score_threshold == 0.5
        assert cfg.min_altitude == 1900.0
        assert cfg.min_area == 1.04
        assert cfg.score_field == "max"

    def test_roundtrip(self, tmp_path):
        cfg = sio.RunConfig(metric="iou", overlap_threshold=0.75, score_threshold=0.9)
        path = tmp_path / "run.cfg"
        sio.save_config(path, cfg)
        back = sio.load_config(path)
        assert back == cfg

    def test_comments_and_blanks(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# comment\n\nmetric=iou\noverlap_threshold=0.75\n")
        cfg = sio.load_config(path)
        assert cfg.metric == "iou"
        assert cfg.overlap_threshold == 0.75

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("colour=blue\n")
        with pytest.raises(SchemaError, match="unknown key"):
            sio.load_config(path)

    def test_to_match_config(self):
        cfg = sio.RunConfig(metric="iou", overlap_threshold=0.75, match_set_rule=0.1)
        mc = cfg.to_match_config()
        assert mc.metric.value == "iou"
        assert mc.overlap_threshold == 0.75
        assert mc.min_label_fraction == 0.1
