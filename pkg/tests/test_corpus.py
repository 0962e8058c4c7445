import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from panomatch.corpus import (
    GeoPosition,
    ImageRecord,
    Side,
    SynthConfig,
    geo_distance,
    group_by_location,
    load_corpus,
    load_descriptors,
    read_metadata,
    save_corpus,
    save_descriptors,
    synth_benchmark,
)
from panomatch.exceptions import FormatError, ValidationError

coord = st.floats(-1e4, 1e4, allow_nan=False)


def record(image_id, loc, d=4, pos=(0.0, 0.0), value=1.0):
    return ImageRecord(image_id, loc, GeoPosition.planar(*pos), np.full(d, value, np.float32))


class TestGeoDistance:
    def test_same_point(self):
        p = GeoPosition.latlon(40.44, -80.0)
        assert geo_distance(p, p) == 0.0

    def test_planar_345(self):
        assert geo_distance(GeoPosition.planar(0, 0), GeoPosition.planar(3, 4)) == 5.0

    def test_latlon_equirectangular(self):
        a = GeoPosition.latlon(40.4400, -80.0000)
        b = GeoPosition.latlon(40.4400, -79.9997)
        # R * cos(40.44 deg) * 0.0003 deg in radians
        expected = 6_371_000 * math.cos(math.radians(40.44)) * math.radians(0.0003)
        assert geo_distance(a, b) == pytest.approx(expected, abs=1e-9)
        assert geo_distance(a, b) == pytest.approx(25.38866, abs=1e-5)

    def test_latlon_north_south(self):
        a, b = GeoPosition.latlon(10.0, 5.0), GeoPosition.latlon(10.001, 5.0)
        assert geo_distance(a, b) == pytest.approx(6_371_000 * math.radians(0.001))

    def test_mixed_kinds(self):
        with pytest.raises(ValidationError):
            geo_distance(GeoPosition.planar(0, 0), GeoPosition.latlon(0, 0))

    def test_latlon_range(self):
        with pytest.raises(ValidationError):
            GeoPosition.latlon(91, 0)
        with pytest.raises(ValidationError):
            GeoPosition.latlon(0, 181)

    @given(coord, coord, coord, coord, coord, coord)
    def test_planar_metric(self, ax, ay, bx, by, cx, cy):
        a, b, c = GeoPosition.planar(ax, ay), GeoPosition.planar(bx, by), GeoPosition.planar(cx, cy)
        assert geo_distance(a, b) == geo_distance(b, a)
        assert geo_distance(a, c) <= geo_distance(a, b) + geo_distance(b, c) + 1e-9


class TestGrouping:
    def test_two_locations_of_24(self):
        recs = [record(f"i{k}", f"L{k % 2}") for k in range(48)]
        corpus = group_by_location(recs)
        assert [len(g) for g in corpus.groups] == [24, 24]
        assert corpus.groups[0].image_ids == [f"i{k}" for k in range(0, 48, 2)]

    def test_unique_ids_give_singletons(self):
        corpus = group_by_location([record(f"i{k}", f"L{k}") for k in range(5)])
        assert len(corpus) == 5 and all(len(g) == 1 for g in corpus.groups)

    def test_city_scale_shape(self):
        desc = np.zeros(1, np.float32)
        pos = GeoPosition.planar(0, 0)
        recs = [ImageRecord(f"img{k}", f"loc{k // 24}", pos, desc) for k in range(83_952)]
        corpus = group_by_location(recs)
        assert len(corpus) == 3_498
        assert corpus.n_images == 83_952

    def test_partition(self, rng):
        locs = rng.integers(0, 7, size=100)
        recs = [record(f"i{k}", f"L{loc}") for k, loc in enumerate(locs)]
        corpus = group_by_location(recs)
        seen = [r.image_id for r in corpus.records()]
        assert sorted(seen) == sorted(r.image_id for r in recs)
        assert sum(len(g) for g in corpus.groups) == 100

    def test_inconsistent_dimension(self):
        with pytest.raises(ValidationError):
            group_by_location([record("a", "L", d=4), record("b", "L", d=5)])

    def test_position_spread_warns(self, caplog):
        recs = [record("a", "L", pos=(0, 0)), record("b", "L", pos=(3, 0))]
        corpus = group_by_location(recs)
        assert corpus.groups[0].position == GeoPosition.planar(0, 0)
        assert len(corpus.warnings) == 1
        assert "spread" in caplog.text

    def test_matrix_layout(self):
        recs = [record("a", "L", value=1.0), record("b", "L", value=2.0)]
        M = group_by_location(recs).groups[0].matrix
        assert M.shape == (4, 2) and M.dtype == np.float64
        np.testing.assert_array_equal(M[:, 1], 2.0)


class TestDescriptorFile:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        M = rng.standard_normal((7, 5)).astype(np.float32)
        ids = ["a", "bb", "ccc", "émoji-✓", "e"]
        path = tmp_path / "x.pmdv"
        save_descriptors(path, ids, M)
        got_ids, got = load_descriptors(path)
        assert got_ids == ids
        assert got.dtype == np.float32
        assert np.array_equal(got.view(np.uint32), M.view(np.uint32))

    def test_header_layout(self, tmp_path):
        M = np.zeros((4096, 24), np.float32)
        path = tmp_path / "big.pmdv"
        save_descriptors(path, [f"v{k:02d}" for k in range(24)], M)
        raw = path.read_bytes()
        assert raw[:4] == b"PMDV"
        assert int.from_bytes(raw[4:8], "little") == 1
        assert int.from_bytes(raw[8:12], "little") == 4096
        assert int.from_bytes(raw[12:20], "little") == 24
        ids, loaded = load_descriptors(path)
        assert loaded.shape == (4096, 24)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.pmdv"
        save_descriptors(path, [], np.zeros((3, 0), np.float32))
        with pytest.raises(ValidationError, match="empty corpus"):
            load_descriptors(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.pmdv"
        path.write_bytes(b"NOPE" + bytes(16))
        with pytest.raises(FormatError, match="byte offset 0"):
            load_descriptors(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "t.pmdv"
        save_descriptors(path, ["a", "b"], np.ones((3, 2), np.float32))
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FormatError, match="truncated record 1"):
            load_descriptors(path)

    def test_non_finite_offset(self, tmp_path):
        path = tmp_path / "nan.pmdv"
        save_descriptors(path, ["a"], np.ones((3, 1), np.float32))
        raw = bytearray(path.read_bytes())
        offset = 20 + 2 + 1 + 4  # header, id length, id, first float
        raw[offset:offset + 4] = np.array([np.nan], "<f4").tobytes()
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match=f"byte offset {offset}"):
            load_descriptors(path)


class TestMetadata:
    def test_corpus_round_trip(self, tmp_path, small_bench):
        dataset, _ = small_bench
        save_corpus(dataset, tmp_path / "d.pmdv", tmp_path / "d.csv")
        again = load_corpus(tmp_path / "d.pmdv", tmp_path / "d.csv")
        assert again.location_ids == dataset.location_ids
        for g1, g2 in zip(dataset.groups, again.groups):
            assert g1.image_ids == g2.image_ids
            assert g1.position == g2.position
            assert np.array_equal(g1.matrix, g2.matrix)

    def test_latlon_header(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("image_id,location_id,lat,lon\na,L1,40.44,-80.0\n")
        meta = read_metadata(path)
        assert meta["a"] == ("L1", GeoPosition.latlon(40.44, -80.0))

    def test_bad_header(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("image_id,location_id,lat,y\n")
        with pytest.raises(FormatError):
            read_metadata(path)

    def test_missing_metadata_row(self, tmp_path):
        save_descriptors(tmp_path / "d.pmdv", ["a", "b"], np.ones((2, 2), np.float32))
        (tmp_path / "m.csv").write_text("image_id,location_id,x,y\na,L,0,0\n")
        with pytest.raises(ValidationError, match="'b'"):
            load_corpus(tmp_path / "d.pmdv", tmp_path / "m.csv")


class TestSynth:
    def test_deterministic(self, tmp_path):
        for run in ("a", "b"):
            ds, qs = synth_benchmark(num_locations=12, views_per_location=4, d=16, seed=9)
            save_corpus(ds, tmp_path / f"{run}.pmdv", tmp_path / f"{run}.csv")
            save_corpus(qs, tmp_path / f"{run}q.pmdv", tmp_path / f"{run}q.csv")
        for suffix in (".pmdv", ".csv", "q.pmdv", "q.csv"):
            assert (tmp_path / f"a{suffix}").read_bytes() == (tmp_path / f"b{suffix}").read_bytes()

    def test_geometry(self):
        ds, qs = synth_benchmark(num_locations=20, views_per_location=3, d=8, seed=1)
        assert len(ds) == len(qs) == 20
        assert ds.side is Side.DATASET and qs.side is Side.QUERY
        for gd, gq in zip(ds.groups, qs.groups):
            assert geo_distance(gd.position, gq.position) <= 5.0
        pos = [g.position for g in ds.groups]
        spacing = min(geo_distance(p, q) for i, p in enumerate(pos) for q in pos[i + 1:])
        assert spacing >= 50.0

    def test_unit_norm_views(self):
        ds, _ = synth_benchmark(num_locations=5, views_per_location=4, d=16, seed=2)
        norms = np.linalg.norm(ds.groups[0].matrix, axis=0)
        np.testing.assert_allclose(norms, 1.0, atol=1e-6)

    def test_noiseless_queries_repeat_dataset(self):
        ds, qs = synth_benchmark(num_locations=6, views_per_location=4, d=16,
                                 scene_noise=0.0, seed=4)
        for gd, gq in zip(ds.groups, qs.groups):
            assert np.array_equal(gd.matrix, gq.matrix)

    @pytest.mark.parametrize("bad", [dict(num_locations=0), dict(d=0), dict(scene_noise=-1.0),
                                     dict(view_overlap=1.5), dict(views_per_location=0)])
    def test_invalid(self, bad):
        with pytest.raises(ValidationError):
            synth_benchmark(SynthConfig(**bad))
