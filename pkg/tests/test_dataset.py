import numpy as np
import pytest

from rfsentry.dataset import (
    Case,
    CaseLabels,
    LabeledDataset,
    LabelSchema,
    Manifest,
    ManifestEntry,
    SegmentRecord,
    build_dataset,
    build_dronerf_manifest,
    class_tone_bins,
    label_from_case3,
    load_features,
    load_manifest,
    load_segment,
    save_features,
    save_manifest,
    synth_segment,
    write_synthetic_corpus,
)
from rfsentry.errors import (
    ConfigurationError,
    DataError,
    FormatError,
    InsufficientDataError,
    ParseError,
    SchemaError,
)
from rfsentry.spectrum import Band, BandMode, segment_spectrum


class TestLoadSegment:
    def test_comma_separated(self, tmp_path):
        path = tmp_path / "seg.csv"
        path.write_text("1.0,2.5,-0.25")
        record = load_segment(path, Band.LOWER)
        np.testing.assert_array_equal(record.samples, [1.0, 2.5, -0.25])
        assert record.band is Band.LOWER
        assert record.labels is None

    def test_newline_separated(self, tmp_path):
        path = tmp_path / "seg.csv"
        path.write_text("1.0\n2.5\n-0.25\n")
        np.testing.assert_array_equal(load_segment(path, Band.UPPER).samples, [1.0, 2.5, -0.25])

    def test_mixed_separators(self, tmp_path):
        path = tmp_path / "seg.csv"
        path.write_text("1.0, 2.5\n-0.25,3e-2\n")
        np.testing.assert_array_equal(
            load_segment(path, Band.LOWER).samples, [1.0, 2.5, -0.25, 0.03]
        )

    def test_parse_error_names_offset(self, tmp_path):
        path = tmp_path / "seg.csv"
        path.write_text("1.0,abc")
        with pytest.raises(ParseError, match="offset 2"):
            load_segment(path, Band.LOWER)

    def test_parse_error_names_line(self, tmp_path):
        path = tmp_path / "seg.csv"
        path.write_text("1.0\n2.0\nbad\n")
        with pytest.raises(ParseError, match="line 3"):
            load_segment(path, Band.LOWER)

    def test_non_finite_sample_rejected(self, tmp_path):
        path = tmp_path / "seg.csv"
        path.write_text("1.0,nan,2.0")
        with pytest.raises(ParseError, match="offset 2"):
            load_segment(path, Band.LOWER)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "seg.csv"
        path.write_text("  \n")
        with pytest.raises(InsufficientDataError):
            load_segment(path, Band.LOWER)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_segment(tmp_path / "nope.csv", Band.LOWER)


class TestLabelHierarchy:
    def test_projection_table(self):
        # 10 mode-level classes collapse to 4 types and 2 presence values.
        projected = [label_from_case3(c) for c in range(10)]
        assert len({p.case2 for p in projected}) == 4
        assert len({p.case1 for p in projected}) == 2

    def test_specific_rows(self):
        assert label_from_case3(0) == CaseLabels(0, 0, 0)
        assert label_from_case3(7) == CaseLabels(1, 2, 7)  # AR mode 3
        assert label_from_case3(9) == CaseLabels(1, 3, 9)  # Phantom mode 1

    def test_hierarchy_consistency(self):
        for c in range(10):
            labels = label_from_case3(c)
            assert (labels.case1 == 0) == (labels.case2 == 0) == (labels.case3 == 0)
            assert labels.case3 == c

    def test_out_of_range(self):
        for bad in (-1, 10, 99):
            with pytest.raises(SchemaError):
                label_from_case3(bad)

    def test_schemas(self):
        assert LabelSchema.for_case(Case.I).n_classes == 2
        assert LabelSchema.for_case(Case.II).n_classes == 4
        assert LabelSchema.for_case(Case.III).n_classes == 10
        assert LabelSchema.for_n_classes(4).case is Case.II
        with pytest.raises(SchemaError):
            LabelSchema.for_n_classes(3)


class TestManifest:
    def make_manifest(self, tmp_path):
        entries = (
            ManifestEntry("a_lb.csv", "a_ub.csv", 0),
            ManifestEntry("b_lb.csv", "b_ub.csv", 7),
        )
        return Manifest(entries=entries, source="Synthetic", root=tmp_path)

    def test_round_trip(self, tmp_path):
        manifest = self.make_manifest(tmp_path)
        path = tmp_path / "manifest.json"
        save_manifest(manifest, path)
        loaded = load_manifest(path)
        assert loaded.entries == manifest.entries
        assert loaded.source == "Synthetic"
        assert loaded.root == tmp_path

    def test_missing_band_path_rejected(self):
        with pytest.raises(SchemaError):
            ManifestEntry("a_lb.csv", "", 0)

    def test_label_out_of_range(self):
        with pytest.raises(SchemaError):
            ManifestEntry("a_lb.csv", "a_ub.csv", 12)

    def test_bad_source(self, tmp_path):
        with pytest.raises(SchemaError):
            Manifest(entries=(), source="Else", root=tmp_path)

    def test_load_rejects_bad_json(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text("{not json")
        with pytest.raises(FormatError):
            load_manifest(path)

    def test_load_rejects_missing_keys(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text('{"entries": [{"lb_path": "x"}], "source": "Synthetic"}')
        with pytest.raises(SchemaError):
            load_manifest(path)

    def test_class_counts_and_table(self, tmp_path):
        manifest = self.make_manifest(tmp_path)
        counts = manifest.class_counts()
        assert counts[0] == 1 and counts[7] == 1 and counts.sum() == 2
        table = manifest.table_report()
        assert table[0] == ("No Drone", 1, None)


class TestDroneRfScan:
    def expected_pairs(self, tmp_path, names):
        for name in names:
            (tmp_path / name).write_text("0.0")

    def test_scan_builds_sorted_manifest(self, tmp_path):
        self.expected_pairs(
            tmp_path,
            [
                "10101L_2.csv",
                "10101H_2.csv",
                "00000L_0.csv",
                "00000H_0.csv",
                "10101L_10.csv",
                "10101H_10.csv",
                "notes.txt",
            ],
        )
        manifest = build_dronerf_manifest(tmp_path)
        assert manifest.source == "DroneRF"
        assert [e.lb_path for e in manifest.entries] == [
            "00000L_0.csv",
            "10101L_2.csv",
            "10101L_10.csv",
        ]
        assert [e.case3 for e in manifest.entries] == [0, 6, 6]
        table = manifest.table_report()
        assert table[6] == ("AR mode 2", 2, 21)

    def test_missing_upper_band(self, tmp_path):
        self.expected_pairs(tmp_path, ["10000L_1.csv"])
        with pytest.raises(DataError, match="10000H_1"):
            build_dronerf_manifest(tmp_path)

    def test_unknown_code(self, tmp_path):
        self.expected_pairs(tmp_path, ["11111L_1.csv", "11111H_1.csv"])
        with pytest.raises(SchemaError, match="11111"):
            build_dronerf_manifest(tmp_path)


class TestSynthSegment:
    def test_deterministic(self):
        a_lb, a_ub = synth_segment(3, 99, length=4096, index=5)
        b_lb, b_ub = synth_segment(3, 99, length=4096, index=5)
        np.testing.assert_array_equal(a_lb.samples, b_lb.samples)
        np.testing.assert_array_equal(a_ub.samples, b_ub.samples)

    def test_index_and_seed_vary_output(self):
        base, _ = synth_segment(3, 99, length=4096, index=5)
        other_index, _ = synth_segment(3, 99, length=4096, index=6)
        other_seed, _ = synth_segment(3, 100, length=4096, index=5)
        assert not np.array_equal(base.samples, other_index.samples)
        assert not np.array_equal(base.samples, other_seed.samples)

    def test_labels_attached(self):
        lb, ub = synth_segment(6, 0, length=4096)
        assert lb.labels == CaseLabels(1, 2, 6)
        assert ub.labels == lb.labels
        assert lb.band is Band.LOWER and ub.band is Band.UPPER

    def test_no_drone_has_no_peaks(self):
        for seed in (0, 7, 123):
            lb, ub = synth_segment(0, seed, length=8192)
            for record in (lb, ub):
                spec = segment_spectrum(record.samples, record.band)
                assert spec.bins.max() <= 6.0 * np.median(spec.bins)

    def test_sibling_modes_share_base_tones_but_not_comb(self):
        # Seed chosen so the mode comb is active in both segments.
        seed = 0
        m1, _ = synth_segment(1, seed, length=8192)  # Bebop mode 1
        m2, _ = synth_segment(2, seed, length=8192)  # Bebop mode 2
        spec1 = segment_spectrum(m1.samples, Band.LOWER)
        spec2 = segment_spectrum(m2.samples, Band.LOWER)
        floor1 = 6.0 * np.median(spec1.bins)
        floor2 = 6.0 * np.median(spec2.bins)
        base = set(class_tone_bins(1, Band.LOWER, include_comb=False))
        comb1 = set(class_tone_bins(1, Band.LOWER)) - base
        comb2 = set(class_tone_bins(2, Band.LOWER)) - base
        assert base == set(class_tone_bins(2, Band.LOWER, include_comb=False))
        assert comb1.isdisjoint(comb2 - {min(comb2)}) or comb1 != comb2
        for b in base:
            assert spec1.bins[b] > floor1 and spec2.bins[b] > floor2
        assert all(spec1.bins[b] > floor1 for b in comb1)
        assert all(spec2.bins[b] > floor2 for b in comb2)
        assert not all(spec1.bins[b] > floor1 for b in comb2 - comb1)

    def test_length_validation(self):
        with pytest.raises(ConfigurationError):
            synth_segment(1, 0, length=100)


class TestSyntheticCorpus:
    def test_file_counts(self, tmp_path):
        manifest = write_synthetic_corpus(tmp_path / "c", n_per_class=5, seed=1, length=2048)
        assert len(manifest.entries) == 50
        files = sorted(p.name for p in (tmp_path / "c").glob("*.csv"))
        assert len(files) == 100
        assert (tmp_path / "c" / "manifest.json").exists()
        assert manifest.config["seed_data"] == 1

    def test_byte_identical_regeneration(self, tmp_path):
        first = tmp_path / "one"
        second = tmp_path / "two"
        write_synthetic_corpus(first, n_per_class=2, seed=3, length=2048)
        write_synthetic_corpus(second, n_per_class=2, seed=3, length=2048)
        for path in sorted(first.iterdir()):
            twin = second / path.name
            assert twin.read_bytes() == path.read_bytes(), path.name

    def test_round_trip_through_text_is_lossless(self, tmp_path):
        manifest = write_synthetic_corpus(tmp_path / "c", n_per_class=1, seed=2, length=2048)
        entry = manifest.entries[3]
        lb_path, _ = manifest.resolve(entry)
        reloaded = load_segment(lb_path, Band.LOWER)
        direct, _ = synth_segment(entry.case3, 2, length=2048, index=0)
        np.testing.assert_array_equal(reloaded.samples, direct.samples)


class TestBuildDataset:
    def test_shapes_and_labels_per_case(self, small_corpus):
        ds3 = build_dataset(small_corpus, BandMode.LOWER_ONLY, Case.III, frame_size=1024)
        assert ds3.features.shape == (60, 512)
        assert ds3.schema.n_classes == 10
        np.testing.assert_array_equal(np.bincount(ds3.labels), np.full(10, 6))
        ds2 = build_dataset(small_corpus, BandMode.UPPER_ONLY, Case.II, frame_size=1024)
        assert ds2.schema.n_classes == 4
        np.testing.assert_array_equal(np.bincount(ds2.labels), [6, 24, 24, 6])
        ds1 = build_dataset(small_corpus, BandMode.CONCATENATED, Case.I, frame_size=1024)
        assert ds1.features.shape == (60, 1024)
        np.testing.assert_array_equal(np.bincount(ds1.labels), [6, 54])

    def test_rows_follow_manifest_order_and_rebuild_alone(self, small_corpus):
        ds = build_dataset(small_corpus, BandMode.CONCATENATED, Case.III, frame_size=1024)
        for i in (0, 17, 59):
            single = Manifest(
                entries=(small_corpus.entries[i],),
                source="Synthetic",
                root=small_corpus.root,
            )
            alone = build_dataset(single, BandMode.CONCATENATED, Case.III, frame_size=1024)
            np.testing.assert_array_equal(alone.features[0], ds.features[i])
            assert alone.labels[0] == ds.labels[i]

    def test_parallel_extraction_is_bit_identical(self, small_corpus):
        serial = build_dataset(small_corpus, BandMode.LOWER_ONLY, Case.I, frame_size=1024)
        parallel = build_dataset(
            small_corpus, BandMode.LOWER_ONLY, Case.I, frame_size=1024, jobs=3
        )
        np.testing.assert_array_equal(serial.features, parallel.features)
        np.testing.assert_array_equal(serial.labels, parallel.labels)

    def test_empty_manifest(self, tmp_path):
        manifest = Manifest(entries=(), source="Synthetic", root=tmp_path)
        with pytest.raises(InsufficientDataError):
            build_dataset(manifest, BandMode.LOWER_ONLY, Case.I)

    def test_failing_entry_aborts_with_id(self, small_corpus, tmp_path):
        entries = list(small_corpus.entries[:3])
        entries[1] = ManifestEntry("missing_lb.csv", "missing_ub.csv", 4)
        manifest = Manifest(entries=tuple(entries), source="Synthetic", root=small_corpus.root)
        with pytest.raises(DataError, match="entry 1"):
            build_dataset(manifest, BandMode.LOWER_ONLY, Case.III, frame_size=1024)

    def test_bad_frame_size(self, small_corpus):
        with pytest.raises(ConfigurationError):
            build_dataset(small_corpus, BandMode.LOWER_ONLY, Case.I, frame_size=1000)

    def test_degenerate_upper_band_falls_back_to_unit_scale(self, tmp_path, caplog):
        lb_path = tmp_path / "seg_lb.csv"
        ub_path = tmp_path / "seg_ub.csv"
        rng = np.random.default_rng(30)
        lb_path.write_text(",".join(map(str, rng.normal(size=1024).tolist())))
        ub_path.write_text(",".join(["0.0"] * 1024))
        manifest = Manifest(
            entries=(ManifestEntry("seg_lb.csv", "seg_ub.csv", 0),),
            source="Synthetic",
            root=tmp_path,
        )
        with caplog.at_level("WARNING", logger="rfsentry.dataset"):
            ds = build_dataset(manifest, BandMode.CONCATENATED, Case.I, frame_size=512)
        assert "degenerate upper band" in caplog.text
        np.testing.assert_array_equal(ds.features[0, 256:], np.zeros(256))
        assert ds.features[0, :256].any()


class TestFeatureCache:
    def roundtrip(self, tmp_path, ds):
        path = tmp_path / "cache.rfds"
        save_features(ds, path)
        return path, load_features(path)

    def test_round_trip_bit_exact(self, small_corpus, tmp_path):
        ds = build_dataset(small_corpus, BandMode.CONCATENATED, Case.II, frame_size=1024)
        _, loaded = self.roundtrip(tmp_path, ds)
        np.testing.assert_array_equal(loaded.features, ds.features)
        np.testing.assert_array_equal(loaded.labels, ds.labels)
        assert loaded.schema == ds.schema
        assert loaded.band_mode is ds.band_mode
        assert (loaded.frame_size, loaded.hop, loaded.q) == (1024, 1024, 8)

    def test_truncated_file(self, small_corpus, tmp_path):
        ds = build_dataset(small_corpus, BandMode.LOWER_ONLY, Case.I, frame_size=1024)
        path, _ = self.roundtrip(tmp_path, ds)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(FormatError):
            load_features(path)

    def test_trailing_garbage(self, small_corpus, tmp_path):
        ds = build_dataset(small_corpus, BandMode.LOWER_ONLY, Case.I, frame_size=1024)
        path, _ = self.roundtrip(tmp_path, ds)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(FormatError):
            load_features(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "cache.rfds"
        path.write_bytes(b"XXXX" + b"\x00" * 40)
        with pytest.raises(FormatError, match="magic"):
            load_features(path)

    def test_version_bump_detected(self, small_corpus, tmp_path):
        ds = build_dataset(small_corpus, BandMode.LOWER_ONLY, Case.I, frame_size=1024)
        path, _ = self.roundtrip(tmp_path, ds)
        data = bytearray(path.read_bytes())
        data[4:6] = (2).to_bytes(2, "little")
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="version 2"):
            load_features(path)


class TestRecordsAndDatasets:
    def test_segment_record_validation(self):
        with pytest.raises(InsufficientDataError):
            SegmentRecord("empty", Band.LOWER, np.array([]))
        with pytest.raises(DataError, match="index 1"):
            SegmentRecord("nan", Band.LOWER, np.array([1.0, np.nan]))
        with pytest.raises(SchemaError):
            SegmentRecord("bad", Band.LOWER, np.ones(4), labels=CaseLabels(0, 1, 5))

    def test_labeled_dataset_validation(self):
        schema = LabelSchema.for_case(Case.I)
        features = np.ones((4, 8))
        with pytest.raises(SchemaError):
            LabeledDataset(features, np.array([0, 1, 2, 0]), schema, BandMode.LOWER_ONLY)
        bad = features.copy()
        bad[2, 3] = np.inf
        with pytest.raises(Exception):
            LabeledDataset(bad, np.zeros(4, dtype=int), schema, BandMode.LOWER_ONLY)

    def test_nearest_centroid_separability(self):
        # Resubstitution nearest-centroid on lower-band features; the
        # guarantee that keeps pipeline-level tests meaningful.
        rows, labels = [], []
        for class_id in range(10):
            for index in range(15):
                lb, _ = synth_segment(class_id, 77, length=4096, index=index)
                rows.append(segment_spectrum(lb.samples, Band.LOWER).bins)
                labels.append(0 if class_id == 0 else 1)
        features = np.array(rows)
        labels = np.array(labels)
        centroids = np.stack([features[labels == c].mean(axis=0) for c in (0, 1)])
        distance = np.linalg.norm(features[:, None, :] - centroids[None, :, :], axis=2)
        predicted = np.argmin(distance, axis=1)
        assert (predicted == labels).mean() >= 0.99
