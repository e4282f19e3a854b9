import json

import numpy as np
import pytest

from rfsentry import gbdt
from rfsentry.cli import main
from rfsentry.dataset import load_features, load_manifest


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "corpus"
    code = main(
        ["synth", "--out-dir", str(out), "--n-per-class", "4", "--seed-data", "6", "--length", "2048"]
    )
    assert code == 0
    return out


@pytest.fixture(scope="module")
def lower_cache(corpus_dir, tmp_path_factory):
    path = tmp_path_factory.mktemp("cache") / "lower3.rfds"
    code = main(
        [
            "features",
            "--manifest",
            str(corpus_dir / "manifest.json"),
            "--band",
            "lower",
            "--case",
            "3",
            "--frame-size",
            "1024",
            "--out",
            str(path),
        ]
    )
    assert code == 0
    return path


FAST_TRAIN = ["--rounds", "3", "--max-depth", "3", "--min-child-weight", "0.5"]


class TestSynth:
    def test_counts(self, corpus_dir):
        files = list(corpus_dir.glob("*.csv"))
        assert len(files) == 80
        manifest = load_manifest(corpus_dir / "manifest.json")
        assert len(manifest.entries) == 40

    def test_rerun_is_byte_identical(self, corpus_dir, tmp_path):
        twin = tmp_path / "twin"
        assert (
            main(
                [
                    "synth",
                    "--out-dir",
                    str(twin),
                    "--n-per-class",
                    "4",
                    "--seed-data",
                    "6",
                    "--length",
                    "2048",
                ]
            )
            == 0
        )
        for path in sorted(corpus_dir.iterdir()):
            assert (twin / path.name).read_bytes() == path.read_bytes()

    def test_unwritable_out_dir(self, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("a file, not a directory")
        code = main(["synth", "--out-dir", str(blocker / "sub"), "--n-per-class", "1"])
        assert code == 4


class TestFeatures:
    def test_reports_dimensions(self, corpus_dir, tmp_path, capsys):
        out = tmp_path / "both.rfds"
        code = main(
            [
                "features",
                "--manifest",
                str(corpus_dir / "manifest.json"),
                "--band",
                "both",
                "--case",
                "2",
                "--frame-size",
                "1024",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        printed = capsys.readouterr().out
        assert "x 1024 dims" in printed
        ds = load_features(out)
        assert ds.n_features == 1024
        assert ds.schema.n_classes == 4

    def test_lower_band_dimension(self, lower_cache, capsys):
        ds = load_features(lower_cache)
        assert ds.n_features == 512
        assert ds.band_mode.value == "lower"

    def test_missing_segment_file_fails_without_cache(self, corpus_dir, tmp_path):
        manifest_path = tmp_path / "broken.json"
        payload = json.loads((corpus_dir / "manifest.json").read_text())
        payload["entries"][2]["lb_path"] = "gone.csv"
        manifest_path.write_text(json.dumps(payload))
        out = tmp_path / "broken.rfds"
        code = main(
            ["features", "--manifest", str(manifest_path), "--band", "lower", "--case", "1", "--out", str(out)]
        )
        assert code == 3
        assert not out.exists()


class TestCv:
    def test_report_written(self, lower_cache, tmp_path, capsys):
        out = tmp_path / "cv.json"
        code = main(
            ["cv", "--features", str(lower_cache), *FAST_TRAIN, "--k-folds", "4", "--seed-data", "2", "--out", str(out)]
        )
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["case"] == 3
        assert payload["k_folds"] == 4
        assert len(payload["per_fold"]) == 4
        assert set(payload["mean"]) == {"accuracy", "macro_precision", "macro_recall", "macro_f1"}
        assert payload["config"]["train"]["n_rounds"] == 3
        assert out.with_suffix(".csv").exists()

    def test_identical_bytes_across_runs(self, lower_cache, tmp_path):
        outputs = []
        for name in ("a.json", "b.json"):
            out = tmp_path / name
            assert (
                main(
                    [
                        "cv",
                        "--features",
                        str(lower_cache),
                        *FAST_TRAIN,
                        "--k-folds",
                        "4",
                        "--seed-data",
                        "2",
                        "--out",
                        str(out),
                    ]
                )
                == 0
            )
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1]

    def test_k1_is_config_error(self, lower_cache, tmp_path):
        code = main(
            ["cv", "--features", str(lower_cache), "--k-folds", "1", "--out", str(tmp_path / "x.json")]
        )
        assert code == 2

    def test_case_mismatch_is_config_error(self, lower_cache, tmp_path):
        code = main(
            ["cv", "--features", str(lower_cache), "--case", "1", "--out", str(tmp_path / "x.json")]
        )
        assert code == 2

    def test_corrupt_cache_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.rfds"
        bad.write_bytes(b"garbage")
        code = main(["cv", "--features", str(bad), "--out", str(tmp_path / "x.json")])
        assert code == 3

    def test_missing_cache_is_io_error(self, tmp_path):
        code = main(["cv", "--features", str(tmp_path / "none.rfds"), "--out", str(tmp_path / "x.json")])
        assert code == 4


class TestCompare:
    def test_structure(self, corpus_dir, tmp_path):
        out = tmp_path / "compare.json"
        code = main(
            [
                "compare",
                "--manifest",
                str(corpus_dir / "manifest.json"),
                "--case",
                "3",
                "--frame-size",
                "1024",
                *FAST_TRAIN,
                "--k-folds",
                "10",
                "--seed-data",
                "3",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        payload = json.loads(out.read_text())
        assert set(payload["bands"]) == {"lower", "upper", "both"}
        assert payload["ttests"]["lb_vs_ub"]["dof"] == 9
        assert payload["ttests"]["lb_vs_both"]["dof"] == 9
        fingerprints = {payload["bands"][band]["fold_fingerprint"] for band in payload["bands"]}
        assert fingerprints == {payload["fold_fingerprint"]}
        assert payload["config_fingerprint"] == payload["bands"]["lower"]["config_fingerprint"]
        assert payload["extraction"]["frame_size"] == 1024
        csv_text = out.with_suffix(".csv").read_text().splitlines()
        assert csv_text[0] == "case,band_mode,fold,metric,value"
        assert len(csv_text) == 1 + 3 * 10 * 4


class TestTrainPredict:
    def test_train_then_predict_matches_in_process(self, lower_cache, tmp_path, capsys):
        model_path = tmp_path / "model.rfgb"
        code = main(["train", "--features", str(lower_cache), *FAST_TRAIN, "--out", str(model_path)])
        assert code == 0
        out_json = tmp_path / "pred.json"
        code = main(
            ["predict", "--model", str(model_path), "--features", str(lower_cache), "--out", str(out_json)]
        )
        assert code == 0
        payload = json.loads(out_json.read_text())
        ds = load_features(lower_cache)
        model = gbdt.load_model(model_path)
        expected = gbdt.predict(model, ds.features)
        np.testing.assert_array_equal(np.array(payload["labels"]), expected)
        assert payload["class_names"][0] == "No Drone"
        printed = capsys.readouterr().out
        assert "row 0:" in printed

    def test_predict_wrong_dimension_names_expected(self, lower_cache, corpus_dir, tmp_path, capsys):
        model_path = tmp_path / "model.rfgb"
        assert main(["train", "--features", str(lower_cache), *FAST_TRAIN, "--out", str(model_path)]) == 0
        both_cache = tmp_path / "both.rfds"
        assert (
            main(
                [
                    "features",
                    "--manifest",
                    str(corpus_dir / "manifest.json"),
                    "--band",
                    "both",
                    "--case",
                    "3",
                    "--frame-size",
                    "1024",
                    "--out",
                    str(both_cache),
                ]
            )
            == 0
        )
        code = main(["predict", "--model", str(model_path), "--features", str(both_cache)])
        assert code == 3
        assert "expected feature dimension 512" in capsys.readouterr().err

    def test_predict_raw_segment_pair(self, lower_cache, corpus_dir, tmp_path, capsys):
        model_path = tmp_path / "model.rfgb"
        assert main(["train", "--features", str(lower_cache), *FAST_TRAIN, "--out", str(model_path)]) == 0
        manifest = load_manifest(corpus_dir / "manifest.json")
        lb_path, ub_path = manifest.resolve(manifest.entries[0])
        code = main(
            [
                "predict",
                "--model",
                str(model_path),
                "--lb",
                str(lb_path),
                "--ub",
                str(ub_path),
                "--band",
                "lower",
                "--frame-size",
                "1024",
            ]
        )
        assert code == 0
        assert "row 0:" in capsys.readouterr().out

    def test_predict_without_input_is_config_error(self, lower_cache, tmp_path):
        model_path = tmp_path / "model.rfgb"
        assert main(["train", "--features", str(lower_cache), *FAST_TRAIN, "--out", str(model_path)]) == 0
        assert main(["predict", "--model", str(model_path)]) == 2

    def test_model_round_trip_via_cli(self, lower_cache, tmp_path):
        model_path = tmp_path / "model.rfgb"
        assert main(["train", "--features", str(lower_cache), *FAST_TRAIN, "--out", str(model_path)]) == 0
        first = tmp_path / "a.json"
        second = tmp_path / "b.json"
        for out in (first, second):
            assert (
                main(["predict", "--model", str(model_path), "--features", str(lower_cache), "--out", str(out)])
                == 0
            )
        assert first.read_bytes() == second.read_bytes()
