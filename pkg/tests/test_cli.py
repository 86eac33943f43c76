import json
from pathlib import Path

import numpy as np
import pytest

from mlem.cli import main
from mlem.io import load_json


def run(args):
    return main([str(a) for a in args])


def read_bytes_map(root: Path, suffixes=(".json", ".csv")) -> dict:
    return {
        p.relative_to(root): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.suffix in suffixes
    }


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    code = run(
        ["simulate", "--n", 64, "--m", 4, "--d", 16, "--noise", 0, "--seeds", 1, "--out", out]
    )
    assert code == 0
    seed_dir = out / "seed_0"
    return {
        "features": seed_dir / "features.csv",
        "reps": seed_dir / "reps.bin",
        "truth": seed_dir / "ground_truth.json",
    }


@pytest.fixture(scope="module")
def fitted(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    code = run(
        [
            "fit",
            "--features", dataset["features"],
            "--reps", dataset["reps"],
            "--variant", "mlem",
            "--batch-size", 512,
            "--max-steps", 120,
            "--seed", 3,
            "--out", out,
        ]
    )
    assert code == 0
    return out


class TestSimulate:
    def test_outputs_exist(self, dataset):
        for key in ("features", "reps", "truth"):
            assert dataset[key].exists()

    def test_ground_truth_schema(self, dataset):
        payload = load_json(dataset["truth"])
        assert payload["n"] == 64 and payload["m"] == 4 and payload["d"] == 16
        W = np.asarray(payload["W"]).reshape(4, 4)
        assert np.linalg.norm(W) == pytest.approx(1.0, abs=1e-9)
        assert "mds_max_rel_error" in payload

    def test_rerun_byte_identical(self, tmp_path):
        args = ["simulate", "--n", 32, "--m", 3, "--d", 8, "--noise", 0.5, "--seeds", 2]
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(args + ["--out", a]) == 0
        assert run(args + ["--out", b]) == 0
        files_a = read_bytes_map(a, suffixes=(".json", ".csv", ".bin"))
        files_b = read_bytes_map(b, suffixes=(".json", ".csv", ".bin"))
        assert list(files_a) == list(files_b)
        for key in files_a:
            assert files_a[key] == files_b[key], key

    def test_desk_scale_runtime(self, tmp_path):
        import time

        start = time.time()
        assert run(
            ["simulate", "--n", 64, "--m", 4, "--d", 16, "--noise", 0, "--seeds", 1,
             "--out", tmp_path / "quick"]
        ) == 0
        assert time.time() - start < 10


class TestFit:
    def test_report_and_model_written(self, fitted):
        assert (fitted / "report.json").exists()
        assert (fitted / "model.json").exists()
        assert (fitted / "trace.png").exists()

    def test_report_fields(self, fitted):
        report = load_json(fitted / "report.json")
        assert report["command"] == "fit"
        fold = report["folds"][0]
        assert -1 <= fold["test_spearman"] <= 1
        assert fold["stop_reason"] in ("patience", "max_steps")
        assert fold["steps_to_converge"] == len(fold["objectives"])
        assert report["config"]["seed"] == 3

    def test_model_schema(self, fitted):
        model = load_json(fitted / "model.json")
        assert model["variant"] == "mlem"
        assert model["m"] == 4
        assert len(model["W"]) == 16
        assert len(model["feature_names"]) == 4

    def test_rerun_byte_identical(self, dataset, tmp_path):
        args = [
            "fit", "--features", dataset["features"], "--reps", dataset["reps"],
            "--variant", "frrsai", "--batch-size", 256, "--max-steps", 60, "--seed", 5,
        ]
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(args + ["--out", a]) == 0
        assert run(args + ["--out", b]) == 0
        for key, blob in read_bytes_map(a).items():
            assert blob == read_bytes_map(b)[key], key

    def test_kfold_writes_fold_models(self, dataset, tmp_path):
        out = tmp_path / "cv"
        assert run(
            ["fit", "--features", dataset["features"], "--reps", dataset["reps"],
             "--split", "kfold", "--folds", 4, "--batch-size", 256,
             "--max-steps", 40, "--seed", 6, "--out", out]
        ) == 0
        report = load_json(out / "report.json")
        assert len(report["folds"]) == 4
        for fold in range(4):
            assert (out / f"model_fold{fold}.json").exists()

    def test_invalid_variant_exits_2(self, dataset, tmp_path, capsys):
        with pytest.raises(SystemExit) as err:
            run(["fit", "--features", dataset["features"], "--reps", dataset["reps"],
                 "--variant", "bogus", "--out", tmp_path / "x"])
        assert err.value.code == 2

    def test_missing_file_exits_2(self, tmp_path):
        assert run(
            ["fit", "--features", tmp_path / "nope.csv", "--reps", tmp_path / "nope.bin",
             "--out", tmp_path / "x"]
        ) == 2

    def test_degenerate_reps_exit_3(self, dataset, tmp_path):
        flat = tmp_path / "flat.csv"
        n = 64
        flat.write_text("\n".join("1.0,1.0" for _ in range(n)) + "\n")
        assert run(
            ["fit", "--features", dataset["features"], "--reps", flat,
             "--batch-size", 64, "--out", tmp_path / "x"]
        ) == 3

    def test_auto_batch_size_resolves(self, dataset, tmp_path):
        out = tmp_path / "auto"
        assert run(
            ["fit", "--features", dataset["features"], "--reps", dataset["reps"],
             "--batch-size", "auto", "--max-steps", 60, "--seed", 1, "--out", out]
        ) == 0
        report = load_json(out / "report.json")
        assert report["config"]["batch_size_requested"] == "auto"
        # 64 stimuli have 2016 pairs, fewer than the initial probe size,
        # so the search settles on the full population
        assert report["config"]["batch_size"] == 2016
        assert report["folds"][0]["test_spearman"] >= 0.9

    def test_no_signal_data_exits_4(self, tmp_path):
        rng = np.random.default_rng(0)
        features = tmp_path / "rf.csv"
        lines = ["stimulus_id,a,b"]
        for i in range(64):
            lines.append(f"s{i}," + ",".join(rng.choice(["A", "B"], 2)))
        features.write_text("\n".join(lines) + "\n")
        reps = tmp_path / "rr.csv"
        np.savetxt(reps, rng.normal(size=(64, 8)), delimiter=",")
        assert run(
            ["fit", "--features", features, "--reps", reps,
             "--batch-size", 2016, "--max-steps", 3, "--seed", 5,
             "--out", tmp_path / "x"]
        ) == 4


class TestImportance:
    def test_outputs_and_determinism(self, dataset, fitted, tmp_path):
        args = [
            "importance", "--model", fitted / "model.json",
            "--features", dataset["features"], "--reps", dataset["reps"],
            "--n-perm", 5, "--max-pairs", 500, "--seed", 11,
        ]
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(args + ["--out", a]) == 0
        assert run(args + ["--out", b]) == 0
        assert (a / "importance.json").exists()
        assert (a / "importance.png").exists()
        for key, blob in read_bytes_map(a).items():
            assert blob == read_bytes_map(b)[key], key

    def test_csv_sorted_descending(self, dataset, fitted, tmp_path):
        out = tmp_path / "imp"
        assert run(
            ["importance", "--model", fitted / "model.json",
             "--features", dataset["features"], "--reps", dataset["reps"],
             "--n-perm", 5, "--max-pairs", 500, "--seed", 11, "--out", out]
        ) == 0
        lines = (out / "importance.csv").read_text().strip().splitlines()
        assert lines[0] == "name,importance,std"
        values = [float(line.split(",")[1]) for line in lines[1:]]
        assert values == sorted(values, reverse=True)
        assert len(values) == 4 * 5 // 2

    def test_n_perm_echoed(self, dataset, fitted, tmp_path):
        out = tmp_path / "imp2"
        assert run(
            ["importance", "--model", fitted / "model.json",
             "--features", dataset["features"], "--reps", dataset["reps"],
             "--max-pairs", 500, "--seed", 1, "--out", out]
        ) == 0
        payload = load_json(out / "importance.json")
        assert payload["config"]["n_perm"] == 10
        assert all(len(e["per_permutation_scores"]) == 10 for e in payload["entries"])

    def test_feature_name_mismatch_exits_2(self, dataset, fitted, tmp_path):
        other = tmp_path / "other.csv"
        lines = ["stimulus_id,a,b,c,d"]
        rng = np.random.default_rng(0)
        for i in range(64):
            lines.append(f"s{i}," + ",".join(rng.choice(["A", "B"], 4)))
        other.write_text("\n".join(lines) + "\n")
        assert run(
            ["importance", "--model", fitted / "model.json",
             "--features", other, "--reps", dataset["reps"],
             "--max-pairs", 200, "--out", tmp_path / "x"]
        ) == 2


class TestCompare:
    def test_self_comparison(self, fitted, tmp_path):
        out = tmp_path / "cmp"
        assert run(
            ["compare", "--a", fitted / "model.json", "--b", fitted / "model.json",
             "--out", out]
        ) == 0
        payload = load_json(out / "comparison.json")
        assert payload["pairwise"]["frobenius"][0] == pytest.approx(0.0, abs=1e-12)

    def test_self_importance_tau_is_one(self, dataset, fitted, tmp_path):
        imp = tmp_path / "imp"
        assert run(
            ["importance", "--model", fitted / "model.json",
             "--features", dataset["features"], "--reps", dataset["reps"],
             "--n-perm", 3, "--max-pairs", 300, "--seed", 2, "--out", imp]
        ) == 0
        out = tmp_path / "cmp"
        assert run(
            ["compare", "--a", imp / "importance.json", "--b", imp / "importance.json",
             "--out", out]
        ) == 0
        payload = load_json(out / "comparison.json")
        assert payload["weighted_tau_importance"]["values"][0] == pytest.approx(1.0)

    def test_ground_truth_comparison(self, dataset, fitted, tmp_path):
        out = tmp_path / "cmp_gt"
        assert run(
            ["compare", "--a", fitted / "model.json", "--b", fitted / "model.json",
             "--ground-truth", dataset["truth"], "--out", out]
        ) == 0
        payload = load_json(out / "comparison.json")
        fro_a = payload["frobenius_to_ground_truth_a"]["values"][0]
        fro_b = payload["frobenius_to_ground_truth_b"]["values"][0]
        assert fro_a == pytest.approx(fro_b)
        assert fro_a > 0
        assert (out / "comparison.png").exists()

    def test_report_files_extract_fold_weights(self, fitted, tmp_path):
        out = tmp_path / "cmp_rep"
        assert run(
            ["compare", "--a", fitted / "report.json", "--b", fitted / "report.json",
             "--out", out]
        ) == 0
        payload = load_json(out / "comparison.json")
        assert payload["steps_a"]["values"] == payload["steps_b"]["values"]

    def test_mismatched_counts_exit_2(self, fitted, tmp_path):
        assert run(
            ["compare", "--a", fitted / "model.json", fitted / "model.json",
             "--b", fitted / "model.json", "--out", tmp_path / "x"]
        ) == 2

    def test_ground_truth_count_mismatch_exit_2(self, dataset, fitted, tmp_path):
        assert run(
            ["compare",
             "--a", fitted / "model.json", fitted / "model.json",
             "--b", fitted / "model.json", fitted / "model.json",
             "--ground-truth", dataset["truth"], dataset["truth"], dataset["truth"],
             "--out", tmp_path / "x"]
        ) == 2


class TestUnivariate:
    def test_unit_list_rows(self, dataset, tmp_path):
        out = tmp_path / "uni"
        assert run(
            ["univariate", "--features", dataset["features"], "--reps", dataset["reps"],
             "--units", "0,1", "--batch-size", 256, "--max-steps", 40,
             "--seed", 4, "--out", out]
        ) == 0
        lines = (out / "univariate.csv").read_text().strip().splitlines()
        assert lines[0] == "unit,test_spearman"
        assert len(lines) == 3
        payload = load_json(out / "univariate.json")
        assert [row["unit"] for row in payload["units"]] == [0, 1]
        assert (out / "univariate.png").exists()

    def test_d1_univariate_equals_multivariate(self, dataset, tmp_path):
        # collapse the representation to a single column
        from mlem.data import load_representations, write_representations_binary
        from mlem.data import RepresentationSet

        reps = load_representations(dataset["reps"])
        single = tmp_path / "one.bin"
        write_representations_binary(RepresentationSet(reps.matrix[:, :1].copy()), single)
        out = tmp_path / "uni1"
        assert run(
            ["univariate", "--features", dataset["features"], "--reps", single,
             "--units", "all", "--batch-size", 256, "--max-steps", 40,
             "--seed", 4, "--out", out]
        ) == 0
        payload = load_json(out / "univariate.json")
        assert len(payload["units"]) == 1
        assert payload["units"][0]["test_spearman"] == pytest.approx(
            payload["multivariate"]["test_spearman"], abs=1e-12
        )

    def test_unit_out_of_range_exits_2(self, dataset, tmp_path):
        assert run(
            ["univariate", "--features", dataset["features"], "--reps", dataset["reps"],
             "--units", "99", "--batch-size", 128, "--out", tmp_path / "x"]
        ) == 2


class TestFigures:
    def test_png_rendering_deterministic(self, fitted, tmp_path, dataset):
        args = [
            "fit", "--features", dataset["features"], "--reps", dataset["reps"],
            "--batch-size", 256, "--max-steps", 30, "--seed", 9,
        ]
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(args + ["--out", a]) == 0
        assert run(args + ["--out", b]) == 0
        assert (a / "trace.png").read_bytes() == (b / "trace.png").read_bytes()
