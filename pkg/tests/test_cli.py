import json

import pytest

from daeloc.cli import main, parse_grid, parse_portions


@pytest.fixture(scope="module")
def scenario_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("scenario") / "small.json"
    path.write_text(json.dumps({"n_messages": 400}))
    return str(path)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, scenario_file):
    out = tmp_path_factory.mktemp("run")
    rc = main(["run", "--synth", scenario_file, "--seed", "11",
               "--trees", "10", "--k", "4", "--out", str(out)])
    assert rc == 0
    return out


class TestParsers:
    def test_parse_grid(self):
        assert parse_grid("0.1:0.9:0.1") == tuple(round(0.1 * i, 10) for i in range(1, 10))
        assert parse_grid("0.5:0.5:0.1") == (0.5,)

    def test_parse_grid_rejects_bad_input(self):
        with pytest.raises(ValueError):
            parse_grid("0.5:0.1:0.1")
        with pytest.raises(ValueError):
            parse_grid("0.1:0.9:0")
        with pytest.raises(ValueError):
            parse_grid("0.1,0.9")

    def test_parse_portions_list(self):
        assert parse_portions("0.5, 0.1, 1.0") == (0.1, 0.5, 1.0)
        assert parse_portions("0.2:0.6:0.2") == (0.2, 0.4, 0.6)


class TestRun:
    def test_artifacts_written(self, run_dir):
        for name in ("summary.json", "estimates.csv", "selection.csv", "clusters.csv",
                     "centers.csv", "correlations.json", "split.json", "manifest.json"):
            assert (run_dir / name).exists(), name
        summary = json.loads((run_dir / "summary.json").read_text())
        assert set(summary) >= {"validation", "test", "selection", "clusters", "counts"}
        assert summary["counts"]["validation"] == summary["counts"]["test"]

    def test_manifest_contents(self, run_dir):
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert manifest["seed"] == 11
        assert manifest["config"]["trees"] == 10
        assert "out" not in manifest["config"]
        assert manifest["dataset"]["records"] <= manifest["dataset"]["ingested_records"]
        assert len(manifest["dataset"]["sha256"]) == 64
        on_disk = {p.name for p in run_dir.iterdir()}
        assert set(manifest["artifacts"]) <= on_disk

    def test_byte_identical_reruns(self, run_dir, scenario_file, tmp_path):
        out2 = tmp_path / "again"
        rc = main(["run", "--synth", scenario_file, "--seed", "11",
                   "--trees", "10", "--k", "4", "--out", str(out2)])
        assert rc == 0
        for name in ("summary.json", "manifest.json", "estimates.csv", "selection.csv"):
            assert (out2 / name).read_bytes() == (run_dir / name).read_bytes(), name

    def test_different_seed_changes_results(self, run_dir, scenario_file, tmp_path):
        out2 = tmp_path / "other-seed"
        rc = main(["run", "--synth", scenario_file, "--seed", "12",
                   "--trees", "10", "--k", "4", "--out", str(out2)])
        assert rc == 0
        assert (out2 / "summary.json").read_bytes() != (run_dir / "summary.json").read_bytes()

    def test_sweep_grid_row_count(self, scenario_file, tmp_path):
        small = tmp_path / "tiny.json"
        small.write_text(json.dumps({"n_messages": 250}))
        out = tmp_path / "sweep-run"
        rc = main(["run", "--synth", str(small), "--seed", "5", "--trees", "4",
                   "--k", "3", "--sweep", "0.1:0.9:0.1", "--out", str(out)])
        assert rc == 0
        lines = (out / "sweep.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 9

    def test_config_file_with_flag_override(self, scenario_file, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({
            "synth": scenario_file, "seed": 11, "trees": 5, "k": 4,
        }))
        out = tmp_path / "cfg-run"
        rc = main(["run", "--config", str(cfg_path), "--trees", "10", "--out", str(out)])
        assert rc == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["trees"] == 10


class TestErrors:
    def test_partial_outputs_removed_on_failure(self, scenario_file, tmp_path, monkeypatch):
        import daeloc.experiment as experiment

        def boom(assignment, path):
            raise ValueError("disk full")

        monkeypatch.setattr(experiment, "write_centers_csv", boom)
        out = tmp_path / "broken"
        rc = main(["run", "--synth", scenario_file, "--seed", "11",
                   "--trees", "4", "--k", "3", "--out", str(out)])
        assert rc == 1
        # Everything written before the failure must be cleaned up again.
        assert not any(out.iterdir())

    def test_missing_seed(self, scenario_file, capsys):
        rc = main(["run", "--synth", scenario_file, "--out", "unused"])
        assert rc == 1
        assert "seed" in capsys.readouterr().err

    def test_dataset_and_synth_conflict(self, scenario_file, tmp_path, capsys):
        csv = tmp_path / "d.csv"
        csv.write_text("lat,lon,rss_0\n")
        rc = main(["run", "--dataset", str(csv), "--synth", scenario_file,
                   "--seed", "1", "--out", str(tmp_path / "x")])
        assert rc == 1

    def test_nonexistent_dataset(self, tmp_path, capsys):
        rc = main(["run", "--dataset", str(tmp_path / "missing.csv"),
                   "--seed", "1", "--out", str(tmp_path / "x")])
        assert rc == 1
        assert "not found" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"seeed": 1}')
        rc = main(["run", "--config", str(bad), "--out", str(tmp_path / "x")])
        assert rc == 1
        assert "unknown config" in capsys.readouterr().err

    def test_bad_sweep_grid(self, scenario_file, tmp_path):
        rc = main(["run", "--synth", scenario_file, "--seed", "1",
                   "--sweep", "0.9:0.1:0.1", "--out", str(tmp_path / "x")])
        assert rc == 1


class TestSubcommands:
    def test_synth_then_ingest_check(self, tmp_path, capsys):
        csv = tmp_path / "synth.csv"
        scenario = tmp_path / "s.json"
        scenario.write_text(json.dumps({"n_messages": 120}))
        assert main(["synth", "--scenario", str(scenario), "--seed", "2",
                     "--out", str(csv)]) == 0
        assert csv.exists()
        assert main(["ingest-check", "--dataset", str(csv), "--min-rx", "3"]) == 0
        out = capsys.readouterr().out
        assert "ingested 120 records" in out
        assert "min_rx=3" in out

    def test_synth_file_matches_internal_generation(self, tmp_path, scenario_file):
        # Training from the written CSV must equal training from --synth with
        # the same seed: the CSV round-trip is bit-exact and the child seed
        # derivation is shared.
        csv = tmp_path / "synth.csv"
        assert main(["synth", "--scenario", scenario_file, "--seed", "11",
                     "--out", str(csv)]) == 0
        out_file = tmp_path / "from-file"
        out_synth = tmp_path / "from-synth"
        common = ["--seed", "11", "--trees", "6", "--k", "3"]
        assert main(["run", "--dataset", str(csv), *common, "--out", str(out_file)]) == 0
        assert main(["run", "--synth", scenario_file, *common, "--out", str(out_synth)]) == 0
        a = json.loads((out_file / "manifest.json").read_text())
        b = json.loads((out_synth / "manifest.json").read_text())
        assert a["dataset"]["sha256"] == b["dataset"]["sha256"]
        assert (out_file / "estimates.csv").read_bytes() == (out_synth / "estimates.csv").read_bytes()

    def test_split_sizes(self, tmp_path, scenario_file):
        out = tmp_path / "split.json"
        assert main(["split", "--synth", scenario_file, "--seed", "3",
                     "--out", str(out)]) == 0
        payload = json.loads(out.read_text())
        n = payload["n_records"]
        assert len(payload["validation"]) == round(0.15 * n)
        assert len(payload["test"]) == round(0.15 * n)
        assert len(payload["train_pos"]) + len(payload["train_dae"]) == n - 2 * round(0.15 * n)

    def test_train_then_eval(self, tmp_path, scenario_file):
        models = tmp_path / "models"
        assert main(["train", "--synth", scenario_file, "--seed", "4",
                     "--trees", "8", "--out", str(models)]) == 0
        for name in ("split.json", "pos_model.npz", "dae_model.npz"):
            assert (models / name).exists()
        out = tmp_path / "eval"
        assert main(["eval", "--synth", scenario_file, "--seed", "4",
                     "--models", str(models), "--on", "test", "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["set"] == "test"
        assert summary["pos_mean_m"] > 0

    def test_eval_rejects_mismatched_dataset(self, tmp_path, scenario_file):
        models = tmp_path / "models2"
        assert main(["train", "--synth", scenario_file, "--seed", "6",
                     "--trees", "4", "--out", str(models)]) == 0
        # Different seed regenerates a different dataset: hash must mismatch.
        rc = main(["eval", "--synth", scenario_file, "--seed", "7",
                   "--models", str(models), "--out", str(tmp_path / "bad-eval")])
        assert rc == 1

    def test_select_from_estimates(self, run_dir, tmp_path):
        out = tmp_path / "select"
        assert main(["select", "--estimates", str(run_dir / "estimates.csv"),
                     "--portions", "0.25,0.5,1.0", "--out", str(out)]) == 0
        lines = (out / "selection.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 3

    def test_cluster_from_estimates(self, run_dir, scenario_file, tmp_path):
        out = tmp_path / "cluster"
        assert main(["cluster", "--synth", scenario_file, "--seed", "11",
                     "--estimates", str(run_dir / "estimates.csv"),
                     "--k", "4", "--out", str(out)]) == 0
        lines = (out / "clusters.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 4
        assert (out / "centers.csv").exists()
        assert (out / "correlations.json").exists()

    def test_report_bundle(self, run_dir):
        assert main(["report", "--dir", str(run_dir)]) == 0
        bundle = json.loads((run_dir / "report.json").read_text())
        assert {"summary", "manifest", "selection", "clusters", "centers"} <= set(bundle)
        assert bundle["selection"]["portion"]

    def test_report_empty_dir(self, tmp_path, capsys):
        rc = main(["report", "--dir", str(tmp_path)])
        assert rc == 1
