"""End-to-end tests of the command-line interface."""

import json

from gridkrig.cli import EXIT_CHECK, EXIT_OK, EXIT_VALIDATION, main


def write_config(tmp_path, doc):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return str(path)


BASE = {
    "model": {"family": "tpl", "theta": 5.0},
    "study": {"j_train": 3, "d": 6, "n_eval": 441, "reps": 6, "seed": 7},
}


class TestBasicCommands:
    def test_simulate_writes_field(self, tmp_path):
        cfg = write_config(tmp_path, BASE)
        rc = main(["--config", cfg, "--out", str(tmp_path), "--seed", "3", "simulate"])
        assert rc == EXIT_OK
        rows = (tmp_path / "field.csv").read_text().splitlines()
        assert rows[0] == "index,x,y,value"
        assert len(rows) == 1 + 81

    def test_estimate_writes_covariance(self, tmp_path):
        cfg = write_config(tmp_path, BASE)
        rc = main(["--config", cfg, "--out", str(tmp_path), "estimate"])
        assert rc == EXIT_OK
        assert (tmp_path / "covariance.csv").exists()

    def test_krige_surface(self, tmp_path):
        cfg = write_config(tmp_path, BASE)
        rc = main(["--config", cfg, "--out", str(tmp_path), "krige", "--empirical"])
        assert rc == EXIT_OK
        rows = (tmp_path / "prediction.csv").read_text().splitlines()
        assert rows[0] == "x,y,prediction"
        assert len(rows) == 1 + 441

    def test_ingest_check(self, tmp_path, capsys):
        from gridkrig import CovModel
        from gridkrig.harness import write_synthetic_dataset

        data = tmp_path / "days.csv"
        write_synthetic_dataset(str(data), CovModel("tpl", theta=0.3), 2, days=2, seed=4)
        rc = main(["ingest-check", str(data)])
        assert rc == EXIT_OK
        assert "25 sites, 2 day(s)" in capsys.readouterr().out


class TestStudyCommands:
    def test_replicate_outputs_and_check_pass(self, tmp_path):
        doc = dict(BASE)
        doc["check"] = {"expected_theoretical": 0.93, "expected_empirical": 0.95,
                        "tolerance": 0.5, "max_gap": 0.5}
        cfg = write_config(tmp_path, doc)
        rc = main(["--config", cfg, "--out", str(tmp_path), "--check",
                   "study", "replicate"])
        assert rc == EXIT_OK
        assert (tmp_path / "amse.csv").exists()
        assert (tmp_path / "report.json").exists()
        payload = json.loads((tmp_path / "report.json").read_text())
        assert payload["summary"]["replications"] == 6

    def test_replicate_check_breach(self, tmp_path):
        doc = dict(BASE)
        doc["check"] = {"expected_theoretical": 0.0, "tolerance": 0.01}
        cfg = write_config(tmp_path, doc)
        rc = main(["--config", cfg, "--out", str(tmp_path), "--check",
                   "study", "replicate"])
        assert rc == EXIT_CHECK

    def test_theta_sweep_outputs(self, tmp_path):
        doc = {"model": {"family": "tpl", "theta": 5.0},
               "study": {"j_train": 3, "d": 6, "n_eval": 441, "reps": 4, "seed": 7,
                         "theta_sweep": [2.5, 5.0]},
               "check": {"tolerance": 0.5, "max_gap": 0.5,
                         "targets": {"2.5": {"expected_theoretical": 0.99},
                                     "5": {"expected_theoretical": 0.95}}}}
        cfg = write_config(tmp_path, doc)
        rc = main(["--config", cfg, "--out", str(tmp_path), "--check",
                   "study", "replicate"])
        assert rc == EXIT_OK
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert len(lines) == 3 and lines[0].startswith("theta,")

    def test_map_outputs(self, tmp_path):
        cfg = write_config(tmp_path, BASE)
        rc = main(["--config", cfg, "--out", str(tmp_path), "study", "map"])
        assert rc == EXIT_OK
        assert (tmp_path / "mse_map.pgm").exists()
        assert (tmp_path / "mse_map.csv").exists()

    def test_converge(self, tmp_path):
        doc = dict(BASE)
        doc["converge"] = {"j_values": [2, 3, 4], "reps": 100, "excess_reps": 6,
                           "n_eval": 121}
        cfg = write_config(tmp_path, doc)
        rc = main(["--config", cfg, "--out", str(tmp_path), "study", "converge"])
        assert rc == EXIT_OK
        payload = json.loads((tmp_path / "convergence.json").read_text())
        assert len(payload["records"]) == 3

    def test_distcheck(self, tmp_path):
        doc = {"model": {"family": "tpl", "theta": 5.0, "theta_units": "train_cells"},
               "study": {"j_train": 2, "seed": 5},
               "distcheck": {"j": 2, "reps_moments": 300, "reps_ks": 600}}
        cfg = write_config(tmp_path, doc)
        rc = main(["--config", cfg, "--out", str(tmp_path), "study", "distcheck"])
        assert rc == EXIT_OK

    def test_realdata(self, tmp_path):
        from gridkrig import CovModel
        from gridkrig.harness import write_synthetic_dataset

        model = CovModel("tpl", theta=0.3)
        train, test = tmp_path / "train.csv", tmp_path / "test.csv"
        write_synthetic_dataset(str(train), model, 3, days=2, seed=1, offset=4.0)
        write_synthetic_dataset(str(test), model, 3, days=2, seed=2, offset=4.0)
        doc = {"realdata": {"j_sub": 3, "d": 6, "with_parametric": False}}
        cfg = write_config(tmp_path, doc)
        rc = main(["--config", cfg, "--out", str(tmp_path), "study", "realdata",
                   "--train-file", str(train), "--test-file", str(test)])
        assert rc == EXIT_OK
        assert (tmp_path / "realdata.json").exists()


class TestErrorPaths:
    def test_validation_exit_code(self, tmp_path):
        cfg = write_config(tmp_path, {"model": {"family": "nope", "theta": 1}})
        rc = main(["--config", cfg, "--out", str(tmp_path), "study", "replicate"])
        assert rc == EXIT_VALIDATION

    def test_missing_realdata_file(self, tmp_path):
        cfg = write_config(tmp_path, {})
        rc = main(["--config", cfg, "study", "realdata"])
        assert rc == EXIT_VALIDATION

    def test_toml_config(self, tmp_path):
        path = tmp_path / "config.toml"
        path.write_text(
            "[model]\nfamily = 'tpl'\ntheta = 5.0\n\n"
            "[study]\nj_train = 2\nd = 5\nn_eval = 121\nreps = 3\nseed = 7\n"
        )
        rc = main(["--config", str(path), "--out", str(tmp_path), "study", "replicate"])
        assert rc == EXIT_OK
