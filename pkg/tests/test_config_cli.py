import csv
import json
from importlib import resources

import numpy as np
import pytest

from pslambda.cli import EXIT_CONFIG, EXIT_HYPOTHESIS, main
from pslambda.config import build_system, load_config, parse_config
from pslambda.errors import ConfigError

DATA = resources.files("pslambda") / "data"


def bundled(name):
    return str(DATA / name)


def last_row(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[-1]


def simulate_cfg(**exp):
    base = {"system": {"builtin": "example1"},
            "experiment": {"kind": "simulate", "x0": [0.3, -0.7], "duration": 2.0}}
    base["experiment"].update(exp)
    return base


class TestConfig:
    def test_unknown_key_reports_path(self):
        data = simulate_cfg()
        data["experiment"]["x_0"] = [0, 0]
        with pytest.raises(ConfigError) as exc:
            parse_config(data)
        errs = exc.value.details["errors"]
        assert any(e["key"] == "x_0" and e["path"].startswith("experiment") for e in errs)

    def test_negative_tolerance_rejected(self):
        data = simulate_cfg()
        data["controls"] = {"rtol": -1e-9}
        with pytest.raises(ConfigError) as exc:
            parse_config(data)
        assert exc.value.details["errors"][0]["path"] == "controls.rtol"

    def test_negative_epsilon_rejected(self):
        data = json.loads((DATA / "tier_b_poincare.json").read_text())
        data["extension"]["epsilon"] = [0.0, -0.05]
        with pytest.raises(ConfigError):
            parse_config(data)

    def test_system_and_builtin_are_exclusive(self):
        data = simulate_cfg()
        data["system"]["components"] = [{"kind": "constant", "value": [1.0, 0.0]}]
        with pytest.raises(ConfigError):
            parse_config(data)

    def test_toml_and_json_describe_the_same_system(self):
        a = build_system(load_config(bundled("example1_simulate.toml")).system)
        b = build_system(load_config(bundled("example1_simulate.json")).system)
        for x in ([0.2, -0.3], [0.1, 0.4]):
            np.testing.assert_array_equal(a.components[a.component_at(x)](x), b.components[b.component_at(x)](x))

    def test_malformed_file(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(p)

    @pytest.mark.parametrize("name", sorted(p.name for p in DATA.iterdir() if p.suffix in (".json", ".toml")))
    def test_bundled_configs_validate(self, name):
        load_config(bundled(name))


class TestCli:
    def test_simulate_endpoint(self, tmp_path, capsys):
        assert main(["simulate", "--config", bundled("example1_simulate.json"), "--out", str(tmp_path)]) == 0
        header, row = last_row(tmp_path / "trajectory.csv")
        assert header == ["t", "x0", "x1", "arc"]
        # y <= 0 and t >= -y: (x - y, t + y)
        np.testing.assert_allclose([float(row[1]), float(row[2])], [1.0, 1.3], atol=1e-9)
        events = json.loads((tmp_path / "events.json").read_text())
        assert len(events["events"]) == 1
        json.loads(capsys.readouterr().out)

    def test_byte_identical_reruns(self, tmp_path):
        for d in ("a", "b"):
            assert main(["simulate", "--config", bundled("example1_simulate.toml"), "--out", str(tmp_path / d)]) == 0
        for name in ("trajectory.csv", "events.json", "run.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_wrong_subcommand_is_config_error(self, tmp_path, capsys):
        code = main(["poincare", "--config", bundled("example1_simulate.json"), "--out", str(tmp_path)])
        assert code == EXIT_CONFIG
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "config"
        assert json.loads((tmp_path / "error.json").read_text())["command"] == "poincare"

    def test_undefined_orbits_are_flagged(self, tmp_path, capsys):
        cfg = {"system": {"dim": 2, "regions": {"-": 0, "+": 1},
                          "components": [{"kind": "constant", "value": [0.0, 1.0]},
                                         {"kind": "constant", "value": [0.0, -1.0]}],
                          "surfaces": [{"kind": "coordinate", "axis": 1, "value": 0.0}]},
               "experiment": {"kind": "lambda-set", "depth": 2, "box": [[-1, -1], [1, 1]],
                              "resolution": [3, 3], "duration": 1.0}}
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(cfg))
        code = main(["lambda-set", "--config", str(p), "--out", str(tmp_path / "o")])
        # the sliding system leaves orbits undefined; they are flagged, not fatal
        assert code == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["run"]["flagged"] > 0

    def test_hypothesis_violation_exit_code(self, tmp_path, capsys):
        data = json.loads((DATA / "linear_saddle_lambda_verify.json").read_text())
        data["experiment"]["convergence"]["delta"]["direction"] = [0.0, 1.0]
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(data))
        code = main(["lambda-verify", "--config", str(p), "--out", str(tmp_path / "o")])
        assert code == EXIT_HYPOTHESIS
        rep = json.loads(capsys.readouterr().err)
        assert rep["error"] == "hypothesis-violation" and "transvers" in rep["hypothesis"]

    def test_env_overrides(self, tmp_path, monkeypatch):
        monkeypatch.setenv("PSLAMBDA_OUT", str(tmp_path / "env"))
        monkeypatch.setenv("PSLAMBDA_THREADS", "2")
        assert main(["simulate", "--config", bundled("example1_simulate.json")]) == 0
        assert (tmp_path / "env" / "trajectory.csv").exists()
        assert main(["simulate", "--config", bundled("example1_simulate.json"), "--out", str(tmp_path / "flag")]) == 0
        assert (tmp_path / "flag" / "trajectory.csv").exists()

    def test_bad_thread_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("PSLAMBDA_THREADS", "zero")
        assert main(["simulate", "--config", bundled("example1_simulate.json"), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_linear_lambda_verify(self, tmp_path):
        assert main(["lambda-verify", "--config", bundled("linear_saddle_lambda_verify.json"),
                     "--out", str(tmp_path), "--seed", "7"]) == 0
        bounds = json.loads((tmp_path / "bounds.json").read_text())
        assert bounds["failures"] == 0
        conv = json.loads((tmp_path / "convergence.json").read_text())
        assert conv["tables"][0]["n2"] == 15

    def test_linear_lambda_set(self, tmp_path):
        assert main(["lambda-set", "--config", bundled("linear_saddle_lambda_set.json"), "--out", str(tmp_path)]) == 0
        with open(tmp_path / "lambda_set.csv") as fh:
            rows = list(csv.DictReader(fh))
        xs = {round(float(r["x"]), 3) for r in rows if r["level"] != "-1"}
        assert {1.0, 0.5, 0.25, 0.125} <= xs

    def test_unforced_intersect_finds_nothing_spurious(self, tmp_path):
        assert main(["intersect", "--config", bundled("tier_b_intersect_unforced.json"), "--out", str(tmp_path)]) == 0
        out = json.loads((tmp_path / "intersections.json").read_text())
        for hit in out["intersections"]:
            assert np.linalg.norm(hit["q"]) > 1e-3
