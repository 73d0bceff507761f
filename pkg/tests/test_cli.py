import json

import pytest

from budtrial import cli
from budtrial import config as cfgmod


def smoke(tmp_path, **changes):
    d = cfgmod.read_json(cfgmod.preset_path("smoke"))
    d.update(changes)
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(d))
    return path


class TestValidate:
    @pytest.mark.parametrize("name", cfgmod.preset_names())
    def test_presets_valid(self, name, capsys):
        assert cli.main(["validate", "--config", name]) == 0
        assert "valid" in capsys.readouterr().out

    def test_probability_out_of_range(self, tmp_path, capsys):
        path = smoke(tmp_path, truth=[0.4, 1.2, 0.4])
        assert cli.main(["validate", "--config", str(path)]) == 1
        assert "truth/1" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path, capsys):
        path = smoke(tmp_path, colour="blue")
        assert cli.main(["validate", "--config", str(path)]) == 1
        assert "colour" in capsys.readouterr().err

    def test_target_out_of_range(self, tmp_path, capsys):
        d = cfgmod.read_json(cfgmod.preset_path("table3_scenario2"))
        d["biomarker"]["targets"] = [1, 2, 3, 7]
        path = tmp_path / "b.json"
        path.write_text(json.dumps(d))
        assert cli.main(["validate", "--config", str(path)]) == 1
        assert "biomarker/targets/3" in capsys.readouterr().err

    def test_malformed_json(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{"name": "x",\n  "T": }')
        assert cli.main(["validate", "--config", str(path)]) == 1
        assert "line 2" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        assert cli.main(["validate", "--config", str(tmp_path / "nope.json")]) == 1
        assert "cannot read" in capsys.readouterr().err

    def test_inconsistent_arm_counts(self, tmp_path, capsys):
        path = smoke(tmp_path, designs=[{"kind": "OracleFixed", "allocation": [30, 30]}])
        assert cli.main(["validate", "--config", str(path)]) == 1
        assert "designs/0/allocation" in capsys.readouterr().err


class TestSimulate:
    def test_smoke_outputs(self, tmp_path):
        out = tmp_path / "out"
        assert cli.main(["simulate", "--config", "smoke", "--reps", "10", "--out", str(out)]) == 0
        for name in ("report.csv", "report.json", "config.json", "manifest.json"):
            assert (out / name).exists()
        man = json.loads((out / "manifest.json").read_text())
        assert man["subcommand"] == "simulate"
        assert json.loads((out / "config.json").read_text())["replications"] == 10

    def test_workers_identical_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        cli.main(["simulate", "--config", "smoke", "--reps", "30", "--workers", "1", "--out", str(a)])
        cli.main(["simulate", "--config", "smoke", "--reps", "30", "--workers", "2", "--out", str(b)])
        assert (a / "report.csv").read_bytes() == (b / "report.csv").read_bytes()

    def test_manifest_round_trip(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        cli.main(["simulate", "--config", "smoke", "--reps", "12", "--seed", "99", "--h", "2", "--out", str(a)])
        cli.main(["simulate", "--config", str(a / "config.json"), "--out", str(b)])
        assert (a / "report.csv").read_bytes() == (b / "report.csv").read_bytes()
        ma = json.loads((a / "manifest.json").read_text())
        mb = json.loads((b / "manifest.json").read_text())
        assert ma["config_sha256"] == mb["config_sha256"] and mb["seed"] == 99

    def test_unwritable_output(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert cli.main(["simulate", "--config", "smoke", "--reps", "2", "--out", str(blocker / "sub")]) == 1
        assert str(blocker) in capsys.readouterr().err


class TestOtherCommands:
    def test_regret(self, tmp_path):
        assert cli.main(["regret", "--config", "smoke", "--reps", "10", "--T", "0", "10", "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "regret.csv").read_text().splitlines()
        assert lines[0] == "T,design,regret,se,oracle"
        assert len(lines) == 1 + 2 * 2

    def test_bi(self, tmp_path):
        assert cli.main(["bi", "--config", "bi_best_arm", "--T", "4", "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "bi.csv").read_text().splitlines()
        assert lines[0].startswith("T,design,value,optimal,regret")

    def test_oracle(self, tmp_path):
        assert cli.main(["oracle", "--config", "smoke", "--out", str(tmp_path)]) == 0
        rows = (tmp_path / "oracle.csv").read_text().splitlines()[1:]
        assert sum(int(r.split(",")[2]) for r in rows) == 60

    def test_limits(self, tmp_path):
        assert cli.main(["limits", "--config", "normal_unequal_variances", "--out", str(tmp_path)]) == 0
        rows = [r.split(",") for r in (tmp_path / "limits.csv").read_text().splitlines()[1:]]
        assert abs(float(rows[0][4]) - 43.65) < 0.1

    def test_regret_rejects_best_arm(self, tmp_path, capsys):
        assert cli.main(["regret", "--config", "table2_scenario2", "--out", str(tmp_path)]) == 1
        assert "family" in capsys.readouterr().err

    def test_presets_listing(self, capsys):
        assert cli.main(["presets"]) == 0
        assert "smoke" in capsys.readouterr().out

    def test_unknown_preset(self, capsys):
        assert cli.main(["presets", "nothing"]) == 1
        assert "unknown preset" in capsys.readouterr().err
