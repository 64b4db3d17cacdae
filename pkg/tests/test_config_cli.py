import json

import pytest

from sstlab import cli
from sstlab.errors import ConfigError
from sstlab.state_space import ExponentialRates, GeometricRates
from sstlab.state_space.config import parse_model

F1_TOML = '[rates]\nfamily = "exponential"\nbase = 2.0\n'
F2_TOML = '[rates]\nfamily = "geometric"\nbase = 1.0\nratio = 2.0\n'
STAR_TOML = ('[graph]\nbranches = [{family = "exponential", base = 2.0}, '
             '{family = "geometric"}, {family = "exponential"}]\n')


@pytest.fixture
def models(tmp_path):
    out = {}
    for name, text in [("f1", F1_TOML), ("f2", F2_TOML), ("star", STAR_TOML),
                       ("transient", '[rates]\nfamily = "geometric"\nratio = 0.5\n'),
                       ("broken", '[rates]\nfamily = "geometric"\nratio = \n')]:
        p = tmp_path / f"{name}.toml"
        p.write_text(text)
        out[name] = str(p)
    return out


def test_parse_families():
    assert isinstance(parse_model(F1_TOML).rates, ExponentialRates)
    mc = parse_model(F2_TOML)
    assert isinstance(mc.rates, GeometricRates) and mc.kind == "line"
    star = parse_model(STAR_TOML)
    assert star.kind == "graph" and star.graph.n_branches == 3


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError) as e:
        parse_model('[rates]\nfamily = "geometric"\nbase = 1.0\nratoi = 2.0\n', "m.toml")
    assert e.value.line == 4 and "m.toml" in str(e.value)


def test_bad_value_reports_line():
    with pytest.raises(ConfigError) as e:
        parse_model('[rates]\nfamily = "exponential"\nbase = -1.0\n')
    assert e.value.line == 3


def test_syntax_error_is_config_error(models):
    with pytest.raises(ConfigError) as e:
        parse_model(open(models["broken"]).read())
    assert e.value.line == 3


def test_exit_codes(models, tmp_path, capsys):
    out = str(tmp_path / "o")
    assert cli.main(["criterion", "--model", models["f1"], "--out", out]) == 0
    assert cli.main(["criterion", "--model", models["transient"], "--out", out]) == 2
    assert cli.main(["criterion", "--model", models["broken"], "--out", out]) == 3
    assert cli.main(["sst", "--model", models["f1"], "--trials", "0", "--out", out]) == 3
    with pytest.raises(SystemExit) as e:
        cli.main(["sst", "--model", models["f1"], "--trials", "many"])
    assert e.value.code == 3


def test_failed_tolerance_exit_code(models, tmp_path, monkeypatch):
    args = ["duality-check", "--model", models["f2"], "--window", "4", "--out", str(tmp_path)]
    assert cli.main(args) == 0
    monkeypatch.setattr(cli, "RESIDUAL_TOL", 0.0)
    assert cli.main(args) == 1


def test_flagged_model_warns(models, tmp_path, capsys):
    assert cli.main(["criterion", "--model", models["f1"], "--out", str(tmp_path)]) == 0
    captured = capsys.readouterr()
    assert "flagged" in captured.err
    d = json.loads((tmp_path / "criterion-seed0.json").read_text())
    assert d["verdict"] == "Converges" and d["flagged"] is True


def test_artifact_names_and_determinism(models, tmp_path):
    base = ["simulate-dual", "--model", models["star"], "--trials", "50", "--horizon", "50",
            "--seed", "7"]
    assert cli.main(base + ["--out", str(tmp_path / "a"), "--threads", "1"]) == 0
    assert cli.main(base + ["--out", str(tmp_path / "b"), "--threads", "3"]) == 0
    for ext in ("csv", "json"):
        a = (tmp_path / "a" / f"simulate-dual-seed7.{ext}").read_bytes()
        b = (tmp_path / "b" / f"simulate-dual-seed7.{ext}").read_bytes()
        assert a == b
    d = json.loads((tmp_path / "a" / "simulate-dual-seed7.json").read_text())
    assert d["delta_counts"][1] == 0


def test_separation_and_start_parsing(models, tmp_path):
    assert cli.main(["separation", "--model", models["f2"], "--start", "point:0",
                     "--t-grid", "0.5,1", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "separation-seed0.csv").read_text().startswith("# schema")
    assert cli.main(["separation", "--model", models["f2"], "--start", "bogus",
                     "--out", str(tmp_path)]) == 3
    # window too small for the tail bound
    assert cli.main(["separation", "--model", models["f1"], "--start", "point:0",
                     "--window", "10", "--out", str(tmp_path)]) == 3
