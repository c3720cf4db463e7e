import json

import pytest

from tmunfold.cli import fixture_path, run
from tmunfold.config import parse_config
from tmunfold.errors import ConfigReferenceError, ExprSyntaxError, SchemaError
from tmunfold.report import Report, emit_report

FIXTURES = ("cone_s1", "interval_double", "torus_rp2", "rotation_tube", "bad_morphism", "cone_stretch")

CONE = """
[space.cone]
radius = 1.0
stratum = {}
link = { l = [0, "2*pi", "periodic"] }

[chart.a]
space = "cone"
"""


def test_cone_fixture_loads(fixtures):
    cfg = fixtures("cone_s1")
    assert list(cfg.spaces) == ["cone"] and not cfg.morphisms
    assert cfg.params.samples == 1000 and cfg.params.seed == 42


@pytest.mark.parametrize("name", FIXTURES)
def test_every_fixture_loads(fixtures, name):
    assert fixtures(name).fixture["command"]


def test_missing_component_is_named():
    with pytest.raises(SchemaError) as exc:
        parse_config(CONE + '[morphism.m]\nsource = "cone"\ntarget = "cone"\na1 = []\na2 = ["l"]\n')
    assert "morphism.m" in str(exc.value) and "a3" in str(exc.value)


def test_unknown_chart_in_cocycle():
    with pytest.raises(ConfigReferenceError) as exc:
        parse_config(CONE + '[cocycle.a.gamma]\ng = ["l"]\ng_inv = ["l"]\n')
    assert "gamma" in str(exc.value)


def test_expression_errors_carry_their_location():
    with pytest.raises(ExprSyntaxError) as exc:
        parse_config(CONE + '[morphism.m]\nsource = "cone"\ntarget = "cone"\na1 = []\na2 = ["l +* 2"]\na3 = ["r"]\n')
    assert "morphism.m" in str(exc.value)


def test_bad_params():
    with pytest.raises(SchemaError):
        parse_config(CONE + "[params]\nsamples = 0\n")
    with pytest.raises(SchemaError):
        parse_config(CONE + "[bogus]\n")


def test_invalid_toml():
    with pytest.raises(SchemaError):
        parse_config("[space.cone\n")


def test_empty_report_passes():
    rep = Report()
    assert rep.passed
    assert json.loads(rep.to_json()) == {"checks": [], "verdict": "pass"}


def test_json_and_text_agree(tmp_path):
    rep = Report()
    rep.add("b.check", "x.anchor", False, 0.5, {"u": 1.0})
    rep.add("a.check", "x.anchor", True, 0.0)
    rep.add("c.proxy", "x.anchor", True, proxy=True)
    doc = json.loads(emit_report(rep, "json", tmp_path / "r.json"))
    text = emit_report(rep, "text", tmp_path / "r.txt")
    assert [c["name"] for c in doc["checks"]] == ["a.check", "b.check", "c.proxy"]
    assert doc["verdict"] == "fail" and doc["checks"][1]["witness"] == {"u": 1.0}
    for c in doc["checks"]:
        assert f"[{c['status'].upper():5}] {c['name']}" in text
    assert text.endswith("verdict: fail\n")


@pytest.mark.parametrize("name", FIXTURES)
def test_fixture_command(fixtures, name, tmp_path):
    fx = fixtures(name).fixture
    out = tmp_path / "r.json"
    argv = [fx["command"], "--config", f"fixture:{name}", *fx.get("args", []),
            "--samples", "150", "--format", "json", "--out", str(out)]
    assert run(argv) == fx["expect_exit"]
    doc = json.loads(out.read_text())
    if "expect_check" in fx:
        check = next(c for c in doc["checks"] if c["name"] == fx["expect_check"])
        assert check["status"] == "fail" and check["witness"]


def test_exit_code_on_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text(CONE + '[cocycle.a.gamma]\ng = ["l"]\ng_inv = ["l"]\n')
    assert run(["validate", "--config", str(bad)]) == 2
    assert "gamma" in capsys.readouterr().err
    assert run(["validate", "--config", str(tmp_path / "missing.toml")]) == 2


def test_unknown_selector_is_a_config_error():
    assert run(["unfold", "--config", "fixture:cone_s1", "--space", "nope"]) == 2


def test_proxies_are_labelled(tmp_path, caplog):
    out = tmp_path / "r.txt"
    assert run(["unfold", "--config", "fixture:cone_s1", "--samples", "50", "--out", str(out)]) == 0
    text = out.read_text()
    assert "[PROXY] unfold.properness[grid]" in text
    assert any("proxies" in r.message for r in caplog.records)


def test_cocycle_lifts_from_the_cli(tmp_path):
    out = tmp_path / "r.json"
    assert run(["lift", "--config", "fixture:rotation_tube", "--cocycles", "--samples", "100",
                "--format", "json", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    parity = [c for c in doc["checks"] if c["name"].startswith("lift.parity[")]
    assert parity and all("OddA3" in c["detail"] for c in parity)


def test_export_from_the_cli(tmp_path):
    out = tmp_path / "p.csv"
    assert run(["export", "--config", "fixture:cone_s1", "--samples", "10", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 11


def test_fixture_path_points_into_the_package():
    assert fixture_path("cone_s1").is_file()
