import json

import pytest

from ddrs.binsim import WeekConfig
from ddrs.exceptions import ConfigError, ScenarioParseError
from ddrs.scenario import (AimdParams, DdrsParams, bundled_scenarios, load_curves, load_scenario,
                           scenario_from_dict)

EXPECTED = {"fig3", "fig3a", "fig3b", "fig3c", "fig3d", "fig5", "fig6", "fig7", "fig9"}


def test_bundled_scenarios_present_and_valid():
    names = set(bundled_scenarios())
    assert EXPECTED <= names
    for name in names:
        sc = load_scenario(name)
        assert sc.name == name
        assert sc.output_dir == f"results/{name}"


def test_kinds_of_bundled_scenarios():
    kinds = {n: load_scenario(n).kind for n in EXPECTED}
    assert kinds["fig5"] == "sweep" and kinds["fig6"] == kinds["fig7"] == "aimd" and kinds["fig9"] == "ddrs"
    assert all(kinds[f"fig3{x}"] == "bins" for x in "abcd")
    assert load_scenario("fig3").params.strategies() == [
        "unsupervised", "centralised", "decentralised(a=1)", "decentralised(a=8)"]


@pytest.mark.parametrize("name", sorted(EXPECTED))
def test_round_trip(name, tmp_path):
    sc = load_scenario(name)
    echoed = sc.to_dict()
    again = scenario_from_dict(json.loads(json.dumps(echoed)))
    assert again == sc
    path = tmp_path / "echo.scenario"
    path.write_text(json.dumps(echoed))  # JSON is valid YAML
    assert load_scenario(path) == sc


def test_defaults_are_filled_in():
    sc = scenario_from_dict({"kind": "ddrs", "params": {"target_rate": 0.6}})
    assert isinstance(sc.params, DdrsParams)
    assert sc.params.pi.target_rate == 0.6
    assert sc.params.cups_per_day == 900.0
    assert sc.to_dict()["params"]["pi"]["kp"] == 5.0


def test_flat_aimd_keys():
    sc = scenario_from_dict({"kind": "aimd", "params": {"alpha": 0.02, "aimd": {"beta": 0.9}}})
    assert isinstance(sc.params, AimdParams)
    assert sc.params.aimd.alpha == 0.02 and sc.params.aimd.beta == 0.9


@pytest.mark.parametrize("data,path", [
    ({"kind": "bins", "params": {"bins": {"cap": 3}}}, "params.bins.cap"),
    ({"kind": "bins", "params": {"bins": {"capacity": 0}}}, "params.bins.capacity"),
    ({"kind": "ddrs", "params": {"pi": {"kp": "fast"}}}, "params.pi.kp"),
    ({"kind": "ddrs", "params": {"curves": [{"p0": 0.95, "x90": 1}]}}, "params.curves[0]"),
    ({"kind": "ddrs", "params": {"curves": [{"p0": 0.1}]}}, "params.curves[0].x90"),
    ({"kind": "sweep", "params": {"step": -1}}, "params.step"),
    ({"kind": "solve", "extra": 1}, "extra"),
    ({"kind": "teleport"}, "kind"),
    ({"kind": "solve", "seed": -3}, "seed"),
    ({"kind": "aimd", "params": {"max_iter": 2.5}}, "params.aimd.max_iter"),
])
def test_validation_reports_key_path(data, path):
    with pytest.raises(ConfigError) as exc:
        scenario_from_dict(data)
    assert exc.value.path == path
    assert not isinstance(exc.value, ScenarioParseError)


def test_parse_errors(tmp_path):
    empty = tmp_path / "empty.scenario"
    empty.write_text("")
    with pytest.raises(ScenarioParseError):
        load_scenario(empty)
    broken = tmp_path / "broken.scenario"
    broken.write_text("kind: [unclosed\n")
    with pytest.raises(ScenarioParseError):
        load_scenario(broken)
    scalar = tmp_path / "scalar.scenario"
    scalar.write_text("42\n")
    with pytest.raises(ScenarioParseError):
        load_scenario(scalar)
    with pytest.raises(ScenarioParseError):
        load_scenario(tmp_path / "missing.scenario")


def test_load_curves(tmp_path):
    p = tmp_path / "curves.yaml"
    p.write_text("curves:\n  - {p0: 0.2, x90: 4}\n  - {p0: 0.3, x90: 2, name: b}\n")
    curves = load_curves(p)
    assert [c.p0 for c in curves] == [0.2, 0.3] and curves[1].name == "b"
    assert len(load_curves(load_scenario.__globals__["resolve_path"]("fig5"))) == 3


def test_week_config_from_scenario():
    sc = load_scenario("fig3d")
    assert isinstance(sc.params, WeekConfig)
    assert sc.params.strategy == "decentralised(a=8)"
