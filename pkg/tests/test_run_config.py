import glob
import json

import pytest

from utils.exceptions import ConfigError
from utils.run_config import EXPERIMENTS, load_run_config, parse_run_config
from utils.solver import ResidualMode


def test_defaults_fill_missing_sections():
    config = parse_run_config({"experiment": "spring1d"})
    assert config.name == "run"
    assert config.seed == 0
    assert config.spring.alphas == [1.0, -0.5, -1.0]
    assert config.solver.eta_up == 0.0
    assert config.solver.residual_mode == "relative"
    assert config.solver.to_trust_region().residual_mode is ResidualMode.RELATIVE
    assert config.krylov.eta_cg == 1e-8
    assert config.damage.materials.paste.Gc == 60.0


def test_partial_nested_section_keeps_sibling_defaults():
    config = parse_run_config({
        "experiment": "damage_rve",
        "damage": {"materials": {"paste": {"E": 20e9}}, "seeds": [4, 5]},
    })
    paste = config.damage.materials.paste
    assert paste.E == 20e9
    assert paste.Gc == 60.0 and paste.ft0 == 3e6
    assert config.damage.materials.aggregate.E == 59e9
    assert config.damage.seeds == [4, 5]
    assert config.damage.eigenstrain_total == 4e-3


@pytest.mark.parametrize("data", [
    {"experiment": "spring1d", "colour": "red"},
    {"experiment": "spring1d", "spring": {"stiffness": 2.0}},
    {"experiment": "unknown"},
    {"experiment": "spring1d", "seed": -1},
    {"experiment": "spring1d", "seed": 1.5},
    {"experiment": "spring1d", "solver": {"eta_up": 0.3}},
    {"experiment": "spring1d", "solver": {"residual_mode": "loose"}},
    {"experiment": "spring1d", "krylov": {"eta_cg": 0.0}},
    {"experiment": "spring1d", "spring": {"k": "stiff"}},
    {"experiment": "spring1d", "spring": {"methods": ["gradient_descent"]}},
    {"experiment": "spring1d", "spring": {"eta_up": 0.5}},
    {"experiment": "eshelby", "eshelby": {"radius": 0.4}},
    {"experiment": "eshelby", "eshelby": {"n": 4}},
    {"experiment": "damage_rve", "damage": {"grids": [4]}},
    {"experiment": "damage_rve", "damage": {"materials": {"gel": {"Gc": 10.0}}}},
    {"experiment": "projector_check", "projector_check": {"schemes": ["spectral"]}},
    {"experiment": "spring1d", "spring": [1, 2]},
    {"name": "no experiment"},
])
def test_invalid_documents(data):
    with pytest.raises(ConfigError):
        parse_run_config(data)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(str(tmp_path / "absent.json"))


def test_malformed_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{\"experiment\": ", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_run_config(str(path))


def test_shipped_configurations_parse(config_path):
    paths = sorted(glob.glob(config_path("*.json")))
    assert paths
    seen = set()
    for path in paths:
        config = load_run_config(path)
        seen.add(config.experiment)
    assert seen == set(EXPERIMENTS)


def test_dict_round_trip(config_path):
    config = load_run_config(config_path("eshelby.json"))
    assert config.eshelby.sweep_grids == [31, 63, 127]
    again = parse_run_config(json.loads(json.dumps(config.to_dict())))
    assert again == config
