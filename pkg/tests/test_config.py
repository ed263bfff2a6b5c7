import json

import pytest

from susylangevin.config import ConfigError, default_kramers, load_config, parse_config

BASE = {
    "process": {"N": 2, "gamma_coeffs": [0.0, 1.0], "force_poly": [0.0, 1.0]},
    "grid": {"epsilon": 0.01, "M": 100},
    "sigma": [0.25],
}


def test_parse_round_trip():
    cfg = parse_config(BASE)
    again = parse_config(cfg.dumps())
    assert again == cfg and again.hash == cfg.hash


def test_hash_changes_with_seed():
    assert default_kramers().hash != default_kramers(seed=7).hash


@pytest.mark.parametrize(
    "patch,field",
    [
        ({"extra": 1}, "extra"),
        ({"grid": {"epsilon": 0.01, "M": 10, "dt": 1}}, "dt"),
        ({"sigma": [0.7, 0.5]}, "sigma"),
        ({"sigma": [0.6]}, None),
        ({"a": 2.0}, "slicing"),
        ({"K": 0}, "K"),
        ({"seed": -1}, "seed"),
        ({"grid": {"epsilon": 0.0, "M": 10}}, "epsilon"),
    ],
)
def test_validation_names_field(patch, field):
    data = {**BASE, **patch}
    if field is None:
        parse_config(data)
        return
    with pytest.raises(ConfigError, match=field):
        parse_config(data)


def test_friction_choice_exclusive():
    bad = json.loads(json.dumps(BASE))
    bad["process"]["gamma_poly_in_x"] = [1.0]
    with pytest.raises(ConfigError, match="exactly one"):
        parse_config(bad)


def test_state_friction_config():
    d = {**BASE, "process": {"N": 2, "gamma_poly_in_x": [1.0, 0.0, 3.0], "force_poly": [0.0, 1.0]}}
    cfg = parse_config(d)
    assert cfg.to_dict()["process"]["gamma_poly_in_x"] == [1.0, 0.0, 3.0]


def test_empty_and_missing(tmp_path):
    with pytest.raises(ConfigError, match="empty"):
        parse_config({})
    p = tmp_path / "c.json"
    p.write_text("")
    with pytest.raises(ConfigError, match="empty"):
        load_config(p)
    with pytest.raises(ConfigError, match="grid"):
        parse_config({"process": BASE["process"]})
