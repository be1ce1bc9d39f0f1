import json

import pytest

from crn_regimes.config import (
    DEFAULT_HOME,
    HOME_ENV,
    ConfigError,
    load_network,
    parse_document,
    registry_home,
    save_json,
    scaling_from,
)
from crn_regimes.model import Regime, classify_regime


RATES = {"k_RS": 1.0, "k_SR": 1.0, "k_LR": 1.0, "k_Q0": 1.0, "k_0Q": 1.0, "k_RI": 1.0, "k_IL": 2.0, "k_QU": 1.0}


def test_flat_parameter_file(configs_dir):
    doc, params, C_M, C_U, regulated = load_network(configs_dir / "sequestration_params.json")
    assert params.k_IL == 2.0
    assert (C_M, C_U, regulated) == (2.0, 10.0, True)
    assert classify_regime(params, C_M, C_U, regulated) is Regime.OPTIMAL_SEQUESTRATION
    sc = scaling_from(doc)
    assert (sc.N, sc.M0, sc.U0) == (1000, 2000, 10000)


def test_nested_parameter_file(configs_dir):
    _, params, C_M, C_U, regulated = load_network(configs_dir / "saturation.json")
    assert params.k_IL == 12.0
    assert classify_regime(params, C_M, C_U, regulated) is Regime.SATURATION


def test_unregulated_flag(write_json):
    path = write_json("p.json", {"params": RATES, "C_M": 2.0, "C_U": 1.0, "regulated": False})
    assert load_network(path)[4] is False


def test_missing_rate(write_json):
    rates = {k: v for k, v in RATES.items() if k != "k_IL"}
    path = write_json("p.json", {**rates, "C_M": 2.0, "C_U": 1.0})
    with pytest.raises(ConfigError, match="missing required key 'k_IL'"):
        load_network(path)


def test_error_names_the_offending_line(write_json):
    path = write_json("p.json", {"params": RATES, "C_M": 0.5, "C_U": 1.0})
    expected = next(i for i, line in enumerate(path.read_text().splitlines(), 1) if '"C_M"' in line)
    with pytest.raises(ConfigError) as info:
        load_network(path)
    assert info.value.line == expected > 1
    assert str(info.value).startswith(f"{path}:{expected}:")
    assert "'C_M' must be > 1" in info.value.message


def test_nonpositive_rate(write_json):
    path = write_json("p.json", {"params": {**RATES, "k_0Q": -1.0}, "C_M": 2.0, "C_U": 1.0})
    with pytest.raises(ConfigError, match="'k_0Q' must be > 0"):
        load_network(path)


def test_invalid_json_reports_parser_line():
    with pytest.raises(ConfigError) as info:
        parse_document('{\n  "C_M": 2.0,\n  "C_U": \n}', "bad.json")
    assert info.value.line == 4
    assert "invalid JSON" in str(info.value)


def test_top_level_must_be_object():
    with pytest.raises(ConfigError, match="JSON object"):
        parse_document("[1, 2]")


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config"):
        load_network(tmp_path / "absent.json")


def test_boolean_is_not_a_number():
    doc = parse_document('{"C_M": true, "C_U": 1.0}')
    with pytest.raises(ConfigError, match="finite number"):
        doc.number("C_M")


def test_scaling_rejects_small_m0(write_json):
    path = write_json("p.json", {**RATES, "N": 10, "M0": 5, "C_M": 2.0, "C_U": 1.0})
    doc = load_network(path)[0]
    with pytest.raises(ConfigError, match="M0"):
        scaling_from(doc)


def test_registry_home_precedence(monkeypatch, tmp_path):
    monkeypatch.delenv(HOME_ENV, raising=False)
    assert registry_home() == DEFAULT_HOME
    monkeypatch.setenv(HOME_ENV, str(tmp_path / "env"))
    assert registry_home() == tmp_path / "env"
    assert registry_home(tmp_path / "flag") == tmp_path / "flag"


def test_save_json_is_sorted_with_newline(tmp_path):
    path = tmp_path / "sub" / "out.json"
    save_json({"b": 1, "a": [1, 2]}, path)
    text = path.read_text()
    assert text.endswith("}\n")
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {"a": [1, 2], "b": 1}
