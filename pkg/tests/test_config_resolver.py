import json
import math

import pytest

from app.simulation.errors import ConfigError
from app.utils.config_resolver import ConfigResolver, env_key, load_config_file
from app.utils.mode_config import parse_choice, parse_gamma, parse_mode


def test_precedence_flag_file_env_default():
    environ = {"NONLOCAL_SIM_TRIALS": "30"}
    resolver = ConfigResolver(file_values={"trials": 20}, file_path="run.json", environ=environ)
    assert resolver.get("trials", flag_value="10", default=40, parser=int) == (10, "flag")
    assert resolver.get("trials", default=40, parser=int) == (20, "file:run.json")

    resolver = ConfigResolver(environ=environ)
    assert resolver.get("trials", default=40, parser=int) == (30, "env:NONLOCAL_SIM_TRIALS")
    assert ConfigResolver(environ={}).get("trials", default=40, parser=int) == (40, "default")


def test_env_can_be_disabled():
    resolver = ConfigResolver(environ={"NONLOCAL_SIM_OUT": "x.json"})
    assert resolver.get("out", default=None, use_env=False) == (None, "default")


def test_blank_env_values_are_ignored():
    resolver = ConfigResolver(environ={"NONLOCAL_SIM_SEED": "  "})
    assert resolver.get("seed", default=0, parser=int) == (0, "default")


def test_parser_errors_become_config_errors():
    resolver = ConfigResolver(environ={"NONLOCAL_SIM_WORKERS": "many"})
    with pytest.raises(ConfigError, match="env:NONLOCAL_SIM_WORKERS"):
        resolver.get("workers", default=1, parser=int)


def test_conflicts_and_report():
    resolver = ConfigResolver(file_values={"seed": 4, "colour": "red"}, file_path="c.json",
                              environ={"NONLOCAL_SIM_SEED": "5"})
    resolver.get("seed", flag_value="3", default=0, parser=int)
    resolver.get("trials", default=100, parser=int)
    assert set(resolver.get_conflicts()) == {"seed"}
    assert resolver.sources() == {"seed": "flag", "trials": "default"}
    assert resolver.unknown_file_keys() == ["colour"]
    report = resolver.format_resolution_report()
    assert "seed (CONFLICT)" in report
    assert "-> flag = '3'" in report


def test_load_config_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"chunk-size": 128, "mode": "ideal"}))
    assert load_config_file(str(path)) == {"chunk_size": 128, "mode": "ideal"}
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config_file(str(path))
    with pytest.raises(ConfigError):
        load_config_file(str(tmp_path / "missing.json"))


def test_env_key():
    assert env_key("chunk_size") == "NONLOCAL_SIM_CHUNK_SIZE"


@pytest.mark.parametrize("text,expected", [
    ("pi/8", math.pi / 8),
    ("3pi/16", 3 * math.pi / 16),
    ("0.5*pi/2", math.pi / 4),
    ("0.3", 0.3),
    (0.7, 0.7),
])
def test_parse_gamma(text, expected):
    assert parse_gamma(text) == pytest.approx(expected)


@pytest.mark.parametrize("text", ["1.0", "0", "-pi/8", "pi/2", "nan", "abc"])
def test_parse_gamma_rejects(text):
    with pytest.raises(ValueError):
        parse_gamma(text)


def test_parse_mode_and_choice():
    assert parse_mode("resample-n") == "resample_n"
    assert parse_mode("STRICT") == "strict"
    with pytest.raises(ValueError):
        parse_mode("fast")
    assert parse_choice("Literal", ("corrected", "literal"), "ab_convention") == "literal"
    with pytest.raises(ValueError):
        parse_choice("other", ("corrected", "literal"), "ab_convention")
