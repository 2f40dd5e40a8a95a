import pytest

from coupledrec.config import ConfigError, SCHEMA_VERSION, load_config, parse_config


GOOD = """
# reconstruction run
schema = 1
grid.dims = 32 32   # trailing comment
channel.1.kind = kl
channel.1.lambda = 2.5
solver.max_iters = 800
solver.verbose = off
rates.mu = 1.0 2.0
"""


def test_parse_basics():
    cfg = parse_config(GOOD)
    assert cfg.get_ints("grid.dims") == (32, 32)
    assert cfg.get_str("channel.1.kind") == "kl"
    assert cfg.get_float("channel.1.lambda") == 2.5
    assert cfg.get_int("solver.max_iters") == 800
    assert cfg.get_bool("solver.verbose") is False
    assert cfg.get_floats("rates.mu") == (1.0, 2.0)


def test_defaults_and_required():
    cfg = parse_config("schema = 1")
    assert cfg.get_int("solver.max_iters", 500) == 500
    assert cfg.get_str("reg.kind", "tgv") == "tgv"
    with pytest.raises(ConfigError, match="missing required key"):
        cfg.get_float("channel.1.lambda")


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError, match="duplicate key"):
        parse_config("schema = 1\na = 1\na = 2\n")


def test_malformed_line_reports_line_number():
    with pytest.raises(ConfigError) as exc:
        parse_config("schema = 1\n\nthis is not a binding\n")
    assert exc.value.line == 3
    assert "line 3" in str(exc.value)


def test_typed_accessor_errors_carry_source_line():
    cfg = parse_config("schema = 1\nsolver.max_iters = soon\n")
    with pytest.raises(ConfigError) as exc:
        cfg.get_int("solver.max_iters")
    assert exc.value.line == 2
    with pytest.raises(ConfigError, match="not a boolean"):
        parse_config("schema = 1\nx = maybe").get_bool("x")
    with pytest.raises(ConfigError, match="not a list of numbers"):
        parse_config("schema = 1\nx = 1.0 two").get_floats("x")


def test_schema_version_checked():
    assert parse_config("").get_int("schema", SCHEMA_VERSION) == SCHEMA_VERSION
    with pytest.raises(ConfigError, match="unsupported schema version"):
        parse_config("schema = 99")


def test_dump_is_sorted_and_reparseable():
    cfg = parse_config(GOOD)
    echoed = parse_config(cfg.dump())
    assert echoed.values == cfg.values
    keys = [line.split(" = ")[0] for line in cfg.dump().splitlines()]
    assert keys == sorted(keys)


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.cfg")
    p = tmp_path / "run.cfg"
    p.write_text("schema = 1\na = 4\n")
    assert load_config(p).get_int("a") == 4
