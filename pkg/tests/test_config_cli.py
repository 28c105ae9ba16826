import json
import math

import pytest

from rdlab import cli
from rdlab.config import (SCHEMA, ConfigError, ExperimentConfig, dump_config, load_config,
                          parse_config, parse_real, parse_value, preset_names)
from rdlab.experiments import COMMANDS
from rdlab.solver import BlowUpError

FAST = ["solver.horizon=0.5", "domain.resolution=15"]


@pytest.mark.parametrize("text, value", [
    ("2", 2.0), ("-1.5e-3", -1.5e-3), (".5", 0.5), ("pi", math.pi), ("2*pi", 2 * math.pi),
    ("pi/2", math.pi / 2), ("-pi", -math.pi), ("1/128", 1 / 128), (" 3 ", 3.0),
])
def test_parse_real(text, value):
    assert parse_real(text) == pytest.approx(value, rel=1e-15)


@pytest.mark.parametrize("text", ["", "two", "pi**2", "1+2", "2*pi*pi", "nan"])
def test_parse_real_rejects(text):
    with pytest.raises(ValueError):
        parse_real(text)


def test_parse_value_kinds():
    assert parse_value("ints", "15, 31") == (15, 31)
    assert parse_value("reals", "0 0.5  pi") == (0.0, 0.5, math.pi)
    assert parse_value("reals", "") == ()
    assert parse_value("str", "  zero ") == "zero"
    with pytest.raises(ValueError):
        parse_value("int", "1.5")


def test_defaults_cover_schema():
    cfg = ExperimentConfig()
    assert cfg.resolved().keys() == SCHEMA.keys()
    with pytest.raises(KeyError):
        cfg["nope"]


def test_parse_config_comments_and_errors():
    cfg = parse_config("# header\nseed = 5  # trailing\n\ndomain.lengths = 2*pi\n")
    assert cfg["seed"] == 5 and cfg["domain.lengths"] == (2 * math.pi,)
    with pytest.raises(ConfigError, match=r"cfg:2: expected 'key = value'"):
        parse_config("seed = 1\nseed 2\n", "cfg")
    with pytest.raises(ConfigError, match=r"cfg:1: unknown key 'solver.bogus'"):
        parse_config("solver.bogus = 1\n", "cfg")
    with pytest.raises(ConfigError, match=r"cfg:3: bad value for 'solver.dt'"):
        parse_config("\n\nsolver.dt = fast\n", "cfg")


@pytest.mark.parametrize("text, key", [
    ("solver.dt = -1", "solver.dt"), ("ladder.tau = 0", "ladder.tau"),
    ("seed = -1", "seed"), ("nonlinearity.family = quartic", "quartic"),
    ("nonlinearity.params = 1 2", "takes 1"),
])
def test_validation_names_the_problem(tmp_path, text, key):
    path = tmp_path / "bad.cfg"
    path.write_text(text + "\n")
    with pytest.raises(ConfigError, match=key):
        load_config(path)


def test_dimension_broadcast_and_overrides():
    cfg = load_config("square", ["domain.resolution=9", "seed=3"])
    assert cfg.domain().shape == (9, 9)
    with pytest.raises(ConfigError, match="resolution"):
        load_config("square", ["domain.resolution=7"])
    assert cfg["seed"] == 3 and cfg.source == "preset:square"
    with pytest.raises(ConfigError, match="expected key=value"):
        load_config("linear", ["seed"])
    with pytest.raises(ConfigError, match="no config file or preset"):
        load_config("missing_preset")


@pytest.mark.parametrize("name", preset_names())
def test_presets_load_and_roundtrip(name, tmp_path):
    cfg = load_config(name)
    path = tmp_path / "dump.cfg"
    path.write_text(dump_config(cfg))
    again = load_config(path)
    assert again.resolved() == cfg.resolved()


def test_shipped_presets():
    assert {"chafee_infante", "linear", "nonlipschitz", "square", "forced"} <= set(preset_names())


def test_cli_lists_every_subcommand():
    assert set(COMMANDS) == {"simulate", "ladder", "equilibria", "attractor", "structure",
                             "dimension", "check"}


def test_cli_simulate_and_byte_identical_rerun(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert cli.main(["simulate", "--config", "chafee_infante", "--out", str(out),
                         "--seed", "9", *sum((["--override", o] for o in FAST), [])]) == 0
    assert "simulate: ok" in capsys.readouterr().out
    for name in ("simulate.json", "norms.csv", "final.bin", "final.csv", "norms.png"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    report = json.loads((a / "simulate.json").read_text())
    assert report["config"]["seed"] == 9 and report["decay"]["violations"] == 0


def test_cli_seed_changes_the_run(tmp_path):
    outs = []
    for seed in (1, 2):
        out = tmp_path / str(seed)
        cli.main(["simulate", "--out", str(out), "--seed", str(seed),
                  *sum((["--override", o] for o in FAST), [])])
        outs.append((out / "final.bin").read_bytes())
    assert outs[0] != outs[1]


def test_cli_equilibria(tmp_path):
    assert cli.main(["equilibria", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "equilibria.json").read_text())
    assert report["count"] == 3
    assert [e["morse_index"] for e in report["equilibria"]] == [1, 0, 0]


def test_cli_bad_config_exits_2(tmp_path, capsys):
    assert cli.main(["simulate", "--out", str(tmp_path), "--override", "solver.dt=x"]) == 2
    assert "bad value for 'solver.dt'" in capsys.readouterr().err
    assert cli.main(["ladder", "--out", str(tmp_path), "--tau", "0"]) == 2
    assert cli.main(["simulate", "--config", str(tmp_path / "nowhere.cfg")]) == 2
    with pytest.raises(SystemExit) as info:
        cli.main(["simulate", "--seed", "abc"])
    assert info.value.code == 2


def test_cli_infeasible_exits_3(tmp_path):
    assert cli.main(["dimension", "--config", "nonlipschitz", "--out", str(tmp_path)]) == 3
    diag = json.loads((tmp_path / "dimension_error.json").read_text())
    assert diag["command"] == "dimension" and "diverges" in diag["reason"]
    assert diag["config"]["nonlinearity.family"] == "nonlipschitz_root"


def test_cli_blow_up_exits_3(tmp_path, monkeypatch):
    def explode(cfg, out):
        raise BlowUpError(1.25, None)

    monkeypatch.setitem(COMMANDS, "simulate", explode)
    assert cli.main(["simulate", "--out", str(tmp_path)]) == 3
    diag = json.loads((tmp_path / "simulate_error.json").read_text())
    assert diag["reason"] == "blow-up" and diag["time"] == 1.25


def test_cli_failed_check_exits_1(tmp_path, monkeypatch):
    from rdlab.experiments import Outcome
    monkeypatch.setitem(COMMANDS, "simulate", lambda cfg, out: Outcome("simulate", False, {}))
    assert cli.main(["simulate", "--out", str(tmp_path)]) == 1


def test_cli_presets_command(capsys):
    assert cli.main(["presets"]) == 0
    assert "chafee_infante" in capsys.readouterr().out.split()
