import csv
import dataclasses
import io
import json
from pathlib import Path

import pytest

from tanglesim import __version__
from tanglesim.cli import FPC_COLUMNS, TANGLE_COLUMNS, main
from tanglesim.config import SCHEMA_PATH, apply_override, load_config, load_experiment
from tanglesim.errors import InvariantViolation, ParseError, UnknownKey
from tanglesim.fpc import FpcConfig
from tanglesim.scenario import ScenarioConfig

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


# ------------------------------------------------------------------ config


def test_minimal_fpc_defaults(tmp_path):
    cfg = load_config(write(tmp_path, {"N": 100, "k": 20, "q": 0, "seed": 1}))
    assert isinstance(cfg, FpcConfig)
    assert (cfg.first_threshold, cfg.threshold_margin, cfg.finalization_streak, cfg.max_rounds) == (0.5, 0.3, 8, 100)
    assert cfg.seed == 1


def test_k_equal_n_is_rejected(tmp_path):
    with pytest.raises(InvariantViolation) as exc:
        load_config(write(tmp_path, {"N": 100, "k": 100}))
    assert exc.value.key == "k" and "N−1" in str(exc.value)


def test_override_q_out_of_range(tmp_path):
    with pytest.raises(InvariantViolation) as exc:
        load_config(write(tmp_path, {"N": 100, "k": 20}), ["q=0.6"])
    assert exc.value.key == "q" and "[0, 0.5]" in str(exc.value)


def test_unknown_keys_are_fatal(tmp_path):
    with pytest.raises(UnknownKey) as exc:
        load_config(write(tmp_path, {"N": 100, "k": 20, "kk": 3}))
    assert "kk" in str(exc.value)
    with pytest.raises(UnknownKey) as exc:
        load_config(write(tmp_path, {"type": "tangle", "pow": {"difficulty": 3}}))
    assert "pow.difficulty" in str(exc.value)


def test_parse_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ParseError):
        load_config(bad)
    with pytest.raises(ParseError):
        load_config(tmp_path / "missing.json")
    with pytest.raises(ParseError):
        load_config(write(tmp_path, [1, 2]))


def test_dotted_overrides():
    doc = {}
    apply_override(doc, "pow.gamma=0")
    apply_override(doc, "scheduler.budget=null")
    apply_override(doc, "adversaryStrategy=FixedLike")
    assert doc == {"pow": {"gamma": 0}, "scheduler": {"budget": None}, "adversaryStrategy": "FixedLike"}
    with pytest.raises(ParseError):
        apply_override(doc, "nothing")


def test_scenario_config_from_json(tmp_path):
    cfg = load_config(CONFIGS / "tangle_doublespend.json")
    assert isinstance(cfg, ScenarioConfig)
    assert cfg.nodes == 10 and len(cfg.double_spend_schedule) == 2
    assert cfg.double_spend_schedule[0].spenders == (1, 2)


def test_schedule_beyond_duration_names_key(tmp_path):
    doc = {"type": "tangle", "duration": 10, "doubleSpendSchedule": [{"time": 20, "output": 0, "spenders": [0, 1]}]}
    with pytest.raises(InvariantViolation) as exc:
        load_config(write(tmp_path, doc))
    assert exc.value.key == "doubleSpendSchedule"


def test_nonexistent_genesis_output_rejected(tmp_path):
    doc = {"type": "tangle", "nodes": 2, "doubleSpendSchedule": [{"time": 1, "output": 5, "spenders": [0, 1]}]}
    with pytest.raises(InvariantViolation):
        load_config(write(tmp_path, doc))


def test_resolved_config_round_trips(tmp_path):
    for name in ("fpc_sweep.json", "tangle_doublespend.json"):
        exp = load_experiment(CONFIGS / name)
        again = load_experiment(write(tmp_path, exp.resolved, "echo.json"))
        assert again.resolved == exp.resolved
        if isinstance(exp.config, ScenarioConfig):
            # the echo spells out the default genesis explicitly
            assert again.config == dataclasses.replace(exp.config, genesis=exp.config.resolved_genesis())
        else:
            assert again.config == exp.config


def test_resolved_configs_match_schema():
    jsonschema = pytest.importorskip("jsonschema")
    schema = json.loads(SCHEMA_PATH.read_text())
    for path in sorted(CONFIGS.glob("*.json")):
        doc = json.loads(path.read_text())
        jsonschema.validate(doc, schema)
        jsonschema.validate(load_experiment(path).resolved, schema)


# --------------------------------------------------------------------- CLI


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def parse_csv(text):
    rows = list(csv.reader(io.StringIO(text)))
    assert len({len(r) for r in rows}) == 1
    return rows


def test_version(capsys):
    code, out, _ = run_cli(capsys, "version")
    assert code == 0 and __version__ in out


def test_validate_config_writes_nothing(capsys, tmp_path):
    before = set(tmp_path.iterdir())
    code, out, err = run_cli(capsys, "validate-config", "--config", str(CONFIGS / "fpc_honest.json"))
    assert code == 0 and out == "" and "ok" in err
    assert set(tmp_path.iterdir()) == before


def test_config_errors_exit_1(capsys, tmp_path):
    cfg = str(CONFIGS / "fpc_honest.json")
    code, out, err = run_cli(capsys, "fpc-run", "--config", cfg, "--set", "q=0.6", "--runs", "1")
    assert code == 1 and out == "" and "q" in err
    code, _, err = run_cli(capsys, "fpc-run", "--config", cfg, "--set", "bogus=1")
    assert code == 1 and "bogus" in err
    doc = {"type": "tangle", "duration": 10, "doubleSpendSchedule": [{"time": 20, "output": 0, "spenders": [0, 1]}]}
    code, _, err = run_cli(capsys, "tangle-run", "--config", str(write(tmp_path, doc)))
    assert code == 1 and "doubleSpendSchedule" in err


def test_kind_mismatch_is_config_error(capsys):
    code, _, err = run_cli(capsys, "tangle-run", "--config", str(CONFIGS / "fpc_honest.json"))
    assert code == 1


def test_runtime_error_exit_2(capsys, tmp_path):
    # a zero eligibility window leaves no parents for the first issued message
    code, out, err = run_cli(
        capsys, "tangle-run", "--set", "type=tangle", "--set", "eligibilityAge=1e-9",
        "--set", "duration=5", "--set", "issueRate=5", "--out", str(tmp_path / "x.csv"),
    )
    assert code == 2 and "NoEligibleTips" in err


def test_fpc_run_csv(capsys, tmp_path):
    out_path = tmp_path / "run.csv"
    code, out, _ = run_cli(
        capsys, "fpc-run", "--config", str(CONFIGS / "fpc_honest.json"), "--runs", "5", "--out", str(out_path)
    )
    assert code == 0 and out == ""
    rows = parse_csv(out_path.read_text())
    assert rows[0] == FPC_COLUMNS
    row = dict(zip(rows[0], rows[1]))
    assert row["N"] == "100" and row["runs"] == "5" and row["agreement_rate"] == "1.000000"
    echoed = json.loads((tmp_path / "run.config.json").read_text())
    assert echoed["runs"] == 5 and echoed["l"] == 8


def test_fpc_sweep_grid_order(capsys, tmp_path):
    cfg = write(tmp_path, {"type": "fpc", "runs": 2, "grid": [{"N": [20, 30], "k": [5, "N-1", 40], "q": [0.0]}]})
    code, out, err = run_cli(capsys, "fpc-sweep", "--config", str(cfg), "--jobs", "2")
    assert code == 0
    rows = parse_csv(out)
    assert [(r[0], r[1]) for r in rows[1:]] == [
        ("20", "5"), ("20", "19"), ("20", "40"), ("30", "5"), ("30", "29"), ("30", "40"),
    ]
    infeasible = [r for r in rows[1:] if r[1] == "40"]
    assert all(r[-3:] == ["null", "null", "null"] for r in infeasible)
    assert "warning" in err


def test_tangle_run_outputs(capsys, tmp_path):
    out_path = tmp_path / "honest.csv"
    code, _, _ = run_cli(
        capsys, "tangle-run", "--config", str(CONFIGS / "tangle_honest.json"),
        "--set", "duration=40", "--out", str(out_path),
    )
    assert code == 0
    rows = parse_csv(out_path.read_text())
    assert rows[0] == TANGLE_COLUMNS
    assert rows[1][2] == "0.000000"
    trace = (tmp_path / "honest.trace").read_text().splitlines()
    assert trace and all(line.split()[1] for line in trace)
    assert json.loads((tmp_path / "honest.config.json").read_text())["duration"] == 40


def test_csv_is_byte_stable(capsys, tmp_path):
    args = ["tangle-run", "--config", str(CONFIGS / "tangle_doublespend.json"), "--set", "duration=70"]
    outs = []
    for i in range(2):
        p = tmp_path / f"r{i}.csv"
        assert main(args + ["--out", str(p)]) == 0
        outs.append((p.read_bytes(), (tmp_path / f"r{i}.trace").read_bytes()))
    capsys.readouterr()
    assert outs[0] == outs[1]


def test_seed_flag_overrides(capsys, tmp_path):
    cfg = str(CONFIGS / "tangle_honest.json")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["tangle-run", "--config", cfg, "--set", "duration=20", "--seed", "1", "--out", str(a)])
    main(["tangle-run", "--config", cfg, "--set", "duration=20", "--seed", "2", "--out", str(b)])
    capsys.readouterr()
    assert json.loads((tmp_path / "a.config.json").read_text())["seed"] == 1
    assert (tmp_path / "a.trace").read_bytes() != (tmp_path / "b.trace").read_bytes()


def test_bad_seed_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["fpc-run", "--seed", "-1"])
    assert exc.value.code == 2
