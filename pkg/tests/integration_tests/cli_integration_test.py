import json

import pytest
from ibe_trust.cli import main

TOY = """
name = "toy"
seed = 3

[params]
profile = "toy"

[[nodes]]
addr = 1

[[nodes]]
addr = 2

[[events]]
t = 1
action = "boot"
node = 1

[[events]]
t = 1
action = "boot"
node = 2

[[events]]
t = 2
action = "ta"
node = 1

[[events]]
t = 5
action = "ta"
node = 2

[[events]]
t = 8
action = "boot"
node = 1

[[events]]
t = 8
action = "ta"
node = 1

[[events]]
t = 12
action = "ake"
node = 1
peer = 2
"""


@pytest.fixture(scope="function")
def toy_scenario(tmp_path):
    path = tmp_path / "toy.toml"
    path.write_text(TOY)
    yield path


def read_events(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_keygen_then_run(tmp_path, toy_scenario, capsys):
    keys = tmp_path / "keys"
    code = main(
        ["keygen", "--profile", "toy", "--seed", "5", "--out-dir", str(keys), "--scenario", str(toy_scenario)]
    )
    assert code == 0
    assert sorted(p.name for p in keys.iterdir()) == [
        "base-station.ibtk",
        "master.ibtm",
        "node-001.ibtk",
        "node-002.ibtk",
        "params.ibtp",
    ]

    out = tmp_path / "out"
    assert main(["run", "--scenario", str(toy_scenario), "--keys", str(keys), "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["events.jsonl", "report.csv", "report.txt"]
    verdicts = [r for r in read_events(out / "events.jsonl") if r["type"] == "verdict"]
    assert [r["accepted"] for r in verdicts if r["kind"] in ("AKE", "PROBE")] == [True, True]
    assert "wrote report.txt" in capsys.readouterr().out


def test_run_rejects_a_broken_key_directory(tmp_path, toy_scenario, capsys):
    keys = tmp_path / "keys"
    assert main(["keygen", "--profile", "toy", "--seed", "1", "--out-dir", str(keys)]) == 0
    (keys / "master.ibtm").write_bytes((keys / "params.ibtp").read_bytes())
    code = main(["run", "--scenario", str(toy_scenario), "--keys", str(keys), "--out", str(tmp_path / "out")])
    assert code == 2
    assert "bad magic" in capsys.readouterr().err


def test_run_without_a_key_directory_exits_2(tmp_path, toy_scenario, capsys):
    code = main(["run", "--scenario", str(toy_scenario), "--keys", str(tmp_path / "none"), "--out", str(tmp_path)])
    assert code == 2
    assert "ibe-trust: error" in capsys.readouterr().err


def test_bundled_demo_run_is_reproducible(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--scenario", "demo", "--seed", "42", "--out", str(a)]) == 0
    assert main(["run", "--scenario", "demo", "--seed", "42", "--out", str(b)]) == 0
    for name in ("report.txt", "report.csv", "events.jsonl"):
        assert (a / name).read_bytes() == (b / name).read_bytes()

    capsys.readouterr()
    assert main(["report", "--in", str(a / "events.jsonl")]) == 0
    tables = capsys.readouterr().out
    assert tables.startswith("Process energy")
    assert tables in (a / "report.txt").read_text()

    assert main(["report", "--in", str(a / "events.jsonl"), "--csv"]) == 0
    assert capsys.readouterr().out == (a / "report.csv").read_text()


def test_missing_scenario_exits_2(tmp_path, capsys):
    code = main(["run", "--scenario", str(tmp_path / "nope.toml"), "--out", str(tmp_path / "out")])
    assert code == 2
    assert "no scenario file" in capsys.readouterr().err


def test_invalid_scenario_exits_2(tmp_path, toy_scenario, capsys):
    toy_scenario.write_text(toy_scenario.read_text().replace("peer = 2", "peer = 9"))
    code = main(["run", "--scenario", str(toy_scenario), "--out", str(tmp_path / "out")])
    assert code == 2
    assert "peer 9 is not a declared node" in capsys.readouterr().err


def test_bad_energy_file_exits_2(tmp_path, toy_scenario, capsys):
    energy = tmp_path / "energy.toml"
    energy.write_text("[processor]\nvoltage = 3.6\n")
    code = main(["run", "--scenario", str(toy_scenario), "--energy", str(energy), "--out", str(tmp_path / "out")])
    assert code == 2
    assert "missing key processor.current" in capsys.readouterr().err


def test_usage_errors_exit_2():
    assert main(["run"]) == 2
    assert main(["launch"]) == 2
