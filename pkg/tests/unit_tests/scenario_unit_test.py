import pytest
from ibe_trust.base.errors import ScenarioError
from ibe_trust.protocol.frames import MessageKind
from ibe_trust.secureboot.secureboot import BootChain, boot
from ibe_trust.sim.scenario import (
    NodeSpec,
    load_scenario,
    parse_scenario,
    resolve_scenario,
)

MINIMAL = """
name = "minimal"

[params]
profile = "toy"

[[nodes]]
addr = 1

[[events]]
t = 1
action = "boot"
node = 1
"""


@pytest.fixture(scope="function")
def write(tmp_path):
    def _write(text, name="scenario.toml"):
        path = tmp_path / name
        path.write_text(text)
        return path

    yield _write


def problems_of(config):
    with pytest.raises(ScenarioError) as info:
        parse_scenario(config)
    return info.value.problems


def test_minimal_scenario(write):
    scenario = load_scenario(write(MINIMAL))
    assert scenario.name == "minimal"
    assert scenario.profile == "toy"
    assert scenario.seed == 0
    assert scenario.loss == 0.0
    assert scenario.latency == 1.0
    assert scenario.nodes == (NodeSpec(addr=1),)
    assert scenario.events[0].action == "boot"
    assert scenario.events[0].t == 1.0


def test_name_defaults_to_the_file_stem(write):
    scenario = load_scenario(write(MINIMAL.replace('name = "minimal"', ""), "lonely.toml"))
    assert scenario.name == "lonely"


def test_undeclared_node_is_an_error():
    problems = problems_of(
        {"nodes": [{"addr": 1}], "events": [{"t": 1, "action": "ta", "node": 2}]}
    )
    assert problems == ["events[0]: node 2 is not a declared node"]


def test_out_of_order_timestamps():
    problems = problems_of(
        {
            "nodes": [{"addr": 1}],
            "events": [
                {"t": 5, "action": "boot", "node": 1},
                {"t": 2, "action": "ta", "node": 1},
            ],
        }
    )
    assert problems == ["events[1]: t = 2 is earlier than the previous event at 5.0"]


def test_every_problem_is_listed():
    problems = problems_of(
        {
            "colour": "blue",
            "params": {"profile": "huge", "offset": 60},
            "channel": {"loss": 1.5},
            "nodes": [{"addr": 1}, {"addr": 1, "speed": 3}],
            "events": [{"t": 1, "action": "dance", "node": 1}],
        }
    )
    assert "scenario: unknown key 'colour'" in problems
    assert "params: profile must be one of toy, demo" in problems
    assert "params: offset = 60 outside 0..56" in problems
    assert "channel: loss 1.5 outside [0, 1)" in problems
    assert "nodes[1]: unknown key 'speed'" in problems
    assert "nodes[1]: duplicate addr 1" in problems
    assert "nodes[1]: duplicate name 'node-001'" in problems
    assert "events[0]: action must be one of boot, ta, ake, terminate, attack" in problems
    assert len(problems) == 8


def test_error_message_lists_problems():
    with pytest.raises(ScenarioError, match="invalid scenario:\n  nodes: at least one node"):
        parse_scenario({})


def test_default_names_cannot_collide():
    problems = problems_of({"nodes": [{"addr": 1, "name": "node-002"}, {"addr": 2}]})
    assert problems == ["nodes[1]: duplicate name 'node-002'"]


def test_parse_error_carries_the_line(write):
    with pytest.raises(ScenarioError, match="line 3"):
        load_scenario(write('name = "x"\n\nseed = = 4\n'))


def test_ake_checks():
    problems = problems_of(
        {
            "nodes": [{"addr": 1}],
            "events": [
                {"t": 1, "action": "ake", "node": 1, "peer": 1},
                {"t": 2, "action": "ake", "node": 1},
            ],
        }
    )
    assert problems == ["events[0]: a node cannot key with itself", "events[1]: missing peer"]


def test_attack_fields():
    scenario = parse_scenario(
        {
            "nodes": [{"addr": 1}, {"addr": 2}],
            "events": [
                {"t": 1, "action": "attack", "kind": "replay", "message": "TA_REQUEST", "src": 1},
                {"t": 2, "action": "attack", "kind": "fake_node", "claim": 9, "hm": "0badc0de"},
                {"t": 3, "action": "attack", "kind": "impersonate", "claim": 1, "peer": 2, "label": "imp"},
            ],
        }
    )
    replay, fake, impersonate = (e.attack for e in scenario.events)
    assert replay.message == MessageKind.TA_REQUEST
    assert replay.label == "replay-0"
    assert replay.index == 0
    assert fake.hm == "0badc0de"
    assert impersonate.label == "imp"


def test_attack_problems():
    problems = problems_of(
        {
            "nodes": [{"addr": 1}],
            "events": [
                {"t": 1, "action": "attack", "kind": "modify", "message": "TA_REQUEST", "src": 1},
                {"t": 2, "action": "attack", "kind": "replay", "message": "BEACON", "src": 1},
                {"t": 3, "action": "attack", "kind": "impersonate", "claim": 1, "peer": 5},
                {"t": 4, "action": "attack", "kind": "fake_node", "claim": 7, "peer": 1},
                {"t": 5, "action": "attack", "kind": "eavesdrop"},
            ],
        }
    )
    assert problems == [
        "events[0]: modify attack needs bits",
        "events[1]: message must be one of DATA, TA_REQUEST, TA_ACK, AKE, PROBE",
        "events[1]: replay attack needs message",
        "events[2]: peer 5 is not a declared node",
        "events[3]: 'peer' does not apply to a fake_node attack",
        "events[4]: kind must be one of replay, modify, fake_node, impersonate",
    ]


def test_images_resolve_next_to_the_file(write, tmp_path):
    (tmp_path / "rom.bin").write_bytes(b"rom")
    (tmp_path / "os.bin").write_bytes(b"os")
    text = MINIMAL.replace("addr = 1\n", 'addr = 1\nimages = ["rom.bin", "os.bin"]\ntamper = [2]\n')
    scenario = load_scenario(write(text))
    assert scenario.nodes[0].image_bytes() == [b"rom", b"os"]
    assert scenario.nodes[0].tamper == (2,)


def test_missing_image_and_bad_tamper(write):
    text = MINIMAL.replace("addr = 1\n", 'addr = 1\nimages = ["rom.bin", "os.bin"]\ntamper = [3]\n')
    with pytest.raises(ScenarioError) as info:
        load_scenario(write(text))
    assert info.value.problems == [
        "nodes[0]: image 'rom.bin' not found",
        "nodes[0]: image 'os.bin' not found",
        "nodes[0]: tamper level 3 outside 2..2",
    ]


def test_bundled_images_give_every_node_its_own_trust_value():
    values = {boot(BootChain.provision(NodeSpec(addr=a).image_bytes())).trust_value for a in range(1, 51)}
    assert len(values) == 50


@pytest.mark.parametrize("name", ["demo", "replay", "modify", "fake_node", "impersonate"])
def test_bundled_scenarios_load(name):
    scenario = load_scenario(resolve_scenario(name))
    assert scenario.name == name
    assert scenario.profile == "demo"


def test_resolve_unknown_scenario():
    with pytest.raises(FileNotFoundError, match="no scenario file"):
        resolve_scenario("does-not-exist")
