import random
from fractions import Fraction

import pytest
from ibe_trust.energy.energy import (
    CATEGORIES,
    EnergyConstants,
    EnergyLedger,
    TrafficStats,
    battery_percent,
    e_comm,
    e_total,
    fragmented_airtime,
    joules,
    fractional_airtime,
    report,
)
from ibe_trust.protocol.frames import MAX_FRAME, MAX_PAYLOAD, MessageKind, fragment, on_air


@pytest.fixture(scope="function")
def constants():
    yield EnergyConstants.default()


@pytest.fixture(scope="function")
def busy_ledger(constants):
    ledger = EnergyLedger("node-001", constants)
    rng = random.Random(5)
    for i in range(300):
        ledger.bill(rng.choice(CATEGORIES), rng.randrange(200), t=float(i), activity="mixed")
    yield ledger


def test_bundled_constants_match_defaults(constants):
    assert constants == EnergyConstants()
    assert constants.power == pytest.approx(0.072)


@pytest.mark.parametrize(
    "delay, expected",
    [(0.059, 4.24e-3), (0.05, 3.6e-3), (0.23, 16.56e-3), (4.05, 0.292)],
)
def test_process_energy_matches_published_table(delay, expected):
    assert joules(0.072, delay) == pytest.approx(expected, rel=0.005)


def test_joules_rejects_negative_inputs():
    with pytest.raises(ValueError, match="non-negative"):
        joules(-1, 1)
    with pytest.raises(ValueError, match="non-negative"):
        joules(1, -0.5)


def test_communication_energy():
    assert e_comm(319, 0) == pytest.approx(0.58e-3, rel=0.01)
    assert e_comm(0, 480) == pytest.approx(0.95e-3, rel=0.01)
    assert e_comm(85, 0) == pytest.approx(0.15e-3, rel=0.04)
    assert e_comm(319, 480) == pytest.approx(583.77e-6 + 950.4e-6)


def test_total_energy_reading():
    total = e_total(1, 1, 160, 319, 480)
    assert total == pytest.approx(25.94e-3, abs=0.01e-3)
    assert total == pytest.approx(0.027, rel=0.10)
    assert battery_percent(total) < 1
    assert e_total(0, 0, 0, 0, 0) == 0


def test_airtime():
    assert fractional_airtime(400) == pytest.approx(479.25, abs=0.01)
    assert fractional_airtime(106) == pytest.approx(127)
    assert fractional_airtime(0) == 0
    assert fragmented_airtime(400) == 484
    assert fragmented_airtime(106) == 127


@pytest.mark.parametrize("payload", [1, MAX_PAYLOAD, MAX_PAYLOAD + 1, 400, 3 * MAX_PAYLOAD])
def test_airtime_follows_the_frame_layout(payload):
    frames = fragment(bytes(payload), src=1, dst=0, kind=MessageKind.TA_ACK, msg_id=1)
    assert fragmented_airtime(payload) == on_air(frames)
    assert fractional_airtime(MAX_PAYLOAD) == MAX_FRAME


def test_constants_file_is_strict():
    config = {
        "processor": {"voltage": 3.6, "current": 0.02, "volts": 1},
        "delays": {"boot": 0.059, "encryption": 0.05, "sha2": 0.05, "switch": 0.23},
        "radio": {"tx_per_byte": 1.83e-6, "rx_per_byte": 1.98e-6},
        "crypto": {"encryption_per_bit": 22.5e-6},
        "battery": {"capacity": 1000.0},
    }
    with pytest.raises(ValueError) as e:
        EnergyConstants.from_dict(config)
    assert "unknown key processor.volts" in str(e.value)
    assert "missing key delays.pairing" in str(e.value)


def test_constants_file_can_be_loaded(tmp_path):
    (tmp_path / "radio.toml").write_text(
        """
[processor]
voltage = 3.0
current = 0.010
[delays]
boot = 0.1
encryption = 0.1
sha2 = 0.1
switch = 0.1
pairing = 1.0
[radio]
tx_per_byte = 1e-6
rx_per_byte = 2e-6
[crypto]
encryption_per_bit = 1e-5
[battery]
capacity = 500.0
"""
    )
    c = EnergyConstants.from_toml(tmp_path / "radio.toml")
    assert c.power == pytest.approx(0.03)
    assert c.e_pairing == pytest.approx(0.03)
    assert e_comm(10, 10, c) == pytest.approx(30e-6)


def test_ledger_conservation(busy_ledger):
    ledger = busy_ledger
    assert sum((e.joules for e in ledger.events), Fraction(0)) == ledger.total
    assert sum(ledger.by_category().values(), Fraction(0)) == ledger.total


def test_ledger_is_monotone(constants):
    ledger = EnergyLedger("node-002", constants)
    last = ledger.total
    for category in CATEGORIES:
        ledger.bill(category, 3)
        assert ledger.total >= last
        last = ledger.total


def test_ledger_bills_declared_unit_costs(constants):
    ledger = EnergyLedger("node-003", constants)
    ledger.bill("switch", 2, activity="ta-request")
    ledger.bill("tx", 117, activity="ta-request")
    assert float(ledger.by_category()["switch"]) == pytest.approx(2 * 16.56e-3)
    assert float(ledger.by_category()["tx"]) == pytest.approx(117 * 1.83e-6)
    assert ledger.count("switch") == 2
    assert ledger.activity_total("ta-request") == ledger.total


def test_ledger_rejects_bad_bills(constants):
    ledger = EnergyLedger("node-004", constants)
    with pytest.raises(ValueError, match="negative"):
        ledger.bill("tx", -1)
    with pytest.raises(ValueError, match="unknown energy category"):
        ledger.bill("radio", 1)


def test_ledgers_rebuild_from_records(busy_ledger, constants):
    records = [e.to_record() for e in busy_ledger.events]
    rebuilt = EnergyLedger.from_records(records, constants)["node-001"]
    assert rebuilt.by_category() == busy_ledger.by_category()
    assert rebuilt.total == busy_ledger.total


def test_empty_report_is_all_zero(constants):
    r = report({}, constants)
    assert r.totals == {
        "ta_total_reference": 0.0,
        "ta_total_ledger": 0.0,
        "battery_percent": 0.0,
        "network_total": 0.0,
    }
    assert all(c["sim_bytes"] == 0 for c in r.communication)
    assert r.nodes == []
    assert "Process energy" in r.to_text()


def test_report_communication_rows(constants):
    traffic = TrafficStats(
        ta_request_bytes=[117, 117], ta_ack_bytes=[113, 113], ake_bytes=[93], trusted_ids=3
    )
    r = report({}, constants, traffic)
    rows = {c["name"]: c for c in r.communication}
    assert rows["Trusted authentication, transmit"]["ref_bytes"] == 319
    assert rows["Trusted authentication, transmit"]["sim_bytes"] == 117
    assert rows["Trusted authentication, receive"]["ref_joules"] == pytest.approx(950.4e-6)
    assert rows["Key exchange, transmit"]["ref_bytes"] == 85
    assert rows["Key exchange, transmit"]["sim_bytes"] == 93
    assert rows["Key exchange, receive"]["sim_joules"] == 0
    assert r.totals["ta_total_reference"] == pytest.approx(0.027, rel=0.10)
    assert r.totals["battery_percent"] < 1


def test_report_trust_id_sizing(constants):
    r = report({}, constants, TrafficStats(trusted_ids=200))
    assert r.trust_ids == [
        {"n": 200, "payload": 400, "fractional_airtime": pytest.approx(479.25, abs=0.01), "fragmented": 484}
    ]
    small = report({}, constants, TrafficStats(trusted_ids=3))
    assert [t["n"] for t in small.trust_ids] == [3, 200]


def test_report_tables_render(busy_ledger, constants):
    traffic = TrafficStats(ta_request_bytes=[117], ta_ack_bytes=[113], ake_bytes=[93], trusted_ids=1)
    r = report({"node-001": busy_ledger}, constants, traffic)
    text = r.to_text()
    assert "Fast tate pairing" in text
    assert "RRUAN" in text
    assert "node-001" in text
    lines = r.to_csv().splitlines()
    assert lines[0] == "table,row,column,value"
    assert any(line.startswith("node,node-001,total,") for line in lines)
