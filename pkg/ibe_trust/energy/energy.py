from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from statistics import fmean
import csv
import io
import logging
import math

from ibe_trust.base.config import load_bundled_toml, load_toml
from ibe_trust.base.render import text_render
from ibe_trust.protocol.frames import HEADER_SIZE, MAX_FRAME, MAX_PAYLOAD

logger = logging.getLogger(__name__)

CATEGORIES = ("boot", "switch", "encrypt", "pairing", "sha2", "tx", "rx")

# the bit count at which per-bit encryption cost equals the timed encryption row
REFERENCE_ENCRYPTION_BITS = 160

_KEYS = {
    "processor": ("voltage", "current"),
    "delays": ("boot", "encryption", "sha2", "switch", "pairing"),
    "radio": ("tx_per_byte", "rx_per_byte"),
    "crypto": ("encryption_per_bit",),
    "battery": ("capacity",),
}


def joules(power: float, time: float) -> float:
    """E = P * t."""
    if power < 0 or time < 0:
        raise ValueError(f"power and time must be non-negative, got {power} W, {time} s")
    return power * time


@dataclass(frozen=True)
class EnergyConstants:
    voltage: float = 3.6
    current: float = 0.020
    boot_delay: float = 0.059
    encryption_delay: float = 0.05
    sha2_delay: float = 0.05
    switch_delay: float = 0.23
    pairing_delay: float = 4.05
    encryption_per_bit: float = 22.5e-6
    tx_per_byte: float = 1.83e-6
    rx_per_byte: float = 1.98e-6
    battery: float = 1000.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ValueError(f"energy constant {name} must be non-negative, got {value}")

    @classmethod
    def from_dict(cls, config: dict) -> EnergyConstants:
        problems = [f"unknown section [{s}]" for s in config if s not in _KEYS]
        for section, keys in _KEYS.items():
            values = config.get(section, {})
            problems += [f"unknown key {section}.{k}" for k in values if k not in keys]
            problems += [f"missing key {section}.{k}" for k in keys if k not in values]
        if problems:
            raise ValueError("invalid energy constants: " + "; ".join(problems))

        d = config["delays"]
        return cls(
            voltage=config["processor"]["voltage"],
            current=config["processor"]["current"],
            boot_delay=d["boot"],
            encryption_delay=d["encryption"],
            sha2_delay=d["sha2"],
            switch_delay=d["switch"],
            pairing_delay=d["pairing"],
            encryption_per_bit=config["crypto"]["encryption_per_bit"],
            tx_per_byte=config["radio"]["tx_per_byte"],
            rx_per_byte=config["radio"]["rx_per_byte"],
            battery=config["battery"]["capacity"],
        )

    @classmethod
    def from_toml(cls, path: str | Path) -> EnergyConstants:
        return cls.from_dict(load_toml(path))

    @classmethod
    def default(cls) -> EnergyConstants:
        return cls.from_dict(load_bundled_toml("energy.toml"))

    @property
    def power(self) -> float:
        return self.voltage * self.current

    @property
    def e_boot(self) -> float:
        return joules(self.power, self.boot_delay)

    @property
    def e_switch(self) -> float:
        return joules(self.power, self.switch_delay)

    @property
    def e_sha2(self) -> float:
        return joules(self.power, self.sha2_delay)

    @property
    def e_encryption(self) -> float:
        return joules(self.power, self.encryption_delay)

    @property
    def e_pairing(self) -> float:
        return joules(self.power, self.pairing_delay)

    def unit_cost(self, category: str) -> float:
        match category:
            case "boot":
                return self.e_boot
            case "switch":
                return self.e_switch
            case "encrypt":
                return self.encryption_per_bit
            case "pairing":
                return self.e_pairing
            case "sha2":
                return self.e_sha2
            case "tx":
                return self.tx_per_byte
            case "rx":
                return self.rx_per_byte
            case _:
                raise ValueError(f"unknown energy category {category!r}")


def e_comm(tx_bytes: float, rx_bytes: float, constants: EnergyConstants | None = None) -> float:
    c = constants or EnergyConstants()
    if tx_bytes < 0 or rx_bytes < 0:
        raise ValueError("byte counts must be non-negative")
    return c.tx_per_byte * tx_bytes + c.rx_per_byte * rx_bytes


def e_total(
    boots: float,
    switches: float,
    enc_bits: float,
    tx_bytes: float,
    rx_bytes: float,
    constants: EnergyConstants | None = None,
) -> float:
    c = constants or EnergyConstants()
    if min(boots, switches, enc_bits) < 0:
        raise ValueError("counts must be non-negative")
    return (
        boots * c.e_boot
        + switches * c.e_switch
        + enc_bits * c.encryption_per_bit
        + e_comm(tx_bytes, rx_bytes, c)
    )


def fractional_airtime(payload: float) -> float:
    """On-air bytes estimated as a fractional number of full frames."""
    if payload < 0:
        raise ValueError("payload must be non-negative")
    return payload / MAX_PAYLOAD * MAX_FRAME


def fragmented_airtime(payload: int) -> int:
    """On-air bytes when the payload is cut into whole frames."""
    frames = max(1, math.ceil(payload / MAX_PAYLOAD))
    return payload + frames * HEADER_SIZE


def battery_percent(j: float, constants: EnergyConstants | None = None) -> float:
    c = constants or EnergyConstants()
    return 100 * j / c.battery


@dataclass(frozen=True)
class EnergyEvent:
    t: float
    node: str
    category: str
    amount: int
    joules: Fraction
    activity: str

    def to_record(self) -> dict:
        return {
            "type": "energy",
            "t": self.t,
            "node": self.node,
            "category": self.category,
            "amount": self.amount,
            "joules": float(self.joules),
            "activity": self.activity,
        }


class EnergyLedger:
    """Per-node accumulation. Joules are kept as exact fractions."""

    def __init__(self, node: str, constants: EnergyConstants | None = None) -> None:
        self.node = node
        self.constants = constants or EnergyConstants()
        self.events: list[EnergyEvent] = []
        self._totals: dict[str, Fraction] = {c: Fraction(0) for c in CATEGORIES}

    def bill(self, category: str, amount: int = 1, *, t: float = 0.0, activity: str = "") -> EnergyEvent:
        if amount < 0:
            raise ValueError(f"cannot bill a negative amount: {amount}")
        cost = Fraction(self.constants.unit_cost(category)) * amount
        event = EnergyEvent(
            t=t, node=self.node, category=category, amount=amount, joules=cost, activity=activity
        )
        self.events.append(event)
        self._totals[category] += cost
        logger.debug("%s billed %s x%s (%s J) for %s", self.node, category, amount, float(cost), activity)
        return event

    def by_category(self) -> dict[str, Fraction]:
        return dict(self._totals)

    @property
    def total(self) -> Fraction:
        return sum(self._totals.values(), Fraction(0))

    def count(self, category: str) -> int:
        return sum(e.amount for e in self.events if e.category == category)

    def activity_total(self, *activities: str) -> Fraction:
        return sum((e.joules for e in self.events if e.activity in activities), Fraction(0))

    @classmethod
    def from_records(cls, records: list[dict], constants: EnergyConstants | None = None) -> dict[str, EnergyLedger]:
        """Rebuild ledgers from saved energy records."""
        ledgers: dict[str, EnergyLedger] = {}
        for r in records:
            if r.get("type") != "energy":
                continue
            ledger = ledgers.setdefault(r["node"], cls(r["node"], constants))
            ledger.bill(r["category"], r["amount"], t=r["t"], activity=r["activity"])
        return ledgers


@dataclass
class TrafficStats:
    """On-air byte counts per exchange, collected by the simulator."""

    ta_request_bytes: list[int] = field(default_factory=list)
    ta_ack_bytes: list[int] = field(default_factory=list)
    ake_bytes: list[int] = field(default_factory=list)
    trusted_ids: int = 0

    def to_record(self) -> dict:
        return {
            "type": "traffic",
            "ta_request_bytes": self.ta_request_bytes,
            "ta_ack_bytes": self.ta_ack_bytes,
            "ake_bytes": self.ake_bytes,
            "trusted_ids": self.trusted_ids,
        }

    @classmethod
    def from_record(cls, record: dict) -> TrafficStats:
        return cls(
            ta_request_bytes=list(record["ta_request_bytes"]),
            ta_ack_bytes=list(record["ta_ack_bytes"]),
            ake_bytes=list(record["ake_bytes"]),
            trusted_ids=record["trusted_ids"],
        )


def _mean(values: list[int]) -> float:
    return fmean(values) if values else 0.0


# static reference rows for the comparison table
COMPARISON = [
    ("RRUAN", "106.84 mJ", "ECDSA", "0", "No"),
    ("DP2AC", "14.05 mJ + TE", "RSA", "10N", "No"),
    ("Rehana", "72.90 mJ", "IBS", "0", "Yes"),
]

REFERENCE_ROWS = [
    ("secFleck encryption, hardware", "5.4 uJ/bit"),
    ("secFleck encryption, software", "7030 uJ/bit"),
    ("ARM7 pairing (0.292 J + 0.148 J)", "0.44 J"),
]


@dataclass
class EnergyReport:
    processes: list[dict]
    communication: list[dict]
    totals: dict
    trust_ids: list[dict]
    comparison: list[tuple]
    references: list[tuple]
    nodes: list[dict]

    def to_text(self) -> str:
        return text_render("energy_report.txt.j2", self)

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["table", "row", "column", "value"])
        for p in self.processes:
            writer.writerow(["process", p["name"], "delay_s", p["delay"]])
            writer.writerow(["process", p["name"], "joules", repr(p["joules"])])
        for c in self.communication:
            for column in ("ref_bytes", "ref_joules", "sim_bytes", "sim_joules"):
                writer.writerow(["communication", c["name"], column, repr(c[column])])
        for key, value in self.totals.items():
            writer.writerow(["totals", key, "value", repr(value)])
        for t in self.trust_ids:
            for column in ("payload", "fractional_airtime", "fragmented"):
                writer.writerow(["trust_ids", t["n"], column, repr(t[column])])
        for n in self.nodes:
            for category in (*CATEGORIES, "total"):
                writer.writerow(["node", n["node"], category, repr(n[category])])
        return buffer.getvalue()


def _trust_row(n: int) -> dict:
    payload = 2 * n
    return {
        "n": n,
        "payload": payload,
        "fractional_airtime": fractional_airtime(payload),
        "fragmented": fragmented_airtime(payload),
    }


def report(
    ledgers: dict[str, EnergyLedger],
    constants: EnergyConstants | None = None,
    traffic: TrafficStats | None = None,
) -> EnergyReport:
    c = constants or EnergyConstants()
    traffic = traffic or TrafficStats()

    processes = [
        {"name": "Secure bootup", "delay": c.boot_delay, "joules": c.e_boot},
        {"name": "Encryption", "delay": c.encryption_delay, "joules": c.e_encryption},
        {"name": "Sha2", "delay": c.sha2_delay, "joules": c.e_sha2},
        {"name": "Switching", "delay": c.switch_delay, "joules": c.e_switch},
        {"name": "Fast tate pairing", "delay": c.pairing_delay, "joules": c.e_pairing},
    ]

    ta_tx = _mean(traffic.ta_request_bytes)
    ta_rx = _mean(traffic.ta_ack_bytes)
    ake_tx = _mean(traffic.ake_bytes)
    communication = [
        {"name": "Trusted authentication, transmit", "ref_bytes": 319, "ref_joules": e_comm(319, 0, c),
         "sim_bytes": ta_tx, "sim_joules": e_comm(ta_tx, 0, c)},
        {"name": "Trusted authentication, receive", "ref_bytes": 480, "ref_joules": e_comm(0, 480, c),
         "sim_bytes": ta_rx, "sim_joules": e_comm(0, ta_rx, c)},
        {"name": "Key exchange, transmit", "ref_bytes": 85, "ref_joules": e_comm(85, 0, c),
         "sim_bytes": ake_tx, "sim_joules": e_comm(ake_tx, 0, c)},
        {"name": "Key exchange, receive", "ref_bytes": 0, "ref_joules": 0.0,
         "sim_bytes": 0, "sim_joules": 0.0},
    ]

    trusted = [
        ledger for ledger in ledgers.values() if ledger.activity_total("ta-request") > 0
    ]
    ledger_ta = _mean(
        [float(l.activity_total("boot", "ta-request", "ta-ack")) for l in trusted]
    )
    reference = e_total(1, 1, REFERENCE_ENCRYPTION_BITS, ta_tx, ta_rx, c) if traffic.ta_request_bytes else 0.0
    grand = float(sum((l.total for l in ledgers.values()), Fraction(0)))
    totals = {
        "ta_total_reference": reference,
        "ta_total_ledger": ledger_ta,
        "battery_percent": battery_percent(reference, c),
        "network_total": grand,
    }

    trust_ids = [_trust_row(traffic.trusted_ids)]
    if traffic.trusted_ids != 200:
        trust_ids.append(_trust_row(200))

    nodes = []
    for name in sorted(ledgers):
        ledger = ledgers[name]
        row = {"node": name}
        row.update({k: float(v) for k, v in ledger.by_category().items()})
        row["total"] = float(ledger.total)
        row["battery_percent"] = battery_percent(row["total"], c)
        nodes.append(row)

    comparison = [
        *COMPARISON,
        ("Proposed (simulated)", f"{reference * 1e3:.2f} mJ", "IBE", "2N", "Yes"),
    ]
    logger.info("energy report over %s ledgers, network total %.6f J", len(ledgers), grand)
    return EnergyReport(
        processes=processes,
        communication=communication,
        totals=totals,
        trust_ids=trust_ids,
        comparison=comparison,
        references=REFERENCE_ROWS,
        nodes=nodes,
    )
