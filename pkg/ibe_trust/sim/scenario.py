"""
Scenario files, TOML:

    name = "demo"
    seed = 42

    [params]
    profile = "demo"        # toy | demo
    key_seed = 7            # master key seed
    offset = 24             # trust value offset
    n = 128

    [channel]
    loss = 0.0
    latency = 1.0
    reassembly_timeout = 10.0

    [[nodes]]
    addr = 1
    name = "node-001"       # optional
    images = ["a.bin", "b.bin", "c.bin"]    # optional, relative to the file
    tamper = [2]            # optional, levels flipped at every field boot

    [[events]]
    t = 1.0
    action = "boot"         # boot | ta | ake | terminate | attack
    node = 1

Attack events carry the attack fields next to t and action:

    replay, modify   message (frame kind name), src, index, bits (modify)
    fake_node        claim, hm (optional)
    impersonate      claim, peer

Every problem in a file is collected before anything is raised.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
import logging
import string

import tomli

from ibe_trust.base.config import data_path
from ibe_trust.base.errors import ScenarioError
from ibe_trust.ibe.ibe import PROFILES
from ibe_trust.protocol.frames import BROADCAST, MessageKind
from ibe_trust.protocol.protocol import BS_NAME, IdentityRegistry
from ibe_trust.secureboot.secureboot import DEFAULT_OFFSET, DIGEST_HEX, TRUST_VALUE_LEN

logger = logging.getLogger(__name__)

ACTIONS = ("boot", "ta", "ake", "terminate", "attack")
ATTACK_KINDS = ("replay", "modify", "fake_node", "impersonate")
BUNDLED_IMAGES = ("bl1.bin", "bl2.bin", "bl3.bin")

_TOP_KEYS = {"name", "seed", "params", "channel", "nodes", "events"}
_PARAMS_KEYS = {"profile", "key_seed", "offset", "n"}
_CHANNEL_KEYS = {"loss", "latency", "reassembly_timeout"}
_NODE_KEYS = {"addr", "name", "images", "tamper"}
_EVENT_KEYS = {
    "boot": {"t", "action", "node", "tamper"},
    "ta": {"t", "action", "node"},
    "ake": {"t", "action", "node", "peer", "probe"},
    "terminate": {"t", "action", "node"},
    "attack": {"t", "action", "kind", "label", "message", "src", "index", "bits", "claim", "peer", "hm"},
}
_ATTACK_KEYS = {
    "replay": {"message", "src", "index"},
    "modify": {"message", "src", "index", "bits"},
    "fake_node": {"claim", "hm"},
    "impersonate": {"claim", "peer"},
}


@dataclass(frozen=True)
class NodeSpec:
    addr: int
    name: str | None = None
    images: tuple[Path, ...] = ()
    tamper: tuple[int, ...] = ()

    def image_bytes(self) -> list[bytes]:
        """Boot images of this node. Without files the bundled chain is used
        with the node's serial stamped into BL2, so trust values differ per node."""
        if self.images:
            return [p.read_bytes() for p in self.images]
        images = [data_path("images", name).read_bytes() for name in BUNDLED_IMAGES]
        images[1] += f"serial: {self.addr:04x}\n".encode()
        return images


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    label: str = ""
    message: MessageKind | None = None
    src: int | None = None
    index: int = 0
    bits: tuple[int, ...] = ()
    claim: int | None = None
    peer: int | None = None
    hm: str | None = None

    def problems(self) -> list[str]:
        """Kind-specific fields that are missing."""
        required = {
            "replay": ("message", "src"),
            "modify": ("message", "src", "bits"),
            "fake_node": ("claim",),
            "impersonate": ("claim", "peer"),
        }.get(self.kind, ())
        return [f"{self.kind} attack needs {name}" for name in required if getattr(self, name) in (None, ())]


@dataclass(frozen=True)
class Event:
    t: float
    action: str
    node: int | None = None
    peer: int | None = None
    tamper: tuple[int, ...] = ()
    probe: bool = True
    attack: AttackSpec | None = None


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int = 0
    profile: str = "demo"
    key_seed: int = 0
    offset: int = DEFAULT_OFFSET
    n: int | None = None
    loss: float = 0.0
    latency: float = 1.0
    reassembly_timeout: float = 10.0
    nodes: tuple[NodeSpec, ...] = ()
    events: tuple[Event, ...] = ()

    def node(self, addr: int) -> NodeSpec:
        return next(n for n in self.nodes if n.addr == addr)


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value) -> bool:
    return _is_int(value) or isinstance(value, float)


class _Checker:
    """Accumulates problems while reading a parsed scenario."""

    def __init__(self, base: Path | None) -> None:
        self.base = base
        self.problems: list[str] = []

    def keys(self, table: dict, allowed: set[str], where: str) -> None:
        for key in sorted(set(table) - allowed):
            self.problems.append(f"{where}: unknown key {key!r}")

    def table(self, config: dict, key: str) -> dict:
        value = config.get(key, {})
        if not isinstance(value, dict):
            self.problems.append(f"{key}: expected a table")
            return {}
        return value

    def int(self, table: dict, key: str, where: str, default=None, low=None, high=None, required=False):
        if key not in table:
            if required:
                self.problems.append(f"{where}: missing {key}")
            return default
        value = table[key]
        if not _is_int(value):
            self.problems.append(f"{where}: {key} must be an integer")
            value = None
        elif (low is not None and value < low) or (high is not None and value > high):
            self.problems.append(f"{where}: {key} = {value} outside {low}..{high}")
            value = None
        return value

    def number(self, table: dict, key: str, where: str, default: float) -> float:
        value = table.get(key, default)
        if not _is_number(value):
            self.problems.append(f"{where}: {key} must be a number")
            return default
        return float(value)

    def int_list(self, table: dict, key: str, where: str) -> tuple[int, ...]:
        value = table.get(key, [])
        if not isinstance(value, list) or not all(_is_int(v) for v in value):
            self.problems.append(f"{where}: {key} must be a list of integers")
            return ()
        return tuple(value)

    def path(self, name: str, where: str) -> Path | None:
        candidates = [self.base / name] if self.base else []
        candidates.append(data_path("images", name))
        for candidate in candidates:
            if candidate.is_file():
                return candidate
        self.problems.append(f"{where}: image {name!r} not found")
        return None


def _read_nodes(check: _Checker, config: dict) -> tuple[NodeSpec, ...]:
    raw = config.get("nodes", [])
    if not isinstance(raw, list) or not raw:
        check.problems.append("nodes: at least one node is required")
        return ()

    nodes, addrs, names = [], set(), {BS_NAME}
    for i, table in enumerate(raw):
        where = f"nodes[{i}]"
        if not isinstance(table, dict):
            check.problems.append(f"{where}: expected a table")
            continue
        check.keys(table, _NODE_KEYS, where)
        addr = check.int(table, "addr", where, low=1, high=BROADCAST - 2, required=True)
        name = table.get("name")
        if name is not None and (not isinstance(name, str) or not name):
            check.problems.append(f"{where}: name must be a non-empty string")
            name = None
        if addr is not None and addr in addrs:
            check.problems.append(f"{where}: duplicate addr {addr}")
        effective = name or (IdentityRegistry.default_name(addr) if addr is not None else None)
        if effective is not None and effective in names:
            check.problems.append(f"{where}: duplicate name {effective!r}")
        addrs.add(addr)
        names.add(effective)

        images: list[Path] = []
        raw_images = table.get("images", [])
        if not isinstance(raw_images, list) or not all(isinstance(v, str) for v in raw_images):
            check.problems.append(f"{where}: images must be a list of file names")
        elif raw_images:
            if len(raw_images) < 2:
                check.problems.append(f"{where}: a boot chain needs at least two images")
            images = [p for p in (check.path(v, where) for v in raw_images) if p is not None]
        depth = len(raw_images) if raw_images else len(BUNDLED_IMAGES)

        tamper = check.int_list(table, "tamper", where)
        for level in tamper:
            if not 2 <= level <= depth:
                check.problems.append(f"{where}: tamper level {level} outside 2..{depth}")
        if addr is not None:
            nodes.append(NodeSpec(addr=addr, name=name, images=tuple(images), tamper=tamper))
    return tuple(nodes)


def _read_attack(check: _Checker, table: dict, where: str, declared: set[int], index: int) -> AttackSpec | None:
    kind = table.get("kind")
    if kind not in ATTACK_KINDS:
        check.problems.append(f"{where}: kind must be one of {', '.join(ATTACK_KINDS)}")
        return None
    stray = set(table) - _ATTACK_KEYS[kind] - {"t", "action", "kind", "label"}
    for key in sorted(stray):
        check.problems.append(f"{where}: {key!r} does not apply to a {kind} attack")

    message = None
    if "message" in table:
        try:
            message = MessageKind[table["message"]]
        except (KeyError, TypeError):
            names = ", ".join(k.name for k in MessageKind)
            check.problems.append(f"{where}: message must be one of {names}")
    src = check.int(table, "src", where, low=0, high=BROADCAST - 1)
    claim = check.int(table, "claim", where, low=1, high=BROADCAST - 2)
    peer = check.int(table, "peer", where, low=1, high=BROADCAST - 2)
    label = table.get("label", f"{kind}-{index}")
    if not isinstance(label, str):
        check.problems.append(f"{where}: label must be a string")
        label = f"{kind}-{index}"
    hm = table.get("hm")
    if hm is not None and (
        not isinstance(hm, str) or len(hm) != TRUST_VALUE_LEN or set(hm) - set(string.hexdigits.lower())
    ):
        check.problems.append(f"{where}: hm must be {TRUST_VALUE_LEN} lowercase hex characters")
        hm = None
    bits = check.int_list(table, "bits", where)
    if any(b < 0 for b in bits):
        check.problems.append(f"{where}: bits must be non-negative")

    attack = AttackSpec(
        kind=kind,
        label=label,
        message=message,
        src=src,
        index=check.int(table, "index", where, default=0, low=0) or 0,
        bits=bits,
        claim=claim,
        peer=peer,
        hm=hm,
    )
    check.problems.extend(f"{where}: {p}" for p in attack.problems())
    if kind == "impersonate":
        for role in ("claim", "peer"):
            value = getattr(attack, role)
            if value is not None and value not in declared:
                check.problems.append(f"{where}: {role} {value} is not a declared node")
        if attack.claim is not None and attack.claim == attack.peer:
            check.problems.append(f"{where}: claim and peer must differ")
    if kind in ("replay", "modify") and attack.src not in (None, 0) and attack.src not in declared:
        check.problems.append(f"{where}: src {attack.src} is not a declared node")
    return attack


def _read_events(check: _Checker, config: dict, declared: set[int]) -> tuple[Event, ...]:
    raw = config.get("events", [])
    if not isinstance(raw, list):
        check.problems.append("events: expected an array of tables")
        return ()

    events, last_t = [], 0.0
    for i, table in enumerate(raw):
        where = f"events[{i}]"
        if not isinstance(table, dict):
            check.problems.append(f"{where}: expected a table")
            continue
        action = table.get("action")
        if action not in ACTIONS:
            check.problems.append(f"{where}: action must be one of {', '.join(ACTIONS)}")
            continue
        check.keys(table, _EVENT_KEYS[action], where)

        t = table.get("t")
        if not _is_number(t) or t < 0:
            check.problems.append(f"{where}: t must be a non-negative number")
            t = last_t
        elif t < last_t:
            check.problems.append(f"{where}: t = {t} is earlier than the previous event at {last_t}")
        last_t = max(last_t, float(t))

        if action == "attack":
            attack = _read_attack(check, table, where, declared, i)
            if attack is not None:
                events.append(Event(t=float(t), action=action, attack=attack))
            continue

        node = check.int(table, "node", where, required=True)
        if node is not None and node not in declared:
            check.problems.append(f"{where}: node {node} is not a declared node")
        peer = None
        if action == "ake":
            peer = check.int(table, "peer", where, required=True)
            if peer is not None and peer not in declared:
                check.problems.append(f"{where}: peer {peer} is not a declared node")
            if peer is not None and peer == node:
                check.problems.append(f"{where}: a node cannot key with itself")
        probe = table.get("probe", True)
        if not isinstance(probe, bool):
            check.problems.append(f"{where}: probe must be true or false")
            probe = True
        events.append(
            Event(
                t=float(t),
                action=action,
                node=node,
                peer=peer,
                tamper=check.int_list(table, "tamper", where),
                probe=probe,
            )
        )
    return tuple(events)


def parse_scenario(config: dict, base: Path | None = None, default_name: str = "scenario") -> Scenario:
    """Validate an already parsed scenario table."""
    check = _Checker(base)
    check.keys(config, _TOP_KEYS, "scenario")

    name = config.get("name", default_name)
    if not isinstance(name, str):
        check.problems.append("scenario: name must be a string")
        name = default_name
    seed = check.int(config, "seed", "scenario", default=0)

    params = check.table(config, "params")
    check.keys(params, _PARAMS_KEYS, "params")
    profile = params.get("profile", "demo")
    if profile not in PROFILES:
        check.problems.append(f"params: profile must be one of {', '.join(PROFILES)}")
    key_seed = check.int(params, "key_seed", "params", default=0)
    offset = check.int(
        params, "offset", "params", default=DEFAULT_OFFSET, low=0, high=DIGEST_HEX - TRUST_VALUE_LEN
    )
    n = check.int(params, "n", "params", low=8, high=256)
    if n is not None and n % 8:
        check.problems.append("params: n must be a multiple of 8")

    channel = check.table(config, "channel")
    check.keys(channel, _CHANNEL_KEYS, "channel")
    loss = check.number(channel, "loss", "channel", 0.0)
    if not 0 <= loss < 1:
        check.problems.append(f"channel: loss {loss} outside [0, 1)")
    latency = check.number(channel, "latency", "channel", 1.0)
    if latency <= 0:
        check.problems.append("channel: latency must be positive")
    timeout = check.number(channel, "reassembly_timeout", "channel", 10.0)
    if timeout <= 0:
        check.problems.append("channel: reassembly_timeout must be positive")

    nodes = _read_nodes(check, config)
    events = _read_events(check, config, {n.addr for n in nodes})

    if check.problems:
        raise ScenarioError(check.problems)
    scenario = Scenario(
        name=name,
        seed=seed,
        profile=profile,
        key_seed=key_seed,
        offset=offset,
        n=n,
        loss=loss,
        latency=latency,
        reassembly_timeout=timeout,
        nodes=nodes,
        events=events,
    )
    logger.debug("scenario %s: %s nodes, %s events", name, len(nodes), len(events))
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        with open(path, "rb") as t:
            config = tomli.load(t)
    except tomli.TOMLDecodeError as e:
        raise ScenarioError([f"{path}: {e}"]) from e
    return parse_scenario(config, base=path.parent, default_name=path.stem)


def resolve_scenario(ref: str | Path) -> Path:
    """A scenario file, or the name of one bundled with the package."""
    path = Path(ref)
    if path.is_file():
        return path
    bundled = data_path("scenarios", f"{ref}.toml")
    if bundled.is_file():
        return bundled
    raise FileNotFoundError(f"no scenario file or bundled scenario named {str(ref)!r}")
