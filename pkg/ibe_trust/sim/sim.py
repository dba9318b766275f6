"""
Discrete-event run of a scenario on a simpy clock.

Every roster node is provisioned and registered at t = 0, then the scheduled
events run in order. A frame takes one latency unit on air; it is copied to
every tap first and then delivered on its link, where it may be lost. Replies
a receiver queues (acks) go out before the next event starts.

The key confirmation probe sent after a key exchange is a harness addition,
not part of the protocol, and is never billed.
"""

from __future__ import annotations

from collections import Counter
from collections.abc import Callable, Iterator
from dataclasses import dataclass, field
from enum import Enum
import dataclasses
import json
import logging
import random

import simpy

from ibe_trust.ake.ake import h_ake, kdf
from ibe_trust.protocol.endpoint import Endpoint
from ibe_trust.base.errors import ProtocolError
from ibe_trust.base.render import text_render
from ibe_trust.energy import energy
from ibe_trust.energy.energy import EnergyConstants, EnergyReport, TrafficStats
from ibe_trust.ibe.ibe import (
    MasterKey,
    PrivateKey,
    PublicParams,
    SecurityConfig,
    encrypt_blocks,
    hash_to_point,
    pairing,
    setup,
)
from ibe_trust.protocol.frames import (
    BROADCAST,
    Frame,
    MessageKind,
    encode_payload,
    fragment,
    on_air,
)
from ibe_trust.protocol.protocol import (
    BS_ADDR,
    BS_NAME,
    BaseStation,
    IdentityRegistry,
    Outcome,
    Reject,
    SensorNode,
    bs_terminate,
    dp_provision,
    pdp_register,
    probe_tag,
    ta_plaintext,
    ta_request,
)
from ibe_trust.secureboot.secureboot import BootChain, MeasurementRecord
from ibe_trust.sim.scenario import AttackSpec, Event, Scenario

logger = logging.getLogger(__name__)

ADVERSARY_ADDR = BROADCAST - 1


class Verdict(str, Enum):
    BLOCKED = "blocked"
    SUCCEEDED = "succeeded"
    NO_OP = "no-op"


@dataclass(frozen=True)
class AttackVerdict:
    label: str
    kind: str
    verdict: Verdict
    reasons: tuple[str, ...] = ()
    detail: str = ""

    def to_record(self) -> dict:
        return {
            "type": "attack",
            "label": self.label,
            "kind": self.kind,
            "verdict": self.verdict.value,
            "reasons": list(self.reasons),
            "detail": self.detail,
        }


class EventLog:
    """Line-delimited structured records of one run."""

    def __init__(self, clock: Callable[[], float]) -> None:
        self.clock = clock
        self.records: list[dict] = []

    def emit(self, record: dict) -> dict:
        record = {"t": self.clock(), **record}
        self.records.append(record)
        logger.info("%s", json.dumps(record, sort_keys=True))
        return record

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


class Channel:
    """Shared medium. Taps hear every frame; addressed links may drop it."""

    def __init__(
        self,
        env: simpy.Environment,
        rng: random.Random,
        log: EventLog,
        traffic: TrafficStats,
        on_outcome: Callable[[Outcome, str | None], None],
        loss: float = 0.0,
        latency: float = 1.0,
    ) -> None:
        self.env = env
        self.rng = rng
        self.log = log
        self.traffic = traffic
        self.on_outcome = on_outcome
        self.loss = loss
        self.latency = latency
        self.endpoints: dict[int, Endpoint] = {}
        self.taps: list[Endpoint] = []

    def attach(self, endpoint: Endpoint) -> None:
        self.endpoints[endpoint.addr] = endpoint

    def tap(self, endpoint: Endpoint) -> None:
        self.taps.append(endpoint)

    def _count(self, frames: list[Frame]) -> None:
        size = on_air(frames)
        match frames[0].kind:
            case MessageKind.TA_REQUEST:
                self.traffic.ta_request_bytes.append(size)
            case MessageKind.TA_ACK:
                self.traffic.ta_ack_bytes.append(size)
            case MessageKind.AKE:
                self.traffic.ake_bytes.append(size)

    def _receivers(self, frame: Frame) -> list[Endpoint]:
        if frame.dst == BROADCAST:
            return [e for addr, e in sorted(self.endpoints.items()) if addr != frame.src]
        receiver = self.endpoints.get(frame.dst)
        return [receiver] if receiver else []

    def transmit(
        self, frames: list[Frame], label: str | None = None, count: bool = True
    ) -> Iterator[simpy.Event]:
        """simpy process: put one message on air, frame by frame.

        Unlabeled messages are counted into the traffic stats unless `count` is off.
        """
        if count and label is None and frames:
            self._count(frames)
        for frame in frames:
            yield self.env.timeout(self.latency)
            self.log.emit(
                {
                    "type": "frame",
                    "kind": frame.kind.name,
                    "src": frame.src,
                    "dst": frame.dst,
                    "msg_id": frame.msg_id,
                    "frag": frame.frag_index,
                    "bytes": len(frame),
                    "label": label,
                }
            )
            for tap in self.taps:
                tap.receive(frame)
            for receiver in self._receivers(frame):
                if self.loss and self.rng.random() < self.loss:
                    self.log.emit({"type": "drop", "dst": receiver.addr, "msg_id": frame.msg_id})
                    continue
                for outcome in receiver.receive(frame):
                    self.on_outcome(outcome, label)
                replies = receiver.drain()
                if replies:
                    yield self.env.process(self.transmit(replies))


class Adversary(Endpoint):
    """Hears everything on air. Knows the public params, holds no private key."""

    def __init__(self, params: PublicParams, rng: random.Random, registry: IdentityRegistry) -> None:
        super().__init__(ADVERSARY_ADDR, "adversary")
        self.params = params
        self.rng = rng
        self.registry = registry
        self.captured: list[Frame] = []
        self.forged: set[Frame] = set()

    def receive(self, frame: Frame) -> list:
        if frame not in self.forged:
            self.captured.append(frame)
        return []

    def messages(self, kind: MessageKind, src: int) -> list[list[Frame]]:
        """Captured messages of one kind from one source, in the order first heard."""
        grouped: dict[int, dict[int, Frame]] = {}
        for frame in self.captured:
            if frame.kind == kind and frame.src == src:
                grouped.setdefault(frame.msg_id, {})[frame.frag_index] = frame
        return [[parts[i] for i in sorted(parts)] for parts in grouped.values()]

    def _select(self, attack: AttackSpec) -> list[Frame] | None:
        candidates = self.messages(attack.message, attack.src)
        if attack.index >= len(candidates):
            return None
        return candidates[attack.index]

    def modified(self, frames: list[Frame], bits: tuple[int, ...]) -> list[Frame]:
        """Flip the given bits of the message payload, counted across fragments."""
        data = bytearray(b"".join(f.payload for f in frames))
        for bit in bits:
            bit %= 8 * len(data)
            data[bit // 8] ^= 0x80 >> (bit % 8)
        out, offset = [], 0
        for f in frames:
            out.append(dataclasses.replace(f, payload=bytes(data[offset : offset + len(f.payload)])))
            offset += len(f.payload)
        return out

    def fake_ta_request(self, claim: int, hm: str | None = None) -> list[Frame]:
        """A trusted authentication request for an id of its choosing."""
        hm = hm or f"{self.rng.getrandbits(32):08x}"
        plaintext = ta_plaintext(claim, hm, self.rng.randrange(1 << 16))
        blob = encrypt_blocks(self.params, BS_NAME, plaintext, self.rng)
        return fragment(
            blob, src=claim, dst=BS_ADDR, kind=MessageKind.TA_REQUEST, msg_id=self.next_msg_id()
        )

    def impersonation(self, claim: int, peer: int) -> tuple[list[Frame], list[Frame]]:
        """A key exchange message claiming to come from `claim`, and a probe under
        the best key it can derive without the claimed node's private key."""
        params, curve = self.params, self.params.curve
        id_a, id_b = self.registry.name(claim), self.registry.name(peer)
        q_a = hash_to_point(params, id_a)
        r = self.rng.randrange(1, params.q)
        R = curve.multiply(r, q_a)
        h = h_ake(params, R, id_a, id_b)

        message = encode_payload(claim, self.rng.randrange(1 << 16), curve.encode_point(R))
        ake_frames = fragment(message, src=claim, dst=peer, kind=MessageKind.AKE, msg_id=self.next_msg_id())

        guess = pairing(params, q_a, hash_to_point(params, id_b)) ** (r + h)
        key = kdf(params, guess, id_a, id_b, R)
        probe = encode_payload(claim, self.rng.randrange(1 << 16), probe_tag(key))
        probe_frames = fragment(probe, src=claim, dst=peer, kind=MessageKind.PROBE, msg_id=self.next_msg_id())
        return ake_frames, probe_frames

    def forge(self, attack: AttackSpec) -> list[list[Frame]]:
        """Messages to put on air for one attack; empty when nothing matches."""
        messages = self._forge(attack)
        self.forged.update(f for frames in messages for f in frames)
        return messages

    def _forge(self, attack: AttackSpec) -> list[list[Frame]]:
        match attack.kind:
            case "replay":
                frames = self._select(attack)
                return [frames] if frames else []
            case "modify":
                frames = self._select(attack)
                return [self.modified(frames, attack.bits)] if frames else []
            case "fake_node":
                return [self.fake_ta_request(attack.claim, attack.hm)]
            case "impersonate":
                return list(self.impersonation(attack.claim, attack.peer))
            case _:
                raise ValueError(f"unknown attack kind {attack.kind!r}")


@dataclass
class SimReport:
    scenario: str
    seed: int
    profile: str
    phases: dict[str, str]
    trust_lists: dict[str, list[int]]
    rejections: dict[str, int]
    verdicts: list[AttackVerdict]
    energy: EnergyReport
    records: list[dict] = field(default_factory=list)

    def succeeded(self) -> list[AttackVerdict]:
        return [v for v in self.verdicts if v.verdict == Verdict.SUCCEEDED]

    def verdict(self, label: str) -> AttackVerdict:
        return next(v for v in self.verdicts if v.label == label)

    def to_text(self) -> str:
        return text_render("sim_report.txt.j2", self)

    def to_csv(self) -> str:
        return self.energy.to_csv()

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


class Simulation:
    def __init__(
        self,
        scenario: Scenario,
        *,
        seed: int | None = None,
        check_nonce: bool = True,
        params: PublicParams | None = None,
        master: MasterKey | None = None,
        keys: dict[str, PrivateKey] | None = None,
        constants: EnergyConstants | None = None,
    ) -> None:
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.env = simpy.Environment()
        self.log = EventLog(lambda: self.env.now)
        if params is None or master is None:
            params, master = setup(
                SecurityConfig.from_profile(scenario.profile, seed=scenario.key_seed, n=scenario.n)
            )
        self.params = params
        self.keys = keys or {}
        self.constants = constants or EnergyConstants.default()
        self.registry = IdentityRegistry()
        self.traffic = TrafficStats()

        self.bs = BaseStation(
            params,
            master,
            rng=self._rng("bs"),
            registry=self.registry,
            check_nonce=check_nonce,
            reassembly_timeout=scenario.reassembly_timeout,
        )
        self.bs.clock = self.now
        self.channel = Channel(
            self.env,
            self._rng("channel"),
            self.log,
            self.traffic,
            self._record,
            loss=scenario.loss,
            latency=scenario.latency,
        )
        self.adversary = Adversary(params, self._rng("adversary"), self.registry)
        self.adversary.clock = self.now
        self.channel.attach(self.bs)
        self.channel.tap(self.adversary)

        self.nodes: dict[int, SensorNode] = {}
        self.outcomes: list[Outcome] = []
        self.attacks: list[AttackSpec] = []
        self.attack_outcomes: dict[str, list[Outcome]] = {}

    def _rng(self, purpose: str) -> random.Random:
        return random.Random(f"{self.seed}:{purpose}")

    def now(self) -> float:
        return self.env.now

    def _record(self, outcome: Outcome, label: str | None = None) -> None:
        self.outcomes.append(outcome)
        if label is not None:
            self.attack_outcomes[label].append(outcome)
        record = outcome.to_record(self.env.now)
        record.pop("t")
        self.log.emit({**record, "label": label})

    def _boot_records(self, node: SensorNode, records: tuple[MeasurementRecord, ...]) -> None:
        for r in records:
            self.log.emit({**r.to_record(), "node": node.name})

    def provision(self) -> None:
        """DP and PDP for the whole roster, offline at t = 0."""
        for spec in self.scenario.nodes:
            name = spec.name or self.registry.default_name(spec.addr)
            secrets = dp_provision(self.bs, spec.addr, spec.name, private_key=self.keys.get(name))
            node = SensorNode(
                secrets,
                BootChain.provision(spec.image_bytes(), self.scenario.offset),
                rng=self._rng(f"node:{spec.addr}"),
                registry=self.registry,
                constants=self.constants,
                reassembly_timeout=self.scenario.reassembly_timeout,
            )
            node.clock = self.now
            self.nodes[spec.addr] = node
            self.channel.attach(node)
            try:
                pdp_register(self.bs, node)
            except ProtocolError as e:
                self.log.emit({"type": "skipped", "node": node.name, "action": "register", "detail": str(e)})
                continue
            self._boot_records(node, tuple(node.boot_log))
            self.log.emit({"type": "lifecycle", "node": node.name, "phase": node.phase.value})

    def _send(
        self, frames: list[Frame], label: str | None = None, count: bool = True
    ) -> Iterator[simpy.Event]:
        if frames:
            yield self.env.process(self.channel.transmit(frames, label, count))

    def _boot(self, event: Event) -> None:
        node = self.nodes[event.node]
        tamper = sorted(set(self.scenario.node(event.node).tamper) | set(event.tamper))
        try:
            outcome = node.boot(tamper)
        except ProtocolError as e:
            self.log.emit({"type": "skipped", "node": node.name, "action": "boot", "detail": str(e)})
            return
        self._boot_records(node, outcome.records)
        self.log.emit({"type": "lifecycle", "node": node.name, "phase": node.phase.value})

    def _ta(self, event: Event) -> list[Frame]:
        node = self.nodes[event.node]
        try:
            frames = ta_request(node)
        except ProtocolError as e:
            self.log.emit({"type": "skipped", "node": node.name, "action": "ta", "detail": str(e)})
            return []
        node.drain()
        return frames

    def _ake(self, event: Event) -> list[list[Frame]]:
        node, peer = self.nodes[event.node], self.nodes[event.peer]
        result = node.initiate_ake(peer.name)
        if isinstance(result, Reject):
            self._record(Outcome(node.name, MessageKind.AKE, node.addr, 0, False, result.reason, result.detail))
            return []
        frames, _ = result
        sends = [frames]
        if event.probe:
            sends.append(node.send_probe(peer.name))
        node.drain()
        return sends

    def _terminate(self, event: Event) -> list[Frame]:
        # the termination notice reaches the node out of band, revocations go on air
        bs_terminate(self.bs, event.node)
        node = self.nodes[event.node]
        node.terminate()
        self.log.emit({"type": "lifecycle", "node": node.name, "phase": node.phase.value})
        return self.bs.drain()

    def inject(self, attack: AttackSpec) -> Iterator[simpy.Event]:
        """simpy process: forge the attack's messages and put them on air."""
        self.attacks.append(attack)
        self.attack_outcomes[attack.label] = []
        forged = self.adversary.forge(attack)
        self.log.emit({"type": "inject", "label": attack.label, "kind": attack.kind, "messages": len(forged)})
        for frames in forged:
            yield from self._send(frames, attack.label)

    def _dispatch(self, event: Event) -> Iterator[simpy.Event]:
        match event.action:
            case "boot":
                self._boot(event)
            case "ta":
                yield from self._send(self._ta(event))
            case "ake":
                for frames in self._ake(event):
                    yield from self._send(frames)
            case "terminate":
                yield from self._send(self._terminate(event), count=False)
            case "attack":
                yield self.env.process(self.inject(event.attack))

    def _expire(self) -> None:
        for endpoint in (self.bs, *self.nodes.values()):
            for outcome in endpoint.expire():
                self._record(outcome)

    def _script(self) -> Iterator[simpy.Event]:
        for event in self.scenario.events:
            if event.t > self.env.now:
                yield self.env.timeout(event.t - self.env.now)
            yield from self._dispatch(event)
            self._expire()
        # let unfinished reassemblies run into their timeout
        yield self.env.timeout(self.scenario.reassembly_timeout)
        self._expire()

    def _verdict(self, attack: AttackSpec) -> AttackVerdict:
        outcomes = self.attack_outcomes[attack.label]
        if attack.kind == "impersonate":
            # deriving a key proves nothing; only a matching probe would
            decisive = [o for o in outcomes if o.kind == MessageKind.PROBE or not o.accepted]
        else:
            decisive = outcomes
        reasons = tuple(o.reason.value for o in outcomes if o.reason is not None)
        if not decisive:
            return AttackVerdict(attack.label, attack.kind, Verdict.NO_OP, reasons, "nothing was delivered")
        if any(o.accepted for o in decisive):
            return AttackVerdict(attack.label, attack.kind, Verdict.SUCCEEDED, reasons)
        return AttackVerdict(attack.label, attack.kind, Verdict.BLOCKED, reasons)

    def run(self) -> SimReport:
        self.provision()
        self.env.process(self._script())
        self.env.run()

        verdicts = [self._verdict(a) for a in self.attacks]
        for v in verdicts:
            self.log.emit(v.to_record())
            logger.info("attack %s (%s): %s", v.label, v.kind, v.verdict.value)
        self.traffic.trusted_ids = len(self.bs.db.trust_ids())
        self.log.emit(self.traffic.to_record())
        for node in self.nodes.values():
            for e in node.ledger.events:
                self.log.records.append(e.to_record())

        ledgers = {node.name: node.ledger for node in self.nodes.values()}
        trust_lists = {BS_NAME: self.bs.db.trust_ids()}
        trust_lists.update({n.name: sorted(n.trust_ids) for n in self.nodes.values()})
        rejections = Counter(o.reason.value for o in self.outcomes if not o.accepted and o.reason)
        return SimReport(
            scenario=self.scenario.name,
            seed=self.seed,
            profile=self.scenario.profile,
            phases={n.name: n.phase.value for n in self.nodes.values()},
            trust_lists=trust_lists,
            rejections=dict(sorted(rejections.items())),
            verdicts=verdicts,
            energy=energy.report(ledgers, self.constants, self.traffic),
            records=self.log.records,
        )


def run(scenario: Scenario, **kwargs) -> SimReport:
    """Run a scenario end to end; deterministic for a given scenario and seed."""
    return Simulation(scenario, **kwargs).run()


def records_from_jsonl(text: str) -> list[dict]:
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def report_from_records(records: list[dict], constants: EnergyConstants | None = None) -> EnergyReport:
    """Re-render the energy tables of a saved event log."""
    constants = constants or EnergyConstants.default()
    ledgers = energy.EnergyLedger.from_records(records, constants)
    traffic = next(
        (TrafficStats.from_record(r) for r in records if r.get("type") == "traffic"), TrafficStats()
    )
    return energy.report(ledgers, constants, traffic)
