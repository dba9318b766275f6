"""
Node and base-station state machines for the deployment lifecycle.

    DP   offline provisioning: identity, private key, params into the node
    PDP  controlled boot, trust value Hm registered with the base station
    DY   field boot, fresh trust value Hm'
    TA   trusted authentication with the base station, trustID list back

Trusted authentication, reconstructed from the message fields:

    node -> BS   IBE_Enc(base-station, addr | Hm' | N | mac)
    BS -> node   IBE_Enc(node, N | trustID list | mac)

Terminating a node re-sends the second message, minus the terminated id,
to every trusted node whose list held it.

Both ciphertexts travel raw in TA_REQUEST / TA_ACK frames. Key exchange
messages and key confirmation probes travel as sender | nonce | body | mac
payloads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
import logging
import random

from Crypto.Hash import HMAC, SHA256

from ibe_trust.ake import ake
from ibe_trust.ake.ake import AkeMessage, SessionKey
from ibe_trust.base.codec import MAC_LEN, truncated_mac, u16
from ibe_trust.protocol.endpoint import Endpoint
from ibe_trust.base.errors import (
    AkeRejected,
    DecryptionError,
    FrameError,
    MacMismatch,
    ProtocolError,
)
from ibe_trust.energy.energy import EnergyConstants, EnergyLedger
from ibe_trust.ibe.ibe import (
    MasterKey,
    PrivateKey,
    PublicParams,
    decrypt_blocks,
    encrypt_blocks,
    extract,
)
from ibe_trust.protocol.frames import (
    BROADCAST,
    Frame,
    MessageKind,
    Reassembler,
    decode_payload,
    encode_payload,
    on_air,
    reassemble,
)
from ibe_trust.secureboot import secureboot
from ibe_trust.secureboot.secureboot import (
    TRUST_VALUE_LEN,
    BootChain,
    BootOutcome,
    Halt,
    MeasurementRecord,
    WorldState,
    secure_access,
    secure_world,
)

logger = logging.getLogger(__name__)

BS_ADDR = 0x0000
BS_NAME = "base-station"
TA_REQUEST_LEN = 2 + TRUST_VALUE_LEN + 2 + MAC_LEN
PROBE_LEN = 16


class Phase(str, Enum):
    DP = "DP"
    PDP = "PDP"
    DY = "DY"
    TA = "TA"
    TRUSTED = "TRUSTED"
    HALTED = "HALTED"
    TERMINATED = "TERMINATED"


class Status(str, Enum):
    REGISTERED = "registered"
    TRUSTED = "trusted"
    TERMINATED = "terminated"


class RejectReason(str, Enum):
    DECRYPT_FAILURE = "decrypt failure"
    MAC_MISMATCH = "mac mismatch"
    UNKNOWN_ID = "unknown id"
    TRUST_MISMATCH = "trust value mismatch"
    NONCE_REPLAY = "nonce replay"
    NOT_TRUSTED = "not in trust list"
    OFF_CURVE = "off-curve"
    REPLAY = "replay"
    WRONG_RECEIVER = "wrong receiver"
    DEGENERATE = "degenerate"
    STALE_ACK = "stale ack"
    NO_SESSION = "no session"
    PROBE_MISMATCH = "probe mismatch"
    REASSEMBLY_TIMEOUT = "reassembly timeout"


class IdentityRegistry:
    """2-byte wire addresses to the identity strings that keys are bound to."""

    def __init__(self) -> None:
        self._names: dict[int, str] = {BS_ADDR: BS_NAME}
        self._addrs: dict[str, int] = {BS_NAME: BS_ADDR}

    @staticmethod
    def default_name(addr: int) -> str:
        return f"node-{addr:03d}"

    def add(self, addr: int, name: str | None = None) -> str:
        name = name or self.default_name(addr)
        if not 0 < addr < BROADCAST:
            raise ProtocolError(f"address {addr:#06x} is reserved")
        if addr in self._names or name in self._addrs:
            raise ProtocolError(f"duplicate id {addr} ({name})")
        self._names[addr] = name
        self._addrs[name] = addr
        return name

    def name(self, addr: int) -> str:
        # unregistered senders still hash to some identity
        return self._names.get(addr, self.default_name(addr))

    def addr(self, name: str) -> int:
        return self._addrs[name]


@dataclass
class TrustRecord:
    addr: int
    name: str
    hm: str
    status: Status = Status.REGISTERED
    last_nonce: int | None = None
    nonces: set[int] = field(default_factory=set)
    # the list the node was last sent, revocations are diffed against it
    issued: tuple[int, ...] = ()


class TrustDB:
    def __init__(self) -> None:
        self.records: dict[int, TrustRecord] = {}

    def register(self, addr: int, name: str, hm: str) -> TrustRecord:
        record = self.records.get(addr)
        if record is None:
            record = self.records[addr] = TrustRecord(addr=addr, name=name, hm=hm)
        else:
            logger.info("re-registering %s with a new trust value", name)
            record.hm = hm
            record.status = Status.REGISTERED
        return record

    def get(self, addr: int) -> TrustRecord | None:
        return self.records.get(addr)

    def trust_ids(self) -> list[int]:
        return sorted(a for a, r in self.records.items() if r.status == Status.TRUSTED)

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class Ack:
    node: int
    nonce: int
    trust_ids: tuple[int, ...]
    frames: tuple[Frame, ...] = ()


@dataclass(frozen=True)
class Reject:
    reason: RejectReason
    detail: str = ""


@dataclass(frozen=True)
class Outcome:
    """A verdict one endpoint reached on one delivered message."""

    actor: str
    kind: MessageKind
    src: int
    msg_id: int
    accepted: bool
    reason: RejectReason | None = None
    detail: str = ""

    def to_record(self, t: float) -> dict:
        return {
            "type": "verdict",
            "t": t,
            "actor": self.actor,
            "kind": self.kind.name,
            "src": self.src,
            "msg_id": self.msg_id,
            "accepted": self.accepted,
            "reason": self.reason.value if self.reason else None,
            "detail": self.detail,
        }


@dataclass(frozen=True)
class NodeSecrets:
    addr: int
    name: str
    params: PublicParams
    private_key: PrivateKey


def encode_trust_ids(ids: list[int] | tuple[int, ...]) -> bytes:
    return b"".join(u16(i) for i in sorted(ids))


def decode_trust_ids(data: bytes) -> tuple[int, ...]:
    if len(data) % 2:
        raise FrameError("trustID list has an odd length")
    return tuple(int.from_bytes(data[i : i + 2], "big") for i in range(0, len(data), 2))


def probe_tag(key: SessionKey) -> bytes:
    return HMAC.new(key.key, b"probe" + key.transcript, digestmod=SHA256).digest()[:PROBE_LEN]


class BaseStation(Endpoint):
    """The trusted authority: key generator, trust database, trustID issuer."""

    def __init__(
        self,
        params: PublicParams,
        master: MasterKey,
        *,
        rng: random.Random,
        registry: IdentityRegistry | None = None,
        check_nonce: bool = True,
        reassembly_timeout: float = 10.0,
    ) -> None:
        super().__init__(BS_ADDR, BS_NAME)
        self.params = params
        self.master = master
        self.private_key = extract(params, master, BS_NAME)
        self.rng = rng
        self.registry = registry or IdentityRegistry()
        self.db = TrustDB()
        self.roster: set[int] = set()
        self.check_nonce = check_nonce
        self.reassembler = Reassembler(reassembly_timeout)
        self.rejections: list[Reject] = []

    def receive(self, frame: Frame) -> list[Outcome]:
        if frame.kind != MessageKind.TA_REQUEST or frame.dst not in (BS_ADDR, BROADCAST):
            return []
        frames = self.reassembler.push(frame, self.clock())
        if frames is None:
            return []
        result = bs_handle_ta(self, frames)
        if isinstance(result, Ack):
            return [Outcome(self.name, frame.kind, frame.src, frame.msg_id, True, detail=f"ack to {result.node:04x}")]
        return [Outcome(self.name, frame.kind, frame.src, frame.msg_id, False, result.reason, result.detail)]

    def expire(self) -> list[Outcome]:
        return [
            Outcome(self.name, MessageKind.TA_REQUEST, src, msg_id, False, RejectReason.REASSEMBLY_TIMEOUT)
            for src, msg_id in self.reassembler.expire(self.clock())
        ]


class SensorNode(Endpoint):
    def __init__(
        self,
        secrets: NodeSecrets,
        chain: BootChain,
        *,
        rng: random.Random,
        registry: IdentityRegistry,
        constants: EnergyConstants | None = None,
        reassembly_timeout: float = 10.0,
    ) -> None:
        super().__init__(secrets.addr, secrets.name)
        self.params = secrets.params
        self.chain = chain
        self.rng = rng
        self.registry = registry
        self.phase = Phase.DP
        self.stored_hm: str | None = None
        self.trust_value: str | None = None
        self.trust_ids: set[int] = set()
        self.pending_nonce: int | None = None
        self.ack_nonce: int | None = None
        self.seen_ake: set[tuple[int, int]] = set()
        self.sessions: dict[str, SessionKey] = {}
        self.pairings = 0
        self.boot_log: list[MeasurementRecord] = []
        self.ledger = EnergyLedger(self.name, constants)
        self.reassembler = Reassembler(reassembly_timeout)
        # the key exchange key S_A sits in on-SoC ROM next to the root of trust
        self.rom_key = secrets.private_key
        sk = secrets.private_key
        self.world = WorldState(
            owner=self.name,
            secure_store={
                "private_key": sk,
                "encrypt": lambda identity, data: encrypt_blocks(self.params, identity, data, self.rng),
                "decrypt": lambda data: decrypt_blocks(self.params, sk, data),
            },
            ledger=self.ledger,
            clock=lambda: self.clock(),
        )

    def _bill(self, category: str, amount: int, activity: str) -> None:
        self.ledger.bill(category, amount, t=self.clock(), activity=activity)

    def controlled_boot(self) -> BootOutcome | Halt:
        """Boot in the controlled environment; pristine images, nothing billed."""
        outcome = secureboot.boot(self.chain, t=self.clock())
        self.boot_log.extend(outcome.records)
        return outcome

    def boot(self, tamper: list[int] | tuple[int, ...] = ()) -> BootOutcome | Halt:
        """Field boot. Returns the node to DY, it has to authenticate again."""
        if self.phase == Phase.DP:
            raise ProtocolError(f"{self.name} was never registered")
        chain = self.chain.tampered(tamper) if tamper else self.chain
        outcome = secureboot.boot(chain, t=self.clock(), ledger=self.ledger)
        self.boot_log.extend(outcome.records)
        self.trust_ids.clear()
        self.sessions.clear()
        self.pending_nonce = None
        self.ack_nonce = None
        if isinstance(outcome, Halt):
            self.trust_value = None
            self.phase = Phase.HALTED
            logger.warning("%s halted at boot level %s", self.name, outcome.failed_level)
        else:
            self.trust_value = outcome.trust_value
            self.phase = Phase.DY
            logger.info("%s booted into DY", self.name)
        return outcome

    def receive(self, frame: Frame) -> list[Outcome]:
        if frame.dst not in (self.addr, BROADCAST):
            return []
        match frame.kind:
            case MessageKind.TA_ACK:
                frames = self.reassembler.push(frame, self.clock())
                if frames is None:
                    return []
                installed, reason = node_handle_ack(self, frames)
                return [Outcome(self.name, frame.kind, frame.src, frame.msg_id, installed, reason)]
            case MessageKind.AKE:
                result = peer_authenticate(self, frame)
                if isinstance(result, Reject):
                    return [Outcome(self.name, frame.kind, frame.src, frame.msg_id, False, result.reason, result.detail)]
                return [Outcome(self.name, frame.kind, frame.src, frame.msg_id, True)]
            case MessageKind.PROBE:
                reason = check_probe(self, frame)
                return [Outcome(self.name, frame.kind, frame.src, frame.msg_id, reason is None, reason)]
            case _:
                return []

    def terminate(self) -> None:
        """Dropped by the base station; only a reboot and a new TA bring it back."""
        self.phase = Phase.TERMINATED
        self.trust_ids.clear()
        self.sessions.clear()
        self.pending_nonce = None
        self.ack_nonce = None
        logger.info("%s terminated", self.name)

    def expire(self) -> list[Outcome]:
        return [
            Outcome(self.name, MessageKind.TA_ACK, src, msg_id, False, RejectReason.REASSEMBLY_TIMEOUT)
            for src, msg_id in self.reassembler.expire(self.clock())
        ]

    def initiate_ake(self, peer: str) -> tuple[list[Frame], SessionKey] | Reject:
        """Send the one-pass key exchange message to a trusted peer."""
        peer_addr = self.registry.addr(peer)
        if self.phase != Phase.TRUSTED or peer_addr not in self.trust_ids:
            logger.warning("%s will not key with %s: not in its trust list", self.name, peer)
            return Reject(RejectReason.NOT_TRUSTED, f"{peer} not in trust list")
        msg, key = ake.initiate(self.params, self.name, self.rom_key, peer, self.rng, self.addr)
        payload = encode_payload(self.addr, msg.nonce, msg.body(self.params))
        frames = self.send(payload, dst=peer_addr, kind=MessageKind.AKE)
        self._bill("tx", on_air(frames), "ake-initiate")
        self.sessions[peer] = key
        return frames, key

    def send_probe(self, peer: str) -> list[Frame]:
        """Key confirmation ping under the session key. Harness only, not billed."""
        key = self.sessions[peer]
        payload = encode_payload(self.addr, self.rng.randrange(1 << 16), probe_tag(key))
        return self.send(payload, dst=self.registry.addr(peer), kind=MessageKind.PROBE)


def dp_provision(
    bs: BaseStation,
    addr: int,
    name: str | None = None,
    private_key: PrivateKey | None = None,
) -> NodeSecrets:
    """Offline delivery: identity, private key and params into a fresh node.

    A key extracted earlier (a key file) may be handed in instead of extracting here.
    """
    if addr in bs.roster:
        raise ProtocolError(f"duplicate id {addr}")
    name = name or bs.registry.default_name(addr)
    if private_key is None:
        private_key = extract(bs.params, bs.master, name)
    elif private_key.identity != name or not private_key.verify(bs.params):
        raise ProtocolError(f"the key handed in for {name} does not belong to it")
    bs.registry.add(addr, name)
    bs.roster.add(addr)
    logger.info("provisioned %s at %04x", name, addr)
    return NodeSecrets(addr=addr, name=name, params=bs.params, private_key=private_key)


def pdp_register(bs: BaseStation, node: SensorNode) -> TrustRecord:
    """Controlled boot and out-of-band registration of the trust value."""
    if node.addr not in bs.roster:
        raise ProtocolError(f"{node.name} was not provisioned by this base station")
    outcome = node.controlled_boot()
    if isinstance(outcome, Halt):
        raise ProtocolError(f"{node.name} failed its controlled boot at level {outcome.failed_level}, cannot register")
    node.stored_hm = outcome.trust_value
    node.phase = Phase.PDP
    record = bs.db.register(node.addr, node.name, outcome.trust_value)
    logger.info("registered %s", node.name)
    return record


def ta_plaintext(addr: int, hm: str, nonce: int) -> bytes:
    body = u16(addr) + hm.encode("ascii") + u16(nonce)
    return body + truncated_mac(body)


def ta_request(node: SensorNode, rng: random.Random | None = None) -> list[Frame]:
    """Report the fresh trust value to the base station."""
    if node.phase not in (Phase.DY, Phase.TA) or node.trust_value is None:
        raise ProtocolError(f"{node.name} has no fresh trust value (phase {node.phase.value})")
    rng = rng or node.rng
    nonce = rng.randrange(1 << 16)
    plaintext = ta_plaintext(node.addr, node.trust_value, nonce)

    with secure_world(node.world, "ta-request") as world:
        encrypt = secure_access(world, "encrypt")
        blob = encrypt(BS_NAME, plaintext)
    node.ledger.bill("encrypt", 8 * len(plaintext), t=node.clock(), activity="ta-request")

    frames = node.send(blob, dst=BS_ADDR, kind=MessageKind.TA_REQUEST)
    node.ledger.bill("tx", on_air(frames), t=node.clock(), activity="ta-request")
    node.pending_nonce = nonce
    node.phase = Phase.TA
    logger.info("%s sent its trust value in %s frames", node.name, len(frames))
    return frames


def _reject(bs: BaseStation, reason: RejectReason, detail: str = "") -> Reject:
    logger.warning("base station rejected trusted authentication: %s %s", reason.value, detail)
    reject = Reject(reason, detail)
    bs.rejections.append(reject)
    return reject


def bs_handle_ta(bs: BaseStation, frames: list[Frame]) -> Ack | Reject:
    try:
        plaintext = decrypt_blocks(bs.params, bs.private_key, reassemble(frames))
    except (DecryptionError, FrameError) as e:
        return _reject(bs, RejectReason.DECRYPT_FAILURE, str(e))
    if len(plaintext) != TA_REQUEST_LEN:
        return _reject(bs, RejectReason.DECRYPT_FAILURE, f"request of {len(plaintext)} bytes")

    body, mac = plaintext[:-MAC_LEN], plaintext[-MAC_LEN:]
    if truncated_mac(body) != mac:
        return _reject(bs, RejectReason.MAC_MISMATCH)
    addr = int.from_bytes(body[:2], "big")
    hm = body[2 : 2 + TRUST_VALUE_LEN].decode("ascii", errors="replace")
    nonce = int.from_bytes(body[-2:], "big")

    record = bs.db.get(addr)
    if record is None:
        return _reject(bs, RejectReason.UNKNOWN_ID, f"{addr:04x}")
    if hm != record.hm:
        return _reject(bs, RejectReason.TRUST_MISMATCH, record.name)
    if bs.check_nonce and nonce in record.nonces:
        return _reject(bs, RejectReason.NONCE_REPLAY, record.name)

    record.nonces.add(nonce)
    record.last_nonce = nonce
    record.status = Status.TRUSTED
    trust_ids = tuple(bs.db.trust_ids())
    ack_frames = _send_ack(bs, record, trust_ids)
    logger.info("%s is trusted, trustID list now holds %s ids", record.name, len(trust_ids))
    return Ack(node=addr, nonce=nonce, trust_ids=trust_ids, frames=tuple(ack_frames))


def _send_ack(bs: BaseStation, record: TrustRecord, trust_ids: tuple[int, ...]) -> list[Frame]:
    """IBE_Enc(node, N | trustID list | mac), N being the nonce of the node's last request."""
    ack_body = u16(record.last_nonce) + encode_trust_ids(trust_ids)
    blob = encrypt_blocks(bs.params, record.name, ack_body + truncated_mac(ack_body), bs.rng)
    record.issued = trust_ids
    return bs.send(blob, dst=record.addr, kind=MessageKind.TA_ACK)


def node_handle_ack(node: SensorNode, frames: list[Frame]) -> tuple[bool, RejectReason | None]:
    """Install the trustID list if the ack echoes the expected nonce.

    A node waiting in TA expects its pending nonce. A trusted node only takes
    revocations: an ack that echoes the nonce of the list it holds and
    carries a strict subset of that list.
    """
    node._bill("rx", on_air(frames), "ta-ack")
    if node.phase == Phase.TA and node.pending_nonce is not None:
        expected, revocation = node.pending_nonce, False
    elif node.phase == Phase.TRUSTED and node.ack_nonce is not None:
        expected, revocation = node.ack_nonce, True
    else:
        logger.warning("%s discarded an ack it was not waiting for", node.name)
        return False, RejectReason.STALE_ACK

    try:
        with secure_world(node.world, "ta-ack") as world:
            plaintext = secure_access(world, "decrypt")(reassemble(frames))
    except (DecryptionError, FrameError):
        logger.warning("%s could not decrypt an ack", node.name)
        return False, RejectReason.DECRYPT_FAILURE

    body, mac = plaintext[:-MAC_LEN], plaintext[-MAC_LEN:]
    if len(plaintext) < 2 + MAC_LEN or truncated_mac(body) != mac:
        return False, RejectReason.MAC_MISMATCH
    if int.from_bytes(body[:2], "big") != expected:
        logger.warning("%s discarded an ack with a stale nonce", node.name)
        return False, RejectReason.STALE_ACK
    try:
        trust_ids = set(decode_trust_ids(body[2:]))
    except FrameError:
        return False, RejectReason.MAC_MISMATCH

    if revocation:
        if not trust_ids < node.trust_ids:
            logger.warning("%s discarded an ack that revokes nothing", node.name)
            return False, RejectReason.STALE_ACK
        for addr in node.trust_ids - trust_ids:
            node.sessions.pop(node.registry.name(addr), None)
        node.trust_ids = trust_ids
        logger.info("%s revoked ids, %s left in its list", node.name, len(trust_ids))
        return True, None

    node.trust_ids = trust_ids
    node.ack_nonce = node.pending_nonce
    node.pending_nonce = None
    node.phase = Phase.TRUSTED
    logger.info("%s is trusted with %s ids in its list", node.name, len(trust_ids))
    return True, None


def bs_terminate(bs: BaseStation, addr: int) -> None:
    """Drop a node from the trustID list.

    Every trusted node whose last list held it gets a revocation ack in the
    outbox, keyed to the nonce of its last request. A node that misses it
    keeps the stale list until its next trusted authentication.
    """
    record = bs.db.get(addr)
    if record is None:
        logger.warning("terminate of unknown id %04x ignored", addr)
        return
    record.status = Status.TERMINATED
    trust_ids = tuple(bs.db.trust_ids())
    for other in bs.db.records.values():
        if other.status == Status.TRUSTED and addr in other.issued and other.last_nonce is not None:
            _send_ack(bs, other, tuple(i for i in other.issued if i != addr))
    logger.info("%s terminated, trustID list now holds %s ids", record.name, len(trust_ids))


def peer_authenticate(receiver: SensorNode, frame: Frame) -> SessionKey | Reject:
    """Two tiers: the cheap trustID check first, the pairing only for listed senders."""
    receiver._bill("rx", len(frame), "ake-respond")

    def reject(reason: RejectReason, detail: str = "") -> Reject:
        logger.warning("%s rejected key exchange from %04x: %s", receiver.name, frame.src, reason.value)
        return Reject(reason, detail)

    try:
        payload = decode_payload(frame.payload)
    except MacMismatch:
        return reject(RejectReason.MAC_MISMATCH)
    except FrameError as e:
        return reject(RejectReason.MAC_MISMATCH, str(e))

    if payload.sender not in receiver.trust_ids:
        return reject(RejectReason.NOT_TRUSTED)
    if (payload.sender, payload.nonce) in receiver.seen_ake:
        return reject(RejectReason.REPLAY)

    params = receiver.params
    try:
        R = params.curve.decode_point(payload.message)
    except ValueError as e:
        return reject(RejectReason.OFF_CURVE, str(e))
    if not params.in_subgroup(R):
        return reject(RejectReason.OFF_CURVE)

    msg = AkeMessage(
        sender=receiver.registry.name(payload.sender),
        receiver=receiver.name,
        sender_addr=payload.sender,
        R=R,
        nonce=payload.nonce,
        mac=payload.mac,
    )

    def bill_pairing() -> None:
        receiver.pairings += 1
        receiver._bill("pairing", 1, "ake-respond")

    try:
        key = ake.respond(params, receiver.rom_key, msg, on_pairing=bill_pairing)
    except AkeRejected as e:
        return reject(RejectReason(e.reason))

    receiver.seen_ake.add((payload.sender, payload.nonce))
    receiver.sessions[msg.sender] = key
    logger.info("%s keyed with %s", receiver.name, msg.sender)
    return key


def check_probe(receiver: SensorNode, frame: Frame) -> RejectReason | None:
    try:
        payload = decode_payload(frame.payload)
    except FrameError:
        return RejectReason.MAC_MISMATCH
    key = receiver.sessions.get(receiver.registry.name(payload.sender))
    if key is None:
        return RejectReason.NO_SESSION
    if probe_tag(key) != payload.message:
        logger.warning("%s: key confirmation from %04x failed", receiver.name, payload.sender)
        return RejectReason.PROBE_MISMATCH
    return None
