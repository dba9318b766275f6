"""
Wire layouts.

Frame header, 21 bytes, 802.15.4 fields little-endian as on air:

    fcf(2) seq(1) dst_pan(2) dst(2) src(2) kind(1) flags(1)
    msg_id(2) frag_index(1) frag_count(1) payload_len(1) reserved(5)

fcf 0x8841 is a data frame, PAN id compression, short addresses.

Payload, big-endian, at most 106 bytes:

    sender(2) nonce(2) message(<= 98) mac(4)

mac is the first 4 bytes of SHA-256(sender | nonce | message).

    sender 0x0001, nonce 0x00ff, message "hi":
    00 01 00 ff 68 69 6a 0b c9 76
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
import logging
import math
import struct

from ibe_trust.base.codec import MAC_LEN, truncated_mac, u16
from ibe_trust.base.errors import FrameError, MacMismatch, ReassemblyTimeout

logger = logging.getLogger(__name__)

HEADER = struct.Struct("<HBHHHBBHBBB5x")
HEADER_SIZE = HEADER.size
MAX_FRAME = 127
MAX_PAYLOAD = MAX_FRAME - HEADER_SIZE
MAX_MESSAGE = MAX_PAYLOAD - 2 - 2 - MAC_LEN

FCF_DATA = 0x8841
DEFAULT_PAN = 0x1A2B
BROADCAST = 0xFFFF
MORE_FRAGMENTS = 0x01


class MessageKind(IntEnum):
    DATA = 0
    TA_REQUEST = 1
    TA_ACK = 2
    AKE = 3
    PROBE = 4


@dataclass(frozen=True)
class Frame:
    src: int
    dst: int
    kind: MessageKind
    msg_id: int = 0
    frag_index: int = 0
    frag_count: int = 1
    seq: int = 0
    payload: bytes = b""
    pan: int = DEFAULT_PAN

    def __post_init__(self):
        if len(self.payload) > MAX_PAYLOAD:
            raise FrameError(f"payload of {len(self.payload)} bytes exceeds {MAX_PAYLOAD}")
        if not 0 <= self.frag_index < self.frag_count <= 255:
            raise FrameError(f"fragment {self.frag_index} of {self.frag_count} is invalid")

    @property
    def more_fragments(self) -> bool:
        return self.frag_index < self.frag_count - 1

    def __len__(self) -> int:
        return HEADER_SIZE + len(self.payload)

    def to_bytes(self) -> bytes:
        header = HEADER.pack(
            FCF_DATA,
            self.seq & 0xFF,
            self.pan,
            self.dst,
            self.src,
            int(self.kind),
            MORE_FRAGMENTS if self.more_fragments else 0,
            self.msg_id & 0xFFFF,
            self.frag_index,
            self.frag_count,
            len(self.payload),
        )
        return header + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> Frame:
        if not HEADER_SIZE <= len(data) <= MAX_FRAME:
            raise FrameError(f"frame of {len(data)} bytes outside {HEADER_SIZE}..{MAX_FRAME}")
        fcf, seq, pan, dst, src, kind, _, msg_id, index, count, length = HEADER.unpack(
            data[:HEADER_SIZE]
        )
        if fcf != FCF_DATA:
            raise FrameError(f"unexpected frame control 0x{fcf:04x}")
        if length != len(data) - HEADER_SIZE:
            raise FrameError(f"payload length field {length} does not match {len(data) - HEADER_SIZE}")
        try:
            kind = MessageKind(kind)
        except ValueError as e:
            raise FrameError(f"unknown message kind {kind}") from e
        return cls(
            src=src,
            dst=dst,
            kind=kind,
            msg_id=msg_id,
            frag_index=index,
            frag_count=count,
            seq=seq,
            payload=data[HEADER_SIZE:],
            pan=pan,
        )

    def __str__(self) -> str:
        return (
            f"Frame({self.kind.name} {self.src:04x}->{self.dst:04x} "
            f"msg {self.msg_id} frag {self.frag_index + 1}/{self.frag_count}, {len(self)} bytes)"
        )


@dataclass(frozen=True)
class Payload:
    sender: int
    nonce: int
    message: bytes
    mac: bytes


def encode_payload(sender: int, nonce: int, message: bytes) -> bytes:
    for field, value in (("sender", sender), ("nonce", nonce)):
        if not 0 <= value <= 0xFFFF:
            raise FrameError(f"{field} {value} does not fit in 2 bytes")
    if len(message) > MAX_MESSAGE:
        raise FrameError(f"message of {len(message)} bytes exceeds {MAX_MESSAGE}")
    body = u16(sender) + u16(nonce) + message
    return body + truncated_mac(body)


def decode_payload(data: bytes) -> Payload:
    if not 4 + MAC_LEN <= len(data) <= MAX_PAYLOAD:
        raise FrameError(f"payload of {len(data)} bytes has an invalid length")
    body, mac = data[:-MAC_LEN], data[-MAC_LEN:]
    if truncated_mac(body) != mac:
        raise MacMismatch("payload mac mismatch")
    return Payload(
        sender=int.from_bytes(body[:2], "big"),
        nonce=int.from_bytes(body[2:4], "big"),
        message=body[4:],
        mac=mac,
    )


def fragment(
    data: bytes,
    *,
    src: int,
    dst: int,
    kind: MessageKind,
    msg_id: int,
    seq_start: int = 0,
    pan: int = DEFAULT_PAN,
) -> list[Frame]:
    count = max(1, math.ceil(len(data) / MAX_PAYLOAD))
    if count > 255:
        raise FrameError(f"{len(data)} bytes need more than 255 fragments")
    frames = [
        Frame(
            src=src,
            dst=dst,
            kind=kind,
            msg_id=msg_id,
            frag_index=i,
            frag_count=count,
            seq=(seq_start + i) & 0xFF,
            payload=data[i * MAX_PAYLOAD : (i + 1) * MAX_PAYLOAD],
            pan=pan,
        )
        for i in range(count)
    ]
    logger.debug("fragmented %s bytes into %s frames", len(data), count)
    return frames


def reassemble(frames: list[Frame]) -> bytes:
    if not frames:
        raise ReassemblyTimeout("no fragments received")
    count = frames[0].frag_count
    by_index = {f.frag_index: f for f in frames}
    if any(f.frag_count != count for f in frames):
        raise FrameError("fragments disagree on the fragment count")
    missing = sorted(set(range(count)) - set(by_index))
    if missing:
        raise ReassemblyTimeout(f"missing fragments {missing} of {count}")
    return b"".join(by_index[i].payload for i in range(count))


def on_air(frames: list[Frame]) -> int:
    return sum(len(f) for f in frames)


class Reassembler:
    """Collects fragments per (src, msg_id) until complete or timed out."""

    def __init__(self, timeout: float = 10.0) -> None:
        self.timeout = timeout
        self._pending: dict[tuple[int, int], tuple[float, dict[int, Frame]]] = {}

    def push(self, frame: Frame, now: float) -> list[Frame] | None:
        key = (frame.src, frame.msg_id)
        started, parts = self._pending.setdefault(key, (now, {}))
        parts[frame.frag_index] = frame
        if len(parts) < frame.frag_count:
            return None
        del self._pending[key]
        return [parts[i] for i in sorted(parts)]

    def expire(self, now: float) -> list[tuple[int, int]]:
        expired = [
            key for key, (started, _) in self._pending.items() if now - started >= self.timeout
        ]
        for key in expired:
            _, parts = self._pending.pop(key)
            logger.warning(
                "reassembly of message %s from %04x timed out with %s fragments",
                key[1],
                key[0],
                len(parts),
            )
        return expired
