import hashlib
import logging

logger = logging.getLogger(__name__)

MAC_LEN = 4


def sha256(*parts: bytes) -> bytes:
    h = hashlib.sha256()
    for part in parts:
        h.update(part)
    return h.digest()


def truncated_mac(*parts: bytes) -> bytes:
    # unkeyed: integrity comes from the surrounding IBE ciphertext
    return sha256(*parts)[:MAC_LEN]


def hash_to_zq_star(q: int, *parts: bytes) -> int:
    """Map bytes into [1, q-1]."""
    return int.from_bytes(sha256(*parts), "big") % (q - 1) + 1


def u16(value: int) -> bytes:
    return value.to_bytes(2, "big")


def prefixed(data: bytes) -> bytes:
    return u16(len(data)) + data


def prefixed_text(text: str) -> bytes:
    return prefixed(text.encode("utf-8"))


def encode_int(value: int) -> bytes:
    raw = value.to_bytes(max(1, (value.bit_length() + 7) // 8), "big")
    return prefixed(raw)


class Reader:
    """Sequential reader over length-prefixed fields."""

    def __init__(self, data: bytes) -> None:
        self.data = bytes(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError(
                f"truncated input: wanted {n} bytes at offset {self.pos}, have {len(self.data) - self.pos}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return int.from_bytes(self.take(2), "big")

    def prefixed(self) -> bytes:
        return self.take(self.u16())

    def integer(self) -> int:
        return int.from_bytes(self.prefixed(), "big")

    def text(self) -> str:
        return self.prefixed().decode("utf-8")

    def done(self) -> bool:
        return self.pos == len(self.data)
