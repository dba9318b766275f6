"""
One-pass identity-based key exchange.

The initiator A sends a single message carrying R = r * Q_A. Both sides reach
the same pairing value

    K_AB = e((r + h) * S_A, Q_B) = e(R + h * Q_A, S_B) = K_BA

with h = H_ake(R, id_A, id_B), and derive the session key from it. The
responder never answers; authentication is implicit in being able to derive
the key at all.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass
from functools import lru_cache
import logging
import random

from ibe_trust.base.codec import hash_to_zq_star, prefixed_text, sha256, truncated_mac, u16
from ibe_trust.base.curve import G1Point, GtElement
from ibe_trust.base.errors import AkeRejected, ParameterError
from ibe_trust.ibe.ibe import PrivateKey, PublicParams, hash_to_point, pairing

logger = logging.getLogger(__name__)

KEY_LEN = 16


@dataclass(frozen=True)
class AkeMessage:
    sender: str
    receiver: str
    sender_addr: int
    R: G1Point
    nonce: int
    mac: bytes

    def body(self, params: PublicParams) -> bytes:
        return params.curve.encode_point(self.R)


@dataclass(frozen=True)
class SessionKey:
    key: bytes
    transcript: bytes

    def __repr__(self) -> str:
        return f"SessionKey(key={self.key.hex()[:8]}..)"


def message_mac(params: PublicParams, sender_addr: int, nonce: int, R: G1Point) -> bytes:
    """The payload MAC the message travels with: sender(2) | nonce(2) | R."""
    return truncated_mac(u16(sender_addr), u16(nonce), params.curve.encode_point(R))


def h_ake(params: PublicParams, R: G1Point, id_a: str, id_b: str) -> int:
    return hash_to_zq_star(
        params.q, params.curve.encode_point(R), prefixed_text(id_a), prefixed_text(id_b)
    )


def kdf(params: PublicParams, K: GtElement, id_a: str, id_b: str, R: G1Point) -> SessionKey:
    if K.is_one():
        raise ParameterError("the identity of GT cannot key a session")
    transcript = prefixed_text(id_a) + prefixed_text(id_b) + params.curve.encode_point(R)
    return SessionKey(key=sha256(K.to_bytes(), transcript)[:KEY_LEN], transcript=transcript)


@lru_cache(maxsize=1024)
def _static_pairing(params: PublicParams, d: G1Point, id_b: str) -> GtElement:
    # e(S_A, Q_B) does not depend on the session and is computed once per peer
    return pairing(params, d, hash_to_point(params, id_b))


def initiate(
    params: PublicParams,
    id_a: str,
    sk_a: PrivateKey,
    id_b: str,
    rng: random.Random,
    sender_addr: int = 0,
) -> tuple[AkeMessage, SessionKey]:
    if sk_a.identity != id_a:
        raise ParameterError(f"private key belongs to {sk_a.identity}, not {id_a}")
    q_a = hash_to_point(params, id_a)
    static = _static_pairing(params, sk_a.d, id_b)

    while True:
        r = rng.randrange(1, params.q)
        R = params.curve.multiply(r, q_a)
        h = h_ake(params, R, id_a, id_b)
        if (r + h) % params.q:
            break
        logger.debug("r + h = 0 mod q for %s -> %s, drawing a new r", id_a, id_b)

    nonce = rng.randrange(1 << 16)
    msg = AkeMessage(
        sender=id_a,
        receiver=id_b,
        sender_addr=sender_addr,
        R=R,
        nonce=nonce,
        mac=message_mac(params, sender_addr, nonce, R),
    )
    key = kdf(params, static ** (r + h), id_a, id_b, R)
    logger.debug("initiated key exchange %s -> %s", id_a, id_b)
    return msg, key


def shared_secret(
    params: PublicParams,
    sk_b: PrivateKey,
    msg: AkeMessage,
    on_pairing: Callable[[], None] | None = None,
) -> GtElement:
    """K_BA = e(R + h * Q_A, S_B).

    `on_pairing` runs just before the pairing is evaluated, never on a
    degenerate point.
    """
    h = h_ake(params, msg.R, msg.sender, sk_b.identity)
    curve = params.curve
    point = curve.add(msg.R, curve.multiply(h, hash_to_point(params, msg.sender)))
    if point.is_infinity:
        raise AkeRejected("degenerate")
    if on_pairing is not None:
        on_pairing()
    return pairing(params, point, sk_b.d)


def respond(
    params: PublicParams,
    sk_b: PrivateKey,
    msg: AkeMessage,
    on_pairing: Callable[[], None] | None = None,
) -> SessionKey:
    """Derive the responder's key, or raise AkeRejected with the reason."""
    if msg.receiver != sk_b.identity:
        raise AkeRejected("wrong receiver")
    if message_mac(params, msg.sender_addr, msg.nonce, msg.R) != msg.mac:
        raise AkeRejected("mac mismatch")
    if not params.in_subgroup(msg.R):
        raise AkeRejected("off-curve")

    K = shared_secret(params, sk_b, msg, on_pairing)
    try:
        key = kdf(params, K, msg.sender, sk_b.identity, msg.R)
    except ParameterError as e:
        raise AkeRejected("degenerate") from e
    logger.debug("responded to key exchange %s -> %s", msg.sender, sk_b.identity)
    return key
