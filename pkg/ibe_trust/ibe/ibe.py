from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
import logging
import random

from Crypto.Util.number import isPrime
from Crypto.Util.strxor import strxor

from ibe_trust.base.codec import hash_to_zq_star, sha256
from ibe_trust.base.config import load_bundled_toml
from ibe_trust.base.curve import INFINITY, Curve, G1Point, GtElement
from ibe_trust.base.errors import DecryptionError, ParameterError

logger = logging.getLogger(__name__)

HASH_IDS = (
    "H1:sha256-maptopoint",
    "H2:sha256-gt-truncated",
    "H3:sha256-mod-q",
    "H4:sha256-truncated",
)

PROFILES = ("toy", "demo")


def _xor(a: bytes, b: bytes) -> bytes:
    if not a:
        return b""
    return strxor(a, b)


def check_field(p: int, q: int, n: int) -> None:
    if p % 3 != 2:
        raise ParameterError("p not ≡ 2 mod 3")
    if not isPrime(p):
        raise ParameterError("p is not prime")
    if q == p or (p + 1) % q != 0:
        raise ParameterError("q does not divide p+1")
    if q <= 3 or not isPrime(q):
        raise ParameterError("q is not prime")
    if not 0 < n <= 256 or n % 8 != 0:
        raise ParameterError(f"n must be a multiple of 8 in (0, 256], got {n}")


@dataclass(frozen=True)
class SecurityConfig:
    profile: str
    p: int
    q: int
    n: int = 128
    seed: int = 0

    @classmethod
    def from_profile(cls, profile: str, seed: int = 0, n: int | None = None) -> SecurityConfig:
        """A named profile; `n` overrides the profile's block size."""
        match profile:
            case "toy":
                return cls(profile="toy", p=227, q=19, n=128 if n is None else n, seed=seed)
            case "demo":
                stored = load_bundled_toml("demo_params.toml")["params"]
                return cls(
                    profile="demo",
                    p=int(stored["p"]),
                    q=int(stored["q"]),
                    n=int(stored["n"]) if n is None else n,
                    seed=seed,
                )
            case _:
                raise ParameterError(
                    f"unknown profile {profile!r}, expected one of {', '.join(PROFILES)}"
                )

    def validate(self) -> None:
        check_field(self.p, self.q, self.n)


@dataclass(frozen=True)
class PublicParams:
    p: int
    q: int
    n: int
    generator: G1Point
    public: G1Point
    hash_ids: tuple[str, ...] = field(default=HASH_IDS)

    @property
    def cofactor(self) -> int:
        return (self.p + 1) // self.q

    @property
    def curve(self) -> Curve:
        return Curve(self.p)

    @property
    def block_size(self) -> int:
        return self.n // 8

    def in_subgroup(self, point: G1Point) -> bool:
        curve = self.curve
        return (
            not point.is_infinity
            and curve.contains(point)
            and curve.multiply(self.q, point).is_infinity
        )

    def validate(self) -> None:
        """Field checks first, the curve arithmetic below assumes a prime p."""
        check_field(self.p, self.q, self.n)
        for name, point in (("P", self.generator), ("sP", self.public)):
            if not self.in_subgroup(point):
                raise ParameterError(f"{name} is not a point of order q")

    def __str__(self) -> str:
        return f"params: p={self.p}, q={self.q}, n={self.n}, P={self.generator}, sP={self.public}"


@dataclass(frozen=True)
class MasterKey:
    s: int

    def __repr__(self) -> str:
        return "MasterKey(s=<hidden>)"


@dataclass(frozen=True)
class PrivateKey:
    identity: str
    d: G1Point

    def verify(self, params: PublicParams) -> bool:
        """e(d, P) == e(Q_ID, sP), checkable without the master key."""
        q_id = hash_to_point(params, self.identity)
        return pairing(params, self.d, params.generator) == pairing(
            params, q_id, params.public
        )


@dataclass(frozen=True)
class Ciphertext:
    U: G1Point
    V: bytes
    W: bytes

    def to_bytes(self, params: PublicParams) -> bytes:
        return params.curve.encode_point(self.U) + self.V + self.W

    @classmethod
    def from_bytes(cls, params: PublicParams, data: bytes) -> Ciphertext:
        size = params.curve.point_size
        block = params.block_size
        if len(data) < size + block or len(data) > size + 2 * block:
            raise DecryptionError(f"ciphertext of {len(data)} bytes has the wrong length")
        try:
            u = params.curve.decode_point(data[:size])
        except ValueError as e:
            raise DecryptionError(f"malformed U: {e}") from e
        return cls(U=u, V=data[size : size + block], W=data[size + block :])


def setup(config: SecurityConfig) -> tuple[PublicParams, MasterKey]:
    config.validate()
    rng = random.Random(config.seed)
    curve = Curve(config.p)
    cofactor = (config.p + 1) // config.q

    generator = INFINITY
    while generator.is_infinity:
        generator = curve.multiply(cofactor, curve.lift_y(rng.randrange(config.p)))

    master = MasterKey(rng.randrange(1, config.q))
    params = PublicParams(
        p=config.p,
        q=config.q,
        n=config.n,
        generator=generator,
        public=curve.multiply(master.s, generator),
    )
    logger.info("setup for profile %s: %s", config.profile, params)
    return params, master


@lru_cache(maxsize=4096)
def hash_to_point(params: PublicParams, identity: str) -> G1Point:
    """H1: MapToPoint, y0 = SHA-256(id) mod p, x0 = cube root of (y0^2 - 1)."""
    if not identity:
        raise ParameterError("identity must be a non-empty string")
    curve = params.curve
    attempt = 0
    while True:
        label = identity if attempt == 0 else f"{identity}{attempt}"
        y0 = int.from_bytes(sha256(label.encode("utf-8")), "big") % params.p
        point = curve.multiply(params.cofactor, curve.lift_y(y0))
        if not point.is_infinity:
            return point
        logger.debug("hash_to_point(%s) hit infinity on attempt %s", identity, attempt)
        attempt += 1


def extract(params: PublicParams, master: MasterKey, identity: str) -> PrivateKey:
    q_id = hash_to_point(params, identity)
    return PrivateKey(identity=identity, d=params.curve.multiply(master.s, q_id))


def _miller(curve: Curve, q: int, a: G1Point, b: G1Point) -> GtElement:
    """f_{q,a} evaluated at the distorted point (w * x_b, y_b)."""
    p = curve.p
    xb, yb = b.x, b.y

    def line(t: G1Point, slope: int) -> GtElement:
        return GtElement((yb - t.y + slope * t.x) % p, (-slope * xb) % p, p)

    def vertical(x: int) -> GtElement:
        return GtElement((-x) % p, xb % p, p)

    num = GtElement.one(p)
    den = GtElement.one(p)
    t = a
    for bit in bin(q)[3:]:
        slope = 3 * t.x * t.x * pow(2 * t.y, -1, p) % p
        num = num * num * line(t, slope)
        den = den * den
        t = curve.double(t)
        if not t.is_infinity:
            den = den * vertical(t.x)
        if bit == "1":
            if t.x == a.x:
                # t == -a, the chord is vertical and the sum is infinity
                num = num * vertical(t.x)
                t = INFINITY
            else:
                slope = (a.y - t.y) * pow(a.x - t.x, -1, p) % p
                num = num * line(t, slope)
                t = curve.add(t, a)
                if not t.is_infinity:
                    den = den * vertical(t.x)
    if num.norm() == 0 or den.norm() == 0:
        raise ParameterError("degenerate pairing input")
    return num * den.inverse()


def pairing(params: PublicParams, a: G1Point, b: G1Point) -> GtElement:
    """Modified Tate pairing e(a, b) = f_{q,a}(phi(b))^((p^2 - 1) / q)."""
    curve = params.curve
    for point in (a, b):
        if not curve.contains(point):
            raise ParameterError(f"point is not on the curve: {point}")
    if a.is_infinity or b.is_infinity:
        return GtElement.one(params.p)

    f = _miller(curve, params.q, a, b)
    f = f.frobenius() * f.inverse()
    return f ** ((params.p + 1) // params.q)


@lru_cache(maxsize=1024)
def _identity_pairing(params: PublicParams, identity: str) -> GtElement:
    return pairing(params, hash_to_point(params, identity), params.public)


def h2(params: PublicParams, g: GtElement) -> bytes:
    return sha256(g.to_bytes())[: params.block_size]


def h3(params: PublicParams, sigma: bytes, m: bytes) -> int:
    return hash_to_zq_star(params.q, sigma, m)


def h4(params: PublicParams, sigma: bytes) -> bytes:
    return sha256(sigma)[: params.block_size]


def encrypt(
    params: PublicParams,
    identity: str,
    m: bytes,
    rng: random.Random | None = None,
    *,
    sigma: bytes | None = None,
) -> Ciphertext:
    block = params.block_size
    if len(m) > block:
        raise ParameterError(f"message of {len(m)} bytes exceeds the {block} byte block")
    if sigma is None:
        if rng is None:
            raise ParameterError("encrypt needs an rng or a fixed sigma")
        sigma = rng.randbytes(block)
    elif len(sigma) != block:
        raise ParameterError(f"sigma must be {block} bytes")

    r = h3(params, sigma, m)
    g = _identity_pairing(params, identity) ** r
    return Ciphertext(
        U=params.curve.multiply(r, params.generator),
        V=_xor(sigma, h2(params, g)),
        W=_xor(m, h4(params, sigma)[: len(m)]),
    )


def decrypt(params: PublicParams, sk: PrivateKey, c: Ciphertext) -> bytes:
    if len(c.V) != params.block_size or len(c.W) > params.block_size:
        raise DecryptionError("ciphertext blocks have the wrong size")
    if not params.in_subgroup(c.U):
        raise DecryptionError("malformed U: not a point of order q")

    g = pairing(params, sk.d, c.U)
    sigma = _xor(c.V, h2(params, g))
    m = _xor(c.W, h4(params, sigma)[: len(c.W)])
    r = h3(params, sigma, m)
    if params.curve.multiply(r, params.generator) != c.U:
        raise DecryptionError("ciphertext failed the re-encryption check")
    return m


def encrypt_blocks(
    params: PublicParams, identity: str, data: bytes, rng: random.Random
) -> bytes:
    """Encrypt a message longer than one block as consecutive ciphertexts."""
    block = params.block_size
    chunks = [data[i : i + block] for i in range(0, len(data), block)] or [b""]
    logger.debug("encrypting %s bytes for %s as %s blocks", len(data), identity, len(chunks))
    return b"".join(
        encrypt(params, identity, chunk, rng).to_bytes(params) for chunk in chunks
    )


def decrypt_blocks(params: PublicParams, sk: PrivateKey, data: bytes) -> bytes:
    full = params.curve.point_size + 2 * params.block_size
    if not data:
        raise DecryptionError("empty ciphertext")
    parts = [data[i : i + full] for i in range(0, len(data), full)]
    return b"".join(
        decrypt(params, sk, Ciphertext.from_bytes(params, part)) for part in parts
    )


def ciphertext_length(params: PublicParams, plaintext_length: int) -> int:
    block = params.block_size
    blocks = max(1, -(-plaintext_length // block))
    return blocks * (params.curve.point_size + block) + plaintext_length


# BasicIdent: C = (rP, M xor H2(e(Q_ID, sP)^r)). Used only to check the scheme's
# bilinear structure, never on the wire.
def basic_encrypt(
    params: PublicParams, identity: str, m: bytes, r: int
) -> tuple[G1Point, bytes]:
    if len(m) > params.block_size:
        raise ParameterError("message exceeds one block")
    g = _identity_pairing(params, identity) ** r
    mask = h2(params, g)
    return params.curve.multiply(r, params.generator), _xor(m, mask[: len(m)])


def basic_decrypt(params: PublicParams, sk: PrivateKey, u: G1Point, v: bytes) -> bytes:
    mask = h2(params, pairing(params, sk.d, u))
    return _xor(v, mask[: len(v)])
