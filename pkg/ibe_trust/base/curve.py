from __future__ import annotations

from dataclasses import dataclass
import logging

logger = logging.getLogger(__name__)


"""
Arithmetic for the supersingular curve E: y^2 = x^3 + 1 over F_p (p = 2 mod 3)
and for the quadratic extension F_p^2 = F_p[w] / (w^2 + w + 1), where w is a
primitive cube root of unity.
"""


def byte_length(p: int) -> int:
    return (p.bit_length() + 7) // 8


@dataclass(frozen=True)
class G1Point:
    x: int | None = None
    y: int | None = None

    @property
    def is_infinity(self) -> bool:
        return self.x is None

    def __str__(self) -> str:
        if self.is_infinity:
            return "G1Point(infinity)"
        return f"G1Point(x={self.x}, y={self.y})"


INFINITY = G1Point()


@dataclass(frozen=True)
class GtElement:
    """a + b*w in F_p^2, with w^2 = -w - 1."""

    a: int
    b: int
    p: int

    @classmethod
    def one(cls, p: int) -> GtElement:
        return cls(1, 0, p)

    def is_one(self) -> bool:
        return self.a == 1 and self.b == 0

    def __mul__(self, other: GtElement) -> GtElement:
        p = self.p
        a, b, c, d = self.a, self.b, other.a, other.b
        bd = b * d
        return GtElement((a * c - bd) % p, (a * d + b * c - bd) % p, p)

    def frobenius(self) -> GtElement:
        # w^p = w^2 = -1 - w
        return GtElement((self.a - self.b) % self.p, (-self.b) % self.p, self.p)

    def norm(self) -> int:
        return (self.a * self.a - self.a * self.b + self.b * self.b) % self.p

    def inverse(self) -> GtElement:
        n = self.norm()
        if n == 0:
            raise ZeroDivisionError("zero has no inverse in F_p^2")
        n_inv = pow(n, -1, self.p)
        c = self.frobenius()
        return GtElement(c.a * n_inv % self.p, c.b * n_inv % self.p, self.p)

    def __pow__(self, e: int) -> GtElement:
        if e < 0:
            return self.inverse() ** (-e)
        result = GtElement.one(self.p)
        base = self
        while e:
            if e & 1:
                result = result * base
            base = base * base
            e >>= 1
        return result

    def to_bytes(self) -> bytes:
        n = byte_length(self.p)
        return self.a.to_bytes(n, "big") + self.b.to_bytes(n, "big")

    def __str__(self) -> str:
        return f"GtElement({self.a} + {self.b}w)"


@dataclass(frozen=True)
class Curve:
    p: int

    def contains(self, point: G1Point) -> bool:
        if point.is_infinity:
            return True
        x, y = point.x, point.y
        if not (0 <= x < self.p and 0 <= y < self.p):
            return False
        return (y * y - x * x * x - 1) % self.p == 0

    def neg(self, point: G1Point) -> G1Point:
        if point.is_infinity:
            return point
        return G1Point(point.x, (-point.y) % self.p)

    def add(self, a: G1Point, b: G1Point) -> G1Point:
        if a.is_infinity:
            return b
        if b.is_infinity:
            return a
        p = self.p
        if a.x == b.x:
            if (a.y + b.y) % p == 0:
                return INFINITY
            slope = 3 * a.x * a.x * pow(2 * a.y, -1, p) % p
        else:
            slope = (b.y - a.y) * pow(b.x - a.x, -1, p) % p
        x3 = (slope * slope - a.x - b.x) % p
        y3 = (slope * (a.x - x3) - a.y) % p
        return G1Point(x3, y3)

    def double(self, point: G1Point) -> G1Point:
        return self.add(point, point)

    def multiply(self, k: int, point: G1Point) -> G1Point:
        if k < 0:
            return self.multiply(-k, self.neg(point))
        result = INFINITY
        addend = point
        while k:
            if k & 1:
                result = self.add(result, addend)
            addend = self.add(addend, addend)
            k >>= 1
        return result

    def cube_root(self, value: int) -> int:
        # cubing is a bijection on F_p when p = 2 mod 3
        return pow(value % self.p, (2 * self.p - 1) // 3, self.p)

    def lift_y(self, y: int) -> G1Point:
        """The unique curve point with the given y coordinate."""
        y %= self.p
        return G1Point(self.cube_root(y * y - 1), y)

    def encode_point(self, point: G1Point) -> bytes:
        n = byte_length(self.p)
        if point.is_infinity:
            return bytes(2 * n)
        return point.x.to_bytes(n, "big") + point.y.to_bytes(n, "big")

    def decode_point(self, data: bytes) -> G1Point:
        n = byte_length(self.p)
        if len(data) != 2 * n:
            raise ValueError(f"expected {2 * n} point bytes, got {len(data)}")
        if not any(data):
            return INFINITY
        point = G1Point(int.from_bytes(data[:n], "big"), int.from_bytes(data[n:], "big"))
        if not self.contains(point):
            raise ValueError(f"point is not on the curve: {point}")
        return point

    @property
    def point_size(self) -> int:
        return 2 * byte_length(self.p)
