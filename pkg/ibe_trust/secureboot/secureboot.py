"""
Chain-of-trust boot. Level 1 is the root of trust and is never measured; it
carries the reference digests of every later level. Each level measures the
next one before handing over, so a failure at level k means nothing above k
is ever looked at.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Iterator
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from math import prod
from pathlib import Path
import hashlib
import json
import logging

from ibe_trust.base.errors import AccessViolation, ConfigurationError
from ibe_trust.energy.energy import EnergyLedger

logger = logging.getLogger(__name__)

DIGEST_HEX = 64
TRUST_VALUE_LEN = 8
DEFAULT_OFFSET = 24


def measure(image: bytes) -> str:
    return hashlib.sha256(image).hexdigest()


def trust_value(digest: str, offset: int = DEFAULT_OFFSET) -> str:
    if not 0 <= offset <= DIGEST_HEX - TRUST_VALUE_LEN:
        raise ValueError(f"trust value offset {offset} outside 0..{DIGEST_HEX - TRUST_VALUE_LEN}")
    if len(digest) != DIGEST_HEX:
        raise ValueError(f"expected a {DIGEST_HEX} character digest")
    return digest[offset : offset + TRUST_VALUE_LEN]


def integrity(bits: Iterable[int]) -> int:
    """Overall integrity, the product of the per-level bits."""
    return prod(bits)


@dataclass(frozen=True)
class BootImage:
    level: int
    data: bytes
    role: str = ""

    def __post_init__(self):
        if self.level < 1:
            raise ConfigurationError(f"boot level must be >= 1, got {self.level}")
        if not self.role:
            object.__setattr__(self, "role", f"BL{self.level}")

    @classmethod
    def from_file(cls, level: int, path: str | Path) -> BootImage:
        return cls(level=level, data=Path(path).read_bytes())

    def flipped(self, bit: int = 0) -> BootImage:
        data = bytearray(self.data or b"\x00")
        data[bit // 8 % len(data)] ^= 1 << (bit % 8)
        return BootImage(self.level, bytes(data), self.role)


@dataclass(frozen=True)
class MeasurementRecord:
    t: float
    level: int
    digest: str
    bit: int

    def to_record(self) -> dict:
        return {"type": "boot", "t": self.t, "level": self.level, "digest": self.digest, "bit": self.bit}

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)


@dataclass(frozen=True)
class BootOutcome:
    trust_value: str
    records: tuple[MeasurementRecord, ...] = ()


@dataclass(frozen=True)
class Halt:
    failed_level: int
    records: tuple[MeasurementRecord, ...] = ()


class BootChain:
    """Images BL1..BLN with the reference digests stored alongside BL1."""

    def __init__(
        self,
        images: list[BootImage],
        references: dict[int, str],
        offset: int = DEFAULT_OFFSET,
    ) -> None:
        if len(images) < 2:
            raise ConfigurationError("a boot chain needs at least two levels")
        if [i.level for i in images] != list(range(1, len(images) + 1)):
            raise ConfigurationError("boot images must be levels 1..N in order")
        if not 0 <= offset <= DIGEST_HEX - TRUST_VALUE_LEN:
            raise ConfigurationError(f"trust value offset {offset} out of range")
        self.images = list(images)
        self.references = dict(references)
        self.offset = offset

    @classmethod
    def provision(cls, images: list[bytes], offset: int = DEFAULT_OFFSET) -> BootChain:
        """Build a chain whose references are taken from the pristine images."""
        boot_images = [BootImage(level, data) for level, data in enumerate(images, start=1)]
        references = {i.level: measure(i.data) for i in boot_images[1:]}
        return cls(boot_images, references, offset)

    @property
    def depth(self) -> int:
        return len(self.images)

    def image(self, level: int) -> BootImage:
        return self.images[level - 1]

    def tampered(self, levels: Iterable[int]) -> BootChain:
        """Same references, with one bit flipped in every listed level."""
        levels = set(levels)
        images = [i.flipped() if i.level in levels else i for i in self.images]
        return BootChain(images, self.references, self.offset)

    def __str__(self) -> str:
        return f"BootChain(depth={self.depth}, offset={self.offset})"


def verify_level(chain: BootChain, k: int, log: list[MeasurementRecord] | None = None, t: float = 0.0) -> int:
    if k == 1:
        return 1
    if not 2 <= k <= chain.depth:
        raise ConfigurationError(f"level {k} outside 1..{chain.depth}")
    if k not in chain.references:
        raise ConfigurationError(f"no reference digest for level {k}")
    digest = measure(chain.image(k).data)
    bit = int(digest == chain.references[k])
    if log is not None:
        log.append(MeasurementRecord(t=t, level=k, digest=digest, bit=bit))
    return bit


def boot(
    chain: BootChain,
    *,
    t: float = 0.0,
    ledger: EnergyLedger | None = None,
) -> BootOutcome | Halt:
    """Measure levels in order. Levels above a failed one are never measured."""
    log: list[MeasurementRecord] = []
    if ledger is not None:
        ledger.bill("boot", t=t, activity="boot")

    bits = [1]
    for k in range(2, chain.depth + 1):
        if ledger is not None and k >= 3:
            ledger.bill("sha2", t=t, activity="boot")
        bits.append(verify_level(chain, k, log, t))
        if integrity(bits) == 0:
            logger.warning("secure boot halted at level %s", k)
            return Halt(failed_level=k, records=tuple(log))

    value = trust_value(log[0].digest, chain.offset)
    logger.info("secure boot completed over %s levels", chain.depth)
    return BootOutcome(trust_value=value, records=tuple(log))


class WorldMode(str, Enum):
    SECURE = "secure"
    NORMAL = "normal"


@dataclass
class WorldState:
    owner: str = ""
    mode: WorldMode = WorldMode.NORMAL
    secure_store: dict[str, object] = field(default_factory=dict)
    switches: int = 0
    ledger: EnergyLedger | None = None
    clock: Callable[[], float] = lambda: 0.0


def switch_world(world: WorldState, target: WorldMode, activity: str = "") -> WorldState:
    if world.mode == target:
        return world
    world.mode = target
    world.switches += 1
    if world.ledger is not None:
        world.ledger.bill("switch", t=world.clock(), activity=activity)
    logger.debug("%s switched to the %s world", world.owner, target.value)
    return world


def secure_access(world: WorldState, asset: str) -> object:
    if world.mode != WorldMode.SECURE:
        logger.warning("%s denied %s from the normal world", world.owner, asset)
        raise AccessViolation(f"{asset} is only reachable from the secure world")
    if asset not in world.secure_store:
        raise KeyError(f"no secure asset named {asset!r}")
    logger.debug("%s granted %s", world.owner, asset)
    return world.secure_store[asset]


@contextmanager
def secure_world(world: WorldState, activity: str = "") -> Iterator[WorldState]:
    previous = world.mode
    switch_world(world, WorldMode.SECURE, activity)
    try:
        yield world
    finally:
        switch_world(world, previous, activity)
