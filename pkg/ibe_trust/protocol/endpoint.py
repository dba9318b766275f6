from abc import ABC, abstractmethod
from collections.abc import Callable
import logging

from ibe_trust.protocol.frames import Frame, MessageKind, fragment

logger = logging.getLogger(__name__)


class Endpoint(ABC):
    """Anything with a radio address: sensor nodes, the base station, an adversary."""

    def __init__(self, addr: int, name: str, clock: Callable[[], float] | None = None) -> None:
        super().__init__()
        self.addr = addr
        self.name = name
        self.clock = clock or (lambda: 0.0)
        self.outbox: list[Frame] = []
        self._msg_id = 0
        self._seq = 0

    def next_msg_id(self) -> int:
        self._msg_id = (self._msg_id + 1) & 0xFFFF
        return self._msg_id

    def send(self, data: bytes, *, dst: int, kind: MessageKind) -> list[Frame]:
        frames = fragment(
            data, src=self.addr, dst=dst, kind=kind, msg_id=self.next_msg_id(), seq_start=self._seq
        )
        self._seq = (self._seq + len(frames)) & 0xFF
        self.outbox.extend(frames)
        logger.debug("%s queued %s %s frames for %04x", self.name, len(frames), kind.name, dst)
        return frames

    def drain(self) -> list[Frame]:
        frames, self.outbox = self.outbox, []
        return frames

    @abstractmethod
    def receive(self, frame: Frame) -> list:
        """Handle one delivered frame and return the outcomes it produced."""

    def __str__(self) -> str:
        return f"{self.__class__.__name__}({self.name}, {self.addr:04x})"
