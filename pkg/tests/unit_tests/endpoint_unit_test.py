import ast
from pathlib import Path

import pytest
import ibe_trust.base
from ibe_trust.protocol.endpoint import Endpoint
from ibe_trust.protocol.frames import MAX_PAYLOAD, MessageKind, reassemble


class Recorder(Endpoint):
    def __init__(self, addr: int) -> None:
        super().__init__(addr, f"recorder-{addr}")
        self.heard = []

    def receive(self, frame):
        self.heard.append(frame)
        return []


@pytest.fixture(scope="function")
def endpoint():
    yield Recorder(4)


def test_send_fragments_into_the_outbox(endpoint):
    data = bytes(range(200))
    frames = endpoint.send(data, dst=0, kind=MessageKind.TA_REQUEST)
    assert len(frames) == -(-len(data) // MAX_PAYLOAD)
    assert endpoint.outbox == frames
    assert all(f.src == 4 and f.dst == 0 for f in frames)
    assert reassemble(frames) == data


def test_drain_empties_the_outbox(endpoint):
    endpoint.send(b"one", dst=1, kind=MessageKind.AKE)
    endpoint.send(b"two", dst=2, kind=MessageKind.AKE)
    frames = endpoint.drain()
    assert [f.dst for f in frames] == [1, 2]
    assert endpoint.drain() == []


def test_message_ids_and_sequence_numbers_advance(endpoint):
    first = endpoint.send(bytes(MAX_PAYLOAD + 1), dst=0, kind=MessageKind.TA_REQUEST)
    second = endpoint.send(b"x", dst=0, kind=MessageKind.TA_REQUEST)
    assert first[0].msg_id != second[0].msg_id
    assert [f.seq for f in first + second] == [0, 1, 2]


def test_endpoint_is_abstract():
    with pytest.raises(TypeError):
        Endpoint(1, "bare")
    assert str(Recorder(0x1A)) == "Recorder(recorder-26, 001a)"


def test_base_does_not_import_other_subpackages():
    base = Path(ibe_trust.base.__file__).parent
    for source in base.glob("*.py"):
        tree = ast.parse(source.read_text(encoding="utf-8"))
        for node in ast.walk(tree):
            if isinstance(node, ast.ImportFrom) and node.module:
                names = [node.module]
            elif isinstance(node, ast.Import):
                names = [alias.name for alias in node.names]
            else:
                continue
            for name in names:
                if name.startswith("ibe_trust."):
                    assert name.startswith("ibe_trust.base"), f"{source.name} imports {name}"
