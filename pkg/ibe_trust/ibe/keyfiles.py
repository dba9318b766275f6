"""
Binary file layouts for public parameters and keys.

Every file starts with a 4 byte magic and a version byte. Integers are
written big-endian behind a 2 byte length prefix, text likewise as UTF-8.

    params       b"IBTP" 01 | p | q | n | P.x | P.y | sP.x | sP.y
    master key   b"IBTM" 01 | s
    private key  b"IBTK" 01 | identity | d.x | d.y
"""

from pathlib import Path
import logging

from ibe_trust.base.codec import Reader, encode_int, prefixed_text
from ibe_trust.base.curve import G1Point
from ibe_trust.base.errors import ParameterError
from ibe_trust.ibe.ibe import MasterKey, PrivateKey, PublicParams

logger = logging.getLogger(__name__)

PARAMS_MAGIC = b"IBTP"
MASTER_MAGIC = b"IBTM"
KEY_MAGIC = b"IBTK"
VERSION = 1


def _header(magic: bytes) -> bytes:
    return magic + bytes([VERSION])


def _open(data: bytes, magic: bytes) -> Reader:
    reader = Reader(data)
    try:
        found = reader.take(4)
        version = reader.u8()
    except ValueError as e:
        raise ParameterError(f"truncated key file: {e}") from e
    if found != magic:
        raise ParameterError(f"bad magic {found!r}, expected {magic!r}")
    if version != VERSION:
        raise ParameterError(f"unsupported file version {version}")
    return reader


def _finish(reader: Reader) -> None:
    if not reader.done():
        raise ParameterError("trailing bytes after key material")


def params_to_bytes(params: PublicParams) -> bytes:
    fields = [
        params.p,
        params.q,
        params.n,
        params.generator.x,
        params.generator.y,
        params.public.x,
        params.public.y,
    ]
    return _header(PARAMS_MAGIC) + b"".join(encode_int(f) for f in fields)


def params_from_bytes(data: bytes) -> PublicParams:
    reader = _open(data, PARAMS_MAGIC)
    try:
        p, q, n, gx, gy, px, py = (reader.integer() for _ in range(7))
    except ValueError as e:
        raise ParameterError(f"truncated params file: {e}") from e
    _finish(reader)
    params = PublicParams(
        p=p, q=q, n=n, generator=G1Point(gx, gy), public=G1Point(px, py)
    )
    params.validate()
    return params


def save_params(path: str | Path, params: PublicParams) -> None:
    Path(path).write_bytes(params_to_bytes(params))
    logger.info("wrote params to %s", path)


def load_params(path: str | Path) -> PublicParams:
    return params_from_bytes(Path(path).read_bytes())


def save_master_key(path: str | Path, master: MasterKey) -> None:
    Path(path).write_bytes(_header(MASTER_MAGIC) + encode_int(master.s))
    logger.info("wrote master key to %s", path)


def load_master_key(path: str | Path, params: PublicParams) -> MasterKey:
    reader = _open(Path(path).read_bytes(), MASTER_MAGIC)
    try:
        s = reader.integer()
    except ValueError as e:
        raise ParameterError(f"truncated master key file: {e}") from e
    _finish(reader)
    if not 1 <= s < params.q:
        raise ParameterError("master key out of range")
    if params.curve.multiply(s, params.generator) != params.public:
        raise ParameterError("master key does not match sP")
    return MasterKey(s)


def private_key_to_bytes(sk: PrivateKey) -> bytes:
    return (
        _header(KEY_MAGIC)
        + prefixed_text(sk.identity)
        + encode_int(sk.d.x)
        + encode_int(sk.d.y)
    )


def save_private_key(path: str | Path, sk: PrivateKey) -> None:
    Path(path).write_bytes(private_key_to_bytes(sk))
    logger.info("wrote private key for %s to %s", sk.identity, path)


def load_private_key(path: str | Path, params: PublicParams) -> PrivateKey:
    reader = _open(Path(path).read_bytes(), KEY_MAGIC)
    try:
        identity = reader.text()
        d = G1Point(reader.integer(), reader.integer())
    except ValueError as e:
        raise ParameterError(f"truncated private key file: {e}") from e
    _finish(reader)
    if not params.curve.contains(d):
        raise ParameterError(f"private key for {identity} is not on the curve")
    sk = PrivateKey(identity=identity, d=d)
    if not sk.verify(params):
        raise ParameterError(f"private key for {identity} does not match the params")
    return sk
