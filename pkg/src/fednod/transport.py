"""Binary wire format for model parameters and the client/server session.

Frame layout (little-endian)::

    magic "FDNV" | version u8 | msg_type u8 | payload_len u64 | payload | crc32 u32

The CRC covers the payload only.
"""

from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import DecodeError, IntegrityError, PayloadSizeError, ProtocolError

MAGIC = b"FDNV"
VERSION = 0x01
MAX_PAYLOAD = 1 << 32
MAX_RANK = 8
HEADER = struct.Struct("<4sBBQ")
CRC = struct.Struct("<I")
UPDATE_PREFIX = struct.Struct("<Qff")
FRAME_OVERHEAD = HEADER.size + CRC.size


class MsgType(IntEnum):
    HELLO = 0x01
    CONFIG = 0x02
    GLOBAL_WEIGHTS = 0x03
    CLIENT_UPDATE = 0x04
    EVAL_REPORT = 0x05
    SHUTDOWN = 0x06
    ERROR = 0x7F


@dataclass(frozen=True)
class Message:
    msg_type: MsgType
    payload: bytes


# -- weights payload ---------------------------------------------------------

def encode_tensors(named: list[tuple[str, np.ndarray]]) -> bytes:
    out = [struct.pack("<I", len(named))]
    for name, tensor in named:
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"tensor name of {len(raw)} bytes exceeds 65535")
        tensor = np.asarray(tensor)
        if tensor.ndim > MAX_RANK:
            raise ValueError(f"tensor rank {tensor.ndim} exceeds {MAX_RANK}")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack(f"<B{tensor.ndim}I", tensor.ndim, *tensor.shape))
        out.append(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    return b"".join(out)


def decode_tensors(buf: bytes, offset: int = 0) -> list[tuple[str, np.ndarray]]:
    """Inverse of :func:`encode_tensors`; the payload must be consumed exactly."""
    view = memoryview(buf)

    def take(n, what):
        nonlocal offset
        if offset + n > len(view):
            raise DecodeError(f"truncated payload reading {what}: need {n} bytes, {len(view) - offset} left", offset)
        chunk = view[offset : offset + n]
        offset += n
        return chunk

    (count,) = struct.unpack("<I", take(4, "tensor count"))
    named = []
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        start = offset
        try:
            name = bytes(take(name_len, "name")).decode("utf-8")
        except UnicodeDecodeError:
            raise DecodeError("tensor name is not valid UTF-8", start) from None
        rank_at = offset
        (rank,) = struct.unpack("<B", take(1, "rank"))
        if rank > MAX_RANK:
            raise DecodeError(f"bad rank {rank}", rank_at)
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        size = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(take(4 * size, "tensor data"), dtype="<f4")
        named.append((name, data.astype(np.float32).reshape(dims)))
    if offset != len(view):
        raise DecodeError(f"{len(view) - offset} trailing byte(s) after last tensor", offset)
    return named


def encode_weights(weights) -> bytes:
    """Serialize a :class:`~fednod.models.ModelWeights`; names are ``<layer>.<param>``."""
    return encode_tensors([(f"{layer}.{name}", t) for layer, name, t in weights.entries])


def decode_weights(buf: bytes, arch_name: str = "", offset: int = 0):
    from .models import ModelWeights

    entries = []
    for full, tensor in decode_tensors(buf, offset):
        layer, sep, name = full.partition(".")
        if not sep or not layer.isdigit():
            raise DecodeError(f"tensor name {full!r} is not <layer>.<param>", offset)
        entries.append((int(layer), name, tensor))
    return ModelWeights(arch_name, entries)


def encode_update(update) -> bytes:
    loss, acc = update.local_metrics
    return UPDATE_PREFIX.pack(update.n_samples, loss, acc) + encode_weights(update.weights)


def decode_update(buf: bytes, client_id: int, arch_name: str = ""):
    from .federation import ClientUpdate

    if len(buf) < UPDATE_PREFIX.size:
        raise DecodeError("truncated client update prefix", len(buf))
    n, loss, acc = UPDATE_PREFIX.unpack_from(buf)
    weights = decode_weights(buf, arch_name, UPDATE_PREFIX.size)
    return ClientUpdate(client_id, weights, n, (float(loss), float(acc)))


# -- framing -----------------------------------------------------------------

def frame_message(msg_type, payload: bytes = b"") -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise PayloadSizeError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    header = HEADER.pack(MAGIC, VERSION, int(msg_type), len(payload))
    return header + payload + CRC.pack(zlib.crc32(payload))


def _read_exact(stream, n: int) -> bytes:
    chunks, remaining = [], n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            raise ProtocolError(f"stream ended with {remaining} of {n} bytes missing")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_message(stream, max_payload: int = MAX_PAYLOAD) -> Message:
    """Read exactly one frame from a binary stream (anything with ``read``)."""
    magic, version, msg_type, length = HEADER.unpack(_read_exact(stream, HEADER.size))
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    try:
        kind = MsgType(msg_type)
    except ValueError:
        raise ProtocolError(f"unknown message type 0x{msg_type:02x}") from None
    if length > max_payload:
        raise PayloadSizeError(f"declared payload of {length} bytes exceeds {max_payload}")
    payload = _read_exact(stream, length)
    (crc,) = CRC.unpack(_read_exact(stream, CRC.size))
    if crc != zlib.crc32(payload):
        raise IntegrityError(f"CRC mismatch on {kind.name} frame")
    return Message(kind, payload)


def parse_frame(data: bytes) -> Message:
    """Decode a single complete frame held in memory."""
    stream = io.BytesIO(data)
    msg = read_message(stream)
    if stream.tell() != len(data):
        raise ProtocolError(f"{len(data) - stream.tell()} byte(s) after frame")
    return msg


# -- session -----------------------------------------------------------------

_NEXT = {
    None: {MsgType.HELLO},
    MsgType.HELLO: {MsgType.CONFIG},
    MsgType.CONFIG: {MsgType.GLOBAL_WEIGHTS, MsgType.SHUTDOWN},
    MsgType.GLOBAL_WEIGHTS: {MsgType.CLIENT_UPDATE},
    MsgType.CLIENT_UPDATE: {MsgType.EVAL_REPORT, MsgType.GLOBAL_WEIGHTS, MsgType.SHUTDOWN},
    MsgType.EVAL_REPORT: {MsgType.GLOBAL_WEIGHTS, MsgType.SHUTDOWN},
    MsgType.SHUTDOWN: set(),
}


class Session:
    """Tracks message order on one connection.

    ``HELLO -> CONFIG -> (GLOBAL_WEIGHTS -> CLIENT_UPDATE [-> EVAL_REPORT])* -> SHUTDOWN``.
    Both directions share one sequence. ERROR is accepted at any point and
    ends the session.
    """

    def __init__(self):
        self.last: MsgType | None = None
        self.closed = False

    def advance(self, msg_type) -> None:
        msg_type = MsgType(msg_type)
        if self.closed:
            raise ProtocolError(f"{msg_type.name} after session end")
        if msg_type is MsgType.ERROR:
            self.closed = True
            return
        if msg_type not in _NEXT[self.last]:
            expected = sorted(t.name for t in _NEXT[self.last])
            raise ProtocolError(f"unexpected {msg_type.name} after {self.last.name if self.last else 'start'}; expected {expected}")
        self.last = msg_type
        if msg_type is MsgType.SHUTDOWN:
            self.closed = True
