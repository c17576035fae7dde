"""Frame wire format.

Header (little-endian, 23 bytes)::

    magic    4s   b"KMRG"
    version  u16
    msg_type u8   1 = SAMPLE_GRAPH, 2 = RESULT_GRAPH, 3 = DONE
    sender   u32
    round    u32
    length   u64  payload byte count

followed by ``length`` payload bytes (a GraphFile, empty for DONE).
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Callable

from ..errors import ProtocolError

MAGIC = b"KMRG"
VERSION = 1
HEADER = struct.Struct("<4sHBIIQ")


class MsgType(enum.IntEnum):
    SAMPLE_GRAPH = 1
    RESULT_GRAPH = 2
    DONE = 3


@dataclass(frozen=True)
class Frame:
    msg_type: MsgType
    sender: int
    round: int
    payload: bytes = b""
    version: int = VERSION


def encode_frame(f: Frame) -> bytes:
    return HEADER.pack(MAGIC, f.version, int(f.msg_type), f.sender, f.round, len(f.payload)) + f.payload


def _parse_header(head: bytes) -> tuple[MsgType, int, int, int, int]:
    magic, version, mtype, sender, rnd, length = HEADER.unpack(head)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unknown version {version}")
    try:
        mtype = MsgType(mtype)
    except ValueError:
        raise ProtocolError(f"unknown message type {mtype}") from None
    return mtype, sender, rnd, length, version


def decode_frame(buf: bytes) -> Frame:
    """Decode exactly one frame; the buffer must hold nothing else."""
    if len(buf) < HEADER.size:
        raise ProtocolError(f"truncated header: {len(buf)} of {HEADER.size} bytes")
    mtype, sender, rnd, length, version = _parse_header(bytes(buf[: HEADER.size]))
    if len(buf) - HEADER.size != length:
        raise ProtocolError(f"payload length mismatch: header says {length}, got {len(buf) - HEADER.size}")
    return Frame(mtype, sender, rnd, bytes(buf[HEADER.size :]), version)


def read_frame(recv_exact: Callable[[int], bytes]) -> Frame:
    """Read one frame from a stream; ``recv_exact(n)`` must return exactly ``n`` bytes or raise."""
    head = recv_exact(HEADER.size)
    mtype, sender, rnd, length, version = _parse_header(head)
    payload = recv_exact(length) if length else b""
    return Frame(mtype, sender, rnd, payload, version)
