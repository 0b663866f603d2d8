"""
Wire formats.

Frame header (little-endian, 25 bytes)::

    magic "FLK1" | msg_type u8 | party_id 8 bytes (ASCII, NUL padded) |
    iteration u32 | payload_len u64

MatrixWire body, raw DEFLATE (RFC 1951) compressed::

    rows u64 | cols u64 | rows*cols float64, row-major
"""

from __future__ import annotations

import logging
import math
import struct
import zlib
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Optional, Protocol

import numpy as np

from conda_flake.exceptions import FrameError, ProtocolError, SessionAborted
from conda_flake.masking import MaskedMatrix

log = logging.getLogger(__name__)

MAGIC = b"FLK1"
HEADER = struct.Struct("<4sB8sIQ")
MATRIX_HEADER = struct.Struct("<QQ")
PARTY_ID_BYTES = 8
DEFAULT_CHUNK_ROWS = 256
# raw DEFLATE stream, no zlib header or checksum
DEFLATE_WBITS = -15


class MsgType(IntEnum):
    HELLO = 1
    SEED_ENVELOPE = 2
    MASKED_CHUNK = 3
    CHUNK_END = 4
    GRAM_ACK = 5
    ERROR = 6


class Connection(Protocol):
    def sendall(self, data: bytes) -> None: ...

    def recv(self, size: int) -> bytes: ...


@dataclass(frozen=True)
class Frame:
    msg_type: MsgType
    party_id: str
    iteration: int = 0
    payload: bytes = b""


def encode_party_id(party_id: str) -> bytes:
    raw = party_id.encode("ascii")
    if not 1 <= len(raw) <= PARTY_ID_BYTES or b"\0" in raw:
        raise FrameError(f"party id {party_id!r} must be 1-{PARTY_ID_BYTES} ASCII characters")
    return raw.ljust(PARTY_ID_BYTES, b"\0")


def encode_frame(frame: Frame) -> bytes:
    header = HEADER.pack(
        MAGIC,
        int(frame.msg_type),
        encode_party_id(frame.party_id),
        frame.iteration,
        len(frame.payload),
    )
    return header + frame.payload


def _decode_header(header: bytes):
    magic, msg_type, party_id, iteration, payload_len = HEADER.unpack(header)
    if magic != MAGIC:
        raise FrameError(f"bad frame magic {magic!r}")
    try:
        msg_type = MsgType(msg_type)
    except ValueError:
        raise FrameError(f"unknown message type {msg_type}")
    return msg_type, party_id.rstrip(b"\0").decode("ascii"), iteration, payload_len


def decode_frame(data: bytes) -> Frame:
    if len(data) < HEADER.size:
        raise FrameError(f"frame of {len(data)} bytes is shorter than its header")
    msg_type, party_id, iteration, payload_len = _decode_header(data[: HEADER.size])
    payload = data[HEADER.size :]
    if len(payload) != payload_len:
        raise FrameError(f"payload_len {payload_len} does not match {len(payload)} payload bytes")
    return Frame(msg_type, party_id, iteration, payload)


def recv_exact(connection: Connection, size: int) -> bytes:
    """Read exactly ``size`` bytes. Timeouts propagate; any other socket error aborts."""
    buffer = bytearray()
    while len(buffer) < size:
        try:
            chunk = connection.recv(size - len(buffer))
        except TimeoutError:
            raise
        except OSError as exc:
            message = f"connection lost after {len(buffer)} of {size} bytes: {exc}"
            raise SessionAborted(message) from exc
        if not chunk:
            raise SessionAborted(f"peer closed the connection after {len(buffer)} of {size} bytes")
        buffer += chunk
    return bytes(buffer)


def read_frame(connection: Connection) -> Frame:
    header = recv_exact(connection, HEADER.size)
    msg_type, party_id, iteration, payload_len = _decode_header(header)
    return Frame(msg_type, party_id, iteration, recv_exact(connection, payload_len))


def send_frame(connection: Connection, frame: Frame) -> int:
    data = encode_frame(frame)
    try:
        connection.sendall(data)
    except OSError as exc:
        message = f"connection lost while sending {frame.msg_type.name}: {exc}"
        raise SessionAborted(message) from exc
    return len(data)


def encode_matrix(matrix: np.ndarray, level: int = zlib.Z_DEFAULT_COMPRESSION) -> bytes:
    matrix = np.ascontiguousarray(matrix, dtype="<f8")
    rows, cols = matrix.shape
    body = MATRIX_HEADER.pack(rows, cols) + matrix.tobytes()
    compressor = zlib.compressobj(level, zlib.DEFLATED, DEFLATE_WBITS)
    return compressor.compress(body) + compressor.flush()


def decode_matrix(data: bytes) -> np.ndarray:
    try:
        body = zlib.decompress(data, DEFLATE_WBITS)
    except zlib.error as exc:
        raise FrameError(f"matrix body is not a valid DEFLATE stream: {exc}")
    if len(body) < MATRIX_HEADER.size:
        raise FrameError("matrix body is shorter than its header")
    rows, cols = MATRIX_HEADER.unpack_from(body)
    expected = MATRIX_HEADER.size + 8 * rows * cols
    if len(body) != expected:
        raise FrameError(f"matrix header says {rows}x{cols} but body holds {len(body)} bytes")
    values = np.frombuffer(body, dtype="<f8", offset=MATRIX_HEADER.size)
    return values.reshape(rows, cols).astype(np.float64)


def write_matrix_file(path: Path, matrix: np.ndarray) -> Path:
    path = Path(path)
    path.write_bytes(encode_matrix(matrix))
    return path


def read_matrix_file(path: Path) -> np.ndarray:
    return decode_matrix(Path(path).read_bytes())


def encode_labels(labels: Optional[np.ndarray]) -> bytes:
    if labels is None:
        return b""
    return np.ascontiguousarray(labels, dtype="<i8").tobytes()


def decode_labels(payload: bytes) -> Optional[np.ndarray]:
    if not payload:
        return None
    if len(payload) % 8:
        raise FrameError(f"label payload of {len(payload)} bytes is not a multiple of 8")
    return np.frombuffer(payload, dtype="<i8").astype(np.int64)


def chunk_and_send(
    masked: MaskedMatrix,
    chunk_rows: int,
    connection: Connection,
    labels: Optional[np.ndarray] = None,
) -> int:
    """
    Send ``ceil(n / chunk_rows)`` MASKED_CHUNK frames then CHUNK_END.

    CHUNK_END carries the batch labels (int64 little-endian) when given.
    Returns the number of bytes written.
    """
    if chunk_rows < 1:
        raise ProtocolError(f"chunk_rows must be at least 1, got {chunk_rows}")
    sent = 0
    for start in range(0, masked.sample_count, chunk_rows):
        chunk = masked.payload[start : start + chunk_rows]
        body = encode_matrix(chunk)
        frame = Frame(MsgType.MASKED_CHUNK, masked.party_id, masked.iteration, body)
        sent += send_frame(connection, frame)
    end = Frame(MsgType.CHUNK_END, masked.party_id, masked.iteration, encode_labels(labels))
    sent += send_frame(connection, end)
    log.debug(
        "party %s sent %d rows in %d chunks",
        masked.party_id,
        masked.sample_count,
        math.ceil(masked.sample_count / chunk_rows),
    )
    return sent


class ChunkAssembler:
    """Collects one party's MASKED_CHUNK frames until CHUNK_END."""

    def __init__(self):
        self._chunks = []
        self._width: Optional[int] = None

    def add(self, frame: Frame) -> None:
        chunk = decode_matrix(frame.payload)
        if self._width is not None and chunk.shape[1] != self._width:
            raise FrameError(f"chunk width {chunk.shape[1]} changed mid-stream from {self._width}")
        self._width = chunk.shape[1]
        self._chunks.append(chunk)

    def finish(self, end: Frame, width: Optional[int] = None):
        width = self._width if self._width is not None else width
        if self._chunks:
            payload = np.vstack(self._chunks)
        else:
            payload = np.empty((0, width or 0))
        self._chunks = []
        masked = MaskedMatrix(payload=payload, party_id=end.party_id, iteration=end.iteration)
        return masked, decode_labels(end.payload)

    def discard(self) -> None:
        self._chunks = []


def receive_masked(connection: Connection):
    """Read frames until CHUNK_END; returns ``(MaskedMatrix, labels)``."""
    assembler = ChunkAssembler()
    while True:
        frame = read_frame(connection)
        if frame.msg_type == MsgType.MASKED_CHUNK:
            assembler.add(frame)
        elif frame.msg_type == MsgType.CHUNK_END:
            return assembler.finish(frame)
        elif frame.msg_type == MsgType.ERROR:
            raise SessionAborted(frame.payload.decode("utf-8", "replace"))
        else:
            raise FrameError(f"unexpected {frame.msg_type.name} while receiving masked data")


def wire_size(masked: MaskedMatrix, chunk_rows: int = DEFAULT_CHUNK_ROWS) -> int:
    """Bytes `chunk_and_send` would put on the wire for ``masked``."""
    size = HEADER.size
    for start in range(0, masked.sample_count, chunk_rows):
        size += HEADER.size + len(encode_matrix(masked.payload[start : start + chunk_rows]))
    return size


def estimate_comm_time(
    datasize_bytes: float,
    bandwidth_bytes_per_s: float,
    latency_s: float = 0.0,
    packetloss_fraction: float = 0.0,
) -> float:
    """``datasize / bandwidth + latency * (1 + packetloss)``."""
    if not bandwidth_bytes_per_s > 0:
        raise ProtocolError(f"bandwidth must be positive, got {bandwidth_bytes_per_s}")
    return datasize_bytes / bandwidth_bytes_per_s + latency_s * (1.0 + packetloss_fraction)
