"""Wire-protocol primitives, implemented against the published byte contract.

The detector engine and this adapter share nothing but these bytes: frames
are a u32 little-endian length plus payload; a request payload is one JSON
object; a response payload is a JSON header line terminated by ``\\n``,
followed on success by a matrix blob in the ``LPM1`` format:

    magic "LPM1" | version u16 | s u32 | v u32 | mode u8
    top-k payload per row: K u16, K * (token_id u32, logprob f32),
                           tail_mass f32, tail_count u32
    trailing: s * u32 token ids

Only top-k mode is emitted here (mode byte 1); dense mode (0) is reserved
for desk-scale backends.
"""

from __future__ import annotations

import json
import socket
import struct

import numpy as np

FILE_MAGIC = b"LPM1"
FILE_VERSION = 1
MODE_TOPK = 1


def encode_topk_matrix(
    rows: list[tuple[np.ndarray, np.ndarray, float, int]],
    vocab_size: int,
    token_ids: np.ndarray,
) -> bytes:
    """Serialize per-row ``(ids, logprobs, tail_mass, tail_count)`` tuples."""
    parts = [
        FILE_MAGIC,
        struct.pack("<HIIB", FILE_VERSION, len(rows), vocab_size, MODE_TOPK),
    ]
    for ids, logprobs, tail_mass, tail_count in rows:
        parts.append(struct.pack("<H", len(ids)))
        parts.append(np.asarray(ids).astype("<u4").tobytes())
        parts.append(np.asarray(logprobs).astype("<f4").tobytes())
        parts.append(struct.pack("<fI", tail_mass, tail_count))
    parts.append(np.asarray(token_ids).astype("<u4").tobytes())
    return b"".join(parts)


def response_payload(request_id: str, body: bytes | None = None,
                     reason: str | None = None, **extra) -> bytes:
    if body is not None:
        header = {"request_id": request_id, "status": "ok", **extra}
        return json.dumps(header, sort_keys=True).encode() + b"\n" + body
    header = {"request_id": request_id, "status": "error",
              "reason": reason or "unknown", **extra}
    return json.dumps(header, sort_keys=True).encode() + b"\n"


def send_frame(sock: socket.socket, payload: bytes) -> None:
    sock.sendall(struct.pack("<I", len(payload)) + payload)


def recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf.extend(chunk)
    return bytes(buf)


def recv_frame(sock: socket.socket) -> bytes | None:
    head = recv_exact(sock, 4)
    if head is None:
        return None
    (length,) = struct.unpack("<I", head)
    return recv_exact(sock, length)
