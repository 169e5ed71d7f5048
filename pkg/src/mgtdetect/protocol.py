"""Scoring-backend contract: matrix file format, wire protocol, and client.

File format (``LPM1``), all little-endian:

    magic   4 bytes  b"LPM1"
    version u16      currently 1
    s       u32      number of positions
    v       u32      vocabulary size
    mode    u8       0 = dense, 1 = top-k
    payload          dense:  s*v float32, row-major
                     top-k:  per row: K u16, K * (token_id u32, logprob f32),
                             tail_mass f32, tail_count u32
    tokens  s * u32  the observed token ids

Log-probs travel as float32 and are widened to float64 on decode; the row
mass tolerance of the core types absorbs the quantization.

Wire protocol: length-prefixed frames over a byte stream.  Each frame is a
u32 little-endian payload length followed by the payload.  A request payload
is one JSON object (``request_id``, exactly one of ``text``/``token_ids``,
``top_k`` with 0 meaning dense, ``want_tokens``).  A response payload is one
JSON header line (``request_id``, ``status``, optional ``reason``) terminated
by a newline, followed for ``status == "ok"`` by the raw LPM1 bytes.
Responses may arrive out of request order; clients match on ``request_id``.
"""

from __future__ import annotations

import json
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .logprob import (
    DenseRow,
    LogProbMatrix,
    TokenSequence,
    TopKRow,
    topk_project,
    validate,
)
from .toymodel import ToyScoringModel, toy_logprob_matrix

FILE_MAGIC = b"LPM1"
FILE_VERSION = 1
MODE_DENSE = 0
MODE_TOPK = 1

DEFAULT_TIMEOUT = 60.0
MAX_RETRIES = 2
# Dense replies are reserved for desk scale; real backends cap the row size
# and aggregate the rest into the tail.
DEFAULT_TOP_K = 4096


class BadMagic(ValueError):
    pass


class Truncated(ValueError):
    pass


class InvariantViolation(ValueError):
    def __init__(self, violations):
        self.violations = violations
        super().__init__("; ".join(f"row {v.row}: {v.reason}" for v in violations))


class TransportError(ConnectionError):
    pass


class RequestTimeout(TransportError):
    pass


class BadResponse(ValueError):
    pass


@dataclass(frozen=True)
class LogProbRequest:
    request_id: str
    text: str | None = None
    token_ids: tuple[int, ...] | None = None
    top_k: int = 0  # 0 = dense
    want_tokens: bool = True

    def __post_init__(self):
        if (self.text is None) == (self.token_ids is None):
            raise ValueError("exactly one of text / token_ids must be set")
        if self.top_k < 0:
            raise ValueError("top_k must be 0 (dense) or >= 1")

    def to_json(self) -> str:
        payload: dict = {"request_id": self.request_id, "top_k": self.top_k,
                         "want_tokens": self.want_tokens}
        if self.text is not None:
            payload["text"] = self.text
        else:
            payload["token_ids"] = list(self.token_ids)
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, raw: str | bytes) -> "LogProbRequest":
        obj = json.loads(raw)
        return cls(
            request_id=str(obj["request_id"]),
            text=obj.get("text"),
            token_ids=tuple(obj["token_ids"]) if "token_ids" in obj else None,
            top_k=int(obj.get("top_k", 0)),
            want_tokens=bool(obj.get("want_tokens", True)),
        )


# ---------------------------------------------------------------------------
# File format.


def encode(matrix: LogProbMatrix, seq: TokenSequence) -> bytes:
    """Serialize a validated (matrix, sequence) pair to LPM1 bytes."""
    if len(seq) != len(matrix):
        raise ValueError("sequence length does not match matrix")
    bad = validate(matrix)
    if bad:
        raise InvariantViolation(bad)
    dense = matrix.is_dense()
    parts = [
        FILE_MAGIC,
        struct.pack("<HIIB", FILE_VERSION, len(matrix), matrix.vocab_size,
                    MODE_DENSE if dense else MODE_TOPK),
    ]
    if dense:
        parts.append(matrix.as_dense_array().astype("<f4").tobytes())
    else:
        for row in matrix.rows:
            if isinstance(row, DenseRow):
                row = topk_project(row, row.logprobs.shape[0])
            k = row.token_ids.size
            parts.append(struct.pack("<H", k))
            parts.append(row.token_ids.astype("<u4").tobytes())
            parts.append(row.logprobs.astype("<f4").tobytes())
            parts.append(struct.pack("<fI", row.tail_mass, row.tail_count))
    parts.append(seq.as_array().astype("<u4").tobytes())
    return b"".join(parts)


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise Truncated(f"need {n} bytes at offset {self.pos}, have {len(self.data) - self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def done(self) -> bool:
        return self.pos == len(self.data)


def decode(blob: bytes) -> tuple[LogProbMatrix, TokenSequence]:
    """Parse and validate LPM1 bytes back into the in-memory pair."""
    cur = _Cursor(blob)
    if cur.take(4) != FILE_MAGIC:
        raise BadMagic("bad magic; not an LPM1 payload")
    version, s, v, mode = struct.unpack("<HIIB", cur.take(11))
    if version != FILE_VERSION:
        raise BadMagic(f"unsupported version {version}")
    if mode == MODE_DENSE:
        raw = np.frombuffer(cur.take(4 * s * v), dtype="<f4").astype(np.float64)
        matrix = LogProbMatrix.from_dense(raw.reshape(s, v))
    elif mode == MODE_TOPK:
        rows = []
        for _ in range(s):
            (k,) = struct.unpack("<H", cur.take(2))
            ids = np.frombuffer(cur.take(4 * k), dtype="<u4").astype(np.int64)
            lps = np.frombuffer(cur.take(4 * k), dtype="<f4").astype(np.float64)
            tail_mass, tail_count = struct.unpack("<fI", cur.take(8))
            rows.append(TopKRow(ids, lps, tail_mass, tail_count))
        matrix = LogProbMatrix(rows=tuple(rows), vocab_size=v)
    else:
        raise BadMagic(f"unknown mode byte {mode}")
    tokens = np.frombuffer(cur.take(4 * s), dtype="<u4")
    if not cur.done():
        raise Truncated(f"{len(blob) - cur.pos} trailing bytes")
    bad = validate(matrix)
    if bad:
        raise InvariantViolation(bad)
    return matrix, TokenSequence(tuple(int(t) for t in tokens))


def save_matrix(matrix: LogProbMatrix, seq: TokenSequence, path: str | Path) -> None:
    Path(path).write_bytes(encode(matrix, seq))


def load_matrix(path: str | Path) -> tuple[LogProbMatrix, TokenSequence]:
    return decode(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Framing.


def _send_frame(sock: socket.socket, payload: bytes) -> None:
    sock.sendall(struct.pack("<I", len(payload)) + payload)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise TransportError("connection closed mid-frame")
        buf.extend(chunk)
    return bytes(buf)


def _recv_frame(sock: socket.socket) -> bytes:
    (length,) = struct.unpack("<I", _recv_exact(sock, 4))
    return _recv_exact(sock, length)


def _split_response(payload: bytes) -> tuple[dict, bytes]:
    nl = payload.find(b"\n")
    if nl < 0:
        raise BadResponse("response lacks a header line")
    try:
        header = json.loads(payload[:nl])
    except json.JSONDecodeError as exc:
        raise BadResponse(f"unparseable response header: {exc}") from exc
    return header, payload[nl + 1 :]


def make_response(request_id: str, body: bytes | None, reason: str | None = None) -> bytes:
    """Assemble one response payload (ok when ``body`` is given)."""
    if body is not None:
        header = {"request_id": request_id, "status": "ok"}
        return json.dumps(header, sort_keys=True).encode() + b"\n" + body
    header = {"request_id": request_id, "status": "error", "reason": reason or "unknown"}
    return json.dumps(header, sort_keys=True).encode() + b"\n"


# ---------------------------------------------------------------------------
# Client.


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    if endpoint.startswith("tcp://"):
        endpoint = endpoint[len("tcp://") :]
    host, _, port = endpoint.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"endpoint must be host:port, got {endpoint!r}")
    return host, int(port)


class BackendClient:
    """Pipelined wire client; responses are paired to requests by id."""

    def __init__(self, endpoint: str, timeout: float = DEFAULT_TIMEOUT):
        self.host, self.port = parse_endpoint(endpoint)
        self.timeout = timeout
        self._sock: socket.socket | None = None
        self._pending: dict[str, bytes | BadResponse] = {}
        self._lock = threading.Lock()

    def _connect(self) -> socket.socket:
        if self._sock is None:
            try:
                self._sock = socket.create_connection(
                    (self.host, self.port), timeout=self.timeout
                )
            except OSError as exc:
                raise TransportError(f"cannot reach {self.host}:{self.port}: {exc}") from exc
        return self._sock

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def send(self, request: LogProbRequest) -> None:
        try:
            _send_frame(self._connect(), request.to_json().encode())
        except socket.timeout as exc:
            raise RequestTimeout(str(exc)) from exc
        except OSError as exc:
            self.close()
            raise TransportError(str(exc)) from exc

    def receive(self, request_id: str) -> tuple[LogProbMatrix, TokenSequence]:
        """Read frames until the response for ``request_id`` arrives."""
        with self._lock:
            while request_id not in self._pending:
                try:
                    payload = _recv_frame(self._connect())
                except socket.timeout as exc:
                    self.close()
                    raise RequestTimeout(str(exc)) from exc
                except OSError as exc:
                    self.close()
                    raise TransportError(str(exc)) from exc
                header, body = _split_response(payload)
                rid = str(header.get("request_id", ""))
                if header.get("status") != "ok":
                    self._pending[rid] = BadResponse(header.get("reason", "backend error"))
                else:
                    self._pending[rid] = body
            body = self._pending.pop(request_id)
        if isinstance(body, BadResponse):
            raise body
        try:
            return decode(body)
        except (BadMagic, Truncated, InvariantViolation) as exc:
            raise BadResponse(f"invalid matrix from backend: {exc}") from exc

    def fetch(self, request: LogProbRequest) -> tuple[LogProbMatrix, TokenSequence]:
        self.send(request)
        return self.receive(request.request_id)


def fetch(
    endpoint: str, request: LogProbRequest, timeout: float = DEFAULT_TIMEOUT
) -> tuple[LogProbMatrix, TokenSequence]:
    """One-shot fetch with up to two idempotent retries on transport failure."""
    last: Exception | None = None
    for _ in range(1 + MAX_RETRIES):
        client = BackendClient(endpoint, timeout=timeout)
        try:
            with client:
                return client.fetch(request)
        except BadResponse:
            raise
        except TransportError as exc:
            last = exc
    raise last  # type: ignore[misc]


# ---------------------------------------------------------------------------
# In-process toy backend and its TCP server.


def hash_tokenize(text: str, vocab: int) -> tuple[int, ...]:
    """Deterministic whitespace tokenizer: each word hashes to a token id.

    A stand-in so text inputs work at desk scale; real backends own their
    tokenizer.
    """
    import hashlib

    ids = []
    for word in text.split():
        digest = hashlib.sha256(word.encode("utf-8")).digest()
        ids.append(int.from_bytes(digest[:8], "little") % vocab)
    if not ids:
        raise ValueError("text tokenizes to zero tokens")
    return tuple(ids)


class ToyBackend:
    """Serves toy-model matrices for token ids or hash-tokenized text."""

    def __init__(self, model: ToyScoringModel):
        self.model = model

    def answer(self, request: LogProbRequest) -> tuple[LogProbMatrix, TokenSequence]:
        if request.text is not None:
            seq = TokenSequence(hash_tokenize(request.text, self.model.vocab))
        else:
            seq = TokenSequence(request.token_ids)
        matrix = toy_logprob_matrix(self.model, seq)
        if request.top_k and request.top_k < self.model.vocab:
            rows = tuple(topk_project(r, request.top_k) for r in matrix.rows)
            matrix = LogProbMatrix(rows=rows, vocab_size=matrix.vocab_size)
        return matrix, seq

    def handle_payload(self, payload: bytes) -> bytes:
        rid = ""
        try:
            request = LogProbRequest.from_json(payload)
            rid = request.request_id
            matrix, seq = self.answer(request)
            return make_response(rid, encode(matrix, seq))
        except Exception as exc:  # error replies keep the server alive
            return make_response(rid, None, reason=str(exc))


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        sock = self.request
        while True:
            try:
                payload = _recv_frame(sock)
            except (TransportError, OSError):
                return
            _send_frame(sock, self.server.backend.handle_payload(payload))  # type: ignore[attr-defined]


class BackendServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, backend: ToyBackend, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _Handler)
        self.backend = backend

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "BackendServer":
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return self
