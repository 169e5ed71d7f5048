"""Log-probability backend over a causal language model.

For input text the model's own tokenizer decides the token sequence; for
raw token ids they are scored as-is.  Row ``i`` of the reply is the model's
log-softmax over the next token given tokens ``< i``, with the first row
anchored on the beginning-of-sequence token.  Rows are truncated to the
``top_k`` largest entries and the remaining probability is shipped as a tail
aggregate spread over the uncovered vocabulary.

The reply header additionally reports ``sequence_logprob``, the model's own
(float64) log-likelihood of the scored tokens, so clients can cross-check
their decoded matrices.
"""

from __future__ import annotations

import argparse
import json
import socketserver
import threading
from dataclasses import dataclass

import numpy as np
import torch

from .wire import encode_topk_matrix, recv_frame, response_payload, send_frame


@dataclass(frozen=True)
class AdapterConfig:
    model: str  # model identifier: local path or hub id
    device: str = "cpu"
    top_k: int = 4096
    max_length: int = 1024  # includes the BOS anchor
    port: int = 0
    host: str = "127.0.0.1"

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.max_length < 2:
            raise ValueError("max_length must be >= 2")


class LogProbService:
    """Owns the model and answers decoded requests."""

    def __init__(self, config: AdapterConfig):
        from transformers import AutoModelForCausalLM, AutoTokenizer

        self.config = config
        # single-threaded math keeps repeated runs bit-identical
        torch.set_num_threads(1)
        self.tokenizer = AutoTokenizer.from_pretrained(config.model)
        self.model = (
            AutoModelForCausalLM.from_pretrained(config.model)
            .to(config.device)
            .eval()
        )
        self.vocab_size = int(self.model.config.vocab_size)
        bos = self.model.config.bos_token_id
        if bos is None:
            bos = self.tokenizer.bos_token_id
        if bos is None:
            raise ValueError("model defines no beginning-of-sequence token")
        self.bos_id = int(bos)

    def tokenize(self, text: str) -> list[int]:
        ids = self.tokenizer.encode(text, add_special_tokens=False)
        if not ids:
            raise ValueError("text tokenizes to zero tokens")
        return [int(t) for t in ids]

    def rows_for(self, token_ids: list[int]) -> tuple[np.ndarray, float]:
        """(s, v) float64 log-softmax rows and the sequence log-likelihood."""
        s = len(token_ids)
        if s < 1:
            raise ValueError("need at least one token")
        if s + 1 > self.config.max_length:
            raise ValueError(
                f"input of {s} tokens exceeds max length {self.config.max_length - 1}"
            )
        bad = [t for t in token_ids if t < 0 or t >= self.vocab_size]
        if bad:
            raise ValueError(f"token id {bad[0]} outside vocabulary of {self.vocab_size}")
        ids = torch.tensor([[self.bos_id] + token_ids], device=self.config.device)
        with torch.no_grad():
            logits = self.model(ids).logits[0, :-1]  # row i conditions on tokens < i
        rows = torch.log_softmax(logits.double(), dim=-1).cpu().numpy()
        seq_logprob = float(rows[np.arange(s), token_ids].sum())
        return rows, seq_logprob

    def truncate(self, rows: np.ndarray, k: int):
        """Top-k truncation with a mass-preserving tail aggregate."""
        v = rows.shape[1]
        k = min(k, v)
        out = []
        for row in rows:
            order = np.argsort(-row, kind="stable")[:k]
            kept = row[order]
            tail_mass = float(max(1.0 - np.exp(kept).sum(), 0.0))
            tail_count = max(v - k, 1) if tail_mass > 0.0 else max(v - k, 0)
            out.append((order.astype(np.int64), kept, tail_mass, int(tail_count)))
        return out

    def answer(self, request: dict) -> bytes:
        rid = str(request.get("request_id", ""))
        has_text = "text" in request
        has_ids = "token_ids" in request
        if has_text == has_ids:
            raise ValueError("exactly one of text / token_ids must be set")
        if has_text:
            token_ids = self.tokenize(str(request["text"]))
        else:
            token_ids = [int(t) for t in request["token_ids"]]
        rows, seq_logprob = self.rows_for(token_ids)
        req_k = int(request.get("top_k", 0))
        k = min(req_k, self.config.top_k) if req_k >= 1 else self.config.top_k
        body = encode_topk_matrix(
            self.truncate(rows, k), self.vocab_size, np.asarray(token_ids)
        )
        return response_payload(rid, body, sequence_logprob=seq_logprob)

    def handle_payload(self, payload: bytes) -> bytes:
        rid = ""
        try:
            request = json.loads(payload)
            rid = str(request.get("request_id", ""))
            return self.answer(request)
        except Exception as exc:  # error reply; the process stays alive
            return response_payload(rid, None, reason=str(exc))


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        while True:
            payload = recv_frame(self.request)
            if payload is None:
                return
            send_frame(self.request, self.server.service.handle_payload(payload))  # type: ignore[attr-defined]


class AdapterServer(socketserver.TCPServer):
    allow_reuse_address = True

    def __init__(self, service: LogProbService):
        cfg = service.config
        super().__init__((cfg.host, cfg.port), _Handler)
        self.service = service

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "AdapterServer":
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return self


def serve(config: AdapterConfig) -> AdapterServer:
    """Load the model and start answering on the configured endpoint."""
    return AdapterServer(LogProbService(config)).start()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--model", required=True, help="model path or identifier")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--top-k", type=int, default=4096)
    parser.add_argument("--max-length", type=int, default=1024)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8377)
    args = parser.parse_args(argv)
    config = AdapterConfig(
        model=args.model, device=args.device, top_k=args.top_k,
        max_length=args.max_length, host=args.host, port=args.port,
    )
    server = AdapterServer(LogProbService(config))
    print(f"serving {args.model} on {server.endpoint}")
    server.serve_forever()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
