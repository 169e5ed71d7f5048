"""Record the golden request/response transcript for the conformance test.

Builds the deterministic tiny model, answers the fixed request list, and
writes length-prefixed (request, response) pairs to ``golden/transcript.bin``.
Run from the adapter directory:

    python tests/record_transcript.py
"""

import json
import struct
import tempfile
from pathlib import Path

from hfadapter import AdapterConfig, LogProbService, build_tiny_model

GOLDEN = Path(__file__).parent / "golden" / "transcript.bin"

REQUESTS = [
    {"request_id": "text-basic", "text": "hello world", "top_k": 8},
    {"request_id": "text-long", "text": "The five boxing wizards jump quickly.", "top_k": 16},
    {"request_id": "ids-basic", "token_ids": [71, 68, 75, 75, 78], "top_k": 4},
    {"request_id": "full-rows", "text": "ok", "top_k": 0},
    {"request_id": "err-overlong", "token_ids": list(range(100)), "top_k": 4},
    {"request_id": "err-vocab", "token_ids": [300], "top_k": 4},
]


def main() -> None:
    model_dir = build_tiny_model(tempfile.mkdtemp(), seed=0)
    service = LogProbService(AdapterConfig(model=str(model_dir), top_k=64, max_length=64))
    GOLDEN.parent.mkdir(parents=True, exist_ok=True)
    with open(GOLDEN, "wb") as fh:
        for request in REQUESTS:
            raw = json.dumps(request, sort_keys=True).encode()
            reply = service.handle_payload(raw)
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack("<I", len(reply)) + reply)
    print(f"{len(REQUESTS)} exchanges -> {GOLDEN} ({GOLDEN.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
