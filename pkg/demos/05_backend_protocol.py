"""
Backend protocol
================

The scoring backend is abstract: anything that answers the wire protocol
with valid matrix bytes can drive the detectors.  This demo encodes a matrix
to the binary file format, inspects the layout, then runs the full loop
against an in-process server.
"""

import numpy as np

from mgtdetect import (
    BackendClient,
    BackendServer,
    LogProbRequest,
    TokenSequence,
    ToyBackend,
    ToyScoringModel,
    conditional_discrepancy,
    decode,
    encode,
    toy_logprob_matrix,
)

# %%
# Binary matrix format: magic, header, float32 payload, trailing token ids.

model = ToyScoringModel.random(1, 6, scale=1.0, seed=4)
seq = TokenSequence((0, 3, 5, 1))
matrix = toy_logprob_matrix(model, seq)
blob = encode(matrix, seq)
print(f"{len(blob)} bytes; magic {blob[:4]!r}, header {blob[4:15].hex()}")

back_matrix, back_seq = decode(blob)
print("round-trip tokens:", back_seq.tokens)
print("row 0 max |f32 error|:",
      float(np.max(np.abs(back_matrix.rows[0].logprobs - matrix.rows[0].logprobs))))

# %%
# Wire protocol: length-prefixed frames, JSON request, header + matrix reply.
# Requests carry ids so pipelined responses pair up correctly.

server = BackendServer(ToyBackend(model), port=0).start()
print("serving on", server.endpoint)

with BackendClient(server.endpoint) as client:
    client.send(LogProbRequest(request_id="first", token_ids=(0, 3, 5, 1)))
    client.send(LogProbRequest(request_id="second", text="five words of sample text"))
    m2, s2 = client.receive("second")
    m1, s1 = client.receive("first")

print("first:", len(m1), "rows for tokens", s1.tokens)
print("second:", len(m2), "rows (hash-tokenized text)")
print("discrepancy over the wire:", round(conditional_discrepancy(m1, s1).d_c, 4))
print("same matrix locally:      ", round(conditional_discrepancy(matrix, seq).d_c, 4))

# %%
# Top-k replies bound the payload; the tail keeps the mass accounted for.

with BackendClient(server.endpoint) as client:
    mk, sk = client.fetch(LogProbRequest(request_id="topk", token_ids=(0, 3), top_k=3))
row = mk.rows[0]
print(f"top-3 row: ids {row.token_ids.tolist()}, tail mass {row.tail_mass:.4f} "
      f"over {row.tail_count} outcomes")

server.shutdown()
