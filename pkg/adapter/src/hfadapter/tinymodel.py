"""Deterministic tiny causal LM for fixtures and offline runs.

Builds a two-layer GPT-2-architecture model with seeded random weights and a
byte-level tokenizer with a fixed 256-entry alphabet (no trained merges), so
the artifact is reproducible bit-for-bit without any network access.
"""

from __future__ import annotations

from pathlib import Path

BOS_TOKEN = "<|bos|>"


def build_tiny_model(directory: str | Path, seed: int = 0) -> Path:
    """Materialize the model + tokenizer under ``directory`` and return it."""
    import torch
    from tokenizers import Tokenizer, decoders, models, pre_tokenizers
    from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    alphabet = sorted(pre_tokenizers.ByteLevel.alphabet())
    vocab = {ch: i for i, ch in enumerate(alphabet)}
    vocab[BOS_TOKEN] = len(vocab)
    tok = Tokenizer(models.BPE(vocab=vocab, merges=[]))
    tok.pre_tokenizer = pre_tokenizers.ByteLevel(add_prefix_space=False)
    tok.decoder = decoders.ByteLevel()
    fast = PreTrainedTokenizerFast(tokenizer_object=tok, bos_token=BOS_TOKEN)

    torch.manual_seed(seed)
    config = GPT2Config(
        vocab_size=len(vocab),
        n_positions=128,
        n_embd=32,
        n_layer=2,
        n_head=2,
        bos_token_id=vocab[BOS_TOKEN],
        eos_token_id=vocab[BOS_TOKEN],
    )
    model = GPT2LMHeadModel(config).eval()
    model.save_pretrained(directory)
    fast.save_pretrained(directory)
    return directory
