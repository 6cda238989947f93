"""Contextual token encoding: states H plus a head-averaged attention matrix A.

The default encoder is a deliberately small trainable block (embedding table,
fixed sinusoidal positions, one two-head self-attention layer, a two-layer
feed-forward) so the whole pipeline trains and tests on CPU. A registry hook
lets callers swap in an external pretrained encoder behind the same surface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Protocol

import torch
from torch import Tensor, nn


@dataclass
class EncodedDocument:
    """Token states H (T x d) and a row-stochastic token-attention matrix A (T x T)."""

    H: Tensor
    A: Tensor
    embedding_rows: Callable[[Tensor], Tensor]


class TokenEncoder(Protocol):
    dim: int
    max_len: int

    def encode(self, token_ids: Tensor) -> EncodedDocument: ...

    def embedding_rows(self, token_ids: Tensor) -> Tensor: ...


def sinusoidal_positions(max_len: int, dim: int) -> Tensor:
    pos = torch.arange(max_len, dtype=torch.get_default_dtype()).unsqueeze(1)
    half = torch.arange(0, dim, 2, dtype=torch.get_default_dtype())
    freq = torch.exp(-math.log(10000.0) * half / dim)
    table = torch.zeros(max_len, dim)
    table[:, 0::2] = torch.sin(pos * freq)
    table[:, 1::2] = torch.cos(pos * freq)[:, : dim // 2]
    return table


class MockEncoder(nn.Module):
    """Trainable toy encoder honoring the encoder contract.

    A is the arithmetic mean of the two heads' post-softmax attention, so each
    row is nonnegative and sums to one by construction.
    """

    num_heads = 2

    def __init__(self, vocab_size: int, dim: int = 64, max_len: int = 1024):
        super().__init__()
        if dim % self.num_heads:
            raise ValueError(f"encoder dim {dim} must be divisible by {self.num_heads} heads")
        self.dim = dim
        self.max_len = max_len
        self.embed = nn.Embedding(vocab_size, dim)
        self.register_buffer("positions", sinusoidal_positions(max_len, dim))
        self.proj_q = nn.Linear(dim, dim, bias=False)
        self.proj_k = nn.Linear(dim, dim, bias=False)
        self.proj_v = nn.Linear(dim, dim, bias=False)
        self.proj_out = nn.Linear(dim, dim, bias=False)
        self.ffn_in = nn.Linear(dim, 2 * dim)
        self.ffn_out = nn.Linear(2 * dim, dim)

    def embedding_rows(self, token_ids: Tensor) -> Tensor:
        return self.embed(token_ids)

    def encode(self, token_ids: Tensor) -> EncodedDocument:
        t = token_ids.shape[0]
        if t < 1:
            raise ValueError("cannot encode an empty token sequence")
        if t > self.max_len:
            raise ValueError(f"sequence length {t} exceeds encoder max_len {self.max_len}")
        x = self.embed(token_ids) + self.positions[:t]

        head_dim = self.dim // self.num_heads
        q = self.proj_q(x).view(t, self.num_heads, head_dim).transpose(0, 1)
        k = self.proj_k(x).view(t, self.num_heads, head_dim).transpose(0, 1)
        v = self.proj_v(x).view(t, self.num_heads, head_dim).transpose(0, 1)
        scores = q @ k.transpose(1, 2) / math.sqrt(head_dim)
        attn = torch.softmax(scores, dim=-1)  # (heads, T, T)
        ctx = (attn @ v).transpose(0, 1).reshape(t, self.dim)
        x = x + self.proj_out(ctx)
        x = x + self.ffn_out(torch.tanh(self.ffn_in(x)))
        return EncodedDocument(H=x, A=attn.mean(dim=0), embedding_rows=self.embedding_rows)

    def forward(self, token_ids: Tensor) -> EncodedDocument:
        return self.encode(token_ids)


_ENCODER_FACTORIES: dict[str, Callable[..., nn.Module]] = {"mock": MockEncoder}


def register_encoder(kind: str, factory: Callable[..., nn.Module]) -> None:
    """Register an adapter so ``encoder.kind = <kind>`` can build it."""
    _ENCODER_FACTORIES[kind] = factory


def build_encoder(kind: str, vocab_size: int, dim: int, max_len: int) -> nn.Module:
    factory = _ENCODER_FACTORIES.get(kind)
    if factory is None:
        raise ValueError(
            f"no encoder registered under {kind!r}; call register_encoder first"
        )
    return factory(vocab_size=vocab_size, dim=dim, max_len=max_len)
