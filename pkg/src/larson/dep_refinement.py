"""Dependency-syntax refinement of token states and the pooled embeddings built on it.

Token states from the encoder pass through stacked graph attention over the
token-level dependency graph; the result is mapped back and added residually,
so the refined states H_c satisfy ``H_c = H + H_dep @ W_back`` exactly.
"""

from __future__ import annotations

from typing import Sequence

import torch
from torch import Tensor, nn

from .gat import GatStack

CONTEXT_EPS = 1e-30  # guards the weight denominator when attention supports are disjoint


class DependencyRefiner(nn.Module):
    def __init__(self, token_dim: int, gat_dim: int, layers: int = 3, leaky_slope: float = 0.2):
        super().__init__()
        self.gat = GatStack(token_dim, gat_dim, layers=layers, leaky_slope=leaky_slope)
        self.back_map = nn.Linear(gat_dim, token_dim, bias=False)

    def forward(self, h: Tensor, src: Tensor, dst: Tensor) -> tuple[Tensor, Tensor]:
        """Return (H_c, H_dep) for token states h over the batched dependency graph."""
        h_dep = self.gat(h, src, dst, h.shape[0])
        return h + self.back_map(h_dep), h_dep


def logsumexp_pool(rows: Tensor) -> Tensor:
    """Elementwise log-sum-exp over the leading axis; identity for a single row."""
    if rows.shape[0] == 0:
        raise ValueError("cannot pool zero rows")
    return torch.logsumexp(rows, dim=0)


def pool_entity(h_c: Tensor, marker_rows: Tensor) -> Tensor:
    """Entity embedding: log-sum-exp over the opening-marker rows of its mentions."""
    if marker_rows.numel() == 0:
        raise ValueError("entity has no mentions to pool")
    return torch.logsumexp(h_c[marker_rows], dim=0)


def sentence_logsumexp(h_c: Tensor, sent_bounds: Sequence[tuple[int, int]]) -> Tensor:
    """Per-sentence log-sum-exp pooling over every token in the sentence span."""
    return torch.stack([torch.logsumexp(h_c[s:e], dim=0) for s, e in sent_bounds])


def entity_attention(attn: Tensor, rows: Tensor) -> Tensor:
    """Entity-level token-attention distribution: mean of the selected rows of A."""
    if rows.numel() == 0:
        raise ValueError("entity has no attention rows")
    return attn[rows].mean(dim=0)


def localized_context(h_c: Tensor, a_subj: Tensor, a_obj: Tensor) -> Tensor:
    """Pair-specific context: tokens weighted by the product of the two
    entities' attention distributions, normalized by their inner product.

    Accepts batched leading dimensions on ``a_subj``/``a_obj``.
    """
    prod = a_subj * a_obj
    denom = prod.sum(dim=-1, keepdim=True) + CONTEXT_EPS
    return (prod / denom) @ h_c


def localized_context_from_markers(
    h_c: Tensor, attn: Tensor, rows_subj: Tensor, rows_obj: Tensor
) -> Tensor:
    return localized_context(h_c, entity_attention(attn, rows_subj), entity_attention(attn, rows_obj))
