"""Dedicated-attention fusion with subsentence states, relation scoring, and
per-sentence evidence probabilities.

Fusion scores every candidate row against a query vector, softmax-normalizes,
optionally drops out the weights (post-softmax, inverted scaling, no
renormalization), and adds the mapped weighted sum back onto the query.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn


class DedicatedFusion(nn.Module):
    def __init__(self, query_dim: int, cand_dim: int, attn_dim: int, dropout: float = 0.5):
        super().__init__()
        self.proj_query = nn.Linear(query_dim, attn_dim, bias=False)
        self.proj_cand = nn.Linear(cand_dim, attn_dim, bias=False)
        self.score = nn.Parameter(torch.empty(attn_dim))
        self.map_back = nn.Linear(cand_dim, query_dim, bias=False)
        self.drop = nn.Dropout(dropout)
        nn.init.normal_(self.score, std=attn_dim**-0.5)

    def attention(self, query: Tensor, cands: Tensor) -> Tensor:
        """Weights over candidate rows; query may carry leading batch dims."""
        if cands.shape[0] == 0:
            raise ValueError("no candidate rows to attend over")
        scores = torch.tanh(self.proj_query(query).unsqueeze(-2) + self.proj_cand(cands))
        beta = torch.softmax(scores @ self.score, dim=-1)
        return self.drop(beta)

    def fuse(self, query: Tensor, cands: Tensor, beta: Tensor) -> Tensor:
        return query + self.map_back(beta @ cands)

    def forward(self, query: Tensor, cands: Tensor | None) -> Tensor:
        """Attention-weighted residual fusion; identity when no candidates exist."""
        if cands is None or cands.shape[0] == 0:
            return query
        return self.fuse(query, cands, self.attention(query, cands))

    def fuse_uniform(self, query: Tensor, cands: Tensor | None) -> Tensor:
        """Equal-weight variant used when dynamic fusion is ablated."""
        if cands is None or cands.shape[0] == 0:
            return query
        return query + self.map_back(cands.mean(dim=0))

    def fuse_paired(self, query: Tensor, cands: Tensor) -> Tensor:
        """Row-for-row residual combination of two equally long matrices."""
        if query.shape[0] != cands.shape[0]:
            raise ValueError("paired fusion needs matching row counts")
        return query + self.map_back(cands)


class RelationHead(nn.Module):
    """Bilinear relation scores over classes plus a learned threshold class.

    Logit slot 0 is the threshold class; slot r + 1 scores relation r. With a
    block size set, the bilinear form is block diagonal.
    """

    def __init__(self, dim: int, num_relations: int, block_size: int = 0):
        super().__init__()
        if num_relations < 1:
            raise ValueError("need at least one relation class")
        self.num_logits = num_relations + 1
        self.block_size = block_size
        self.proj_subj = nn.Linear(dim, dim, bias=False)
        self.proj_subj_ctx = nn.Linear(dim, dim, bias=False)
        self.proj_obj = nn.Linear(dim, dim, bias=False)
        self.proj_obj_ctx = nn.Linear(dim, dim, bias=False)
        if block_size:
            if dim % block_size:
                raise ValueError("block size must divide the embedding dim")
            blocks = dim // block_size
            self.bilinear = nn.Parameter(torch.empty(self.num_logits, blocks, block_size, block_size))
        else:
            self.bilinear = nn.Parameter(torch.empty(self.num_logits, dim, dim))
        self.bias = nn.Parameter(torch.zeros(self.num_logits))
        nn.init.xavier_uniform_(self.bilinear)

    def pair_states(self, e_subj: Tensor, e_obj: Tensor, context: Tensor) -> tuple[Tensor, Tensor]:
        z_subj = torch.tanh(self.proj_subj(e_subj) + self.proj_subj_ctx(context))
        z_obj = torch.tanh(self.proj_obj(e_obj) + self.proj_obj_ctx(context))
        return z_subj, z_obj

    def forward(self, e_subj: Tensor, e_obj: Tensor, context: Tensor) -> Tensor:
        z_subj, z_obj = self.pair_states(e_subj, e_obj, context)
        if self.block_size:
            shape = z_subj.shape[:-1] + (-1, self.block_size)
            zs = z_subj.reshape(shape)
            zo = z_obj.reshape(shape)
            logits = torch.einsum("...bi,rbij,...bj->...r", zs, self.bilinear, zo)
        else:
            logits = torch.einsum("...i,rij,...j->...r", z_subj, self.bilinear, z_obj)
        return logits + self.bias


class EvidenceHead(nn.Module):
    """Probability that each sentence supports the pair, from a bilinear score."""

    def __init__(self, dim: int):
        super().__init__()
        self.bilinear = nn.Parameter(torch.empty(dim, dim))
        self.bias = nn.Parameter(torch.zeros(()))
        nn.init.xavier_uniform_(self.bilinear)

    def forward(self, sentences: Tensor, context: Tensor) -> Tensor:
        """sentences: (I, d); context: (..., d) -> probabilities (..., I)."""
        scores = torch.einsum("id,de,...e->...i", sentences, self.bilinear, context)
        return torch.sigmoid(scores + self.bias)
