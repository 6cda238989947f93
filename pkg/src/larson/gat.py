"""Single-head graph attention over batched directed graphs.

Scoring follows the gated form: per edge j -> i the weight is
``gate . leaky_relu(P_center h_i + P_neigh h_j)``, softmax-normalized over the
in-neighborhood of i, and messages reuse the neighbor projection.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .syntax import BatchedGraph, DependencyGraph


def edge_tensors(edges, device=None) -> tuple[Tensor, Tensor]:
    """Split an edge collection into (src, dst) index tensors, sorted for determinism."""
    ordered = sorted(edges)
    src = torch.tensor([e[0] for e in ordered], dtype=torch.long, device=device)
    dst = torch.tensor([e[1] for e in ordered], dtype=torch.long, device=device)
    return src, dst


class GatLayer(nn.Module):
    def __init__(self, in_dim: int, out_dim: int, leaky_slope: float = 0.2):
        super().__init__()
        self.proj_center = nn.Linear(in_dim, out_dim, bias=False)
        self.proj_neigh = nn.Linear(in_dim, out_dim, bias=False)
        self.gate = nn.Parameter(torch.empty(out_dim))
        self.leaky = nn.LeakyReLU(leaky_slope)
        nn.init.normal_(self.gate, std=out_dim**-0.5)

    def edge_attention(self, h: Tensor, src: Tensor, dst: Tensor, num_nodes: int) -> tuple[Tensor, Tensor]:
        """Per-edge softmax weights (grouped by destination) and messages."""
        indeg = torch.zeros(num_nodes, dtype=torch.long, device=h.device)
        indeg.index_add_(0, dst, torch.ones_like(dst))
        if (indeg == 0).any():
            missing = int((indeg == 0).nonzero()[0])
            raise ValueError(f"node {missing} has an empty in-neighborhood")
        center = self.proj_center(h)
        neigh = self.proj_neigh(h)
        scores = self.leaky(center[dst] + neigh[src]) @ self.gate
        # subtracting a per-destination constant leaves the softmax unchanged
        shift = scores.detach().new_full((num_nodes,), float("-inf"))
        shift = shift.scatter_reduce(0, dst, scores.detach(), reduce="amax", include_self=True)
        expd = torch.exp(scores - shift[dst])
        denom = torch.zeros(num_nodes, dtype=h.dtype, device=h.device).index_add(0, dst, expd)
        alpha = expd / denom[dst]
        return alpha, neigh[src]

    def forward(self, h: Tensor, src: Tensor, dst: Tensor, num_nodes: int) -> Tensor:
        alpha, messages = self.edge_attention(h, src, dst, num_nodes)
        out = torch.zeros(num_nodes, messages.shape[1], dtype=h.dtype, device=h.device)
        return out.index_add(0, dst, alpha.unsqueeze(1) * messages)


class GatStack(nn.Module):
    """Stacked attention layers with a leaky rectifier between layers, none after the last."""

    def __init__(self, in_dim: int, out_dim: int, layers: int = 3, leaky_slope: float = 0.2):
        super().__init__()
        if layers < 1:
            raise ValueError("need at least one layer")
        dims = [in_dim] + [out_dim] * layers
        self.layers = nn.ModuleList(
            GatLayer(dims[k], dims[k + 1], leaky_slope) for k in range(layers)
        )
        self.act = nn.LeakyReLU(leaky_slope)

    def forward(self, h: Tensor, src: Tensor, dst: Tensor, num_nodes: int) -> Tensor:
        for k, layer in enumerate(self.layers):
            h = layer(h, src, dst, num_nodes)
            if k + 1 < len(self.layers):
                h = self.act(h)
        return h

    def forward_graph(self, h: Tensor, graph: BatchedGraph | DependencyGraph) -> Tensor:
        n = graph.total_nodes if isinstance(graph, BatchedGraph) else graph.node_count
        src, dst = edge_tensors(graph.edges, device=h.device)
        return self.forward(h, src, dst, n)
