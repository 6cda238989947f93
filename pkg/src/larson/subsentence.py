"""Child-sum Tree-LSTM over constituency forests and tree-level sentence pooling.

A document's trees are merged into one forest (node ids offset per tree) and
swept bottom-up level by level: a level holds every node whose children are
already done, so the result matches naive recursion exactly while batching the
gate math. Hidden and cell states start at zero; leaves read word embeddings,
internal nodes read zero input vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .gat import GatStack, edge_tensors
from .syntax import ConstituencyTree


class ChildSumTreeLstm(nn.Module):
    """One shared cell applied at every node; child states enter through their sum.

    The forget gate uses a single shared recurrent matrix, so its value is the
    same for each child of a node and the update is invariant to child order.
    """

    def __init__(self, in_dim: int, hidden_dim: int):
        super().__init__()
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.w_input = nn.Linear(in_dim, hidden_dim)
        self.w_output = nn.Linear(in_dim, hidden_dim)
        self.w_cand = nn.Linear(in_dim, hidden_dim)
        self.w_forget = nn.Linear(in_dim, hidden_dim)
        self.u_input = nn.Linear(hidden_dim, hidden_dim, bias=False)
        self.u_output = nn.Linear(hidden_dim, hidden_dim, bias=False)
        self.u_cand = nn.Linear(hidden_dim, hidden_dim, bias=False)
        self.u_forget = nn.Linear(hidden_dim, hidden_dim, bias=False)

    def node_update(self, x: Tensor, h_sum: Tensor, c_sum: Tensor) -> tuple[Tensor, Tensor]:
        gate_in = torch.sigmoid(self.w_input(x) + self.u_input(h_sum))
        gate_out = torch.sigmoid(self.w_output(x) + self.u_output(h_sum))
        cand = torch.tanh(self.w_cand(x) + self.u_cand(h_sum))
        gate_forget = torch.sigmoid(self.w_forget(x) + self.u_forget(h_sum))
        cell = gate_in * cand + gate_forget * c_sum
        hidden = gate_out * torch.tanh(cell)
        return hidden, cell


@dataclass
class Forest:
    """Level-scheduled merge of a document's constituency trees."""

    num_nodes: int
    num_trees: int
    node_tree: Tensor  # (num_nodes,) owning tree per node
    levels: list[Tensor]  # node ids per sweep level; level 0 = leaves
    level_children: list[tuple[Tensor, Tensor]]  # per level >0: (child ids, slot in level)
    leaf_ids: Tensor  # leaves in level-0 order
    leaf_refs: list[tuple[int, int]]  # (tree index, word index) per leaf, level-0 order
    kept_ids: Tensor  # kept-node ids, tree order then pre-order
    kept_spans: list[tuple[int, int, int]]  # (sentence, word start, word end) per kept node
    adjacency: tuple[Tensor, Tensor]  # bidirectional parent/child edges plus self-loops


def build_forest(trees: list[ConstituencyTree]) -> Forest:
    offsets, total = [], 0
    for tree in trees:
        offsets.append(total)
        total += len(tree.nodes)

    children: list[tuple[int, ...]] = [()] * total
    node_tree = torch.zeros(total, dtype=torch.long)
    parent_count = [0] * total
    leaf_refs_all: list[tuple[int, int]] = [None] * total
    for t, tree in enumerate(trees):
        off = offsets[t]
        for local_id, node in enumerate(tree.nodes):
            gid = off + local_id
            node_tree[gid] = t
            children[gid] = tuple(off + c for c in node.children)
            for c in node.children:
                parent_count[off + c] += 1
                if off + c <= gid:
                    raise ValueError(f"cyclic child link at node {gid}")
        for leaf, word in tree.leaf_word.items():
            leaf_refs_all[off + leaf] = (t, word)
    if any(n > 1 for n in parent_count):
        raise ValueError("a node has more than one parent")

    height = [0] * total
    order = sorted(range(total), reverse=True)  # children precede parents in pre-order ids
    for gid in order:
        if children[gid]:
            height[gid] = 1 + max(height[c] for c in children[gid])
    max_h = max(height) if total else 0

    levels, level_children = [], []
    for lvl in range(max_h + 1):
        ids = [g for g in range(total) if height[g] == lvl]
        levels.append(torch.tensor(ids, dtype=torch.long))
        if lvl == 0:
            continue
        slot_of = {g: i for i, g in enumerate(ids)}
        child_ids, slots = [], []
        for g in ids:
            for c in children[g]:
                child_ids.append(c)
                slots.append(slot_of[g])
        level_children.append(
            (torch.tensor(child_ids, dtype=torch.long), torch.tensor(slots, dtype=torch.long))
        )

    leaf_ids = levels[0]
    leaf_refs = [leaf_refs_all[int(g)] for g in leaf_ids]
    if any(r is None for r in leaf_refs):
        raise ValueError("internal node scheduled as a leaf")

    kept, spans = [], []
    for t, tree in enumerate(trees):
        off = offsets[t]
        for node in tree.kept_nodes:
            kept.append(off + node)
            lo, hi = tree.span(node)
            spans.append((t, lo, hi))

    edges = set()
    for t, tree in enumerate(trees):
        off = offsets[t]
        edges.update((a + off, b + off) for a, b in tree.adjacency())
    src, dst = edge_tensors(edges)

    return Forest(
        num_nodes=total,
        num_trees=len(trees),
        node_tree=node_tree,
        levels=levels,
        level_children=[(c, s) for c, s in level_children],
        leaf_ids=leaf_ids,
        leaf_refs=leaf_refs,
        kept_ids=torch.tensor(kept, dtype=torch.long),
        kept_spans=spans,
        adjacency=(src, dst),
    )


def _sorted_child_sum(values: Tensor, slots: Tensor, num_segments: int) -> Tensor:
    """Per-segment sum with addition order fixed by sorting each dimension.

    Sorting makes the result a function of the child-state multiset alone, so
    permuting a node's children reproduces the sum bit for bit.
    """
    out = values.new_zeros(num_segments, values.shape[1])
    for seg in range(num_segments):
        rows = values[slots == seg]
        if rows.shape[0] == 1:
            out[seg] = rows[0]
        elif rows.shape[0] > 1:
            out[seg] = torch.sort(rows, dim=0).values.sum(dim=0)
    return out


def tree_lstm_forward(cell: ChildSumTreeLstm, forest: Forest, leaf_inputs: Tensor) -> tuple[Tensor, Tensor]:
    """Sweep the forest bottom-up; returns hidden and cell buffers indexed by node id.

    ``leaf_inputs`` rows follow ``forest.leaf_refs`` order.
    """
    if leaf_inputs.shape[0] != forest.leaf_ids.shape[0]:
        raise ValueError("leaf inputs do not cover every leaf")
    hidden = leaf_inputs.new_zeros(forest.num_nodes, cell.hidden_dim)
    cells = leaf_inputs.new_zeros(forest.num_nodes, cell.hidden_dim)
    zero_state = leaf_inputs.new_zeros(forest.leaf_ids.shape[0], cell.hidden_dim)
    h0, c0 = cell.node_update(leaf_inputs, zero_state, zero_state)
    hidden = hidden.index_copy(0, forest.leaf_ids, h0)
    cells = cells.index_copy(0, forest.leaf_ids, c0)
    for lvl in range(1, len(forest.levels)):
        ids = forest.levels[lvl]
        child_ids, slots = forest.level_children[lvl - 1]
        h_sum = _sorted_child_sum(hidden[child_ids], slots, ids.shape[0])
        c_sum = _sorted_child_sum(cells[child_ids], slots, ids.shape[0])
        x = leaf_inputs.new_zeros(ids.shape[0], cell.in_dim)
        h_lvl, c_lvl = cell.node_update(x, h_sum, c_sum)
        hidden = hidden.index_copy(0, ids, h_lvl)
        cells = cells.index_copy(0, ids, c_lvl)
    return hidden, cells


def collect_subsentences(hidden: Tensor, forest: Forest) -> Tensor:
    """Rows of kept subtree-root hidden states, sentence order then pre-order."""
    return hidden[forest.kept_ids]


def leaf_inputs_from_embeddings(
    forest: Forest,
    embedding_rows,
    token_ids: Tensor,
    alignment,
    device=None,
) -> Tensor:
    """Leaf input = mean embedding-table row over the leaf word's subword tokens."""
    vectors = []
    for tree_idx, word_idx in forest.leaf_refs:
        positions = torch.tensor(alignment[tree_idx][word_idx], dtype=torch.long, device=device)
        vectors.append(embedding_rows(token_ids[positions]).mean(dim=0))
    return torch.stack(vectors)


class ConstituencySentenceEncoder(nn.Module):
    """Graph attention over tree adjacency, then per-tree node averaging."""

    def __init__(self, hidden_dim: int, gat_dim: int, layers: int = 3, leaky_slope: float = 0.2):
        super().__init__()
        self.gat = GatStack(hidden_dim, gat_dim, layers=layers, leaky_slope=leaky_slope)

    def forward(self, hidden: Tensor, forest: Forest) -> Tensor:
        src, dst = forest.adjacency
        refined = self.gat(hidden, src, dst, forest.num_nodes)
        sums = refined.new_zeros(forest.num_trees, refined.shape[1]).index_add(
            0, forest.node_tree, refined
        )
        counts = torch.bincount(forest.node_tree, minlength=forest.num_trees)
        return sums / counts.unsqueeze(1).to(refined.dtype)
