"""Token-level dependency graphs, constituency trees, and disjoint-union batching."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence


class ParseError(ValueError):
    """Raised for malformed parse rows or bracketed trees."""


@dataclass(frozen=True)
class DepRow:
    """One word of a dependency parse. ``index`` is 1-based, ``head`` 0 means root."""

    index: int
    word: str
    head: int
    deprel: str


@dataclass(frozen=True)
class DependencyGraph:
    """Directed token graph for one sentence; an edge (src, dst) makes src an
    in-neighbor of dst. Self-loops keep every in-neighborhood nonempty."""

    node_count: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        for src, dst in self.edges:
            if not (0 <= src < self.node_count and 0 <= dst < self.node_count):
                raise ParseError(f"edge ({src}, {dst}) out of range for {self.node_count} nodes")

    def in_degrees(self) -> list[int]:
        deg = [0] * self.node_count
        for _, dst in self.edges:
            deg[dst] += 1
        return deg


@dataclass(frozen=True)
class BatchedGraph:
    """Disjoint union of graphs with node ids relabeled by per-segment offsets."""

    total_nodes: int
    edges: tuple[tuple[int, int], ...]
    segment_offsets: tuple[int, ...]


def _check_tree(rows: Sequence[DepRow]) -> None:
    n = len(rows)
    seen = sorted(r.index for r in rows)
    if seen != list(range(1, n + 1)):
        raise ParseError(f"row indices must be 1..{n}, got {seen}")
    heads = {r.index: r.head for r in rows}
    roots = [i for i, h in heads.items() if h == 0]
    if len(roots) != 1:
        raise ParseError(f"dependency parse must have exactly one root, found {len(roots)}")
    for r in rows:
        if r.head and not 1 <= r.head <= n:
            raise ParseError(f"head {r.head} of word {r.index} out of range")
        hops, cur = 0, r.index
        while cur != 0:
            cur = heads[cur]
            hops += 1
            if hops > n:
                raise ParseError(f"cycle in dependency parse through word {r.index}")


def build_dependency_graph(
    rows: Sequence[DepRow],
    alignment: Sequence[Sequence[int]],
    bound: tuple[int, int],
    bidirectional: bool = False,
) -> DependencyGraph:
    """Expand a word-level parse to the sentence's token span.

    Word edges connect first subwords; later subwords hang off their word's
    first subword; every token in the span (markers included) gets a self-loop.
    """
    _check_tree(rows)
    start, end = bound
    n_tokens = end - start
    if len(alignment) != len(rows):
        raise ParseError(f"alignment covers {len(alignment)} words, parse has {len(rows)}")

    def local(tok: int) -> int:
        if not start <= tok < end:
            raise ParseError(f"token {tok} outside sentence span [{start}, {end})")
        return tok - start

    edges = {(t, t) for t in range(n_tokens)}
    for word_toks in alignment:
        head_tok = local(word_toks[0])
        for tok in word_toks[1:]:
            edges.add((head_tok, local(tok)))
            if bidirectional:
                edges.add((local(tok), head_tok))
    for r in rows:
        if r.head == 0:
            continue
        src = local(alignment[r.head - 1][0])
        dst = local(alignment[r.index - 1][0])
        edges.add((src, dst))
        if bidirectional:
            edges.add((dst, src))
    return DependencyGraph(node_count=n_tokens, edges=tuple(sorted(edges)))


def merge_graphs(graphs: Sequence[DependencyGraph]) -> BatchedGraph:
    """Relabel node ids of each graph by the running node-count offset."""
    if not graphs:
        raise ValueError("merge_graphs needs at least one graph")
    offsets, edges, total = [], [], 0
    for g in graphs:
        offsets.append(total)
        edges.extend((src + total, dst + total) for src, dst in g.edges)
        total += g.node_count
    return BatchedGraph(total_nodes=total, edges=tuple(edges), segment_offsets=tuple(offsets))


def split_batched(batched: BatchedGraph) -> list[tuple[int, tuple[tuple[int, int], ...]]]:
    """Inverse of merge_graphs: per-segment (node_count, edges with local ids)."""
    bounds = list(batched.segment_offsets) + [batched.total_nodes]
    out = []
    for k in range(len(batched.segment_offsets)):
        lo, hi = bounds[k], bounds[k + 1]
        seg = tuple(
            sorted((s - lo, d - lo) for s, d in batched.edges if lo <= s < hi and lo <= d < hi)
        )
        out.append((hi - lo, seg))
    return out


@dataclass(frozen=True)
class TreeNode:
    label: str
    children: tuple[int, ...] = ()


@dataclass(frozen=True)
class ConstituencyTree:
    """Ordered labeled tree; node ids are pre-order, leaves map to word positions."""

    nodes: tuple[TreeNode, ...]
    root: int
    leaf_word: dict[int, int]
    kept_nodes: tuple[int, ...] = field(default=())

    def is_leaf(self, node: int) -> bool:
        return not self.nodes[node].children

    @property
    def leaf_count(self) -> int:
        return len(self.leaf_word)

    def leaf_ids(self) -> list[int]:
        return sorted(self.leaf_word, key=self.leaf_word.get)

    def leaf_descendant_counts(self) -> list[int]:
        counts = [0] * len(self.nodes)
        for node in range(len(self.nodes) - 1, -1, -1):
            kids = self.nodes[node].children
            counts[node] = 1 if not kids else sum(counts[c] for c in kids)
        return counts

    def span(self, node: int) -> tuple[int, int]:
        """Half-open word span covered by the node's leaf descendants."""
        lo, hi, stack = None, None, [node]
        while stack:
            cur = stack.pop()
            kids = self.nodes[cur].children
            if kids:
                stack.extend(kids)
            else:
                w = self.leaf_word[cur]
                lo = w if lo is None else min(lo, w)
                hi = w if hi is None else max(hi, w)
        return lo, hi + 1

    def adjacency(self) -> tuple[tuple[int, int], ...]:
        """Parent<->child edges in both directions plus self-loops."""
        edges = {(n, n) for n in range(len(self.nodes))}
        for parent, node in enumerate(self.nodes):
            for child in node.children:
                edges.add((parent, child))
                edges.add((child, parent))
        return tuple(sorted(edges))


def _tokenize_brackets(text: str) -> list[str]:
    return text.replace("(", " ( ").replace(")", " ) ").split()


def build_constituency_tree(text: str) -> ConstituencyTree:
    """Parse one bracketed tree; leaves are bare atoms in surface order."""
    toks = _tokenize_brackets(text)
    if not toks:
        raise ParseError("empty constituency parse")

    nodes: list[TreeNode | None] = []
    leaf_word: dict[int, int] = {}
    pos = 0

    def parse() -> int:
        nonlocal pos
        if toks[pos] != "(":
            node_id = len(nodes)
            nodes.append(TreeNode(label=toks[pos]))
            leaf_word[node_id] = len(leaf_word)
            pos += 1
            return node_id
        pos += 1  # (
        if pos >= len(toks) or toks[pos] in "()":
            raise ParseError(f"expected a label after '(' in {text!r}")
        label = toks[pos]
        node_id = len(nodes)
        nodes.append(None)  # reserve the pre-order slot
        pos += 1
        children = []
        while pos < len(toks) and toks[pos] != ")":
            children.append(parse())
        if pos >= len(toks):
            raise ParseError(f"unbalanced brackets in {text!r}")
        pos += 1  # )
        if not children:
            raise ParseError(f"constituent {label!r} has no children in {text!r}")
        nodes[node_id] = TreeNode(label=label, children=tuple(children))
        return node_id

    try:
        root = parse()
    except IndexError:
        raise ParseError(f"unbalanced brackets in {text!r}") from None
    if pos != len(toks):
        raise ParseError(f"trailing tokens after tree in {text!r}")
    if not leaf_word:
        raise ParseError(f"tree has no leaves: {text!r}")
    tree = ConstituencyTree(nodes=tuple(nodes), root=root, leaf_word=leaf_word)
    return ConstituencyTree(
        nodes=tree.nodes,
        root=tree.root,
        leaf_word=tree.leaf_word,
        kept_nodes=select_subsentence_nodes(tree),
    )


def select_subsentence_nodes(tree: ConstituencyTree) -> tuple[int, ...]:
    """Internal nodes dominating at least two leaves, in pre-order."""
    counts = tree.leaf_descendant_counts()
    return tuple(
        n for n in range(len(tree.nodes)) if tree.nodes[n].children and counts[n] >= 2
    )
