import random

import pytest
import torch

from larson.selftest import chain_recurrence, naive_gat_stack, random_tree_text
from larson.subsentence import (
    ChildSumTreeLstm,
    ConstituencySentenceEncoder,
    build_forest,
    collect_subsentences,
    leaf_inputs_from_embeddings,
    tree_lstm_forward,
)
from larson.syntax import ConstituencyTree, TreeNode, build_constituency_tree


def zeroed(cell):
    with torch.no_grad():
        for p in cell.parameters():
            p.zero_()
    return cell


def test_zero_parameters_fix_all_states_at_zero():
    cell = zeroed(ChildSumTreeLstm(4, 3).double())
    for text in ["(S (NP a b) (VP c))", "(S x)", "(A (B (C p q) r) (D s))"]:
        forest = build_forest([build_constituency_tree(text)])
        leaves = torch.randn(len(forest.leaf_ids), 4, dtype=torch.float64)
        hidden, cells = tree_lstm_forward(cell, forest, leaves)
        assert torch.equal(hidden, torch.zeros_like(hidden))
        assert torch.equal(cells, torch.zeros_like(cells))


def test_single_leaf_matches_hand_rolled_cell():
    torch.manual_seed(8)
    cell = ChildSumTreeLstm(4, 3).double()
    x = torch.randn(4, dtype=torch.float64)
    forest = build_forest([build_constituency_tree("(S w)")])
    hidden, cells = tree_lstm_forward(cell, forest, x.unsqueeze(0))

    gi = torch.sigmoid(cell.w_input(x))
    go = torch.sigmoid(cell.w_output(x))
    gu = torch.tanh(cell.w_cand(x))
    d_leaf = gi * gu
    n_leaf = go * torch.tanh(d_leaf)
    leaf_id = int(forest.leaf_ids[0])
    assert torch.allclose(cells[leaf_id], d_leaf, atol=1e-12)
    assert torch.allclose(hidden[leaf_id], n_leaf, atol=1e-12)


def test_unary_chain_matches_sequential_recurrence():
    torch.manual_seed(9)
    cell = ChildSumTreeLstm(3, 5).double()
    forest = build_forest([build_constituency_tree("(A (B (C (D (E w0)))))")])
    leaf = torch.randn(1, 3, dtype=torch.float64)
    with torch.no_grad():
        hidden, _ = tree_lstm_forward(cell, forest, leaf)
    want = chain_recurrence(cell, leaf[0], depth=5)
    assert float((hidden[0] - want).abs().max()) < 1e-10


def test_child_permutation_invariance_is_exact():
    torch.manual_seed(10)
    cell = ChildSumTreeLstm(4, 3).double()
    left = build_forest([build_constituency_tree("(S (A x) (B y) (C z))")])
    right = build_forest([build_constituency_tree("(S (B y) (C z) (A x))")])
    leaves = torch.randn(3, 4, dtype=torch.float64)
    h_left, d_left = tree_lstm_forward(cell, left, leaves)
    perm = torch.tensor([1, 2, 0])  # leaves follow surface order in each forest
    h_right, d_right = tree_lstm_forward(cell, right, leaves[perm])
    assert torch.equal(h_left[0], h_right[0])
    assert torch.equal(d_left[0], d_right[0])


def test_forest_sweep_matches_naive_recursion():
    torch.manual_seed(16)
    cell = ChildSumTreeLstm(3, 4).double()
    tree = build_constituency_tree("(S (NP a (X b c)) (VP d) e)")
    forest = build_forest([tree])
    leaves = torch.randn(5, 3, dtype=torch.float64)
    with torch.no_grad():
        hidden, cells = tree_lstm_forward(cell, forest, leaves)

    leaf_input = {forest.leaf_refs[i][1]: leaves[i] for i in range(5)}
    zero_x = torch.zeros(3, dtype=torch.float64)

    def recurse(node):
        kids = tree.nodes[node].children
        if not kids:
            x = leaf_input[tree.leaf_word[node]]
            h_sum = c_sum = torch.zeros(4, dtype=torch.float64)
        else:
            states = [recurse(c) for c in kids]
            x = zero_x
            h_sum = sum(s[0] for s in states)
            c_sum = sum(s[1] for s in states)
        gi = torch.sigmoid(cell.w_input(x) + cell.u_input(h_sum))
        go = torch.sigmoid(cell.w_output(x) + cell.u_output(h_sum))
        gu = torch.tanh(cell.w_cand(x) + cell.u_cand(h_sum))
        gf = torch.sigmoid(cell.w_forget(x) + cell.u_forget(h_sum))
        d = gi * gu + gf * c_sum
        return go * torch.tanh(d), d

    with torch.no_grad():
        n_root, d_root = recurse(tree.root)
    assert float((hidden[tree.root] - n_root).abs().max()) < 1e-10
    assert float((cells[tree.root] - d_root).abs().max()) < 1e-10


def test_hidden_states_bounded():
    torch.manual_seed(11)
    cell = ChildSumTreeLstm(4, 3).double()
    rng = random.Random(0)
    forest = build_forest([build_constituency_tree(random_tree_text(rng, 6))])
    leaves = 5 * torch.randn(6, 4, dtype=torch.float64)
    with torch.no_grad():
        hidden, _ = tree_lstm_forward(cell, forest, leaves)
    assert float(hidden.abs().max()) < 1.0


def test_collect_rows_are_kept_states_bitwise():
    torch.manual_seed(12)
    cell = ChildSumTreeLstm(4, 3).double()
    t1 = build_constituency_tree("(S (NP a b) (VP c))")  # kept: S, NP
    t2 = build_constituency_tree("(S (X p q) (Y r s))")  # kept: S, X, Y
    forest = build_forest([t1, t2])
    leaves = torch.randn(7, 4, dtype=torch.float64)
    hidden, _ = tree_lstm_forward(cell, forest, leaves)
    subs = collect_subsentences(hidden, forest)
    assert subs.shape[0] == 5  # 2 + 3 kept across sentences
    for row, gid in zip(subs, forest.kept_ids):
        assert torch.equal(row, hidden[int(gid)])
    assert [t for t, _, _ in forest.kept_spans] == [0, 0, 1, 1, 1]
    assert forest.kept_spans[0] == (0, 0, 3)  # root of the first sentence
    assert forest.kept_spans[1] == (0, 0, 2)  # its NP


def test_cyclic_children_rejected():
    nodes = (TreeNode("A", (1,)), TreeNode("B", (0,)))
    bad = ConstituencyTree(nodes=nodes, root=0, leaf_word={}, kept_nodes=())
    with pytest.raises(ValueError, match="cyclic"):
        build_forest([bad])


def test_constituency_sentences_zero_params_give_zero():
    torch.manual_seed(13)
    enc = ConstituencySentenceEncoder(3, 4, layers=2).double()
    with torch.no_grad():
        for p in enc.parameters():
            p.zero_()
    forest = build_forest([build_constituency_tree("(S (NP a b) (VP c))")])
    hidden = torch.randn(forest.num_nodes, 3, dtype=torch.float64)
    out = enc(hidden, forest)
    assert torch.equal(out, torch.zeros_like(out))


def test_single_node_graph_single_layer_is_projection_then_mean():
    torch.manual_seed(14)
    enc = ConstituencySentenceEncoder(3, 4, layers=1).double()
    tree = ConstituencyTree(nodes=(TreeNode("w"),), root=0, leaf_word={0: 0}, kept_nodes=())
    forest = build_forest([tree])
    hidden = torch.randn(1, 3, dtype=torch.float64)
    out = enc(hidden, forest)
    layer = enc.gat.layers[0]
    assert torch.allclose(out[0], layer.proj_neigh(hidden[0]))


def test_constituency_sentences_match_naive_stack_and_mean():
    torch.manual_seed(15)
    enc = ConstituencySentenceEncoder(3, 4, layers=3).double()
    tree = build_constituency_tree("(S (NP a b) (VP c))")  # 5 nodes with the leaves
    forest = build_forest([tree])
    hidden = torch.randn(forest.num_nodes, 3, dtype=torch.float64)
    with torch.no_grad():
        got = enc(hidden, forest)
    edges = tree.adjacency()
    naive_nodes = naive_gat_stack(enc.gat, hidden, edges)
    want = naive_nodes.mean(dim=0)
    assert float((got[0] - want).abs().max()) < 1e-10


def test_leaf_inputs_average_subword_embedding_rows():
    table = torch.arange(20, dtype=torch.float64).reshape(10, 2)

    def rows(ids):
        return table[ids]

    forest = build_forest([build_constituency_tree("(S (NP a b) (VP c))")])
    token_ids = torch.tensor([4, 5, 6, 7])
    alignment = [[[0], [1, 2], [3]]]  # word b spans tokens 1 and 2
    leaves = leaf_inputs_from_embeddings(forest, rows, token_ids, alignment)
    by_word = {forest.leaf_refs[i][1]: leaves[i] for i in range(3)}
    assert torch.equal(by_word[0], table[4])
    assert torch.equal(by_word[1], (table[5] + table[6]) / 2)
    assert torch.equal(by_word[2], table[7])


def test_forest_levels_process_children_before_parents():
    tree = build_constituency_tree("(S (NP (A x) (B y)) (VP c))")
    forest = build_forest([tree])
    # every child edge points from an earlier level into the current one
    for lvl in range(1, len(forest.levels)):
        child_ids, _ = forest.level_children[lvl - 1]
        earlier = set()
        for prev in range(lvl):
            earlier.update(forest.levels[prev].tolist())
        assert set(child_ids.tolist()) <= earlier
