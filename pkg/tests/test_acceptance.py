"""Acceptance gate: every criterion prints one [PASS]/[FAIL] line.

Run with ``pytest tests/test_acceptance.py -s`` to watch the lines appear;
budgets are asserted with the stated limits.
"""

import time

import pytest
import torch

from larson.config import ModelConfig
from larson.corpus import Document, Fact, Mention
from larson.objectives import PairPrediction, compute_metrics
from larson.pipeline import train
from larson.selftest import (
    check_atl_oracle,
    check_attention_oracle,
    check_batching_equivalence,
    check_determinism,
    check_gat_oracle,
    check_tree_lstm,
    gradient_audit,
)
from larson.synthetic import (
    OVERFIT_RELATIONS,
    STRUCTURE_RELATIONS,
    write_overfit_corpus,
    write_structure_cue_corpus,
)

torch.set_num_threads(1)


def report(name: str, ok: bool, detail: str = ""):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f"  ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


def test_oracle_equivalence():
    start = time.monotonic()
    atl = check_atl_oracle(cases=1000, tol=1e-8)
    gat = check_gat_oracle(cases=100, tol=1e-10)
    attn = check_attention_oracle(cases=100, tol=1e-10)
    elapsed = time.monotonic() - start
    ok = atl.ok and gat.ok and attn.ok and elapsed < 30
    report(
        "oracle equivalence (atl 1e-8, gat/attention 1e-10)",
        ok,
        f"{atl.detail}; {gat.detail}; {attn.detail}; {elapsed:.1f}s < 30s",
    )


def test_batching_equivalence():
    start = time.monotonic()
    res = check_batching_equivalence(cases=50, tol=1e-10)
    elapsed = time.monotonic() - start
    report(
        "batching equivalence (50 merged batches, 1e-10)",
        res.ok and elapsed < 10,
        f"{res.detail}; {elapsed:.1f}s < 10s",
    )


def test_tree_lstm_correctness():
    start = time.monotonic()
    res = check_tree_lstm(tol=1e-10)
    elapsed = time.monotonic() - start
    report(
        "tree-lstm chain oracle / permutation invariance / zero sweep",
        res.ok and elapsed < 10,
        f"{res.detail}; {elapsed:.1f}s < 10s",
    )


def test_gradient_audit():
    start = time.monotonic()
    results = gradient_audit(tol=1e-4)
    elapsed = time.monotonic() - start
    ok = all(r.ok for r in results) and elapsed < 120
    detail = "; ".join(f"{r.name.removeprefix('grad: ')} {r.detail}" for r in results)
    report("gradient audit vs central differences (rel err < 1e-4)", ok, f"{detail}; {elapsed:.1f}s < 120s")


def overfit_config():
    return ModelConfig(
        relations=OVERFIT_RELATIONS,
        encoder_dim=64,
        fusion_dropout=0.0,
        lr_encoder=2e-3,
        lr_rest=2e-3,
        max_steps=500,
        eval_every=100,
        seed=5,
    ).validate()


def test_overfit_memorization(tmp_path):
    data = tmp_path / "train"
    write_overfit_corpus(data, n_docs=20, seed=7)
    start = time.monotonic()
    result = train(overfit_config(), data, data, tmp_path / "out")
    elapsed = time.monotonic() - start
    metrics = result.final_dev_metrics
    ok = (
        metrics["f1"] == 1.0
        and metrics["evi_f1"] >= 0.9
        and result.total_steps <= 500
        and elapsed < 300
    )
    report(
        "overfit: train F1 = 1.0 and EviF1 >= 0.9 within 500 steps",
        ok,
        f"f1 {metrics['f1']:.3f}, evi_f1 {metrics['evi_f1']:.3f}, "
        f"{result.total_steps} steps, {elapsed:.0f}s < 300s",
    )


def test_ablation_direction(tmp_path):
    import dataclasses

    train_dir, dev_dir = tmp_path / "train", tmp_path / "dev"
    write_structure_cue_corpus(train_dir, n_docs=200, seed=11)
    write_structure_cue_corpus(dev_dir, n_docs=80, seed=12)
    config = ModelConfig(
        relations=STRUCTURE_RELATIONS,
        encoder_dim=64,
        fusion_dropout=0.0,
        lr_encoder=1e-3,
        lr_rest=1e-3,
        max_steps=300,
        eval_every=150,
        seed=5,
    ).validate()
    full = train(config, train_dir, dev_dir, tmp_path / "full")
    ablated = train(
        dataclasses.replace(config, ablate_constituency=True),
        train_dir,
        dev_dir,
        tmp_path / "ablated",
    )
    gap = full.best_dev_f1 - ablated.best_dev_f1
    report(
        "ablation direction: full beats w/o-constituency by >= 2 points",
        gap >= 0.02,
        f"full {full.best_dev_f1:.3f} vs ablated {ablated.best_dev_f1:.3f}, gap {100 * gap:.1f} pts",
    )


def test_determinism():
    res = check_determinism()
    report("determinism: fixed seed gives bitwise-identical losses and metrics", res.ok, res.detail)


def test_metrics_oracle():
    sentences = [["anna", "met", "bo"], ["bo", "stayed", "home"]]
    entities = [
        [Mention(entity_id=0, sent_index=0, start=0, end=1)],
        [Mention(entity_id=1, sent_index=1, start=0, end=1)],
    ]

    half_doc = Document(
        doc_id="d",
        sentences=sentences,
        entities=entities,
        facts=[Fact(0, 1, 0, frozenset()), Fact(1, 0, 0, frozenset())],
        dep_parses=[],
        con_parses=[],
    )
    half = compute_metrics(
        [PairPrediction("d", 0, 1, (0,)), PairPrediction("d", 0, 1, (1,))],
        [half_doc],
        ("r0", "r1"),
    )

    ign_doc = Document(
        doc_id="d",
        sentences=sentences,
        entities=entities,
        facts=[Fact(0, 1, 0, frozenset()), Fact(1, 0, 1, frozenset())],
        dep_parses=[],
        con_parses=[],
    )
    ign = compute_metrics(
        [PairPrediction("d", 0, 1, (0,)), PairPrediction("d", 1, 0, (1,))],
        [ign_doc],
        ("r0", "r1"),
        train_facts={("anna", "bo", "r0")},
    )
    ok = half["f1"] == pytest.approx(0.5) and ign["ign_f1"] == 1.0 and ign["f1"] == 1.0
    report(
        "metrics oracle: P = R = F1 = 0.5 fixture and Ign F1 worked example",
        ok,
        f"half f1 {half['f1']:.3f}; ign_f1 {ign['ign_f1']:.3f}",
    )
