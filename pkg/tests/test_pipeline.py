import dataclasses
import json

import pytest
import torch

import larson.model
from larson.config import ConfigError
from larson.corpus import ChunkTokenizer, CorpusError, build_vocab, load_corpus
from larson.model import LarsonModel, featurize, pair_outputs
from larson.pipeline import (
    TrainingDiverged,
    evaluate_checkpoint,
    evaluate_model,
    load_checkpoint,
    lr_lambda,
    train,
)
from larson.selftest import toy_config, toy_document_features
from larson.synthetic import OVERFIT_RELATIONS, write_overfit_corpus


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    config = toy_config()
    docs, vocab, feats = toy_document_features(config, tmp_path_factory.mktemp("toy"))
    return config, docs, vocab, feats


def fresh_model(config, vocab, seed=0):
    torch.manual_seed(seed)
    return LarsonModel(config, len(vocab)).double()


def test_pair_enumeration_order_and_count(toy):
    config, docs, vocab, feats = toy
    model = fresh_model(config, vocab)
    out = model.forward_document(feats[0])
    assert out.pairs.tolist() == [[0, 1], [1, 0]]
    assert out.logits.shape == (2, len(config.relations) + 1)
    assert out.evidence_probs.shape == (2, docs[0].num_sentences)
    as_pairs = pair_outputs(out)
    assert [(p.subj, p.obj) for p in as_pairs] == [(0, 1), (1, 0)]
    assert torch.equal(as_pairs[0].logits, out.logits[0])


def test_all_ablations_still_run(toy):
    config, docs, vocab, feats = toy
    ablated = dataclasses.replace(
        config,
        ablate_dependency=True,
        ablate_constituency=True,
        ablate_dynamic_fusion=True,
    )
    tokenizer = ChunkTokenizer(ablated.tokenizer_piece_len)
    feats_abl = [featurize(d, tokenizer, vocab, ablated) for d in docs]
    model = fresh_model(ablated, vocab)
    assert not hasattr(model, "dep_refiner")
    assert not hasattr(model, "tree_cell")
    out = model.forward_document(feats_abl[0])
    assert torch.isfinite(out.logits).all()
    loss, _ = model.batch_loss(feats_abl)
    assert torch.isfinite(loss)


def test_dynamic_fusion_ablation_uses_uniform_weights(toy):
    config, docs, vocab, feats = toy
    uniform_cfg = dataclasses.replace(config, ablate_dynamic_fusion=True)
    model = fresh_model(uniform_cfg, vocab)
    out = model.forward_document(feats[0])
    # recompute one fused context by hand with equal weights
    full = fresh_model(config, vocab)
    full.load_state_dict(model.state_dict())
    base = full.forward_document(feats[0])
    assert not torch.allclose(out.fused_ctx, base.fused_ctx)


def test_forward_is_deterministic_given_seed(toy):
    config, docs, vocab, feats = toy
    losses = []
    for _ in range(2):
        model = fresh_model(config, vocab, seed=11)
        torch.manual_seed(123)  # dropout stream
        model.train()
        loss, _ = model.batch_loss(feats)
        losses.append(float(loss.detach()))
    assert losses[0] == losses[1]


def test_eval_mode_is_dropout_free(toy):
    config, docs, vocab, feats = toy
    model = fresh_model(config, vocab, seed=3)
    model.eval()
    first = model.forward_document(feats[0])
    second = model.forward_document(feats[0])
    assert torch.equal(first.logits, second.logits)
    assert torch.equal(first.evidence_probs, second.evidence_probs)


def test_evaluate_model_twice_identical(toy):
    config, docs, vocab, feats = toy
    model = fresh_model(config, vocab, seed=4)
    a = evaluate_model(model, feats, docs)
    b = evaluate_model(model, feats, docs)
    assert a == b


def test_warmup_then_linear_decay():
    total, ratio = 200, 0.06
    schedule = lr_lambda(total, ratio)
    warm = max(1, round(ratio * total))
    assert schedule(warm) == 1.0  # peak exactly at the warmup boundary
    assert schedule(0) == 0.0
    assert 0 < schedule(warm - 1) < 1
    assert schedule(total - 1) == pytest.approx(1 / (total - warm))
    assert schedule(total) == 0.0
    for s in range(warm, total):
        assert schedule(s) >= schedule(s + 1)


def test_smoothed_loss_decreases_on_overfit_corpus(tmp_path):
    data = tmp_path / "data"
    write_overfit_corpus(data, n_docs=8, seed=1)
    config = toy_config(
        relations=OVERFIT_RELATIONS,
        max_steps=20,
        eval_every=20,
        lr_encoder=5e-3,
        lr_rest=5e-3,
        seed=2,
    )
    result = train(config, data, data, tmp_path / "out")
    head = sum(result.losses[:5]) / 5
    tail = sum(result.losses[-5:]) / 5
    assert tail < head


def test_training_requires_relations(tmp_path):
    config = toy_config(relations=())
    with pytest.raises(ConfigError, match="relations"):
        train(config, tmp_path, tmp_path, tmp_path / "out")


def test_nonfinite_loss_aborts_with_doc_ids(tmp_path, monkeypatch):
    data = tmp_path / "data"
    write_overfit_corpus(data, n_docs=4, seed=3)
    config = toy_config(relations=OVERFIT_RELATIONS, max_steps=3, eval_every=3)

    def poisoned(self, batch):
        loss = torch.tensor(float("nan"), dtype=torch.float64, requires_grad=True)
        return loss, {"loss": float("nan")}

    monkeypatch.setattr(larson.model.LarsonModel, "batch_loss", poisoned)
    with pytest.raises(TrainingDiverged, match="doc"):
        train(config, data, data, tmp_path / "out")


def test_checkpoint_round_trip_and_eval_cli_paths(tmp_path):
    data = tmp_path / "data"
    write_overfit_corpus(data, n_docs=6, seed=4)
    config = toy_config(relations=OVERFIT_RELATIONS, max_steps=4, eval_every=2)
    result = train(config, data, data, tmp_path / "out")
    assert result.checkpoint_path.exists()
    assert result.checkpoint_path.with_suffix(".json").exists()
    assert (tmp_path / "out" / "train_facts.json").exists()
    assert (tmp_path / "out" / "metrics.json").exists()

    model, vocab, meta = load_checkpoint(result.checkpoint_path)
    assert meta["relations"] == list(OVERFIT_RELATIONS)
    docs = load_corpus(data, config.relations)
    feats = [featurize(d, ChunkTokenizer(config.tokenizer_piece_len), vocab, model.config) for d in docs]
    direct = evaluate_model(model, feats, docs)

    via_path = evaluate_checkpoint(
        result.checkpoint_path, data, train_facts_path=tmp_path / "out" / "train_facts.json"
    )
    assert direct["f1"] == via_path["f1"]


def test_eval_rejects_corpus_with_unknown_relations(tmp_path):
    data = tmp_path / "data"
    write_overfit_corpus(data, n_docs=4, seed=5)
    config = toy_config(relations=OVERFIT_RELATIONS, max_steps=2, eval_every=2)
    result = train(config, data, data, tmp_path / "out")

    other = tmp_path / "other"
    other.mkdir()
    corpus = json.loads((data / "corpus.json").read_text())
    corpus[0]["facts"] = [{"s": 0, "o": 1, "r": "not_a_relation", "evidence": []}]
    (other / "corpus.json").write_text(json.dumps(corpus[:1]))
    doc_id = corpus[0]["doc_id"]
    for suffix in (".dep.tsv", ".con.txt"):
        (other / f"{doc_id}{suffix}").write_text((data / f"{doc_id}{suffix}").read_text())
    with pytest.raises(CorpusError, match="unknown relation"):
        evaluate_checkpoint(result.checkpoint_path, other)


def test_attention_dump_writes_pair_records(tmp_path):
    data = tmp_path / "data"
    write_overfit_corpus(data, n_docs=4, seed=6)
    config = toy_config(relations=OVERFIT_RELATIONS, max_steps=2, eval_every=2)
    result = train(config, data, data, tmp_path / "out")
    dump = tmp_path / "betas.jsonl"
    evaluate_checkpoint(result.checkpoint_path, data, dump_attention=dump)
    lines = [json.loads(l) for l in dump.read_text().splitlines()]
    assert lines, "expected one record per ordered pair"
    record = lines[0]
    assert {"doc_id", "subject", "object", "subsentences", "beta"} <= set(record)
    if record["beta"]:
        n_subs = len(record["subsentences"])
        for betas in record["beta"].values():
            assert len(betas) == n_subs
            assert all(b >= 0 for b in betas)


def test_document_over_max_len_is_hard_error(toy):
    config, docs, vocab, feats = toy
    tiny = dataclasses.replace(config, encoder_max_len=3)
    with pytest.raises(CorpusError, match="max_len"):
        featurize(docs[0], ChunkTokenizer(4), vocab, tiny)


def one_sentence_corpus(tmp_path):
    doc = {
        "doc_id": "s1",
        "sents": [["anna", "met", "bo", "today"]],
        "entities": [
            [{"sent": 0, "start": 0, "end": 1}],
            [{"sent": 0, "start": 2, "end": 3}],
        ],
        "facts": [{"s": 0, "o": 1, "r": "r_a", "evidence": [0]}],
    }
    (tmp_path / "corpus.json").write_text(json.dumps([doc]))
    (tmp_path / "s1.dep.tsv").write_text(
        "1\tanna\t2\tnsubj\n2\tmet\t0\troot\n3\tbo\t2\tobj\n4\ttoday\t2\tnmod\n"
    )
    (tmp_path / "s1.con.txt").write_text("(S (NP anna) (VP met (NP bo today)))\n")
    return tmp_path


def test_paired_and_attention_combine_agree_on_single_sentence(tmp_path):
    # with one sentence the attention over candidates is forced to weight 1,
    # which collapses to the paired residual form
    config = toy_config()
    docs = load_corpus(one_sentence_corpus(tmp_path), config.relations)
    tokenizer = ChunkTokenizer(config.tokenizer_piece_len)
    vocab = build_vocab(docs, tokenizer)
    feats = [featurize(d, tokenizer, vocab, config) for d in docs]
    model = fresh_model(config, vocab, seed=8)
    model.eval()
    attention_out = model.forward_document(feats[0])

    paired_cfg = dataclasses.replace(config, sentence_combine_mode="paired")
    paired = fresh_model(paired_cfg, vocab, seed=8)
    paired.load_state_dict(model.state_dict())
    paired.eval()
    paired_out = paired.forward_document(feats[0])
    assert torch.allclose(attention_out.evidence_probs, paired_out.evidence_probs, atol=1e-12)


def test_checkpoint_hash_mismatch_is_hard_error(tmp_path):
    data = tmp_path / "data"
    write_overfit_corpus(data, n_docs=4, seed=8)
    config = toy_config(relations=OVERFIT_RELATIONS, max_steps=2, eval_every=2)
    result = train(config, data, data, tmp_path / "out")
    blob = torch.load(result.checkpoint_path, weights_only=True)
    blob["meta"]["config"]["seed"] = "999"  # tamper without refreshing the hash
    tampered = tmp_path / "tampered.pt"
    torch.save(blob, tampered)
    with pytest.raises(ConfigError, match="hash"):
        load_checkpoint(tampered)


def test_entity_rows_setting_changes_context(toy):
    config, docs, vocab, feats = toy
    marker_model = fresh_model(config, vocab, seed=12)
    marker_model.eval()
    base = marker_model.forward_document(feats[0])

    mention_cfg = dataclasses.replace(config, context_entity_rows="mention_tokens")
    tokenizer = ChunkTokenizer(mention_cfg.tokenizer_piece_len)
    mention_feats = [featurize(d, tokenizer, vocab, mention_cfg) for d in docs]
    mention_model = fresh_model(mention_cfg, vocab, seed=12)
    mention_model.load_state_dict(marker_model.state_dict())
    mention_model.eval()
    other = mention_model.forward_document(mention_feats[0])
    assert not torch.allclose(base.fused_ctx, other.fused_ctx)


def test_block_bilinear_head_runs_end_to_end(toy):
    config, docs, vocab, feats = toy
    blocked = dataclasses.replace(config, head_block_size=2)
    model = fresh_model(blocked, vocab, seed=13)
    out = model.forward_document(feats[0])
    assert torch.isfinite(out.logits).all()
    loss, _ = model.batch_loss(feats)
    assert torch.isfinite(loss)


def test_document_without_entities_yields_no_pairs(tmp_path):
    doc = {
        "doc_id": "e0",
        "sents": [["just", "words", "here"]],
        "entities": [],
        "facts": [],
    }
    (tmp_path / "corpus.json").write_text(json.dumps([doc]))
    (tmp_path / "e0.dep.tsv").write_text(
        "1\tjust\t2\tamod\n2\twords\t0\troot\n3\there\t2\tnmod\n"
    )
    (tmp_path / "e0.con.txt").write_text("(S just (NP words here))\n")
    config = toy_config()
    docs = load_corpus(tmp_path, config.relations)
    tokenizer = ChunkTokenizer(config.tokenizer_piece_len)
    vocab = build_vocab(docs, tokenizer)
    feats = [featurize(d, tokenizer, vocab, config) for d in docs]
    model = fresh_model(config, vocab)
    out = model.forward_document(feats[0])
    assert out.pairs.shape == (0, 2)
    assert out.logits.shape[0] == 0
    with pytest.raises(ValueError, match="no entity pairs"):
        model.batch_loss(feats)


def test_training_step_reaches_embedding_table(toy):
    config, docs, vocab, feats = toy
    model = fresh_model(config, vocab, seed=9)
    model.train()
    loss, _ = model.batch_loss(feats)
    loss.backward()
    grad = model.encoder.embed.weight.grad
    assert grad is not None and float(grad.abs().sum()) > 0
    # the tree-lstm leaf inputs read the same table, so marker rows and word
    # pieces both accumulate gradient
    marker_row_grad = grad[0]
    assert float(marker_row_grad.abs().sum()) > 0