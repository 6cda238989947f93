"""Training loop, evaluation, checkpoints, and the attention dump."""

from __future__ import annotations

import dataclasses
import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import torch

from .config import ConfigError, ModelConfig, config_from_items
from .corpus import ChunkTokenizer, Document, Vocab, build_vocab, load_corpus
from .model import DocumentFeatures, LarsonModel, featurize
from .objectives import (
    PairPrediction,
    collect_train_facts,
    compute_metrics,
    predict_relations,
)

EVIDENCE_THRESHOLD = 0.5


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, doc_ids: Sequence[str]):
        super().__init__(
            f"non-finite loss at step {step} on documents: {', '.join(doc_ids)}"
        )
        self.step = step
        self.doc_ids = list(doc_ids)


def lr_lambda(total_steps: int, warmup_ratio: float):
    """Linear warmup to the peak at ``warmup_ratio * total`` steps, then linear decay to 0."""
    warmup = max(1, round(warmup_ratio * total_steps))

    def schedule(step: int) -> float:
        if step < warmup:
            return step / warmup
        if total_steps <= warmup:
            return 1.0
        return max(0.0, (total_steps - step) / (total_steps - warmup))

    return schedule


def build_optimizer(model: LarsonModel, config: ModelConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        [
            {"params": model.encoder_parameters(), "lr": config.lr_encoder},
            {"params": model.rest_parameters(), "lr": config.lr_rest},
        ],
        weight_decay=config.weight_decay,
    )


def predictions_for(model: LarsonModel, feats_list: Sequence[DocumentFeatures], dump_path=None) -> list[PairPrediction]:
    model.eval()
    preds: list[PairPrediction] = []
    dump_file = open(dump_path, "w", encoding="utf-8") if dump_path else None
    try:
        with torch.no_grad():
            for feats in feats_list:
                out = model.forward_document(feats, collect_attention=dump_file is not None)
                for k in range(out.pairs.shape[0]):
                    rels = predict_relations(out.logits[k])
                    evidence = frozenset(
                        int(i)
                        for i in (out.evidence_probs[k] > EVIDENCE_THRESHOLD)
                        .nonzero(as_tuple=True)[0]
                    )
                    if dump_file is not None:
                        record = {
                            "doc_id": out.doc_id,
                            "subject": int(out.pairs[k, 0]),
                            "object": int(out.pairs[k, 1]),
                            "subsentences": [
                                {"sent": s, "start": a, "end": b}
                                for s, a, b in out.subsentence_spans
                            ],
                            "beta": {
                                name: [float(x) for x in beta[k]]
                                for name, beta in out.betas.items()
                            },
                        }
                        dump_file.write(json.dumps(record) + "\n")
                    if rels:
                        preds.append(
                            PairPrediction(
                                doc_id=out.doc_id,
                                subj=int(out.pairs[k, 0]),
                                obj=int(out.pairs[k, 1]),
                                relations=rels,
                                evidence=evidence,
                            )
                        )
    finally:
        if dump_file is not None:
            dump_file.close()
    return preds


def evaluate_model(
    model: LarsonModel,
    feats_list: Sequence[DocumentFeatures],
    documents: Sequence[Document],
    train_facts=None,
    dump_path=None,
) -> dict[str, float]:
    preds = predictions_for(model, feats_list, dump_path=dump_path)
    return compute_metrics(preds, documents, model.config.relations, train_facts)


def save_checkpoint(path, model: LarsonModel, vocab: Vocab, dev_f1: float, step: int) -> None:
    path = Path(path)
    meta = {
        "config": model.config.to_items(),
        "config_hash": model.config.hash(),
        "relations": list(model.config.relations),
        "vocab": list(vocab.itos),
        "dev_f1": dev_f1,
        "step": step,
    }
    torch.save({"state_dict": model.state_dict(), "meta": meta}, path)
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2), encoding="utf-8")


def load_checkpoint(path) -> tuple[LarsonModel, Vocab, dict]:
    blob = torch.load(Path(path), weights_only=True)
    meta = blob["meta"]
    config = config_from_items(meta["config"])
    if config.hash() != meta["config_hash"]:
        raise ConfigError("checkpoint config does not match its recorded hash")
    itos = meta["vocab"]
    vocab = Vocab(itos[2:])
    if list(vocab.itos) != list(itos):
        raise ConfigError("checkpoint vocabulary is corrupted")
    model = LarsonModel(config, len(vocab)).double()
    model.load_state_dict(blob["state_dict"], strict=True)
    return model, vocab, meta


@dataclass
class TrainResult:
    checkpoint_path: Path
    best_dev_f1: float
    best_step: int
    total_steps: int
    losses: list[float]
    dev_history: list[tuple[int, dict[str, float]]]
    final_dev_metrics: dict[str, float]


def train(
    config: ModelConfig,
    train_dir,
    dev_dir,
    out_dir,
    seed: int | None = None,
    dump_attention=None,
    log=None,
) -> TrainResult:
    if seed is not None:
        config = dataclasses.replace(config, seed=seed)
    config.validate()
    if not config.relations:
        raise ConfigError("config must list the relation vocabulary under 'relations'")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(config.seed)
    rng = random.Random(config.seed)

    train_docs = load_corpus(train_dir, config.relations)
    dev_docs = load_corpus(dev_dir, config.relations)
    tokenizer = ChunkTokenizer(config.tokenizer_piece_len)
    vocab = build_vocab(train_docs, tokenizer)
    train_feats = [featurize(d, tokenizer, vocab, config) for d in train_docs]
    dev_feats = [featurize(d, tokenizer, vocab, config) for d in dev_docs]

    model = LarsonModel(config, len(vocab)).double()
    optimizer = build_optimizer(model, config)
    steps_per_epoch = max(1, math.ceil(len(train_feats) / config.batch_size))
    total_steps = config.max_steps if config.max_steps > 0 else config.epochs * steps_per_epoch
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lr_lambda(total_steps, config.warmup_ratio)
    )

    train_facts = collect_train_facts(train_docs, config.relations)
    (out_dir / "train_facts.json").write_text(
        json.dumps(sorted([list(t) for t in train_facts])), encoding="utf-8"
    )

    losses: list[float] = []
    dev_history: list[tuple[int, dict[str, float]]] = []
    best_f1, best_step, best_state = -1.0, -1, None
    step = 0

    def run_eval():
        nonlocal best_f1, best_step, best_state
        metrics = evaluate_model(model, dev_feats, dev_docs, train_facts)
        dev_history.append((step, metrics))
        if metrics["f1"] > best_f1:
            best_f1 = metrics["f1"]
            best_step = step
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        if log:
            log(f"step {step:>6}  dev f1 {metrics['f1']:.4f}")
        return metrics

    done = False
    while not done:
        order = list(range(len(train_feats)))
        rng.shuffle(order)
        for start in range(0, len(order), config.batch_size):
            batch = [train_feats[i] for i in order[start : start + config.batch_size]]
            model.train()
            loss, stats = model.batch_loss(batch)
            if not math.isfinite(stats["loss"]):
                raise TrainingDiverged(step, [f.doc_id for f in batch])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            scheduler.step()
            losses.append(stats["loss"])
            step += 1
            if config.eval_every > 0 and step % config.eval_every == 0:
                run_eval()
            if step >= total_steps:
                done = True
                break
        if not done and config.eval_every == 0:
            run_eval()

    final_metrics = run_eval()
    if best_state is not None:
        model.load_state_dict(best_state)
    if dump_attention:
        predictions_for(model, dev_feats, dump_path=dump_attention)
    ckpt = out_dir / "checkpoint.pt"
    save_checkpoint(ckpt, model, vocab, best_f1, best_step)
    (out_dir / "metrics.json").write_text(json.dumps(final_metrics, indent=2), encoding="utf-8")
    return TrainResult(
        checkpoint_path=ckpt,
        best_dev_f1=best_f1,
        best_step=best_step,
        total_steps=total_steps,
        losses=losses,
        dev_history=dev_history,
        final_dev_metrics=final_metrics,
    )


def train_repeated(
    config: ModelConfig,
    train_dir,
    dev_dir,
    out_dir,
    repeats: int,
    seed: int | None = None,
    log=None,
) -> list[TrainResult]:
    """Run ``repeats`` seeded trainings (seed, seed+1, ...) and write a summary.

    Each run lands in ``out_dir/run<k>``; ``out_dir/summary.json`` records the
    per-seed best dev F1 and their mean.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    out_dir = Path(out_dir)
    base_seed = config.seed if seed is None else seed
    results = []
    for k in range(repeats):
        run_seed = base_seed + k
        if log:
            log(f"=== run {k} (seed {run_seed}) ===")
        results.append(
            train(config, train_dir, dev_dir, out_dir / f"run{k}", seed=run_seed, log=log)
        )
    scores = [r.best_dev_f1 for r in results]
    summary = {
        "seeds": [base_seed + k for k in range(repeats)],
        "dev_f1": scores,
        "mean_dev_f1": sum(scores) / len(scores),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    return results


def evaluate_checkpoint(
    checkpoint_path,
    data_dir,
    train_facts_path=None,
    dump_attention=None,
) -> dict[str, float]:
    model, vocab, _meta = load_checkpoint(checkpoint_path)
    config = model.config
    docs = load_corpus(data_dir, config.relations)
    tokenizer = ChunkTokenizer(config.tokenizer_piece_len)
    feats = [featurize(d, tokenizer, vocab, config) for d in docs]
    train_facts = None
    if train_facts_path:
        raw = json.loads(Path(train_facts_path).read_text(encoding="utf-8"))
        train_facts = {tuple(t) for t in raw}
    return evaluate_model(model, feats, docs, train_facts, dump_path=dump_attention)
