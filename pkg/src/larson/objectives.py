"""Adaptive-threshold relation loss, evidence BCE, threshold decoding, and metrics.

Logit layout everywhere: slot 0 is the learned threshold class, slot r + 1
scores relation r (0-based relation ids as stored on corpus facts).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Collection, Iterable, Mapping, Sequence

import torch
from torch import Tensor

from .corpus import Document

PROB_EPS = 1e-12


def atl_loss(logits: Tensor, positives: Collection[int]) -> Tensor:
    """Rank positive relations above the threshold logit and negatives below it.

    First term: cross entropy of the threshold class against negatives plus
    threshold. Second term: per positive relation, cross entropy against the
    positive set plus threshold.
    """
    num_rel = logits.shape[-1] - 1
    pos = sorted(set(positives))
    if any(not 0 <= p < num_rel for p in pos):
        raise ValueError(f"positive relation id out of range 0..{num_rel - 1}: {pos}")
    pos_slots = [p + 1 for p in pos]
    neg_slots = [0] + [s for s in range(1, num_rel + 1) if s not in set(pos_slots)]
    loss = -(logits[0] - torch.logsumexp(logits[neg_slots], dim=0))
    if pos_slots:
        pos_lse = torch.logsumexp(logits[[0] + pos_slots], dim=0)
        loss = loss - (logits[pos_slots] - pos_lse).sum()
    return loss


def evidence_loss(probs: Tensor, bits: Tensor) -> Tensor:
    """Binary cross entropy summed over sentences for one positive pair."""
    p = probs.clamp(PROB_EPS, 1.0 - PROB_EPS)
    bits = bits.to(p.dtype)
    return -(bits * torch.log(p) + (1.0 - bits) * torch.log(1.0 - p)).sum()


def total_loss(relation_loss: Tensor, evidence: Tensor | None, evidence_weight: float) -> Tensor:
    if evidence is None:
        return relation_loss
    return relation_loss + evidence_weight * evidence


def predict_relations(logits: Tensor) -> tuple[int, ...]:
    """Relations whose logit strictly exceeds the threshold logit; ties drop to NA."""
    above = (logits[1:] > logits[0]).nonzero(as_tuple=True)[0]
    return tuple(int(r) for r in above)


@dataclass(frozen=True)
class PairPrediction:
    doc_id: str
    subj: int
    obj: int
    relations: tuple[int, ...]
    evidence: frozenset[int] = frozenset()


TrainFacts = set  # of (subject name, object name, relation label) triples


def collect_train_facts(documents: Sequence[Document], relations: Sequence[str]) -> TrainFacts:
    """Mention-surface-name triples used by the in-train discount of Ign F1."""
    facts = set()
    for doc in documents:
        for fact in doc.facts:
            label = relations[fact.relation]
            for s_name in doc.entity_names(fact.subj):
                for o_name in doc.entity_names(fact.obj):
                    facts.add((s_name, o_name, label))
    return facts


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _prf(correct: int, predicted: int, gold: int) -> float:
    precision = correct / predicted if predicted else 0.0
    recall = correct / gold if gold else 0.0
    return _f1(precision, recall)


def compute_metrics(
    predictions: Iterable[PairPrediction],
    documents: Sequence[Document],
    relations: Sequence[str],
    train_facts: TrainFacts | None = None,
) -> dict[str, float]:
    """Micro P/R/F1 over fact sets, the in-train-discounted variant, the
    intra/inter split, and evidence F1 over correctly predicted facts."""
    docs = {d.doc_id: d for d in documents}
    train_facts = train_facts or set()

    gold: set[tuple[str, int, int, int]] = set()
    gold_evidence: dict[tuple[str, int, int, int], frozenset[int]] = {}
    for doc in documents:
        for fact in doc.facts:
            key = (doc.doc_id, fact.subj, fact.obj, fact.relation)
            gold.add(key)
            gold_evidence[key] = fact.evidence

    def is_intra(doc: Document, subj: int, obj: int) -> bool:
        return bool(doc.mention_sentences(subj) & doc.mention_sentences(obj))

    predicted: list[tuple[str, int, int, int]] = []
    pair_evidence: dict[tuple[str, int, int], frozenset[int]] = {}
    for pred in predictions:
        doc = docs.get(pred.doc_id)
        if doc is None:
            raise ValueError(f"prediction references unknown document {pred.doc_id!r}")
        for ent in (pred.subj, pred.obj):
            if not 0 <= ent < doc.num_entities:
                raise ValueError(f"prediction references unknown entity {ent} in {pred.doc_id}")
        for r in pred.relations:
            if not 0 <= r < len(relations):
                raise ValueError(f"prediction references unknown relation id {r}")
            predicted.append((pred.doc_id, pred.subj, pred.obj, r))
        pair_evidence[(pred.doc_id, pred.subj, pred.obj)] = frozenset(pred.evidence)

    predicted_set = set(predicted)
    if len(predicted_set) != len(predicted):
        raise ValueError("duplicate predicted facts")
    correct_set = predicted_set & gold

    def in_train(key) -> bool:
        doc_id, s, o, r = key
        doc = docs[doc_id]
        label = relations[r]
        return any(
            (sn, on, label) in train_facts
            for sn in doc.entity_names(s)
            for on in doc.entity_names(o)
        )

    correct_in_train = sum(1 for key in correct_set if in_train(key))

    f1 = _prf(len(correct_set), len(predicted_set), len(gold))

    ign_prec_den = len(predicted_set) - correct_in_train
    ign_precision = (len(correct_set) - correct_in_train) / ign_prec_den if ign_prec_den else 0.0
    ign_recall = len(correct_set) / len(gold) if gold else 0.0
    ign_f1 = _f1(ign_precision, ign_recall)

    intra_gold = {k for k in gold if is_intra(docs[k[0]], k[1], k[2])}
    intra_pred = {k for k in predicted_set if is_intra(docs[k[0]], k[1], k[2])}
    intra_f1 = _prf(len(intra_pred & intra_gold), len(intra_pred), len(intra_gold))
    inter_f1 = _prf(
        len((predicted_set - intra_pred) & (gold - intra_gold)),
        len(predicted_set - intra_pred),
        len(gold - intra_gold),
    )

    evi_correct = evi_pred = evi_gold = 0
    for key in correct_set:
        doc_id, s, o, _ = key
        pred_evi = pair_evidence.get((doc_id, s, o), frozenset())
        gold_evi = gold_evidence[key]
        evi_correct += len(pred_evi & gold_evi)
        evi_pred += len(pred_evi)
        evi_gold += len(gold_evi)
    evi_f1 = _prf(evi_correct, evi_pred, evi_gold)

    return {
        "f1": f1,
        "ign_f1": ign_f1,
        "intra_f1": intra_f1,
        "inter_f1": inter_f1,
        "evi_f1": evi_f1,
    }


def metrics_table(metrics: Mapping[str, float]) -> str:
    names = {
        "f1": "F1",
        "ign_f1": "Ign F1",
        "intra_f1": "Intra F1",
        "inter_f1": "Inter F1",
        "evi_f1": "Evi F1",
    }
    width = max(len(v) for v in names.values())
    lines = [f"{names[k]:<{width}}  {100 * metrics[k]:6.2f}" for k in names]
    return "\n".join(lines)
