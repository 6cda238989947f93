"""End-to-end document model: encode, refine with dependency syntax, model
subsentences over constituency trees, fuse, and score relations plus evidence.

All ordered entity pairs (s asc, o asc, s != o) are scored in one vectorized
pass per document.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import torch
from torch import Tensor, nn

from .config import ModelConfig
from .corpus import (
    CorpusError,
    Document,
    MarkedDocument,
    Tokenizer,
    Vocab,
    insert_mention_markers,
)
from .dep_refinement import (
    DependencyRefiner,
    entity_attention,
    localized_context,
    pool_entity,
    sentence_logsumexp,
)
from .encoder import build_encoder
from .fusion_heads import DedicatedFusion, EvidenceHead, RelationHead
from .gat import edge_tensors
from .objectives import atl_loss, evidence_loss, total_loss
from .subsentence import (
    ChildSumTreeLstm,
    ConstituencySentenceEncoder,
    Forest,
    build_forest,
    collect_subsentences,
    leaf_inputs_from_embeddings,
    tree_lstm_forward,
)
from .syntax import build_dependency_graph, merge_graphs


@dataclass
class DocumentFeatures:
    """Everything the forward pass needs, precomputed once per document."""

    doc: Document
    marked: MarkedDocument
    token_ids: Tensor
    graph_src: Tensor
    graph_dst: Tensor
    num_tokens: int
    forest: Forest | None
    entity_marker_rows: list[Tensor]
    entity_mention_rows: list[Tensor]
    pairs: Tensor  # (P, 2) ordered pairs
    pair_positives: list[tuple[int, ...]]
    pair_evidence_bits: list[Tensor | None]

    @property
    def doc_id(self) -> str:
        return self.doc.doc_id


def featurize(doc: Document, tokenizer: Tokenizer, vocab: Vocab, config: ModelConfig) -> DocumentFeatures:
    marked = insert_mention_markers(doc, tokenizer)
    if len(marked.tokens) > config.encoder_max_len:
        raise CorpusError(
            f"{doc.doc_id}: {len(marked.tokens)} tokens exceed encoder.max_len "
            f"{config.encoder_max_len}"
        )
    token_ids = torch.tensor(vocab.encode_all(marked.tokens), dtype=torch.long)

    graphs = [
        build_dependency_graph(
            rows, marked.alignment[i], marked.sent_bounds[i], bidirectional=config.dep_bidirectional
        )
        for i, rows in enumerate(doc.dep_parses)
    ]
    src, dst = edge_tensors(merge_graphs(graphs).edges)

    forest = None if config.ablate_constituency else build_forest(doc.con_parses)

    marker_rows = [
        torch.tensor(sorted(m.marker_pos for m in ent), dtype=torch.long)
        for ent in marked.entities
    ]
    mention_rows = []
    for ent in marked.entities:
        toks = sorted(
            {
                t
                for m in ent
                for w in range(m.start, m.end)
                for t in marked.alignment[m.sent_index][w]
            }
        )
        mention_rows.append(torch.tensor(toks, dtype=torch.long))

    n_ent = doc.num_entities
    pair_list = [(s, o) for s in range(n_ent) for o in range(n_ent) if s != o]
    pairs = torch.tensor(pair_list, dtype=torch.long).reshape(len(pair_list), 2)

    by_pair: dict[tuple[int, int], list] = {}
    for fact in doc.facts:
        by_pair.setdefault((fact.subj, fact.obj), []).append(fact)
    positives, evidence_bits = [], []
    for s, o in pair_list:
        facts = by_pair.get((s, o), [])
        positives.append(tuple(sorted(f.relation for f in facts)))
        if facts:
            bits = torch.zeros(doc.num_sentences)
            for f in facts:
                for sid in f.evidence:
                    bits[sid] = 1.0
            evidence_bits.append(bits)
        else:
            evidence_bits.append(None)

    return DocumentFeatures(
        doc=doc,
        marked=marked,
        token_ids=token_ids,
        graph_src=src,
        graph_dst=dst,
        num_tokens=len(marked.tokens),
        forest=forest,
        entity_marker_rows=marker_rows,
        entity_mention_rows=mention_rows,
        pairs=pairs,
        pair_positives=positives,
        pair_evidence_bits=evidence_bits,
    )


@dataclass
class DocumentOutput:
    doc_id: str
    pairs: Tensor
    logits: Tensor  # (P, R + 1), slot 0 = threshold class
    evidence_probs: Tensor  # (P, I)
    fused_subj: Tensor
    fused_obj: Tensor
    fused_ctx: Tensor
    betas: dict[str, Tensor] = field(default_factory=dict)
    subsentence_spans: list[tuple[int, int, int]] = field(default_factory=list)


@dataclass(frozen=True)
class PairOutput:
    subj: int
    obj: int
    fused_subj: Tensor
    fused_obj: Tensor
    fused_ctx: Tensor
    logits: Tensor
    evidence_probs: Tensor


def pair_outputs(out: DocumentOutput) -> list[PairOutput]:
    return [
        PairOutput(
            subj=int(out.pairs[k, 0]),
            obj=int(out.pairs[k, 1]),
            fused_subj=out.fused_subj[k],
            fused_obj=out.fused_obj[k],
            fused_ctx=out.fused_ctx[k],
            logits=out.logits[k],
            evidence_probs=out.evidence_probs[k],
        )
        for k in range(out.pairs.shape[0])
    ]


class LarsonModel(nn.Module):
    def __init__(self, config: ModelConfig, vocab_size: int):
        super().__init__()
        config.validate()
        if not config.relations:
            raise ValueError("config.relations must name at least one relation class")
        self.config = config
        self.encoder = build_encoder(
            config.encoder_kind, vocab_size, config.encoder_dim, config.encoder_max_len
        )
        d = config.encoder_dim
        if not config.ablate_dependency:
            self.dep_refiner = DependencyRefiner(
                d, config.gat_dim, layers=config.gat_layers, leaky_slope=config.gat_leaky_slope
            )
        if not config.ablate_constituency:
            self.tree_cell = ChildSumTreeLstm(d, config.tree_dim)
            self.con_sentences = ConstituencySentenceEncoder(
                config.tree_dim, config.gat_dim, layers=config.gat_layers,
                leaky_slope=config.gat_leaky_slope,
            )
            self.pair_fusion = DedicatedFusion(
                d, config.tree_dim, config.fusion_dim, dropout=config.fusion_dropout
            )
            self.sentence_fusion = DedicatedFusion(
                d, config.gat_dim, config.fusion_dim, dropout=config.fusion_dropout
            )
        self.relation_head = RelationHead(d, len(config.relations), config.head_block_size)
        self.evidence_head = EvidenceHead(d)

    def encoder_parameters(self):
        return list(self.encoder.parameters())

    def rest_parameters(self):
        enc = {id(p) for p in self.encoder.parameters()}
        return [p for p in self.parameters() if id(p) not in enc]

    def forward_document(self, feats: DocumentFeatures, collect_attention: bool = False) -> DocumentOutput:
        cfg = self.config
        encoded = self.encoder.encode(feats.token_ids)
        h, attn = encoded.H, encoded.A

        if cfg.ablate_dependency:
            h_c = h
        else:
            h_c, _ = self.dep_refiner(h, feats.graph_src, feats.graph_dst)
        s_dep = sentence_logsumexp(h_c, feats.marked.sent_bounds)

        subsent = None
        spans: list[tuple[int, int, int]] = []
        if not cfg.ablate_constituency:
            forest = feats.forest
            if forest is None:
                raise ValueError(
                    f"{feats.doc_id}: features were built without constituency trees"
                )
            leaf_x = leaf_inputs_from_embeddings(
                forest, encoded.embedding_rows, feats.token_ids, feats.marked.alignment,
                device=h.device,
            )
            hidden, _ = tree_lstm_forward(self.tree_cell, forest, leaf_x)
            subsent = collect_subsentences(hidden, forest)
            spans = list(forest.kept_spans)
            s_con = self.con_sentences(hidden, forest)
            if cfg.ablate_dynamic_fusion or cfg.sentence_combine_mode == "paired":
                sentences = self.sentence_fusion.fuse_paired(s_dep, s_con)
            else:
                sentences = self.sentence_fusion(s_dep, s_con)
        else:
            sentences = s_dep

        entity_rows = (
            feats.entity_marker_rows
            if cfg.context_entity_rows == "markers"
            else feats.entity_mention_rows
        )
        if feats.entity_marker_rows:
            e_all = torch.stack([pool_entity(h_c, rows) for rows in feats.entity_marker_rows])
            a_all = torch.stack([entity_attention(attn, rows) for rows in entity_rows])
        else:
            e_all = h_c.new_zeros(0, h_c.shape[1])
            a_all = h_c.new_zeros(0, h_c.shape[0])

        subj, obj = feats.pairs[:, 0], feats.pairs[:, 1]
        e_subj, e_obj = e_all[subj], e_all[obj]
        ctx = localized_context(h_c, a_all[subj], a_all[obj])

        betas: dict[str, Tensor] = {}
        if subsent is not None and subsent.shape[0] > 0:
            if cfg.ablate_dynamic_fusion:
                f_subj = self.pair_fusion.fuse_uniform(e_subj, subsent)
                f_obj = self.pair_fusion.fuse_uniform(e_obj, subsent)
                f_ctx = self.pair_fusion.fuse_uniform(ctx, subsent)
            else:
                b_subj = self.pair_fusion.attention(e_subj, subsent)
                b_obj = self.pair_fusion.attention(e_obj, subsent)
                b_ctx = self.pair_fusion.attention(ctx, subsent)
                f_subj = self.pair_fusion.fuse(e_subj, subsent, b_subj)
                f_obj = self.pair_fusion.fuse(e_obj, subsent, b_obj)
                f_ctx = self.pair_fusion.fuse(ctx, subsent, b_ctx)
                if collect_attention:
                    betas = {"subject": b_subj, "object": b_obj, "context": b_ctx}
        else:
            f_subj, f_obj, f_ctx = e_subj, e_obj, ctx

        logits = self.relation_head(f_subj, f_obj, f_ctx)
        evidence = self.evidence_head(sentences, f_ctx)
        return DocumentOutput(
            doc_id=feats.doc_id,
            pairs=feats.pairs,
            logits=logits,
            evidence_probs=evidence,
            fused_subj=f_subj,
            fused_obj=f_obj,
            fused_ctx=f_ctx,
            betas=betas,
            subsentence_spans=spans,
        )

    def batch_loss(self, batch: Sequence[DocumentFeatures]) -> tuple[Tensor, dict[str, float]]:
        """Relation loss averaged over every ordered pair in the batch plus the
        weighted evidence loss averaged over positive pairs."""
        relation_terms, evidence_terms = [], []
        for feats in batch:
            out = self.forward_document(feats)
            for k, positives in enumerate(feats.pair_positives):
                relation_terms.append(atl_loss(out.logits[k], positives))
                if positives:
                    evidence_terms.append(
                        evidence_loss(out.evidence_probs[k], feats.pair_evidence_bits[k])
                    )
        if not relation_terms:
            raise ValueError("batch contains no entity pairs")
        l_re = torch.stack(relation_terms).mean()
        l_evi = torch.stack(evidence_terms).mean() if evidence_terms else None
        loss = total_loss(l_re, l_evi, self.config.evidence_weight)
        stats = {
            "loss": float(loss.detach()),
            "relation_loss": float(l_re.detach()),
            "evidence_loss": float(l_evi.detach()) if l_evi is not None else 0.0,
            "positive_pairs": float(len(evidence_terms)),
        }
        return loss, stats
