"""Corpus loading, mention marking, and word-to-subword alignment.

Disk layout per corpus directory: ``corpus.json`` plus one ``<doc_id>.dep.tsv``
and ``<doc_id>.con.txt`` sidecar per document. Parsing happens offline; this
module only ingests and validates the files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

from .syntax import ConstituencyTree, DepRow, ParseError, build_constituency_tree

MARKER = "*"
UNK_TOKEN = "<unk>"

Tokenizer = Callable[[str], list[str]]
AlignmentMap = list[list[list[int]]]  # sentence -> word -> global token indices


class CorpusError(ValueError):
    """Raised when corpus files violate the documented format or invariants."""


@dataclass(frozen=True)
class Mention:
    entity_id: int
    sent_index: int
    start: int
    end: int
    marker_pos: int | None = None


@dataclass(frozen=True)
class Fact:
    subj: int
    obj: int
    relation: int
    evidence: frozenset[int]


@dataclass
class Document:
    doc_id: str
    sentences: list[list[str]]
    entities: list[list[Mention]]
    facts: list[Fact]
    dep_parses: list[list[DepRow]]
    con_parses: list[ConstituencyTree]

    @property
    def num_sentences(self) -> int:
        return len(self.sentences)

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    def mention_sentences(self, entity_id: int) -> set[int]:
        return {m.sent_index for m in self.entities[entity_id]}

    def entity_names(self, entity_id: int) -> set[str]:
        return {
            " ".join(self.sentences[m.sent_index][m.start:m.end])
            for m in self.entities[entity_id]
        }


@dataclass(frozen=True)
class ChunkTokenizer:
    """Deterministic subword splitter: fixed-length character chunks."""

    piece_len: int = 4

    def __call__(self, word: str) -> list[str]:
        if not word:
            raise CorpusError("cannot tokenize an empty word")
        return [word[i : i + self.piece_len] for i in range(0, len(word), self.piece_len)]


class Vocab:
    """Token-piece vocabulary; id 0 is the mention marker, id 1 the unknown."""

    def __init__(self, pieces: Sequence[str]):
        self.itos: tuple[str, ...] = (MARKER, UNK_TOKEN, *pieces)
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, token: str) -> int:
        return self.stoi.get(token, 1)

    def encode_all(self, tokens: Sequence[str]) -> list[int]:
        return [self.encode(t) for t in tokens]


def build_vocab(documents: Sequence[Document], tokenizer: Tokenizer) -> Vocab:
    pieces = set()
    for doc in documents:
        for sent in doc.sentences:
            for word in sent:
                pieces.update(tokenizer(word))
    pieces.discard(MARKER)
    pieces.discard(UNK_TOKEN)
    return Vocab(sorted(pieces))


def _parse_dep_sidecar(path: Path) -> list[list[DepRow]]:
    blocks, current = [], []
    for raw in path.read_text(encoding="utf-8").splitlines():
        line = raw.rstrip("\n")
        if not line.strip():
            if current:
                blocks.append(current)
                current = []
            continue
        cols = line.split("\t")
        if len(cols) != 4:
            raise CorpusError(f"{path.name}: expected 4 tab-separated columns, got {line!r}")
        try:
            row = DepRow(index=int(cols[0]), word=cols[1], head=int(cols[2]), deprel=cols[3])
        except ValueError:
            raise CorpusError(f"{path.name}: non-integer index/head in {line!r}") from None
        current.append(row)
    if current:
        blocks.append(current)
    return blocks


def _load_document(entry: dict, base: Path, rel2id: dict[str, int]) -> Document:
    try:
        doc_id = entry["doc_id"]
        sents = entry["sents"]
        raw_entities = entry["entities"]
        raw_facts = entry.get("facts", [])
    except KeyError as exc:
        raise CorpusError(f"document entry missing field {exc}") from None
    if not sents:
        raise CorpusError(f"{doc_id}: document has no sentences")
    for i, sent in enumerate(sents):
        if not sent:
            raise CorpusError(f"{doc_id}: sentence {i} is empty")
        if any(not w for w in sent):
            raise CorpusError(f"{doc_id}: sentence {i} contains an empty word")

    entities: list[list[Mention]] = []
    for eid, raw_mentions in enumerate(raw_entities):
        if not raw_mentions:
            raise CorpusError(f"{doc_id}: entity {eid} has no mentions")
        mentions = []
        for m in raw_mentions:
            sent, start, end = m["sent"], m["start"], m["end"]
            if not 0 <= sent < len(sents):
                raise CorpusError(f"{doc_id}: mention sentence {sent} out of range")
            if not 0 <= start < end <= len(sents[sent]):
                raise CorpusError(
                    f"{doc_id}: mention span [{start}, {end}) invalid for sentence {sent}"
                )
            mentions.append(Mention(entity_id=eid, sent_index=sent, start=start, end=end))
        entities.append(mentions)

    facts = []
    for f in raw_facts:
        s, o, r = f["s"], f["o"], f["r"]
        if s == o:
            raise CorpusError(f"{doc_id}: fact with identical subject and object {s}")
        if not (0 <= s < len(entities) and 0 <= o < len(entities)):
            raise CorpusError(f"{doc_id}: fact references unknown entity ({s}, {o})")
        if r not in rel2id:
            raise CorpusError(f"{doc_id}: unknown relation label {r!r}")
        evidence = frozenset(f.get("evidence", []))
        for sid in evidence:
            if not 0 <= sid < len(sents):
                raise CorpusError(f"{doc_id}: evidence sentence {sid} out of range")
        facts.append(Fact(subj=s, obj=o, relation=rel2id[r], evidence=evidence))

    dep_path = base / f"{doc_id}.dep.tsv"
    con_path = base / f"{doc_id}.con.txt"
    for p in (dep_path, con_path):
        if not p.exists():
            raise CorpusError(f"{doc_id}: missing sidecar {p.name}")

    dep_blocks = _parse_dep_sidecar(dep_path)
    if len(dep_blocks) != len(sents):
        raise CorpusError(
            f"{doc_id}: {len(dep_blocks)} dependency blocks for {len(sents)} sentences"
        )
    for i, (block, sent) in enumerate(zip(dep_blocks, sents)):
        if len(block) != len(sent):
            raise CorpusError(
                f"{doc_id}: sentence {i} has {len(sent)} words but {len(block)} parse rows"
            )
        for row, word in zip(block, sent):
            if row.word != word:
                raise CorpusError(
                    f"{doc_id}: sentence {i} word {row.index} mismatch "
                    f"({row.word!r} vs {word!r})"
                )

    con_lines = [l for l in con_path.read_text(encoding="utf-8").splitlines() if l.strip()]
    if len(con_lines) != len(sents):
        raise CorpusError(
            f"{doc_id}: {len(con_lines)} constituency parses for {len(sents)} sentences"
        )
    trees = []
    for i, line in enumerate(con_lines):
        try:
            tree = build_constituency_tree(line)
        except ParseError as exc:
            raise CorpusError(f"{doc_id}: sentence {i}: {exc}") from None
        if tree.leaf_count != len(sents[i]):
            raise CorpusError(
                f"{doc_id}: sentence {i} has {len(sents[i])} words but the "
                f"constituency parse has {tree.leaf_count} leaves"
            )
        trees.append(tree)

    return Document(
        doc_id=doc_id,
        sentences=[list(s) for s in sents],
        entities=entities,
        facts=facts,
        dep_parses=dep_blocks,
        con_parses=trees,
    )


def load_corpus(path, relations: Sequence[str]) -> list[Document]:
    """Load every document under ``path``; any format violation is a hard error."""
    base = Path(path)
    corpus_file = base / "corpus.json"
    if not corpus_file.exists():
        raise CorpusError(f"no corpus.json under {base}")
    rel2id = {label: i for i, label in enumerate(relations)}
    entries = json.loads(corpus_file.read_text(encoding="utf-8"))
    documents = [_load_document(entry, base, rel2id) for entry in entries]
    seen = set()
    for doc in documents:
        if doc.doc_id in seen:
            raise CorpusError(f"duplicate doc_id {doc.doc_id!r}")
        seen.add(doc.doc_id)
    return documents


@dataclass
class MarkedDocument:
    """Marker-inserted token sequence with alignment back to words."""

    tokens: list[str]
    entities: list[list[Mention]]
    alignment: AlignmentMap
    sent_bounds: list[tuple[int, int]]


def _check_crossing(mentions: Sequence[Mention]) -> None:
    spans = sorted((m.start, m.end) for m in mentions)
    for i, (s1, e1) in enumerate(spans):
        for s2, e2 in spans[i + 1 :]:
            if s2 >= e1:
                break
            if s1 < s2 < e1 < e2:
                raise CorpusError(
                    f"crossing mention spans [{s1}, {e1}) and [{s2}, {e2})"
                )


def insert_mention_markers(doc: Document, tokenizer: Tokenizer) -> MarkedDocument:
    """Insert one ``*`` before and after every mention while tokenizing.

    Start markers at a word are ordered (start asc, end desc) so nested spans
    open outside-in; end markers close inside-out. ``marker_pos`` records the
    opening marker's global token index.
    """
    flat_mentions = [m for ent in doc.entities for m in ent]
    per_sentence: dict[int, list[Mention]] = {}
    for m in flat_mentions:
        per_sentence.setdefault(m.sent_index, []).append(m)
    for sent_mentions in per_sentence.values():
        _check_crossing(sent_mentions)

    tokens: list[str] = []
    alignment: AlignmentMap = []
    sent_bounds: list[tuple[int, int]] = []
    marker_at: dict[int, int] = {}  # id(mention) -> opening marker token index

    for sent_index, sent in enumerate(doc.sentences):
        sent_start = len(tokens)
        word_map: list[list[int]] = []
        mentions_here = per_sentence.get(sent_index, [])
        for word_index, word in enumerate(sent):
            opening = [m for m in mentions_here if m.start == word_index]
            opening.sort(key=lambda m: (m.start, -m.end, m.entity_id))
            for m in opening:
                marker_at[id(m)] = len(tokens)
                tokens.append(MARKER)
            pieces = tokenizer(word)
            if not pieces:
                raise CorpusError(f"{doc.doc_id}: tokenizer returned no pieces for {word!r}")
            word_map.append(list(range(len(tokens), len(tokens) + len(pieces))))
            tokens.extend(pieces)
            closing = [m for m in mentions_here if m.end == word_index + 1]
            closing.sort(key=lambda m: (-m.start, m.entity_id))
            tokens.extend(MARKER for _ in closing)
        alignment.append(word_map)
        sent_bounds.append((sent_start, len(tokens)))

    marked_entities = [
        [replace(m, marker_pos=marker_at[id(m)]) for m in ent] for ent in doc.entities
    ]
    return MarkedDocument(
        tokens=tokens,
        entities=marked_entities,
        alignment=alignment,
        sent_bounds=sent_bounds,
    )


def strip_markers(marked: MarkedDocument) -> list[list[str]]:
    """Reconstruct word sequences by de-subwording through the alignment."""
    return [
        ["".join(marked.tokens[t] for t in word) for word in sent]
        for sent in marked.alignment
    ]
