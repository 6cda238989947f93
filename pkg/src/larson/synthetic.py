"""Deterministic synthetic corpora: a small memorization set and a corpus whose
relation label is carried only by constituency structure.

Both generators write a full corpus directory (corpus.json plus dependency and
constituency sidecars) so they exercise the real loaders.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

FILLERS = [
    "the", "old", "new", "red", "blue", "green", "city", "river", "bank",
    "tree", "bird", "stone", "light", "dark", "wind", "rain", "hill", "road",
]
NAMES = [
    "alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi",
    "ivan", "judy", "mallory", "nick", "olivia", "peggy", "trent", "wendy",
]
LABELS = ["S", "NP", "VP", "PP", "ADJP"]
DEPRELS = ["nsubj", "obj", "nmod", "amod", "det", "case"]

OVERFIT_RELATIONS = ("likes", "visited", "hired")
STRUCTURE_RELATIONS = ("grouped", "split")


def chain_dep_rows(words: list[str]) -> list[str]:
    """Left-to-right chain: word 1 is the root, each later word heads off its predecessor."""
    return [f"{i + 1}\t{w}\t{i}\t{'root' if i == 0 else 'dep'}" for i, w in enumerate(words)]


def random_dep_rows(words: list[str], rng: random.Random) -> list[str]:
    rows = []
    for i, w in enumerate(words):
        head = 0 if i == 0 else rng.randint(1, i)
        rel = "root" if head == 0 else rng.choice(DEPRELS)
        rows.append(f"{i + 1}\t{w}\t{head}\t{rel}")
    return rows


def random_binary_tree(words: list[str], rng: random.Random) -> str:
    def build(lo: int, hi: int) -> str:
        if hi - lo == 1:
            return words[lo]
        split = rng.randint(lo + 1, hi - 1)
        return f"({rng.choice(LABELS)} {build(lo, split)} {build(split, hi)})"

    if len(words) == 1:
        return f"(S {words[0]})"
    return f"(S {build(0, len(words))})"


def right_branching_tree(words: list[str]) -> str:
    def build(lo: int) -> str:
        if lo == len(words) - 1:
            return words[lo]
        return f"(X {words[lo]} {build(lo + 1)})"

    return f"(S {build(0)})"


def _write_corpus(out_dir, docs: list[dict], dep_blocks: dict, con_lines: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "corpus.json").write_text(json.dumps(docs, indent=1), encoding="utf-8")
    for doc in docs:
        doc_id = doc["doc_id"]
        dep_text = "\n\n".join("\n".join(block) for block in dep_blocks[doc_id]) + "\n"
        (out / f"{doc_id}.dep.tsv").write_text(dep_text, encoding="utf-8")
        (out / f"{doc_id}.con.txt").write_text("\n".join(con_lines[doc_id]) + "\n", encoding="utf-8")


def write_overfit_corpus(out_dir, n_docs: int = 20, seed: int = 7) -> list[str]:
    """Small random corpus for memorization runs; returns the doc ids."""
    rng = random.Random(seed)
    docs, dep_blocks, con_lines = [], {}, {}
    for d in range(n_docs):
        doc_id = f"doc{d:04d}"
        n_sents = rng.randint(2, 4)
        sents = [
            [rng.choice(FILLERS) for _ in range(rng.randint(3, 6))] for _ in range(n_sents)
        ]
        n_ents = rng.randint(2, 4)
        used = {i: set() for i in range(n_sents)}
        entities = []
        for _ in range(n_ents):
            mentions = []
            for _ in range(rng.randint(1, 2)):
                sent = rng.randrange(n_sents)
                free = [p for p in range(len(sents[sent])) if p not in used[sent]]
                if not free:
                    continue
                pos = rng.choice(free)
                used[sent].add(pos)
                sents[sent][pos] = rng.choice(NAMES)
                mentions.append({"sent": sent, "start": pos, "end": pos + 1})
            if not mentions:
                sent = rng.randrange(n_sents)
                pos = rng.randrange(len(sents[sent]))
                mentions.append({"sent": sent, "start": pos, "end": pos + 1})
            entities.append(mentions)
        ordered = [(s, o) for s in range(n_ents) for o in range(n_ents) if s != o]
        rng.shuffle(ordered)
        facts = []
        for s, o in ordered[: rng.randint(1, min(3, len(ordered)))]:
            facts.append(
                {
                    "s": s,
                    "o": o,
                    "r": rng.choice(OVERFIT_RELATIONS),
                    "evidence": sorted(rng.sample(range(n_sents), rng.randint(1, min(2, n_sents)))),
                }
            )
        docs.append({"doc_id": doc_id, "sents": sents, "entities": entities, "facts": facts})
        dep_blocks[doc_id] = [random_dep_rows(s, rng) for s in sents]
        con_lines[doc_id] = [random_binary_tree(s, rng) for s in sents]
    _write_corpus(out_dir, docs, dep_blocks, con_lines)
    return [doc["doc_id"] for doc in docs]


CUE_WORDS = ["cue", "alpha", "beta", "gamma"]
CUE_TREES = {
    # label 0: the opener binds its neighbor, leaving two two-leaf groups
    0: "(S (P cue alpha) (Q beta gamma))",
    # label 1: the opener stands alone and the rest forms one three-leaf group
    1: "(S (P cue) (Q alpha beta gamma))",
}


def write_structure_cue_corpus(out_dir, n_docs: int = 200, seed: int = 11) -> list[str]:
    """Corpus whose only label signal is the cue sentence's constituency shape.

    Token sequences and dependency sidecars are identically distributed across
    the two classes, so a model that ignores constituency trees cannot separate
    them.
    """
    rng = random.Random(seed)
    docs, dep_blocks, con_lines = [], {}, {}
    labels = [d % 2 for d in range(n_docs)]
    rng.shuffle(labels)
    for d in range(n_docs):
        doc_id = f"cue{d:04d}"
        label = labels[d]
        subj_sent = [rng.choice(NAMES)] + [rng.choice(FILLERS) for _ in range(3)]
        obj_sent = [rng.choice(NAMES)] + [rng.choice(FILLERS) for _ in range(3)]
        sents = [subj_sent, list(CUE_WORDS), obj_sent]
        entities = [
            [{"sent": 0, "start": 0, "end": 1}],
            [{"sent": 2, "start": 0, "end": 1}],
        ]
        facts = [{"s": 0, "o": 1, "r": STRUCTURE_RELATIONS[label], "evidence": [1]}]
        docs.append({"doc_id": doc_id, "sents": sents, "entities": entities, "facts": facts})
        dep_blocks[doc_id] = [chain_dep_rows(s) for s in sents]
        con_lines[doc_id] = [
            right_branching_tree(subj_sent),
            CUE_TREES[label],
            right_branching_tree(obj_sent),
        ]
    _write_corpus(out_dir, docs, dep_blocks, con_lines)
    return [doc["doc_id"] for doc in docs]
