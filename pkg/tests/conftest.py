import json

import pytest
import torch

torch.set_num_threads(2)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


def write_tiny_corpus(tmp_path, facts=None, con_line=None, dep_text=None):
    """One doc, 2 sentences, 2 entities; pieces overridable to provoke errors."""
    doc = {
        "doc_id": "d0",
        "sents": [["maria", "likes", "tea"], ["she", "visits", "rome"]],
        "entities": [
            [{"sent": 0, "start": 0, "end": 1}, {"sent": 1, "start": 0, "end": 1}],
            [{"sent": 1, "start": 2, "end": 3}],
        ],
        "facts": facts
        if facts is not None
        else [{"s": 0, "o": 1, "r": "likes", "evidence": [1]}],
    }
    (tmp_path / "corpus.json").write_text(json.dumps([doc]))
    dep = dep_text or (
        "1\tmaria\t2\tnsubj\n2\tlikes\t0\troot\n3\ttea\t2\tobj\n"
        "\n"
        "1\tshe\t2\tnsubj\n2\tvisits\t0\troot\n3\trome\t2\tobj\n"
    )
    (tmp_path / "d0.dep.tsv").write_text(dep)
    con = con_line or "(S (NP maria) (VP likes tea))\n(S (NP she) (VP visits rome))\n"
    (tmp_path / "d0.con.txt").write_text(con)
    return tmp_path
