import json

import pytest

from larson.cli import main
from larson.synthetic import write_overfit_corpus


def config_text():
    return """
relations = likes, visited, hired
seed = 3
encoder.dim = 16
gat.dim = 8
gat.layers = 2
tree.dim = 8
fusion.dim = 8
fusion.dropout = 0.0
optim.max_steps = 4
optim.eval_every = 2
optim.lr_encoder = 1e-3
optim.lr_rest = 1e-3
"""


def test_train_then_eval_via_cli(tmp_path, capsys):
    data = tmp_path / "data"
    write_overfit_corpus(data, n_docs=6, seed=9)
    cfg = tmp_path / "run.cfg"
    cfg.write_text(config_text())
    out = tmp_path / "out"

    code = main(
        [
            "train",
            "--config", str(cfg),
            "--train", str(data),
            "--dev", str(data),
            "--out", str(out),
            "--seed", "17",
        ]
    )
    assert code == 0
    stdout = capsys.readouterr().out
    assert "checkpoint" in stdout and "best dev F1" in stdout
    meta = json.loads((out / "checkpoint.json").read_text())
    assert meta["config"]["seed"] == "17"  # --seed overrides the file

    dump = tmp_path / "beta.jsonl"
    code = main(
        [
            "eval",
            "--checkpoint", str(out / "checkpoint.pt"),
            "--data", str(data),
            "--train-facts", str(out / "train_facts.json"),
            "--dump-attention", str(dump),
        ]
    )
    assert code == 0
    stdout = capsys.readouterr().out
    metrics = json.loads(stdout.splitlines()[0])
    assert set(metrics) == {"f1", "ign_f1", "intra_f1", "inter_f1", "evi_f1"}
    assert dump.exists()


def test_repeat_runs_seeded_trainings(tmp_path, capsys):
    data = tmp_path / "data"
    write_overfit_corpus(data, n_docs=4, seed=10)
    cfg = tmp_path / "run.cfg"
    cfg.write_text(config_text().replace("optim.max_steps = 4", "optim.max_steps = 2"))
    out = tmp_path / "out"
    code = main(
        [
            "train",
            "--config", str(cfg),
            "--train", str(data),
            "--dev", str(data),
            "--out", str(out),
            "--repeat", "2",
        ]
    )
    assert code == 0
    assert (out / "run0" / "checkpoint.pt").exists()
    assert (out / "run1" / "checkpoint.pt").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seeds"] == [3, 4]
    assert summary["mean_dev_f1"] == pytest.approx(sum(summary["dev_f1"]) / 2)
    assert "mean dev F1" in capsys.readouterr().out


def test_missing_subcommand_is_usage_error(capsys):
    with pytest.raises(SystemExit):
        main([])
    assert "usage" in capsys.readouterr().err.lower()


def test_selftest_command_runs_green(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "[PASS]" in out and "[FAIL]" not in out
