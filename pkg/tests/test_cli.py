import json

import numpy as np
import pytest

from cstem.cli import main
from cstem.synthetic import planted_corpus


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    pc = planted_corpus(n_docs=60, doc_len=40, words_per_cluster=6, n_stop=2, dim=4, seed=0)
    tokens = pc.corpus.vocab.tokens
    with open(root / "raw.txt", "w") as fh:
        for doc in pc.corpus.docs:
            fh.write(" ".join(tokens[i] for i, c in zip(doc.indices, doc.counts) for _ in range(c)) + "\n")
    with open(root / "emb.txt", "w") as fh:
        for tok, row in zip(tokens, pc.embeddings):
            fh.write(tok + " " + " ".join(f"{v:.6f}" for v in row) + "\n")
    pc.corpus.save(root / "corpus.json")
    (root / "cfg.json").write_text(json.dumps({"num_topics": 3, "embed_dim": 4, "hidden": 8, "batch_size": 20,
                                               "epochs": 2, "learning_rate": 0.01}))
    return root


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_end_to_end(workspace, capsys, monkeypatch):
    monkeypatch.delenv("CSTEM_OUTPUT_DIR", raising=False)
    w = workspace
    code, out, _ = _run(capsys, "preprocess", w / "raw.txt", "--min-doc-tokens", 10, "--test-fraction", 0.25,
                        "--out", w / "data")
    assert code == 0 and "V=20" in out and "N=45" in out
    assert (w / "data" / "vocab.txt").read_text().count("\n") == 20

    code, out, _ = _run(capsys, "train", "--config", w / "cfg.json", "--corpus", w / "data" / "corpus.json",
                        "--embeddings", w / "emb.txt", "--out", w / "run", "--seed", 4, "--epochs", 3)
    assert code == 0 and "epochs=3" in out
    assert (w / "run" / "metrics.csv").read_text().count("\n") == 4

    code, out, _ = _run(capsys, "topics", w / "run" / "checkpoint.npz", "--n", 4, "--json")
    assert code == 0 and len(json.loads(out)["topics"]) == 3

    code, out, _ = _run(capsys, "eval", w / "run" / "checkpoint.npz", w / "data" / "test.json",
                        "--n-words", "2,5", "--samples", 2)
    assert code == 0
    report = json.loads(out[:out.rindex("}") + 1])
    assert report["perplexity"] > 1 and set(report["coherence"]) == {"2", "5"}

    code, out, _ = _run(capsys, "export", w / "run" / "checkpoint.npz", "--top-n", 3, "--out", w / "exp")
    assert code == 0 and (w / "exp" / "embeddings.csv").exists()


def test_seed_reproducible(workspace, capsys, monkeypatch):
    monkeypatch.delenv("CSTEM_OUTPUT_DIR", raising=False)
    w = workspace
    _run(capsys, "preprocess", w / "raw.txt", "--min-doc-tokens", 10, "--out", w / "d2")
    for name in ("r1", "r2"):
        assert _run(capsys, "train", "--config", w / "cfg.json", "--corpus", w / "d2" / "corpus.json",
                    "--out", w / name)[0] == 0
    assert (w / "r1" / "checkpoint.npz").read_bytes() == (w / "r2" / "checkpoint.npz").read_bytes()


def test_output_dir_env(workspace, capsys, monkeypatch):
    monkeypatch.setenv("CSTEM_OUTPUT_DIR", str(workspace / "envdir"))
    code, _, _ = _run(capsys, "preprocess", workspace / "raw.txt", "--min-doc-tokens", 10, "--out", "unused")
    assert code == 0 and (workspace / "envdir" / "corpus.json").exists()


def test_errors_are_single_lines(workspace, capsys, tmp_path, monkeypatch):
    monkeypatch.delenv("CSTEM_OUTPUT_DIR", raising=False)
    code, _, err = _run(capsys, "preprocess", workspace / "raw.txt", "--min-doc-tokens", 1000, "--out", tmp_path)
    assert code == 1 and err.startswith("error[E_EMPTY_CORPUS]") and err.count("\n") == 1

    bad = tmp_path / "bad.json"
    bad.write_text('{"num_topic": 3}')
    code, _, err = _run(capsys, "train", "--config", bad, "--corpus", workspace / "raw.txt")
    assert code == 1 and err.startswith("error[E_CONFIG]") and "num_topic" in err

    code, _, err = _run(capsys, "eval", tmp_path / "missing.npz", workspace / "raw.txt")
    assert code == 1 and err.startswith("error[E_IO]")

    (tmp_path / "emb.txt").write_text("tok 1 2 3\n")
    code, _, err = _run(capsys, "train", "--config", workspace / "cfg.json", "--corpus",
                        workspace / "corpus.json", "--embeddings", tmp_path / "emb.txt", "--out", tmp_path)
    assert code == 1 and err.startswith("error[E_EMBEDDING]")


def test_unknown_flag_exits_with_usage(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--bogus"])
    assert exc.value.code == 2
