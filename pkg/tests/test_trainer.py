import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cstem.corpus import BowDocument, Corpus, Vocabulary
from cstem.trainer import (Adam, Checkpoint, TrainConfig, Trainer, TrainingDiverged, adam_step, gradient,
                           train, write_metrics)
from cstem.synthetic import planted_corpus
from helpers import numeric_gradient, small_instance


def test_adam_first_step():
    p = {"w": np.array([1.0, -2.0, 0.5])}
    g = np.array([0.3, -4.0, 1e-9])
    Adam(lr=0.1, eps=1e-8).step(p, {"w": g})
    np.testing.assert_allclose(p["w"], np.array([1.0, -2.0, 0.5]) + 0.1 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_adam_zero_gradient():
    opt = Adam(lr=0.1)
    p = {"w": np.array([1.0, 2.0])}
    opt.step(p, {"w": np.array([1.0, -1.0])})
    before = p["w"].copy()
    m, v = opt.m["w"].copy(), opt.v["w"].copy()
    opt.step(p, {"w": np.zeros(2)})
    # m decays to beta1*m, so the step is not zero; it is zero only from a zero state.
    np.testing.assert_allclose(opt.m["w"], 0.9 * m)
    np.testing.assert_allclose(opt.v["w"], 0.999 * v)
    fresh = {"w": before.copy()}
    Adam(lr=0.1).step(fresh, {"w": np.zeros(2)})
    np.testing.assert_array_equal(fresh["w"], before)


def test_adam_constant_gradient_step_size():
    opt = Adam(lr=0.01)
    p = {"w": np.zeros(3)}
    g = np.array([5.0, -0.2, 3e-3])
    prev = p["w"].copy()
    for _ in range(500):
        opt.step(p, {"w": g})
        step = p["w"] - prev
        prev = p["w"].copy()
        np.testing.assert_allclose(step, 0.01 * g / (np.abs(g) + 1e-8), rtol=1e-9)


def test_adam_step_functional_matches_class():
    cfg = TrainConfig(learning_rate=0.05)
    params = {"a": np.array([1.0, 2.0])}
    grads = {"a": np.array([0.5, -0.1])}
    new, moments, t = adam_step(params, grads, ({}, {}), 0, cfg)
    opt = Adam(0.05)
    ref = {"a": params["a"].copy()}
    opt.step(ref, grads)
    np.testing.assert_array_equal(new["a"], ref["a"])
    assert t == 1 and params["a"][0] == 1.0


@given(st.integers(0, 10**6), st.integers(1, 2), st.sampled_from(["full", "amortized"]))
@settings(max_examples=10, deadline=None)
def test_gradient_matches_finite_differences(seed, L, mode):
    params, priors, x, eps_c, zeta, n = small_instance(V=8, K=2, W=3, H=4, L=L, seed=seed)
    out, grads = gradient(x, params, priors, n, eps_c, zeta, mode)
    num = numeric_gradient(params, priors, x, eps_c, zeta, n, kl_c_scaling=mode)
    assert out.clamped == 0
    for name in grads:
        np.testing.assert_allclose(grads[name], num[name], rtol=1e-4, atol=1e-6, err_msg=name)


def test_gradient_with_normalized_input():
    params, priors, x, eps_c, zeta, n = small_instance(V=8, K=2, W=3, H=4, seed=3)
    _, grads = gradient(x, params, priors, n, eps_c, zeta, normalize_input=True)
    num = numeric_gradient(params, priors, x, eps_c, zeta, n, normalize_input=True)
    for name in grads:
        np.testing.assert_allclose(grads[name], num[name], rtol=1e-4, atol=1e-6, err_msg=name)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(num_topics=0)
    with pytest.raises(ValueError):
        TrainConfig(kl_c_scaling="half")
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"num_topics": 3, "learning_rat": 0.1})
    cfg = TrainConfig.from_dict({"num_topics": 3})
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.digest() != TrainConfig(num_topics=4).digest()


def _tiny_corpus():
    return planted_corpus(n_docs=40, doc_len=20, words_per_cluster=5, n_stop=2, dim=4, seed=2).corpus


def _config(**kw):
    base = dict(num_topics=3, embed_dim=4, hidden=6, batch_size=16, epochs=2, learning_rate=0.01, seed=5)
    base.update(kw)
    return TrainConfig(**base)


def test_zero_learning_rate_is_noop():
    corpus = Corpus([BowDocument.from_mapping({0: 3, 2: 1})], Vocabulary(("a", "b", "c")))
    cfg = _config(epochs=1, learning_rate=0.0, batch_size=1)
    init = Trainer(corpus, cfg).params.named_arrays()
    ckpt = train(corpus, cfg)
    for name, arr in ckpt.params.named_arrays().items():
        np.testing.assert_array_equal(arr, init[name], err_msg=name)


def test_history_and_metrics(tmp_path):
    corpus = _tiny_corpus()
    ckpt = train(corpus, _config(epochs=3), heldout=corpus.subset(range(5)), metrics_path=tmp_path / "m.csv")
    assert [h["epoch"] for h in ckpt.history] == [1, 2, 3]
    assert ckpt.step == 3 * 3
    rows = list(csv.DictReader(open(tmp_path / "m.csv")))
    assert len(rows) == 3 and float(rows[0]["heldout_perplexity"]) > 1
    write_metrics(ckpt.history, tmp_path / "n.csv")


def test_checkpoint_round_trip(tmp_path):
    corpus = _tiny_corpus()
    ckpt = train(corpus, _config())
    ckpt.save(tmp_path / "a.npz")
    back = Checkpoint.load(tmp_path / "a.npz")
    back.save(tmp_path / "b.npz")
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()
    assert back.config == ckpt.config and back.vocab == ckpt.vocab
    for name, arr in ckpt.params.named_arrays().items():
        np.testing.assert_array_equal(back.params.named_arrays()[name], arr)


def test_checkpoint_rejects_foreign_file(tmp_path):
    np.savez(tmp_path / "x.npz", meta=np.frombuffer(b'{"format": "other"}', dtype=np.uint8))
    with pytest.raises(ValueError):
        Checkpoint.load(tmp_path / "x.npz")


def test_resume_mid_epoch_is_bitwise(tmp_path):
    corpus = _tiny_corpus()
    cfg = _config()
    straight = Trainer(corpus, cfg)
    for _ in range(5):
        straight.step()
    part = Trainer(corpus, cfg)
    for _ in range(2):
        part.step()
    part.checkpoint().save(tmp_path / "mid.npz")
    resumed = Trainer.resume(Checkpoint.load(tmp_path / "mid.npz"), corpus)
    for _ in range(3):
        resumed.step()
    straight.checkpoint().save(tmp_path / "s.npz")
    resumed.checkpoint().save(tmp_path / "r.npz")
    assert (tmp_path / "s.npz").read_bytes() == (tmp_path / "r.npz").read_bytes()


def test_divergence_reports_and_dumps(tmp_path):
    corpus = _tiny_corpus()
    trainer = Trainer(corpus, _config(), dump_dir=tmp_path)
    trainer.params.mu_c[0] = np.nan
    with pytest.raises(TrainingDiverged, match="diverged at step"):
        trainer.step()
    assert list(tmp_path.glob("diverged-step*.npz"))


def test_rejects_bad_embedding_shape():
    with pytest.raises(ValueError):
        Trainer(_tiny_corpus(), _config(), word_emb=np.zeros((3, 4)))
