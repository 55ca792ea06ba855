import math

import numpy as np
import pytest

from genrefusion.checkpoint import CheckpointError
from genrefusion.model import fuse_classify
from genrefusion.optim import NesterovSGD, sgd_nesterov_step
from genrefusion.synthetic import multimodal_fixture
from genrefusion.tensor import DimensionError, NumericError, Tensor, cross_entropy
from genrefusion.train import (ConfigError, TrainConfig, Trainer, batches, predict, rng_streams,
                               write_history)

import oracles

LABELS = tuple(f"genre{i}" for i in range(4))


def small_config(**kw):
    base = dict(lr=0.05, batch_size=8, epochs=3, labels=LABELS, blocks=((16, 4, 1, 2), (24, 4, 1, 0)),
                n_mels=16, frames=64, feature_dim=32, embed_dim=16, hidden=8, dtype="float64")
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def toy():
    examples, vocab, texts = multimodal_fixture()
    return examples, vocab, texts


def all_params(tr):
    return {k: p.data.copy() for k, p in tr.model.parameters().items()}


# -- fusion head ---------------------------------------------------------------

def test_zero_head_is_uniform(rng):
    probs = fuse_classify(Tensor(rng.normal(size=(3, 100))), Tensor(rng.normal(size=(3, 500))),
                          Tensor(np.zeros((16, 600))), Tensor(np.zeros(16))).data
    assert np.allclose(probs, 1 / 16, atol=1e-15)


def test_dominant_bias_wins(rng):
    b = np.zeros(16)
    b[7] = 1e3
    probs = fuse_classify(Tensor(rng.normal(size=100)), Tensor(rng.normal(size=500)),
                          Tensor(rng.normal(0, 0.01, (16, 600))), Tensor(b)).data
    assert probs[7] == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_fusion_formula_oracle(seed):
    rng = np.random.default_rng(seed)
    han, cnn = rng.normal(size=100), rng.normal(size=500)
    W, b = rng.normal(0, 0.05, (16, 600)), rng.normal(size=16)
    probs = fuse_classify(Tensor(han), Tensor(cnn), Tensor(W), Tensor(b)).data
    logits = oracles.matmul(W, np.concatenate([han, cnn])[:, None])[:, 0] + b
    assert np.max(np.abs(probs - oracles.softmax_mp(logits))) < 1e-10
    assert abs(probs.sum() - 1) < 1e-6


def test_fusion_dim_mismatch(rng):
    with pytest.raises(DimensionError):
        fuse_classify(Tensor(np.zeros(100)), Tensor(np.zeros(499)),
                      Tensor(np.zeros((16, 600))), Tensor(np.zeros(16)))


def test_cross_entropy_half_probability():
    loss = cross_entropy(Tensor(np.zeros((1, 2))), [1])
    assert float(loss.data) == pytest.approx(math.log(2), abs=1e-15)
    assert float(cross_entropy(Tensor([[0.0, 800.0]]), [1]).data) == 0.0


# -- optimizer -----------------------------------------------------------------

def test_nesterov_fixed_point(rng):
    theta = rng.normal(size=5)
    new, v = sgd_nesterov_step(theta, np.zeros(5), np.zeros(5), 0.1)
    assert np.array_equal(new, theta) and not v.any()


def test_nesterov_vanilla_limit(rng):
    theta, g = rng.normal(size=5), rng.normal(size=5)
    new, _ = sgd_nesterov_step(theta, g, rng.normal(size=5), 0.1, mu=0.0)
    assert np.array_equal(new, theta - 0.1 * g)


def test_nesterov_two_hand_iterated_steps():
    lr, mu = 0.1, 0.9
    th, v = 0.0, 0.0
    for _ in range(2):
        v = mu * v - lr * 1.0
        th = th + mu * v - lr * 1.0
    theta, vel = np.zeros(1), np.zeros(1)
    for _ in range(2):
        theta, vel = sgd_nesterov_step(theta, np.ones(1), vel, lr, mu)
    assert theta[0] == th and vel[0] == v
    assert th == pytest.approx(-0.461, abs=1e-15)


def test_optimizer_rejects_non_finite_update():
    p = Tensor(np.ones(3), True)
    opt = NesterovSGD({"p": p}, lr=0.1)
    p.grad = np.array([1.0, np.inf, 0.0])
    with pytest.raises(NumericError, match="p"):
        opt.step()
    assert np.array_equal(p.data, np.ones(3))


# -- training loop -------------------------------------------------------------

def test_batches_merge_trailing_singleton():
    sizes = [len(b) for b in batches(np.arange(33), 8)]
    assert sizes == [8, 8, 8, 9]
    assert [len(b) for b in batches(np.arange(34), 8)] == [8, 8, 8, 8, 2]
    assert [len(b) for b in batches(np.arange(1), 8)] == [1]
    for n in range(1, 40):
        order = np.random.default_rng(n).permutation(n)
        assert np.array_equal(np.concatenate(batches(order, 8)), order)


def test_rng_streams_are_independent_and_reproducible():
    a, b = rng_streams(3), rng_streams(3)
    draws = {k: g.random(4) for k, g in a.items()}
    assert all(np.array_equal(draws[k], b[k].random(4)) for k in a)
    assert len({tuple(v) for v in draws.values()}) == len(draws)


def test_zero_lr_freezes_parameters(toy):
    examples, vocab, _ = toy
    tr = Trainer(small_config(lr=0.0, dropout=0.0, batch_size=32), vocab)
    before = all_params(tr)
    losses = [tr.run_epoch(examples).train_loss for _ in range(3)]
    after = all_params(tr)
    assert all(np.array_equal(before[k], after[k]) for k in before)
    assert max(losses) - min(losses) < 1e-12


def test_loss_decreases_on_fixed_batch(toy):
    examples, vocab, _ = toy
    tr = Trainer(small_config(lr=1e-3, dropout=0.0), vocab)
    batch = examples[:8]
    losses = [tr.step(batch) for _ in range(6)]
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_parameters_finite_after_steps(toy):
    examples, vocab, _ = toy
    tr = Trainer(small_config(), vocab)
    tr.fit(examples, epochs=2)
    assert all(np.all(np.isfinite(p.data)) for p in tr.model.parameters().values())


def test_history_records(toy, tmp_path):
    examples, vocab, _ = toy
    tr = Trainer(small_config(), vocab)
    hist = tr.fit(examples[:24], examples[24:], epochs=2)
    assert [h.epoch for h in hist] == [1, 2]
    assert all(h.val_loss is not None and 0 <= h.val_acc <= 1 for h in hist)
    write_history(hist, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,val_acc,val_f1" and len(lines) == 3


def test_checkpoint_round_trip_and_resume(toy, tmp_path):
    examples, vocab, _ = toy
    a = Trainer(small_config(), vocab)
    a.fit(examples[:24], examples[24:], epochs=2)
    a.save(tmp_path / "mid.gfck")
    b = Trainer.load(tmp_path / "mid.gfck")
    pa, pb = all_params(a), all_params(b)
    assert pa.keys() == pb.keys() and all(np.array_equal(pa[k], pb[k]) for k in pa)

    a.fit(examples[:24], examples[24:], epochs=2)
    b.fit(examples[:24], examples[24:], epochs=2)
    pa, pb = all_params(a), all_params(b)
    assert all(np.array_equal(pa[k], pb[k]) for k in pa)
    assert [h.row() for h in a.history] == [h.row() for h in b.history]
    a.save(tmp_path / "a.gfck")
    b.save(tmp_path / "b.gfck")
    assert (tmp_path / "a.gfck").read_bytes() == (tmp_path / "b.gfck").read_bytes()


def test_same_seed_runs_are_identical(toy, tmp_path):
    examples, vocab, _ = toy
    for name in ("x", "y"):
        tr = Trainer(small_config(seed=11), vocab)
        tr.fit(examples, epochs=2)
        tr.save(tmp_path / f"{name}.gfck")
    assert (tmp_path / "x.gfck").read_bytes() == (tmp_path / "y.gfck").read_bytes()


def test_load_rejects_foreign_checkpoint(tmp_path):
    from genrefusion import checkpoint
    checkpoint.save(tmp_path / "c.gfck", {"format": "other"}, {})
    with pytest.raises(CheckpointError):
        Trainer.load(tmp_path / "c.gfck")


def test_predict_contract(toy):
    examples, vocab, texts = toy
    tr = Trainer(small_config(), vocab)
    tr.fit(examples, epochs=1)
    a = predict(tr, examples[0].spectrogram, texts[0])
    b = predict(tr, examples[0].spectrogram, texts[0])
    assert abs(a.probs.sum() - 1) < 1e-6
    assert np.array_equal(a.probs, b.probs)
    assert a.label == a.ranking[0][0] and len(a.ranking) == 4
    lyrics_only = predict(tr, lyrics=texts[0])
    assert abs(lyrics_only.probs.sum() - 1) < 1e-6
    assert lyrics_only.attention.sentences == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        predict(tr)


def test_class_weights_flag(toy):
    examples, vocab, _ = toy
    tr = Trainer(small_config(class_weights=True), vocab)
    w = tr.class_weights(examples[:10])
    counts = np.bincount([e.label for e in examples[:10]], minlength=4)
    assert np.allclose(w * counts, 10 / 4)
    assert Trainer(small_config(), vocab).class_weights(examples) is None


@pytest.mark.parametrize("kw", [dict(lr=-1.0), dict(labels=("a",)), dict(blocks=((4, 100, 1, 0),)),
                                dict(dtype="float16"), dict(momentum=1.0)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        small_config(**kw)


def test_config_dict_round_trip():
    cfg = small_config()
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError, match="bogus"):
        TrainConfig.from_dict({**cfg.to_dict(), "bogus": 1})
