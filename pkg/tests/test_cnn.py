import numpy as np
import pytest

from genrefusion.cnn import DEFAULT_BLOCKS, CnnBlockSpec, CnnEncoder, cnn_block
from genrefusion.tensor import (BN_EPS, DimensionError, RunningStats, Tensor, batchnorm,
                                conv_time, grad_check)

import oracles


def block_params(rng, C, spec, dtype=np.float64):
    k = Tensor(rng.normal(size=(spec.out_channels, C, spec.kernel_len)).astype(dtype), True)
    g = Tensor(rng.uniform(0.5, 1.5, spec.out_channels).astype(dtype), True)
    b = Tensor(rng.normal(size=spec.out_channels).astype(dtype), True)
    return k, g, b


def test_block_spec_validation():
    with pytest.raises(ValueError):
        CnnBlockSpec(4, 0)
    with pytest.raises(ValueError):
        CnnBlockSpec(4, 2, stride=0)
    with pytest.raises(ValueError):
        CnnBlockSpec(4, 2, dropout_p=1.0)
    assert CnnBlockSpec(4, 3, 2, 2).out_len(11) == 2
    with pytest.raises(DimensionError):
        CnnBlockSpec(4, 12).out_len(11)


def test_identity_block_is_relu(rng):
    C, T = 5, 9
    spec = CnnBlockSpec(C, 1)
    x = rng.normal(size=(2, C, T))
    kernel = Tensor(np.eye(C)[:, :, None])
    out = cnn_block(Tensor(x), spec, kernel, Tensor(np.ones(C)), Tensor(np.zeros(C)),
                    RunningStats.fresh(C), mode="eval")
    assert np.allclose(out.data, np.maximum(x, 0) / np.sqrt(1 + BN_EPS), atol=1e-12)
    assert np.allclose(out.data, np.maximum(x, 0), atol=1e-5)


def test_negative_preactivations_give_zero(rng):
    C, T = 3, 12
    spec = CnnBlockSpec(4, 3, 1, 2)
    k, g, _ = block_params(rng, C, spec)
    out = cnn_block(Tensor(rng.normal(size=(2, C, T))), spec, k, g, Tensor(np.full(4, -50.0)),
                    RunningStats.fresh(4), mode="train")
    assert out.shape == (2, 4, 5)
    assert not out.data.any()


@pytest.mark.parametrize("seed", range(5))
def test_block_matches_staged_oracle(seed):
    rng = np.random.default_rng(seed)
    B, C, T = 3, 4, 20
    spec = CnnBlockSpec(5, 3, 2, 2, 0.0)
    k, g, b = block_params(rng, C, spec)
    x = rng.normal(size=(B, C, T))
    out = cnn_block(Tensor(x), spec, k, g, b, RunningStats.fresh(5), mode="train")

    conv = np.stack([oracles.conv_time(x[i], k.data, spec.stride) for i in range(B)])
    mu = conv.mean(axis=(0, 2), keepdims=True)
    var = conv.var(axis=(0, 2), keepdims=True)
    bn = (conv - mu) / np.sqrt(var + BN_EPS) * g.data[:, None] + b.data[:, None]
    act = np.maximum(bn, 0)
    ref = np.stack([oracles.maxpool_time(act[i], 2, 2) for i in range(B)])
    assert out.shape == ref.shape
    assert np.max(np.abs(out.data - ref)) < 1e-10


def test_block_dropout_only_in_train(rng):
    spec = CnnBlockSpec(6, 2, 1, 0, 0.5)
    k, g, b = block_params(rng, 3, spec)
    x = Tensor(rng.normal(size=(2, 3, 10)))
    stats = RunningStats.fresh(6)
    ev1 = cnn_block(x, spec, k, g, b, stats, "eval").data
    ev2 = cnn_block(x, spec, k, g, b, stats, "eval", np.random.default_rng(9)).data
    assert np.array_equal(ev1, ev2)
    tr = cnn_block(x, spec, k, g, b, RunningStats.fresh(6), "train", np.random.default_rng(9)).data
    kept = tr != 0
    assert 0 < kept.mean() < 1


@pytest.mark.parametrize("B", [1, 2, 8])
def test_default_stack_output_shape(B):
    enc = CnnEncoder(rng=np.random.default_rng(0))
    x = np.random.default_rng(B).normal(size=(B, 500, 1500)).astype(np.float32)
    y = enc(Tensor(x), mode="eval")
    assert y.shape == (B, 500)
    assert np.all(np.isfinite(y.data))


def test_default_stack_config():
    assert [b.out_channels for b in DEFAULT_BLOCKS] == [256, 256, 384, 500]
    assert [b.kernel_len for b in DEFAULT_BLOCKS] == [8, 8, 4, 4]
    assert [b.pool_window for b in DEFAULT_BLOCKS] == [4, 4, 4, 0]
    assert [b.dropout_p for b in DEFAULT_BLOCKS] == [0.5, 0.5, 0.5, 0.0]


def test_wrong_grid_rejected():
    enc = CnnEncoder(n_mels=8, frames=60, blocks=[CnnBlockSpec(4, 3, 1, 2)], feature_dim=6)
    with pytest.raises(DimensionError, match="8 x 60"):
        enc(Tensor(np.zeros((1, 8, 59))))
    with pytest.raises(DimensionError, match="500 x 1500"):
        CnnEncoder()(Tensor(np.zeros((1, 500, 1000), np.float32)))


def test_zero_input_gives_zero_features():
    enc = CnnEncoder(n_mels=8, frames=60, blocks=[CnnBlockSpec(6, 3, 1, 2, 0.5),
                                                  CnnBlockSpec(5, 3)],
                     feature_dim=7, rng=np.random.default_rng(1), dtype=np.float64)
    y = enc(Tensor(np.zeros((2, 8, 60))), mode="eval")
    assert y.shape == (2, 7) and not y.data.any()


def small_encoder(seed=0):
    return CnnEncoder(n_mels=8, frames=60, blocks=[CnnBlockSpec(6, 5, 1, 2),
                                                   CnnBlockSpec(5, 3, 2, 2)],
                      feature_dim=10, rng=np.random.default_rng(seed), dtype=np.float64)


def test_full_stack_gradient_check():
    enc = small_encoder()
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(size=(2, 8, 60)), True)
    w = rng.normal(size=(2, 10))
    for p in enc.params.values():
        p.data += rng.normal(0, 0.1, p.shape)
    f = lambda: (enc(x, mode="train") * w).sum()
    worst, info = grad_check(f, [x, *enc.params.values()], n_coords=600, rng=rng,
                             skip_kinks=True)
    assert worst < 1e-4, info


def test_impulse_shift_leaves_pooled_feature_unchanged():
    C, T = 3, 16
    enc = CnnEncoder(n_mels=C, frames=T, blocks=[CnnBlockSpec(4, 1, 1, 4)], feature_dim=5,
                     rng=np.random.default_rng(2), dtype=np.float64)
    base = np.zeros((1, C, T))
    base[0, 1, 5] = 3.0
    ref = enc(Tensor(base), mode="eval").data
    for shift in (1, 2, 3):
        x = np.roll(base, shift, axis=-1)
        assert np.array_equal(enc(Tensor(x), mode="eval").data, ref)


def test_eval_is_deterministic_and_stats_frozen(rng):
    enc = small_encoder()
    x = Tensor(rng.normal(size=(3, 8, 60)))
    before = {k: v.copy() for k, v in enc.buffers().items()}
    a = enc(x, mode="eval").data
    b = enc(x, mode="eval").data
    assert np.array_equal(a, b)
    for k, v in enc.buffers().items():
        assert np.array_equal(v, before[k])


def test_train_mode_channel_statistics(rng):
    x = Tensor(rng.normal(2.0, 3.0, size=(4, 6, 30)))
    y = conv_time(x, Tensor(rng.normal(size=(5, 6, 3))))
    out = batchnorm(y, Tensor(np.ones(5)), Tensor(np.zeros(5)), RunningStats.fresh(5), "train")
    assert np.allclose(out.data.mean(axis=(0, 2)), 0, atol=1e-6)
    assert np.allclose(out.data.var(axis=(0, 2)), 1, atol=1e-6 + BN_EPS * 10)


def test_train_forward_updates_running_stats(rng):
    enc = small_encoder()
    enc(Tensor(rng.normal(size=(3, 8, 60))), mode="train", rng=np.random.default_rng(0))
    assert not np.array_equal(enc.stats[0].mean, np.zeros(6))
