"""Spectrogram branch: stacked 1-D (time-axis) convolution blocks to a fixed feature vector."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (DimensionError, RunningStats, Tensor, amax, batchnorm, conv_time,
                     dropout, maxpool_time, relu)

FEATURE_DIM = 500


@dataclass(frozen=True)
class CnnBlockSpec:
    out_channels: int
    kernel_len: int
    stride: int = 1
    pool_window: int = 0          # 0 disables pooling; pool stride equals the window
    dropout_p: float = 0.0

    def __post_init__(self):
        if self.kernel_len < 1 or self.stride < 1 or self.out_channels < 1:
            raise ValueError(f"invalid block spec {self}")
        if self.pool_window < 0 or not 0 <= self.dropout_p < 1:
            raise ValueError(f"invalid block spec {self}")

    def out_len(self, T: int) -> int:
        if self.kernel_len > T:
            raise DimensionError(f"kernel length {self.kernel_len} exceeds time length {T}")
        T = (T - self.kernel_len) // self.stride + 1
        if self.pool_window:
            if self.pool_window > T:
                raise DimensionError(f"pool window {self.pool_window} exceeds time length {T}")
            T = (T - self.pool_window) // self.pool_window + 1
        return T


DEFAULT_BLOCKS = (
    CnnBlockSpec(256, 8, 1, 4, 0.5),
    CnnBlockSpec(256, 8, 1, 4, 0.5),
    CnnBlockSpec(384, 4, 1, 4, 0.5),
    CnnBlockSpec(500, 4, 1, 0, 0.0),
)


def cnn_block(x: Tensor, spec: CnnBlockSpec, kernel: Tensor, gamma: Tensor, beta: Tensor,
              stats: RunningStats, mode: str = "train",
              rng: np.random.Generator | None = None) -> Tensor:
    """conv -> batchnorm -> relu -> optional max-pool -> dropout on (B, C, T) input.

    The convolution has no bias: batch normalization subtracts any per-channel
    offset, so such a bias would receive an identically zero gradient.
    """
    y = conv_time(x, kernel, spec.stride)
    y = relu(batchnorm(y, gamma, beta, stats, mode))
    if spec.pool_window:
        y = maxpool_time(y, spec.pool_window, spec.pool_window)
    return dropout(y, spec.dropout_p, rng, mode)


class CnnEncoder:
    """Mel bins are the input channels; kernels slide along time only.

    After the block stack the remaining time axis is max-pooled away and a
    linear layer projects to ``feature_dim``.
    """

    def __init__(self, n_mels: int = 500, frames: int = 1500, blocks=DEFAULT_BLOCKS,
                 feature_dim: int = FEATURE_DIM, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.n_mels, self.frames = n_mels, frames
        self.blocks = tuple(blocks)
        self.feature_dim = feature_dim
        self.params: dict[str, Tensor] = {}
        self.stats: list[RunningStats] = []
        T, C = frames, n_mels
        for i, spec in enumerate(self.blocks):
            T = spec.out_len(T)
            limit = np.sqrt(6.0 / (C * spec.kernel_len))
            O = spec.out_channels
            self.params[f"cnn.{i}.kernel"] = Tensor(
                rng.uniform(-limit, limit, (O, C, spec.kernel_len)).astype(dtype), True)
            self.params[f"cnn.{i}.gamma"] = Tensor(np.ones(O, dtype), True)
            self.params[f"cnn.{i}.beta"] = Tensor(np.zeros(O, dtype), True)
            self.stats.append(RunningStats.fresh(O, dtype))
            C = O
        limit = np.sqrt(6.0 / (C + feature_dim))
        self.params["cnn.proj.weight"] = Tensor(
            rng.uniform(-limit, limit, (feature_dim, C)).astype(dtype), True)
        self.params["cnn.proj.bias"] = Tensor(np.zeros(feature_dim, dtype), True)

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for i, st in enumerate(self.stats):
            out[f"cnn.{i}.running_mean"] = st.mean
            out[f"cnn.{i}.running_var"] = st.var
        return out

    def forward(self, x: Tensor, mode: str = "train", rng: np.random.Generator | None = None
                ) -> Tensor:
        if x.ndim != 3 or x.shape[1:] != (self.n_mels, self.frames):
            raise DimensionError(
                f"cnn input must be B x {self.n_mels} x {self.frames}, got {x.shape}")
        p = self.params
        for i, spec in enumerate(self.blocks):
            x = cnn_block(x, spec, p[f"cnn.{i}.kernel"], p[f"cnn.{i}.gamma"], p[f"cnn.{i}.beta"],
                          self.stats[i], mode, rng)
        pooled = amax(x, axis=-1)
        return pooled @ p["cnn.proj.weight"].T + p["cnn.proj.bias"]

    __call__ = forward
