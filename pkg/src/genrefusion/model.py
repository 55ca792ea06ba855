"""Late-fusion genre classifier: HAN song vector and CNN feature vector into a softmax head."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cnn import DEFAULT_BLOCKS, FEATURE_DIM, CnnEncoder
from .han import HIDDEN, HanEncoder, SongAttention
from .lyrics import EMBED_DIM, PAD, TokenGrid
from .tensor import DimensionError, Tensor, concat, softmax

FMA_GENRES = (
    "Rock", "Electronic", "Experimental", "Hip-Hop", "Folk", "Instrumental", "Pop",
    "International", "Classical", "Old-Time/Historic", "Jazz", "Country", "Soul-RnB",
    "Spoken", "Blues", "Easy Listening",
)


def fusion_logits(han_vec: Tensor, cnn_vec: Tensor, W: Tensor, b: Tensor) -> Tensor:
    fused = concat([han_vec, cnn_vec], axis=-1)
    if fused.shape[-1] != W.shape[1]:
        raise DimensionError(f"fusion expects {W.shape[1]} features, got {fused.shape[-1]}")
    return fused @ W.T + b


def fuse_classify(han_vec: Tensor, cnn_vec: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """Class probabilities softmax(W [han; cnn] + b)."""
    return softmax(fusion_logits(han_vec, cnn_vec, W, b))


@dataclass
class ModelShape:
    n_classes: int = len(FMA_GENRES)
    vocab_size: int = 2
    n_mels: int = 500
    frames: int = 1500
    blocks: tuple = DEFAULT_BLOCKS
    feature_dim: int = FEATURE_DIM
    embed_dim: int = EMBED_DIM
    hidden: int = HIDDEN
    attn_dim: int | None = None


class GenreClassifier:
    """All learnable state: embeddings, CNN, HAN, and the fusion layer."""

    def __init__(self, shape: ModelShape, rng: np.random.Generator | None = None,
                 embeddings: np.ndarray | None = None, dtype=np.float32,
                 trainable_embeddings: bool = True):
        rng = rng or np.random.default_rng(0)
        self.shape = shape
        self.dtype = np.dtype(dtype)
        if embeddings is None:
            embeddings = rng.uniform(-0.25, 0.25, (shape.vocab_size, shape.embed_dim))
            embeddings[PAD] = 0
        if embeddings.shape != (shape.vocab_size, shape.embed_dim):
            raise DimensionError(
                f"embedding matrix {embeddings.shape} != ({shape.vocab_size}, {shape.embed_dim})")
        self.embedding = Tensor(np.array(embeddings, dtype=dtype), trainable_embeddings)
        self.trainable_embeddings = trainable_embeddings
        self.cnn = CnnEncoder(shape.n_mels, shape.frames, shape.blocks, shape.feature_dim, rng, dtype)
        self.han = HanEncoder(shape.embed_dim, shape.hidden, shape.attn_dim, rng, dtype)
        F = shape.feature_dim + self.han.out_dim
        limit = np.sqrt(6.0 / (F + shape.n_classes))
        self.fusion_W = Tensor(rng.uniform(-limit, limit, (shape.n_classes, F)).astype(dtype), True)
        self.fusion_b = Tensor(np.zeros(shape.n_classes, dtype), True)

    def parameters(self) -> dict[str, Tensor]:
        """Every learnable tensor by stable name (frozen embeddings included)."""
        out = {"embedding": self.embedding}
        out.update(self.cnn.params)
        out.update(self.han.params)
        out["fusion.W"] = self.fusion_W
        out["fusion.b"] = self.fusion_b
        return out

    def trainable(self) -> dict[str, Tensor]:
        params = self.parameters()
        if not self.trainable_embeddings:
            params.pop("embedding")
        return params

    def buffers(self) -> dict[str, np.ndarray]:
        return self.cnn.buffers()

    def forward(self, spectrograms: np.ndarray | None, grids: list[TokenGrid], mode: str = "train",
                rng: np.random.Generator | None = None) -> tuple[Tensor, list[SongAttention]]:
        """Logits (B, G) for a batch; ``spectrograms=None`` feeds a zero audio feature."""
        B = len(grids)
        if spectrograms is None:
            cnn_vec = Tensor(np.zeros((B, self.shape.feature_dim), self.dtype))
        else:
            spectrograms = np.asarray(spectrograms, dtype=self.dtype)
            if spectrograms.shape[0] != B:
                raise DimensionError(f"{spectrograms.shape[0]} spectrograms for {B} lyric grids")
            cnn_vec = self.cnn(Tensor(spectrograms), mode, rng)
        han_vec, attn = self.han(grids, self.embedding)
        return fusion_logits(han_vec, cnn_vec, self.fusion_W, self.fusion_b), attn

    __call__ = forward

    def predict_proba(self, spectrograms, grids) -> tuple[np.ndarray, list[SongAttention]]:
        logits, attn = self.forward(spectrograms, grids, mode="eval")
        return softmax(logits).data, attn
