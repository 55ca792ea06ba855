"""Lyrics branch: word-level and sentence-level bidirectional GRUs, each followed by attention."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lyrics import PAD, TokenGrid
from .tensor import (ContractError, DimensionError, Tensor, concat, sigmoid, softmax, stack, take,
                     tanh, where)

HIDDEN = 50


def _glorot(rng, shape, dtype):
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return Tensor(rng.uniform(-limit, limit, shape).astype(dtype), True)


def gru_params(rng, input_dim: int, hidden: int, dtype=np.float32) -> dict[str, Tensor]:
    """Gate blocks are stacked in (update, reset, candidate) order."""
    return {
        "W": _glorot(rng, (3 * hidden, input_dim), dtype),
        "U": _glorot(rng, (3 * hidden, hidden), dtype),
        "b": Tensor(np.zeros(3 * hidden, dtype), True),
    }


def attention_params(rng, dim: int, attn_dim: int, dtype=np.float32) -> dict[str, Tensor]:
    return {
        "W": _glorot(rng, (attn_dim, dim), dtype),
        "b": Tensor(np.zeros(attn_dim, dtype), True),
        "u": Tensor(rng.uniform(-0.1, 0.1, attn_dim).astype(dtype), True),
    }


def gru_cell(x: Tensor, h_prev: Tensor, W: Tensor, U: Tensor, b: Tensor) -> Tensor:
    """One GRU step for x of shape (..., D) and h_prev (..., H).

    z = sigmoid(W_z x + U_z h + b_z), r = sigmoid(W_r x + U_r h + b_r),
    n = tanh(W_n x + U_n (r * h) + b_n), h' = (1 - z) * h + z * n.
    """
    H = U.shape[1]
    if x.shape[-1] != W.shape[1] or h_prev.shape[-1] != H:
        raise DimensionError(f"gru_cell: x {x.shape}, h {h_prev.shape} vs W {W.shape}, U {U.shape}")
    gx = x @ W.T + b
    return _gru_step(gx[..., :2 * H], gx[..., 2 * H:], h_prev, U[:2 * H].T, U[2 * H:].T)


def _gru_step(gx_zr: Tensor, gx_n: Tensor, h: Tensor, U_zr_t: Tensor, U_n_t: Tensor) -> Tensor:
    H = h.shape[-1]
    zr = sigmoid(gx_zr + h @ U_zr_t)
    z, r = zr[..., :H], zr[..., H:]
    n = tanh(gx_n + (r * h) @ U_n_t)
    return h + z * (n - h)


def _run_direction(gx: Tensor, mask: np.ndarray, U: Tensor, reverse: bool) -> list[Tensor]:
    N, L, _ = gx.shape
    H = U.shape[1]
    gx_zr, gx_n = gx[:, :, :2 * H], gx[:, :, 2 * H:]
    U_zr_t, U_n_t = U[:2 * H].T, U[2 * H:].T
    h = Tensor(np.zeros((N, H), dtype=gx.dtype))
    outs: list[Tensor] = [None] * L
    for t in (range(L - 1, -1, -1) if reverse else range(L)):
        m = mask[:, t]
        if m.any():
            h_new = _gru_step(gx_zr[:, t], gx_n[:, t], h, U_zr_t, U_n_t)
            h = h_new if m.all() else where(m[:, None], h_new, h)
        outs[t] = h
    return outs


def bigru(seq: Tensor, mask, fwd: dict[str, Tensor], bwd: dict[str, Tensor]) -> Tensor:
    """Bidirectional GRU over (N, L, D) or (L, D); returns (..., L, 2H).

    Masked steps carry the hidden state through unchanged; their output slot
    holds the carried state and is expected to be masked downstream.
    """
    squeeze = seq.ndim == 2
    if squeeze:
        seq = seq.reshape(1, *seq.shape)
    N, L, _ = seq.shape
    mask = np.ones((N, L), bool) if mask is None else np.asarray(mask, bool).reshape(N, L)
    if L < 1 or not mask.any(axis=1).all():
        raise ContractError("bigru: every sequence needs at least one unmasked step")
    gx_f = seq @ fwd["W"].T + fwd["b"]
    gx_b = seq @ bwd["W"].T + bwd["b"]
    hf = _run_direction(gx_f, mask, fwd["U"], reverse=False)
    hb = _run_direction(gx_b, mask, bwd["U"], reverse=True)
    out = concat([stack(hf, axis=1), stack(hb, axis=1)], axis=-1)
    return out.reshape(out.shape[1:]) if squeeze else out


def attention(h: Tensor, p: dict[str, Tensor], mask=None) -> tuple[Tensor, Tensor]:
    """Additive attention pooling over positions of (N, n, d) or (n, d) input.

    u_i = tanh(W h_i + b); alpha = masked softmax of u_i . u; s = sum_i alpha_i h_i.
    Returns (s, alpha).
    """
    squeeze = h.ndim == 2
    if squeeze:
        h = h.reshape(1, *h.shape)
    N, n, d = h.shape
    A = p["u"].shape[0]
    u = tanh(h @ p["W"].T + p["b"])
    scores = (u @ p["u"].reshape(A, 1)).reshape(N, n)
    if mask is not None:
        mask = np.asarray(mask, bool).reshape(N, n)
    alpha = softmax(scores, mask)
    s = (alpha.reshape(N, n, 1) * h).sum(axis=1)
    if squeeze:
        return s.reshape(d), alpha.reshape(n)
    return s, alpha


@dataclass
class SongAttention:
    """Attention weights for one song: sentence indices refer to rows of its TokenGrid."""

    sentences: list[int] = field(default_factory=list)
    sentence_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    word_weights: list[np.ndarray] = field(default_factory=list)


class HanEncoder:
    def __init__(self, embed_dim: int = 300, hidden: int = HIDDEN, attn_dim: int | None = None,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.embed_dim, self.hidden = embed_dim, hidden
        attn_dim = attn_dim or 2 * hidden
        self.dtype = dtype
        self.word_fwd = gru_params(rng, embed_dim, hidden, dtype)
        self.word_bwd = gru_params(rng, embed_dim, hidden, dtype)
        self.word_attn = attention_params(rng, 2 * hidden, attn_dim, dtype)
        self.sent_fwd = gru_params(rng, 2 * hidden, hidden, dtype)
        self.sent_bwd = gru_params(rng, 2 * hidden, hidden, dtype)
        self.sent_attn = attention_params(rng, 2 * hidden, attn_dim, dtype)

    @property
    def out_dim(self) -> int:
        return 2 * self.hidden

    @property
    def params(self) -> dict[str, Tensor]:
        groups = {"word.fwd": self.word_fwd, "word.bwd": self.word_bwd, "word.attn": self.word_attn,
                  "sent.fwd": self.sent_fwd, "sent.bwd": self.sent_bwd, "sent.attn": self.sent_attn}
        return {f"han.{g}.{k}": t for g, d in groups.items() for k, t in d.items()}

    def forward(self, grids: list[TokenGrid], embedding: Tensor
                ) -> tuple[Tensor, list[SongAttention]]:
        """Song vectors (B, 2H) for a batch of token grids.

        Only sentences with at least one real word enter the word level; a song
        with none gets the zero vector.
        """
        B, H2 = len(grids), self.out_dim
        attn = [SongAttention() for _ in grids]
        rows, kept = [], []
        for b, g in enumerate(grids):
            idx = np.flatnonzero(g.sent_mask)
            kept.append(idx)
            attn[b].sentences = idx.tolist()
            rows.extend(g.ids[i] for i in idx)
        if not rows:
            return Tensor(np.zeros((B, H2), self.dtype)), attn

        ids = np.stack(rows)
        wmask = ids != PAD
        width = int(np.flatnonzero(wmask.any(axis=0)).max()) + 1
        ids, wmask = ids[:, :width], wmask[:, :width]
        x = take(embedding, ids, padding_idx=PAD)
        hw = bigru(x, wmask, self.word_fwd, self.word_bwd)
        sent_vecs, a_word = attention(hw, self.word_attn, wmask)

        songs = [b for b in range(B) if len(kept[b])]
        S = max(len(kept[b]) for b in songs)
        gather = np.full((len(songs), S), len(rows), dtype=np.intp)
        smask = np.zeros((len(songs), S), bool)
        starts = np.concatenate([[0], np.cumsum([len(k) for k in kept])])
        for j, b in enumerate(songs):
            k = len(kept[b])
            gather[j, :k] = np.arange(starts[b], starts[b] + k)
            smask[j, :k] = True
        padded = concat([sent_vecs, Tensor(np.zeros((1, H2), self.dtype))], axis=0)
        hs = bigru(take(padded, gather), smask, self.sent_fwd, self.sent_bwd)
        song_vecs, a_sent = attention(hs, self.sent_attn, smask)

        aw = a_word.data
        for j, b in enumerate(songs):
            k = len(kept[b])
            attn[b].sentence_weights = a_sent.data[j, :k].copy()
            attn[b].word_weights = [aw[starts[b] + i][wmask[starts[b] + i]] for i in range(k)]
        if len(songs) == B:
            return song_vecs, attn
        order = np.full(B, len(songs), dtype=np.intp)
        order[songs] = np.arange(len(songs))
        padded = concat([song_vecs, Tensor(np.zeros((1, H2), self.dtype))], axis=0)
        return take(padded, order), attn

    __call__ = forward
