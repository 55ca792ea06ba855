"""Training loop, inference, and checkpoint (de)serialization for the fused classifier."""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import checkpoint
from .cnn import CnnBlockSpec
from .han import SongAttention
from .lyrics import TokenGrid, Vocab, encode_lyrics, random_embeddings
from .metrics import accuracy, f1_scores, confusion_matrix, logloss
from .model import FMA_GENRES, GenreClassifier, ModelShape
from .optim import NesterovSGD
from .tensor import cross_entropy

log = logging.getLogger(__name__)

HISTORY_HEADER = ("epoch", "train_loss", "val_loss", "val_acc", "val_f1")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0
    dropout: float = 0.5
    hidden: int = 50
    max_sentences: int = 50
    max_words: int = 20
    labels: tuple = FMA_GENRES
    # (out_channels, kernel_len, stride, pool_window); dropout follows every pooled block
    blocks: tuple = ((256, 8, 1, 4), (256, 8, 1, 4), (384, 4, 1, 4), (500, 4, 1, 0))
    n_mels: int = 500
    frames: int = 1500
    feature_dim: int = 500
    embed_dim: int = 300
    attn_dim: int = 0             # 0 means 2 * hidden
    lr_decay: float = 0.5
    patience: int = 10
    class_weights: bool = False
    trainable_embeddings: bool = True
    min_count: int = 1
    dtype: str = "float32"

    def __post_init__(self):
        self.labels = tuple(self.labels)
        self.blocks = tuple(tuple(int(v) for v in b) for b in self.blocks)
        self.validate()

    def validate(self) -> None:
        positive = ("batch_size", "hidden", "max_sentences", "max_words", "n_mels", "frames",
                    "feature_dim", "embed_dim", "patience", "min_count")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr < 0 or not 0 <= self.momentum < 1 or self.epochs < 0:
            raise ConfigError("need lr >= 0, 0 <= momentum < 1, epochs >= 0")
        if not 0 <= self.dropout < 1 or not 0 < self.lr_decay <= 1:
            raise ConfigError("need 0 <= dropout < 1 and 0 < lr_decay <= 1")
        if len(self.labels) < 2 or len(set(self.labels)) != len(self.labels):
            raise ConfigError("labels must hold at least two distinct genres")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if not self.blocks or any(len(b) != 4 for b in self.blocks):
            raise ConfigError("blocks must be a non-empty list of [out, kernel, stride, pool]")
        try:
            T = self.frames
            for spec in self.block_specs():
                T = spec.out_len(T)
        except ValueError as exc:
            raise ConfigError(f"block stack does not fit a {self.frames}-frame input: {exc}") from None

    def block_specs(self) -> tuple[CnnBlockSpec, ...]:
        return tuple(CnnBlockSpec(o, k, s, p, self.dropout if p else 0.0)
                     for o, k, s, p in self.blocks)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["labels"] = list(self.labels)
        d["blocks"] = [list(b) for b in self.blocks]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)


@dataclass
class Example:
    track_id: str
    label: int
    grid: TokenGrid
    spectrogram: np.ndarray | None = None


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for every consumer of randomness in a run."""
    names = ("init", "shuffle", "dropout", "embedding")
    return {n: np.random.default_rng(s)
            for n, s in zip(names, np.random.SeedSequence(seed).spawn(len(names)))}


def build_model(cfg: TrainConfig, vocab: Vocab, embeddings: np.ndarray | None = None
                ) -> GenreClassifier:
    """Fresh model; all initial randomness comes from ``cfg.seed``."""
    streams = rng_streams(cfg.seed)
    init_rng = streams["init"]
    if embeddings is None:
        embeddings = random_embeddings(vocab, streams["embedding"], cfg.embed_dim)
    shape = ModelShape(
        n_classes=len(cfg.labels), vocab_size=len(vocab), n_mels=cfg.n_mels, frames=cfg.frames,
        blocks=cfg.block_specs(), feature_dim=cfg.feature_dim, embed_dim=cfg.embed_dim,
        hidden=cfg.hidden, attn_dim=cfg.attn_dim or None)
    return GenreClassifier(shape, init_rng, embeddings, np.dtype(cfg.dtype),
                           cfg.trainable_embeddings)


def _stack_specs(batch: Sequence[Example]):
    have = [e.spectrogram is not None for e in batch]
    if not any(have):
        return None
    if not all(have):
        raise ValueError("a batch mixes tracks with and without spectrograms")
    return np.stack([e.spectrogram for e in batch])


def batches(order: np.ndarray, size: int) -> list[np.ndarray]:
    """Consecutive chunks; a trailing singleton is merged into the previous chunk
    because batch normalization cannot train on one sample."""
    chunks = [order[i:i + size] for i in range(0, len(order), size)]
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        last = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], last])
    return chunks


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float | None = None
    val_acc: float | None = None
    val_f1: float | None = None

    def row(self) -> list[str]:
        fmt = lambda v: "" if v is None else repr(float(v))
        return [str(self.epoch), fmt(self.train_loss), fmt(self.val_loss), fmt(self.val_acc),
                fmt(self.val_f1)]


def write_history(history: Sequence[EpochRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for rec in history:
            w.writerow(rec.row())


class Trainer:
    """Owns the model, optimizer, RNG streams, and schedule state of one run."""

    def __init__(self, cfg: TrainConfig, vocab: Vocab, model: GenreClassifier | None = None,
                 embeddings: np.ndarray | None = None):
        self.cfg = cfg
        self.vocab = vocab
        self.model = model or build_model(cfg, vocab, embeddings)
        streams = rng_streams(cfg.seed)
        self.shuffle_rng = streams["shuffle"]
        self.dropout_rng = streams["dropout"]
        # free-form JSON metadata carried through checkpoints (e.g. spectrogram settings)
        self.extra: dict = {}
        self.optimizer = NesterovSGD(self.model.trainable(), cfg.lr, cfg.momentum)
        self.epoch = 0
        self.stale_epochs = 0
        self.best_val_loss: float | None = None
        self.best_key: tuple[float, float] | None = None
        self.best_state: tuple[dict, dict] | None = None
        self.history: list[EpochRecord] = []

    # -- steps ----------------------------------------------------------------
    def class_weights(self, train: Sequence[Example]) -> np.ndarray | None:
        if not self.cfg.class_weights:
            return None
        counts = np.bincount([e.label for e in train], minlength=len(self.cfg.labels))
        w = np.where(counts > 0, counts.sum() / np.maximum(counts, 1) / len(counts), 0.0)
        return w

    def step(self, batch: Sequence[Example], weights=None) -> float:
        logits, _ = self.model(_stack_specs(batch), [e.grid for e in batch], "train",
                               self.dropout_rng)
        loss = cross_entropy(logits, [e.label for e in batch], weights)
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        return float(loss.data)

    def predict_proba(self, examples: Sequence[Example]) -> tuple[np.ndarray, list[SongAttention]]:
        probs, attn = [], []
        for idx in batches(np.arange(len(examples)), self.cfg.batch_size):
            chunk = [examples[i] for i in idx]
            p, a = self.model.predict_proba(_stack_specs(chunk), [e.grid for e in chunk])
            probs.append(p)
            attn.extend(a)
        if not probs:
            return np.zeros((0, len(self.cfg.labels))), []
        return np.concatenate(probs).astype(np.float64), attn

    def run_epoch(self, train: Sequence[Example], val: Sequence[Example] = ()) -> EpochRecord:
        weights = self.class_weights(train)
        order = self.shuffle_rng.permutation(len(train))
        total, seen = 0.0, 0
        for idx in batches(order, self.cfg.batch_size):
            loss = self.step([train[i] for i in idx], weights)
            total += loss * len(idx)
            seen += len(idx)
        self.epoch += 1
        rec = EpochRecord(self.epoch, total / seen if seen else math.nan)
        if val:
            probs, _ = self.predict_proba(val)
            truth = np.array([e.label for e in val])
            rec.val_loss = logloss(probs, truth)
            rec.val_acc = accuracy(probs.argmax(axis=1), truth)
            rec.val_f1 = f1_scores(confusion_matrix(probs.argmax(axis=1), truth,
                                                    len(self.cfg.labels)))[1]
            self._schedule(rec)
        self.history.append(rec)
        return rec

    def _schedule(self, rec: EpochRecord) -> None:
        if self.best_val_loss is None or rec.val_loss < self.best_val_loss:
            self.best_val_loss = rec.val_loss
            self.stale_epochs = 0
        else:
            self.stale_epochs += 1
            if self.stale_epochs >= self.cfg.patience:
                self.optimizer.lr *= self.cfg.lr_decay
                self.stale_epochs = 0
                log.info("epoch %d: val loss plateaued, lr -> %g", self.epoch, self.optimizer.lr)
        key = (rec.val_f1, -rec.val_loss)
        if self.best_key is None or key > self.best_key:
            self.best_key = key
            self.best_state = self.state()

    def fit(self, train: Sequence[Example], val: Sequence[Example] = (), epochs: int | None = None,
            on_epoch: Callable[[EpochRecord], None] | None = None) -> list[EpochRecord]:
        if not train and (epochs if epochs is not None else self.cfg.epochs) > 0:
            raise ValueError("no training examples")
        target = self.cfg.epochs if epochs is None else self.epoch + epochs
        while self.epoch < target:
            rec = self.run_epoch(train, val)
            log.info("epoch %d train_loss %.4f val_loss %s", rec.epoch, rec.train_loss, rec.val_loss)
            if on_epoch:
                on_epoch(rec)
        return self.history

    # -- state ------------------------------------------------------------------
    def state(self) -> tuple[dict, dict]:
        meta = {
            "format": "genrefusion",
            "config": self.cfg.to_dict(),
            "vocab": list(self.vocab.tokens),
            "epoch": self.epoch,
            "lr": self.optimizer.lr,
            "stale_epochs": self.stale_epochs,
            "best_val_loss": self.best_val_loss,
            "best_key": list(self.best_key) if self.best_key else None,
            "rng": {"shuffle": self.shuffle_rng.bit_generator.state,
                    "dropout": self.dropout_rng.bit_generator.state},
            "history": [r.row() for r in self.history],
            "extra": self.extra,
        }
        blobs = {}
        for k, p in self.model.parameters().items():
            blobs[f"param/{k}"] = p.data.copy()
        for k, b in self.model.buffers().items():
            blobs[f"buffer/{k}"] = b.copy()
        for k, v in self.optimizer.velocity.items():
            blobs[f"velocity/{k}"] = v.copy()
        return meta, blobs

    def save(self, path) -> None:
        checkpoint.save(path, *self.state())

    def save_best(self, path) -> None:
        checkpoint.save(path, *(self.best_state or self.state()))

    @classmethod
    def from_state(cls, meta: dict, blobs: dict[str, np.ndarray]) -> "Trainer":
        if meta.get("format") != "genrefusion":
            raise checkpoint.CheckpointError("checkpoint was not written by this package")
        cfg = TrainConfig.from_dict(meta["config"])
        vocab = Vocab(tuple(meta["vocab"]))
        tr = cls(cfg, vocab)
        params, buffers = tr.model.parameters(), tr.model.buffers()
        for k, p in params.items():
            arr = blobs.get(f"param/{k}")
            if arr is None or arr.shape != p.shape:
                raise checkpoint.CheckpointError(f"checkpoint/config mismatch at parameter {k!r}")
            p.data[...] = arr
        for k, b in buffers.items():
            b[...] = blobs[f"buffer/{k}"]
        for k in tr.optimizer.velocity:
            tr.optimizer.velocity[k] = blobs[f"velocity/{k}"].astype(params[k].dtype)
        tr.epoch = meta["epoch"]
        tr.optimizer.lr = meta["lr"]
        tr.stale_epochs = meta["stale_epochs"]
        tr.best_val_loss = meta["best_val_loss"]
        tr.best_key = tuple(meta["best_key"]) if meta["best_key"] else None
        tr.shuffle_rng.bit_generator.state = meta["rng"]["shuffle"]
        tr.dropout_rng.bit_generator.state = meta["rng"]["dropout"]
        tr.history = [_parse_row(r) for r in meta.get("history", [])]
        tr.extra = meta.get("extra", {})
        return tr

    @classmethod
    def load(cls, path) -> "Trainer":
        return cls.from_state(*checkpoint.load(path))


def _parse_row(row) -> EpochRecord:
    val = lambda s: float(s) if s != "" else None
    return EpochRecord(int(row[0]), float(row[1]), val(row[2]), val(row[3]), val(row[4]))


@dataclass
class Prediction:
    probs: np.ndarray
    label: str
    ranking: list[tuple[str, float]]
    attention: SongAttention = field(default_factory=SongAttention)


def predict(trainer: Trainer, spectrogram: np.ndarray | None = None, lyrics: str | None = None
            ) -> Prediction:
    """Eval-mode class probabilities for one track; either modality may be missing."""
    if spectrogram is None and lyrics is None:
        raise ValueError("predict needs a spectrogram, lyrics, or both")
    cfg = trainer.cfg
    grid = encode_lyrics(lyrics or "", trainer.vocab, cfg.max_sentences, cfg.max_words)
    spec = None if spectrogram is None else np.asarray(spectrogram)[None]
    probs, attn = trainer.model.predict_proba(spec, [grid])
    p = probs[0].astype(np.float64)
    order = np.argsort(-p, kind="stable")
    ranking = [(cfg.labels[i], float(p[i])) for i in order]
    return Prediction(p, cfg.labels[int(order[0])], ranking, attn[0])
