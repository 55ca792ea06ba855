"""Lyrics text to padded token grids, vocabularies, and pretrained word vectors."""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

PAD = 0
UNK = 1
MAX_SENTENCES = 50
MAX_WORDS = 20
EMBED_DIM = 300
UNKNOWN_INIT_RANGE = 0.25

_EDGE = re.compile(r"^[\W_]+|[\W_]+$")


class EmbeddingFormatError(ValueError):
    pass


def tokenize(line: str) -> list[str]:
    """Lowercase, split on whitespace, strip non-alphanumerics from each token's ends."""
    out = []
    for raw in line.lower().split():
        tok = _EDGE.sub("", raw)
        if tok:
            out.append(tok)
    return out


def segment_sentences(lyrics: str) -> list[list[str]]:
    """One sentence per non-blank lyric line, tokenized."""
    sents = []
    for line in lyrics.splitlines():
        toks = tokenize(line)
        if toks:
            sents.append(toks)
    return sents


@dataclass(frozen=True)
class Vocab:
    """Token to id map; ids 0 and 1 are reserved for PAD and UNK."""

    tokens: tuple[str, ...]
    min_count: int = 1

    def __post_init__(self):
        object.__setattr__(self, "_ids", {t: i + 2 for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens) + 2

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def token(self, idx: int) -> str:
        if idx == PAD:
            return "<pad>"
        if idx == UNK:
            return "<unk>"
        return self.tokens[idx - 2]

    def serialize(self) -> str:
        return "".join(f"{t}\t{i + 2}\n" for i, t in enumerate(self.tokens))

    @classmethod
    def parse(cls, text: str) -> "Vocab":
        rows = [line.split("\t") for line in text.splitlines() if line]
        for k, (_, idx) in enumerate(rows):
            if int(idx) != k + 2:
                raise ValueError(f"vocab ids must be contiguous from 2; row {k + 1} has id {idx}")
        return cls(tuple(t for t, _ in rows))

    def save(self, path) -> None:
        Path(path).write_text(self.serialize(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls.parse(Path(path).read_text(encoding="utf-8"))


def build_vocab(corpus: Iterable[Iterable[str]], min_count: int = 1) -> Vocab:
    """Tokens seen at least ``min_count`` times, by descending frequency then lexicographically."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter()
    for stream in corpus:
        counts.update(stream)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocab(tuple(kept), min_count)


def load_embeddings(path, vocab: Vocab, rng: np.random.Generator, dim: int = EMBED_DIM,
                    dtype=np.float64) -> np.ndarray:
    """Build the |V| x dim embedding matrix from a word2vec-style text file.

    The file starts with a ``count dim`` line followed by ``token v1 ... v_dim`` rows.
    Vocabulary tokens missing from the file, and UNK, are drawn uniformly from
    [-0.25, 0.25]; the PAD row is zero.  ``path=None`` initializes every row randomly.
    """
    W = random_embeddings(vocab, rng, dim, dtype)
    if path is None:
        return W
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2 or not all(h.isdigit() for h in header):
            raise EmbeddingFormatError(f"{path}:1: expected '<count> <dim>' header")
        if int(header[1]) != dim:
            raise EmbeddingFormatError(f"{path}:1: file dimension {header[1]} != expected {dim}")
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if len(parts) == 1 and not parts[0]:
                continue
            if len(parts) != dim + 1:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: expected token plus {dim} values, got {len(parts) - 1}")
            idx = vocab.id(parts[0])
            if idx == UNK:
                continue
            try:
                W[idx] = np.array(parts[1:], dtype=np.float64)
            except ValueError:
                raise EmbeddingFormatError(f"{path}:{lineno}: non-numeric value") from None
    return W


def random_embeddings(vocab: Vocab, rng: np.random.Generator, dim: int = EMBED_DIM,
                      dtype=np.float64) -> np.ndarray:
    # draw every row (even ones later overwritten) so missing-token rows depend only on the seed
    W = rng.uniform(-UNKNOWN_INIT_RANGE, UNKNOWN_INIT_RANGE, size=(len(vocab), dim))
    W[PAD] = 0.0
    return W.astype(dtype)


@dataclass(frozen=True)
class TokenGrid:
    ids: np.ndarray          # (sentences, words) int
    word_mask: np.ndarray    # same shape, bool
    sent_mask: np.ndarray    # (sentences,) bool

    @classmethod
    def from_ids(cls, ids) -> "TokenGrid":
        ids = np.asarray(ids, dtype=np.int64)
        word_mask = ids != PAD
        return cls(ids, word_mask, word_mask.any(axis=1))

    @property
    def n_sentences(self) -> int:
        return int(self.sent_mask.sum())


def encode_and_pad(sents: list[list[str]], vocab: Vocab, max_sentences: int = MAX_SENTENCES,
                   max_words: int = MAX_WORDS) -> TokenGrid:
    """Keep the first ``max_sentences`` lines and first ``max_words`` words of each."""
    ids = np.full((max_sentences, max_words), PAD, dtype=np.int64)
    for i, sent in enumerate(sents[:max_sentences]):
        row = [vocab.id(t) for t in sent[:max_words]]
        ids[i, :len(row)] = row
    return TokenGrid.from_ids(ids)


def encode_lyrics(text: str, vocab: Vocab, max_sentences: int = MAX_SENTENCES,
                  max_words: int = MAX_WORDS) -> TokenGrid:
    return encode_and_pad(segment_sentences(text), vocab, max_sentences, max_words)
