"""Small deterministic datasets for tests, demos, and the acceptance suite."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio import save_spectrogram
from .data import TrackRecord, write_manifest
from .lyrics import build_vocab, encode_lyrics, segment_sentences
from .train import Example

_CLASS_WORDS = (
    ("guitar", "loud", "road", "fire", "night", "engine"),
    ("synth", "pulse", "neon", "signal", "circuit", "machine"),
    ("river", "home", "mountain", "banjo", "porch", "valley"),
    ("street", "flow", "rhyme", "crown", "block", "hustle"),
    ("ocean", "dance", "summer", "heart", "gold", "radio"),
    ("blue", "whiskey", "train", "rain", "trouble", "morning"),
)
_SHARED = ("the", "i", "you", "we", "love", "time", "and", "go", "my", "all")


def fixture_lyrics(label: int, rng: np.random.Generator, lines: int = 4, words: int = 5) -> str:
    vocab = _CLASS_WORDS[label % len(_CLASS_WORDS)]
    out = []
    for _ in range(lines):
        toks = [str(rng.choice(vocab)) if rng.random() < 0.5 else str(rng.choice(_SHARED))
                for _ in range(words)]
        out.append(" ".join(toks).capitalize())
    return "\n".join(out) + "\n"


def fixture_spectrogram(label: int, rng: np.random.Generator, n_mels: int = 16, frames: int = 64,
                        n_classes: int = 4, floor_db: float = -80.0) -> np.ndarray:
    """Noise floor plus short impulses in a class-specific band of mel rows."""
    spec = floor_db + 5.0 * rng.random((n_mels, frames))
    band = n_mels // n_classes
    rows = np.arange(label * band, (label + 1) * band)
    for t in rng.choice(frames, size=4, replace=False):
        spec[rows, t] = -10.0 + 5.0 * rng.random(len(rows))
    return spec.astype(np.float32)


def multimodal_fixture(n_tracks: int = 32, n_classes: int = 4, n_mels: int = 16, frames: int = 64,
                       seed: int = 0):
    """Balanced toy tracks: returns (examples, vocab, lyrics texts)."""
    rng = np.random.default_rng(seed)
    labels = [i % n_classes for i in range(n_tracks)]
    texts = [fixture_lyrics(c, rng) for c in labels]
    specs = [fixture_spectrogram(c, rng, n_mels, frames, n_classes) for c in labels]
    vocab = build_vocab(tok for t in texts for tok in segment_sentences(t))
    examples = [Example(f"t{i:03d}", c, encode_lyrics(t, vocab), s)
                for i, (c, t, s) in enumerate(zip(labels, texts, specs))]
    return examples, vocab, texts


def write_fixture(root, n_tracks: int = 32, n_classes: int = 4, n_mels: int = 16, frames: int = 64,
                  seed: int = 0, artists_per_class: int = 4, embed_dim: int = 300) -> Path:
    """Write manifest.csv, lyrics/, spec/ and embeddings.txt under ``root``; returns the manifest."""
    root = Path(root)
    (root / "lyrics").mkdir(parents=True, exist_ok=True)
    (root / "spec").mkdir(exist_ok=True)
    examples, vocab, texts = multimodal_fixture(n_tracks, n_classes, n_mels, frames, seed)
    genres = [f"genre{c}" for c in range(n_classes)]
    records = []
    for i, (ex, text) in enumerate(zip(examples, texts)):
        (root / "lyrics" / f"{ex.track_id}.txt").write_text(text, encoding="utf-8")
        save_spectrogram(ex.spectrogram, root / "spec" / f"{ex.track_id}.mspc")
        artist = f"a{ex.label}_{(i // n_classes) % artists_per_class}"
        records.append(TrackRecord(ex.track_id, artist, genres[ex.label],
                                   f"lyrics/{ex.track_id}.txt", f"spec/{ex.track_id}.mspc"))
    write_manifest(records, root / "manifest.csv")
    rng = np.random.default_rng(seed + 1)
    # vectors for half the vocabulary; the rest exercise random initialization
    known = vocab.tokens[::2]
    with open(root / "embeddings.txt", "w", encoding="utf-8") as fh:
        fh.write(f"{len(known)} {embed_dim}\n")
        for tok in known:
            vec = rng.uniform(-0.5, 0.5, embed_dim)
            fh.write(tok + " " + " ".join(f"{v:.6f}" for v in vec) + "\n")
    return root / "manifest.csv"


def split_manifest(n_classes: int = 16, n_artists: int = 200, seed: int = 0,
                   cross_genre: float = 0.1) -> list[TrackRecord]:
    """Imbalanced many-artist manifest; some artists also release in a second genre."""
    rng = np.random.default_rng(seed)
    records = []
    for a in range(n_artists):
        home = a % n_classes
        n = int(rng.integers(3, 16))
        for k in range(n):
            genre = home
            if rng.random() < cross_genre:
                genre = int(rng.integers(n_classes))
            records.append(TrackRecord(f"a{a:03d}_t{k:02d}", f"artist{a:03d}", f"g{genre:02d}"))
    return records
