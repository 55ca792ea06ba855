"""Manifest-level plumbing: spectrogram cache preparation and loading tracks as Examples."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import (CacheFormatError, SpectrogramConfig, load_spectrogram, save_spectrogram,
                    spectrogram_from_wav)
from .data import TrackRecord
from .lyrics import Vocab, encode_lyrics, segment_sentences
from .train import Example

log = logging.getLogger(__name__)

CACHE_SUFFIX = ".mspc"
HASH_SUFFIX = ".sha256"


class InputError(ValueError):
    """A manifest entry points at something missing or malformed."""


def is_wav(path: str) -> bool:
    return path.lower().endswith((".wav", ".wave"))


def cache_path(cache_dir, track_id: str) -> Path:
    return Path(cache_dir) / f"{track_id}{CACHE_SUFFIX}"


def content_hash(wav_bytes: bytes, cfg: SpectrogramConfig) -> str:
    """Digest of the audio bytes and every setting that shapes the cached grid."""
    h = hashlib.sha256()
    h.update(json.dumps(dataclasses.asdict(cfg), sort_keys=True).encode())
    h.update(wav_bytes)
    return h.hexdigest()


def check_paths(records: list[TrackRecord], cache_dir=None, need_audio: bool = True) -> None:
    """Raise InputError naming the first record whose files are missing.

    WAV-backed records need a prepared cache under ``cache_dir`` unless
    ``cache_dir`` is None (the prepare step checks the WAV itself).
    """
    for r in records:
        if r.lyrics_path and not Path(r.lyrics_path).is_file():
            raise InputError(f"track {r.track_id}: lyrics file {r.lyrics_path} not found")
        if not r.spectrogram_path:
            if need_audio:
                raise InputError(f"track {r.track_id}: no spectrogram or audio path")
            continue
        if not Path(r.spectrogram_path).is_file():
            raise InputError(f"track {r.track_id}: {r.spectrogram_path} not found")
        if cache_dir is not None and is_wav(r.spectrogram_path):
            if not cache_path(cache_dir, r.track_id).is_file():
                raise InputError(f"track {r.track_id}: no cache in {cache_dir}; run prepare first")


@dataclass
class PrepareStatus:
    track_id: str
    status: str             # written | skipped | failed
    detail: str = ""


def prepare_track(record: TrackRecord, cache_dir, cfg: SpectrogramConfig) -> PrepareStatus:
    src = record.spectrogram_path
    if not src:
        return PrepareStatus(record.track_id, "skipped", "no audio")
    if not is_wav(src):
        try:
            spec = load_spectrogram(src)
        except CacheFormatError as exc:
            return PrepareStatus(record.track_id, "failed", str(exc))
        if spec.shape != (cfg.n_mels, cfg.frames):
            return PrepareStatus(record.track_id, "failed",
                                 f"cache shape {spec.shape} != {(cfg.n_mels, cfg.frames)}")
        return PrepareStatus(record.track_id, "skipped", "existing cache")
    data = Path(src).read_bytes()
    digest = content_hash(data, cfg)
    target = cache_path(cache_dir, record.track_id)
    sidecar = target.with_name(target.name + HASH_SUFFIX)
    if target.is_file() and sidecar.is_file() and sidecar.read_text().strip() == digest:
        return PrepareStatus(record.track_id, "skipped", "fresh")
    try:
        spec = spectrogram_from_wav(data, cfg)
    except ValueError as exc:
        return PrepareStatus(record.track_id, "failed", str(exc))
    save_spectrogram(spec, target)
    sidecar.write_text(digest + "\n")
    return PrepareStatus(record.track_id, "written")


def read_lyrics(record: TrackRecord) -> str:
    if not record.lyrics_path:
        return ""
    return Path(record.lyrics_path).read_text(encoding="utf-8")


def load_track_spectrogram(record: TrackRecord, cache_dir, shape: tuple[int, int]) -> np.ndarray | None:
    if not record.spectrogram_path:
        return None
    src = record.spectrogram_path
    spec = load_spectrogram(cache_path(cache_dir, record.track_id) if is_wav(src) else src)
    if spec.shape != tuple(shape):
        raise CacheFormatError(f"track {record.track_id}: spectrogram shape {spec.shape} "
                               f"!= expected {tuple(shape)}")
    return spec


def lyric_corpus(texts):
    for text in texts:
        yield from segment_sentences(text)


def load_examples(records: list[TrackRecord], labels, vocab: Vocab, cache_dir,
                  shape: tuple[int, int], max_sentences: int, max_words: int,
                  skip_unreadable: bool = False, texts: dict[str, str] | None = None
                  ) -> list[Example]:
    """Turn manifest rows into Examples, reading lyrics and cached spectrograms.

    Unreadable tracks abort with InputError, or are logged and dropped when
    ``skip_unreadable`` is set.
    """
    index = {g: i for i, g in enumerate(labels)}
    out = []
    for r in records:
        try:
            text = texts[r.track_id] if texts is not None else read_lyrics(r)
            spec = load_track_spectrogram(r, cache_dir, shape)
        except (OSError, UnicodeDecodeError, CacheFormatError) as exc:
            if not skip_unreadable:
                raise InputError(f"track {r.track_id}: unreadable: {exc}") from None
            log.warning("skipping track %s: %s", r.track_id, exc)
            continue
        grid = encode_lyrics(text, vocab, max_sentences, max_words)
        out.append(Example(r.track_id, index[r.genre], grid, spec))
    return out
