"""Track manifests and the stratified, artist-filtered train/val/test split."""
from __future__ import annotations

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

MANIFEST_HEADER = ("track_id", "artist_id", "genre", "lyrics_path", "spectrogram_path")
SPLITS = ("train", "val", "test")
DEFAULT_FRACTIONS = (0.8, 0.1, 0.1)


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class TrackRecord:
    track_id: str
    artist_id: str
    genre: str
    lyrics_path: str = ""
    spectrogram_path: str = ""


def read_manifest(path, labels=None) -> list[TrackRecord]:
    """Parse a manifest CSV; relative paths resolve against the manifest's directory.

    With ``labels`` given, a genre outside that list is rejected with its row number.
    """
    path = Path(path)
    base = path.parent
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise ManifestError(f"{path}: header must be {','.join(MANIFEST_HEADER)}")
        records, seen = [], set()
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise ManifestError(f"{path}:{lineno}: expected {len(MANIFEST_HEADER)} fields")
            tid, artist, genre, lyr, spec = (c.strip() for c in row)
            if not tid or not artist:
                raise ManifestError(f"{path}:{lineno}: empty track_id or artist_id")
            if tid in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate track_id {tid!r}")
            if labels is not None and genre not in labels:
                raise ManifestError(f"{path}:{lineno}: genre {genre!r} not in the label list")
            if not spec and not lyr:
                raise ManifestError(f"{path}:{lineno}: track {tid!r} has neither lyrics nor audio")
            seen.add(tid)
            records.append(TrackRecord(tid, artist, genre,
                                       str(base / lyr) if lyr else "",
                                       str(base / spec) if spec else ""))
    return records


def write_manifest(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in records:
            w.writerow([r.track_id, r.artist_id, r.genre, r.lyrics_path, r.spectrogram_path])


@dataclass
class SplitResult:
    assignment: dict[str, str]
    # class -> split -> track count
    counts: dict[str, dict[str, int]] = field(default_factory=dict)
    flagged: list[str] = field(default_factory=list)

    def tracks(self, split: str) -> list[str]:
        return [t for t, s in self.assignment.items() if s == split]

    def fractions(self) -> dict[str, dict[str, float]]:
        out = {}
        for genre, c in self.counts.items():
            n = sum(c.values())
            out[genre] = {s: c.get(s, 0) / n for s in SPLITS}
        return out


def stratified_artist_split(records: list[TrackRecord], fractions=DEFAULT_FRACTIONS, seed: int = 0
                            ) -> SplitResult:
    """Assign whole artists to splits, greedily chasing per-class track targets.

    Artists are visited largest first (seeded shuffle breaks size ties).  Each
    goes to the split with the greatest remaining need, measured over the
    artist's own class counts.  Classes whose tracks all belong to one artist
    cannot be split; that artist is placed in train and the class is flagged.
    """
    fractions = np.asarray(fractions, dtype=float)
    if fractions.shape != (3,) or np.any(fractions < 0) or not np.isclose(fractions.sum(), 1):
        raise ValueError(f"fractions must be three nonnegative values summing to 1, got {fractions}")
    genres = sorted({r.genre for r in records})
    gidx = {g: i for i, g in enumerate(genres)}
    by_artist: dict[str, list[TrackRecord]] = defaultdict(list)
    for r in records:
        by_artist[r.artist_id].append(r)
    artists = sorted(by_artist)
    comp = {a: np.bincount([gidx[r.genre] for r in by_artist[a]], minlength=len(genres))
            for a in artists}
    total = sum(comp.values()) if artists else np.zeros(len(genres))
    target = fractions[:, None] * total[None, :]
    current = np.zeros_like(target)

    artists_per_class = defaultdict(set)
    for r in records:
        artists_per_class[r.genre].add(r.artist_id)
    flagged = sorted(g for g, a in artists_per_class.items() if len(a) == 1)
    pinned = {next(iter(artists_per_class[g])) for g in flagged}
    for g in flagged:
        log.warning("class %r has a single artist; all its tracks go to train", g)

    rng = np.random.default_rng(seed)
    order = [artists[i] for i in rng.permutation(len(artists))]
    order.sort(key=lambda a: (a not in pinned, -len(by_artist[a])))

    assignment = {}
    for a in order:
        c = comp[a]
        if a in pinned:
            s = 0
        else:
            need = ((target - current) * c[None, :]).sum(axis=1)
            s = int(np.argmax(need))
        current[s] += c
        for r in by_artist[a]:
            assignment[r.track_id] = SPLITS[s]
    assignment = {r.track_id: assignment[r.track_id] for r in records}
    counts = {g: {s: int(current[k, gidx[g]]) for k, s in enumerate(SPLITS)} for g in genres}
    return SplitResult(assignment, counts, flagged)


def write_split(split: SplitResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("track_id", "split"))
        for t, s in split.assignment.items():
            w.writerow((t, s))


def read_split(path) -> dict[str, str]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        out = {}
        for row in reader:
            if row["split"] not in SPLITS:
                raise ManifestError(f"{path}: unknown split {row['split']!r}")
            out[row["track_id"]] = row["split"]
    return out
