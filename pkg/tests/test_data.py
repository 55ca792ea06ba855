from collections import defaultdict

import pytest

from genrefusion.data import (ManifestError, TrackRecord, read_manifest, read_split,
                              stratified_artist_split, write_manifest, write_split)
from genrefusion.synthetic import split_manifest

HEADER = "track_id,artist_id,genre,lyrics_path,spectrogram_path\n"


def test_manifest_round_trip(tmp_path):
    recs = [TrackRecord("t1", "a", "Rock", "l/t1.txt", "s/t1.mspc"),
            TrackRecord("t2", "b", "Pop", "", "s/t2.mspc")]
    write_manifest(recs, tmp_path / "m.csv")
    back = read_manifest(tmp_path / "m.csv", labels=["Rock", "Pop"])
    assert [r.track_id for r in back] == ["t1", "t2"]
    assert back[0].lyrics_path == str(tmp_path / "l/t1.txt")
    assert back[1].lyrics_path == ""


@pytest.mark.parametrize("body,match", [
    ("t1,a,Rock,l.txt\n", ":2: expected 5 fields"),
    ("t1,,Rock,l.txt,\n", ":2: empty track_id"),
    ("t1,a,Rock,l.txt,\nt1,b,Rock,l.txt,\n", ":3: duplicate track_id"),
    ("t1,a,Rock,l.txt,\nt2,a,Disco,l.txt,\n", ":3: genre 'Disco'"),
    ("t1,a,Rock,,\n", ":2: track 't1' has neither"),
])
def test_manifest_errors_name_the_row(tmp_path, body, match):
    (tmp_path / "m.csv").write_text(HEADER + body)
    with pytest.raises(ManifestError, match=match):
        read_manifest(tmp_path / "m.csv", labels=["Rock"])


def test_manifest_bad_header(tmp_path):
    (tmp_path / "m.csv").write_text("id,artist\n")
    with pytest.raises(ManifestError, match="header"):
        read_manifest(tmp_path / "m.csv")


def test_uniform_artists_split_exactly():
    recs = [TrackRecord(f"a{a}t{t}", f"a{a}", "g") for a in range(10) for t in range(10)]
    res = stratified_artist_split(recs, seed=3)
    artists = defaultdict(set)
    for r in recs:
        artists[res.assignment[r.track_id]].add(r.artist_id)
    assert [len(artists[s]) for s in ("train", "val", "test")] == [8, 1, 1]


def test_cross_genre_artist_is_atomic():
    recs = [TrackRecord(f"x{a}{t}", f"x{a}", "g1") for a in range(9) for t in range(3)]
    recs += [TrackRecord(f"y{a}{t}", f"y{a}", "g2") for a in range(9) for t in range(3)]
    recs += [TrackRecord("both1", "z", "g1"), TrackRecord("both2", "z", "g2")]
    for seed in range(5):
        res = stratified_artist_split(recs, seed=seed)
        assert res.assignment["both1"] == res.assignment["both2"]


def recount(records, assignment):
    counts = defaultdict(lambda: defaultdict(int))
    for r in records:
        counts[r.genre][assignment[r.track_id]] += 1
    return counts


@pytest.mark.parametrize("seed", range(3))
def test_many_class_manifest_fractions(seed):
    recs = split_manifest(16, 200, seed)
    res = stratified_artist_split(recs, seed=seed)
    assert set(res.assignment) == {r.track_id for r in recs}
    assert len(res.assignment) == len(recs)
    where = defaultdict(set)
    for r in recs:
        where[r.artist_id].add(res.assignment[r.track_id])
    assert all(len(s) == 1 for s in where.values())
    counts = recount(recs, res.assignment)
    assert {g: dict(c) for g, c in counts.items()} == \
        {g: {s: n for s, n in c.items() if n} for g, c in res.counts.items()}
    for g, c in counts.items():
        n = sum(c.values())
        assert abs(c["train"] / n - 0.8) <= 0.05, (g, dict(c))


def test_single_artist_class_is_flagged():
    recs = [TrackRecord(f"t{i}", "solo", "rare") for i in range(5)]
    recs += [TrackRecord(f"u{a}{i}", f"u{a}", "common") for a in range(10) for i in range(2)]
    res = stratified_artist_split(recs)
    assert res.flagged == ["rare"]
    assert all(res.assignment[f"t{i}"] == "train" for i in range(5))


def test_split_file_round_trip(tmp_path):
    recs = split_manifest(4, 20, 1)
    res = stratified_artist_split(recs)
    write_split(res, tmp_path / "s.csv")
    assert read_split(tmp_path / "s.csv") == res.assignment
    (tmp_path / "bad.csv").write_text("track_id,split\nt1,holdout\n")
    with pytest.raises(ManifestError):
        read_split(tmp_path / "bad.csv")


def test_bad_fractions():
    with pytest.raises(ValueError):
        stratified_artist_split([], fractions=(0.5, 0.5, 0.5))
