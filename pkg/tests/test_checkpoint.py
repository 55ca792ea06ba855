import struct

import numpy as np
import pytest

from genrefusion.checkpoint import MAGIC, VERSION, CheckpointError, dumps, load, loads, save


def sample(rng):
    meta = {"epoch": 3, "labels": ["a", "b"], "nested": {"x": [1.5, None]}}
    blobs = {
        "param/w": rng.normal(size=(3, 4)).astype(np.float32),
        "param/v": rng.normal(size=7),
        "ids": np.arange(6, dtype=np.int64).reshape(2, 3),
        "scalar": np.array(2.5),
    }
    return meta, blobs


def test_round_trip_is_bitwise(rng, tmp_path):
    meta, blobs = sample(rng)
    save(tmp_path / "c.gfck", meta, blobs)
    meta2, blobs2 = load(tmp_path / "c.gfck")
    assert meta2 == meta
    assert list(blobs2) == list(blobs)
    for k in blobs:
        assert blobs2[k].dtype == blobs[k].dtype
        assert blobs2[k].shape == blobs[k].shape
        assert blobs2[k].tobytes() == blobs[k].tobytes()


def test_header_layout(rng):
    raw = dumps(*sample(rng))
    assert raw[:4] == MAGIC
    assert struct.unpack_from("<H", raw, 4)[0] == VERSION


def test_serialization_is_deterministic(rng):
    meta, blobs = sample(rng)
    assert dumps(meta, blobs) == dumps(dict(reversed(meta.items())), blobs)


def test_unsupported_dtype(rng):
    with pytest.raises(CheckpointError, match="dtype"):
        dumps({}, {"x": np.zeros(3, np.int16)})


def test_bad_magic_and_version(rng):
    raw = dumps(*sample(rng))
    with pytest.raises(CheckpointError, match="magic"):
        loads(b"XXXX" + raw[4:])
    bumped = raw[:4] + struct.pack("<H", VERSION + 1) + raw[6:]
    with pytest.raises(CheckpointError, match="version"):
        loads(bumped)


def test_truncation_and_trailing_bytes(rng):
    raw = dumps(*sample(rng))
    for cut in (5, 12, len(raw) // 2, len(raw) - 1):
        with pytest.raises(CheckpointError):
            loads(raw[:cut])
    with pytest.raises(CheckpointError, match="trailing"):
        loads(raw + b"\0")


def test_corrupt_dtype_code(rng):
    meta, blobs = {}, {"x": np.zeros(2)}
    raw = bytearray(dumps(meta, blobs))
    # name length (2) + name (1) puts the dtype byte right after the blob name
    pos = raw.index(b"x", 10) + 1
    raw[pos] = 9
    with pytest.raises(CheckpointError):
        loads(bytes(raw))
