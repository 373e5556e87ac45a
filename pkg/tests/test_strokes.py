"""Stroke value objects, PRNG determinism, and painting-record JSON."""

import json

import numpy as np
import pytest

from strokescan import strokes
from strokescan.strokes import (PARAM_DIM, PARAM_NAMES, GridDescriptor,
                                PaintingRecord, RecordParseError, StrokeEntry,
                                StrokeParams, StrokeSequence, clamp_params,
                                deserialize, random_strokes, serialize)


def test_param_vector_roundtrip():
    v = np.linspace(0.0, 1.0, PARAM_DIM)
    s = StrokeParams.from_vector(v)
    assert s.as_vector().shape == (PARAM_DIM,)
    np.testing.assert_array_equal(s.as_vector(), v)
    for name, x in zip(PARAM_NAMES, v):
        assert getattr(s, name) == x


def test_param_vector_bad_shape():
    with pytest.raises(ValueError):
        StrokeParams.from_vector(np.zeros(9))
    with pytest.raises(ValueError):
        StrokeParams.from_vector(np.zeros((2, PARAM_DIM)))


def test_sequence_roundtrip_and_empty():
    arr = np.random.default_rng(0).random((5, PARAM_DIM))
    seq = StrokeSequence.from_array(arr)
    assert len(seq) == 5
    np.testing.assert_array_equal(seq.as_array(), arr)
    assert seq[2].as_vector()[0] == arr[2, 0]
    empty = StrokeSequence.from_array(np.zeros((0, PARAM_DIM)))
    assert len(empty) == 0
    assert empty.as_array().shape == (0, PARAM_DIM)


def test_clamp_modes():
    raw = np.array([-1.0, 0.0, 0.5, 2.0] + [0.3] * 6)
    c = clamp_params(raw, mode="clamp").as_vector()
    assert c[0] == 0.0 and c[3] == 1.0 and c[2] == 0.5
    # clamp is idempotent
    np.testing.assert_array_equal(clamp_params(c, mode="clamp").as_vector(), c)
    lg = clamp_params(raw, mode="logistic").as_vector()
    np.testing.assert_allclose(lg, 1.0 / (1.0 + np.exp(-raw)), rtol=1e-12)
    with pytest.raises(ValueError):
        clamp_params(raw, mode="nope")


def test_random_strokes_deterministic_and_bounded():
    a = random_strokes(50, seed=3).as_array()
    b = random_strokes(50, seed=3).as_array()
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, random_strokes(50, seed=4).as_array())
    assert a.min() >= 0.0 and a.max() <= 1.0
    assert a[:, 2:4].min() >= 0.05 and a[:, 2:4].max() <= 0.6
    with pytest.raises(ValueError):
        random_strokes(-1, seed=0)


def _record(n=7, gx=2, gy=2, group_size=3):
    seq = random_strokes(n, seed=1)
    entries = tuple(StrokeEntry(patch_id=i % (gx * gy), group_index=i // group_size,
                                params=s) for i, s in enumerate(seq))
    return PaintingRecord(height=64, width=64,
                          grid=GridDescriptor(gx, gy, 0.25, 40),
                          group_size=group_size, entries=entries)


def test_serialize_roundtrip_exact():
    rec = _record()
    text = serialize(rec)
    back = deserialize(text)
    assert (back.height, back.width) == (rec.height, rec.width)
    assert back.grid == rec.grid
    assert back.group_size == rec.group_size
    assert len(back.entries) == len(rec.entries)
    for e0, e1 in zip(rec.entries, back.entries):
        assert (e0.patch_id, e0.group_index) == (e1.patch_id, e1.group_index)
        # JSON float round-trip must be bit exact for doubles
        np.testing.assert_array_equal(e0.params.as_vector(), e1.params.as_vector())


def test_serialize_schema_fields():
    obj = json.loads(serialize(_record()))
    assert set(obj) == {"image", "grid", "group_size", "strokes"}
    assert obj["image"] == [64, 64]
    assert set(obj["grid"]) == {"gx", "gy", "overlap", "patch_px"}
    s0 = obj["strokes"][0]
    assert set(s0) == {"patch", "group", "params"}
    assert len(s0["params"]) == PARAM_DIM


def test_record_sorted_is_group_major():
    rec = _record(n=9, group_size=2)
    shuffled = PaintingRecord(rec.height, rec.width, rec.grid, rec.group_size,
                              tuple(reversed(rec.entries)))
    keys = [(e.group_index, e.patch_id) for e in shuffled.sorted().entries]
    assert keys == sorted(keys)


@pytest.mark.parametrize("mutate, path_fragment", [
    (lambda o: o.__setitem__("image", [0, 64]), "$.image"),
    (lambda o: o.pop("grid"), "$.grid"),
    (lambda o: o["grid"].__setitem__("gx", 0), "$.grid.gx"),
    (lambda o: o["grid"].__setitem__("overlap", 0.7), "$.grid.overlap"),
    (lambda o: o.__setitem__("group_size", 0), "$.group_size"),
    (lambda o: o.__setitem__("strokes", {}), "$.strokes"),
    (lambda o: o["strokes"][0].__setitem__("patch", 99), "$.strokes[0].patch"),
    (lambda o: o["strokes"][1].__setitem__("group", -1), "$.strokes[1].group"),
    (lambda o: o["strokes"][0].__setitem__("params", [0.5] * 9), "$.strokes[0].params"),
    (lambda o: o["strokes"][0]["params"].__setitem__(3, 1.5), "$.strokes[0].params[3]"),
])
def test_deserialize_rejects_malformed(mutate, path_fragment):
    obj = json.loads(serialize(_record()))
    mutate(obj)
    with pytest.raises(RecordParseError) as exc:
        deserialize(json.dumps(obj))
    assert path_fragment in str(exc.value)


def test_deserialize_rejects_bad_json():
    with pytest.raises(RecordParseError):
        deserialize("{not json")
