"""Stroke parameterization, sequences, and painting-record serialization.

A stroke is a 10-vector of normalized values in [0, 1]:

    cx, cy   center, patch coordinates
    w, h     half-extent along / across the spine (fraction of patch side)
    theta    rotation, mapped to [0, 2*pi); 0 and 1 are the same orientation
    bend     quadratic-spine curvature, mapped to a signed midpoint offset
    r, g, b  color
    a        opacity

All types here are immutable value objects; operations are pure.  The PRNG is
numpy's PCG64 so datasets are reproducible across platforms from a seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

PARAM_DIM = 10
PARAM_NAMES = ("cx", "cy", "w", "h", "theta", "bend", "r", "g", "b", "a")


@dataclass(frozen=True)
class StrokeParams:
    cx: float
    cy: float
    w: float
    h: float
    theta: float
    bend: float
    r: float
    g: float
    b: float
    a: float

    def as_vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=np.float64)

    @classmethod
    def from_vector(cls, v) -> "StrokeParams":
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (PARAM_DIM,):
            raise ValueError(f"stroke vector must have length {PARAM_DIM}, got shape {v.shape}")
        return cls(*(float(x) for x in v))


@dataclass(frozen=True)
class StrokeSequence:
    """Ordered strokes; later strokes composite over earlier ones."""

    strokes: tuple

    def __len__(self):
        return len(self.strokes)

    def __iter__(self):
        return iter(self.strokes)

    def __getitem__(self, i):
        return self.strokes[i]

    def as_array(self) -> np.ndarray:
        if not self.strokes:
            return np.zeros((0, PARAM_DIM))
        return np.stack([s.as_vector() for s in self.strokes])

    @classmethod
    def from_array(cls, arr) -> "StrokeSequence":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(tuple(StrokeParams.from_vector(row) for row in arr))


def clamp_params(raw, mode: str = "clamp") -> StrokeParams:
    """Map a raw length-10 vector into the valid stroke box.

    mode="clamp" hard-clips (for user-supplied values, idempotent);
    mode="logistic" applies the logistic squash (for raw network outputs).
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (PARAM_DIM,):
        raise ValueError(f"expected a length-{PARAM_DIM} vector, got shape {raw.shape}")
    if mode == "clamp":
        v = np.clip(raw, 0.0, 1.0)
    elif mode == "logistic":
        v = 1.0 / (1.0 + np.exp(-raw))
    else:
        raise ValueError(f"unknown clamp mode {mode!r}")
    return StrokeParams.from_vector(v)


def random_strokes(n: int, seed: int) -> StrokeSequence:
    """n i.i.d. random strokes; w, h drawn from [0.05, 0.6], the rest uniform."""
    if n < 0:
        raise ValueError("n must be >= 0")
    rng = np.random.Generator(np.random.PCG64(seed))
    arr = rng.uniform(0.0, 1.0, size=(n, PARAM_DIM))
    arr[:, 2:4] = rng.uniform(0.05, 0.6, size=(n, 2))
    return StrokeSequence.from_array(arr)


@dataclass(frozen=True)
class StrokeEntry:
    patch_id: int
    group_index: int
    params: StrokeParams


@dataclass(frozen=True)
class GridDescriptor:
    gx: int
    gy: int
    overlap: float
    patch_px: int


@dataclass(frozen=True)
class PaintingRecord:
    """Full painting: image size, patch grid, ordered per-stroke entries.

    Entries are kept sorted by (group_index, patch_id, within-group order),
    matching the group-synchronous compositing schedule.
    """

    height: int
    width: int
    grid: GridDescriptor
    group_size: int
    entries: tuple

    def sorted(self) -> "PaintingRecord":
        order = sorted(range(len(self.entries)),
                       key=lambda i: (self.entries[i].group_index, self.entries[i].patch_id, i))
        return PaintingRecord(self.height, self.width, self.grid, self.group_size,
                              tuple(self.entries[i] for i in order))


class RecordParseError(ValueError):
    """Raised on malformed painting JSON; the message names the offending path."""


def serialize(record: PaintingRecord) -> str:
    obj = {
        "image": [record.height, record.width],
        "grid": {
            "gx": record.grid.gx,
            "gy": record.grid.gy,
            "overlap": record.grid.overlap,
            "patch_px": record.grid.patch_px,
        },
        "group_size": record.group_size,
        "strokes": [
            {
                "patch": e.patch_id,
                "group": e.group_index,
                # repr round-trips doubles exactly (>= 9 significant digits)
                "params": list(e.params.as_vector()),
            }
            for e in record.entries
        ],
    }
    return json.dumps(obj)


def _expect(cond, path, msg):
    if not cond:
        raise RecordParseError(f"{path}: {msg}")


def deserialize(text: str) -> PaintingRecord:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise RecordParseError(f"$: malformed JSON ({e})") from e
    _expect(isinstance(obj, dict), "$", "expected object")
    _expect(isinstance(obj.get("image"), list) and len(obj["image"]) == 2,
            "$.image", "expected [H, W]")
    h, w = obj["image"]
    _expect(isinstance(h, int) and isinstance(w, int) and h > 0 and w > 0,
            "$.image", "H and W must be positive integers")
    g = obj.get("grid")
    _expect(isinstance(g, dict), "$.grid", "expected object")
    for key in ("gx", "gy", "patch_px"):
        _expect(isinstance(g.get(key), int) and g[key] >= 1, f"$.grid.{key}",
                "expected integer >= 1")
    ov = g.get("overlap")
    _expect(isinstance(ov, (int, float)) and 0.0 <= ov < 0.5, "$.grid.overlap",
            "expected number in [0, 0.5)")
    gs = obj.get("group_size")
    _expect(isinstance(gs, int) and gs >= 1, "$.group_size", "expected integer >= 1")
    strokes = obj.get("strokes")
    _expect(isinstance(strokes, list), "$.strokes", "expected array")
    n_patches = g["gx"] * g["gy"]
    entries = []
    for i, s in enumerate(strokes):
        path = f"$.strokes[{i}]"
        _expect(isinstance(s, dict), path, "expected object")
        _expect(isinstance(s.get("patch"), int) and 0 <= s["patch"] < n_patches,
                f"{path}.patch", f"expected integer in [0, {n_patches})")
        _expect(isinstance(s.get("group"), int) and s["group"] >= 0,
                f"{path}.group", "expected integer >= 0")
        p = s.get("params")
        _expect(isinstance(p, list) and len(p) == PARAM_DIM, f"{path}.params",
                f"expected {PARAM_DIM} numbers")
        for j, x in enumerate(p):
            _expect(isinstance(x, (int, float)) and math.isfinite(x) and 0.0 <= x <= 1.0,
                    f"{path}.params[{j}]", "expected number in [0, 1]")
        entries.append(StrokeEntry(s["patch"], s["group"], StrokeParams.from_vector(p)))
    rec = PaintingRecord(h, w, GridDescriptor(g["gx"], g["gy"], float(ov), g["patch_px"]),
                         gs, tuple(entries))
    return rec
