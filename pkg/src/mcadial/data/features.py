"""Flat binary store of per-image region features.

Layout (little endian)::

    b"VDFB"  u32 version  u32 count  u32 rows  u32 dim
    count x ( i64 image_id  rows*dim float32 )
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"VDFB"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")
_ID = struct.Struct("<q")

NUM_BOXES = 36
FEATURE_DIM = 2048


class FeatureFormatError(ValueError):
    pass


class FeatureStore:
    """Mapping image_id -> (rows, dim) float32 matrix with fixed rows/dim."""

    def __init__(self, rows: int = NUM_BOXES, dim: int = FEATURE_DIM, features: dict | None = None):
        self.rows, self.dim = rows, dim
        self._data: dict[int, np.ndarray] = {}
        for image_id, mat in (features or {}).items():
            self[image_id] = mat

    def __setitem__(self, image_id: int, mat) -> None:
        mat = np.asarray(mat, dtype=np.float32)
        if mat.shape != (self.rows, self.dim):
            raise FeatureFormatError(f"image {image_id}: features {mat.shape}, store expects {(self.rows, self.dim)}")
        if not np.isfinite(mat).all():
            raise FeatureFormatError(f"image {image_id}: non-finite feature values")
        self._data[int(image_id)] = mat

    def __getitem__(self, image_id: int) -> np.ndarray:
        try:
            return self._data[int(image_id)]
        except KeyError:
            raise KeyError(f"no features for image {image_id}") from None

    def __contains__(self, image_id) -> bool:
        return int(image_id) in self._data

    def __len__(self) -> int:
        return len(self._data)

    def __iter__(self):
        return iter(self._data)

    def __eq__(self, other) -> bool:
        return (isinstance(other, FeatureStore) and (self.rows, self.dim) == (other.rows, other.dim)
                and self._data.keys() == other._data.keys()
                and all(np.array_equal(self._data[k], other._data[k]) for k in self._data))

    @property
    def header(self) -> tuple[int, int, int]:
        return len(self), self.rows, self.dim

    def stack(self, image_ids) -> np.ndarray:
        return np.stack([self[i] for i in image_ids]) if len(image_ids) else np.zeros((0, self.rows, self.dim),
                                                                                      np.float32)


def write_features(store: FeatureStore, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(store), store.rows, store.dim))
        for image_id in store:
            fh.write(_ID.pack(image_id))
            fh.write(store[image_id].astype("<f4", copy=False).tobytes())


def read_header(path: str | Path) -> tuple[int, int, int]:
    with open(path, "rb") as fh:
        return _parse_header(fh.read(_HEADER.size), path)


def _parse_header(raw: bytes, path) -> tuple[int, int, int]:
    if len(raw) < _HEADER.size:
        raise FeatureFormatError(f"{path}: truncated header")
    magic, version, count, rows, dim = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FeatureFormatError(f"{path}: unsupported version {version}")
    return count, rows, dim


def load_features(path: str | Path, expect_rows: int | None = None, expect_dim: int | None = None) -> FeatureStore:
    raw = Path(path).read_bytes()
    count, rows, dim = _parse_header(raw[:_HEADER.size], path)
    if expect_rows is not None and rows != expect_rows or expect_dim is not None and dim != expect_dim:
        raise FeatureFormatError(f"{path}: store holds ({rows}, {dim}) features, expected ({expect_rows}, {expect_dim})")
    block = _ID.size + 4 * rows * dim
    if len(raw) != _HEADER.size + count * block:
        raise FeatureFormatError(f"{path}: size {len(raw)} does not match header ({count} x {rows} x {dim})")
    store = FeatureStore(rows, dim)
    off = _HEADER.size
    for _ in range(count):
        (image_id,) = _ID.unpack_from(raw, off)
        mat = np.frombuffer(raw, dtype="<f4", count=rows * dim, offset=off + _ID.size).reshape(rows, dim)
        store[image_id] = mat.astype(np.float32)
        off += block
    return store
