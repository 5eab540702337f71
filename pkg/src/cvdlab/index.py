"""Exact flat L2 nearest-neighbor index over code embeddings.

The index is a brute-force scan, never an approximation: every query
computes the distance to every stored vector. Distances are compared as
squared L2 and reported as true L2; exact ties are broken by ascending id.

File format, little-endian throughout:

    8 bytes   magic b"CVDXFLAT"
    u32       format version (1)
    u64       N, number of vectors
    u32       d, vector dimension
    N*d f32   vector values, row-major
    N times   id entry: u32 byte length + UTF-8 bytes

Round-tripping through a file is bit-identical because vectors are stored
as the same float32 values the index holds in memory.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import CodeSample

MAGIC = b"CVDXFLAT"
FORMAT_VERSION = 1


def pool_mean(vectors: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    """Average a non-empty stack of equal-length vectors into one."""
    if isinstance(vectors, np.ndarray):
        if vectors.ndim != 2 or vectors.shape[0] == 0:
            raise ValueError(f"expected a non-empty 2-D stack, got shape {vectors.shape}")
        stack = vectors.astype(np.float64)
    else:
        if len(vectors) == 0:
            raise ValueError("cannot pool an empty vector list")
        dims = {np.asarray(v).shape for v in vectors}
        if len(dims) != 1 or len(next(iter(dims))) != 1:
            raise ValueError(f"vectors must share one 1-D shape, got {sorted(dims)}")
        stack = np.stack([np.asarray(v, dtype=np.float64) for v in vectors])
    return stack.mean(axis=0)


class FlatIndex:
    """Exact nearest-neighbor search over float32 vectors keyed by id."""

    def __init__(self, vectors: np.ndarray, ids: Sequence[str]):
        vectors = np.ascontiguousarray(np.asarray(vectors, dtype=np.float32))
        if vectors.ndim != 2 or vectors.shape[0] == 0 or vectors.shape[1] == 0:
            raise ValueError(f"vectors must be a non-empty 2-D array, got shape {vectors.shape}")
        ids = [str(i) for i in ids]
        if len(ids) != vectors.shape[0]:
            raise ValueError(f"{vectors.shape[0]} vectors but {len(ids)} ids")
        if len(set(ids)) != len(ids):
            raise ValueError("index ids must be unique")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("index vectors must be finite")
        self.vectors = vectors
        self.ids = ids

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def query(self, vector: np.ndarray, k: int, exclude_id: str | None = None) -> list[tuple[str, float]]:
        """Return the k nearest stored vectors as (id, L2 distance) pairs.

        Results come back in ascending distance order; exact distance ties
        are broken by ascending id so queries are fully deterministic.
        `exclude_id` drops one stored id from consideration (for queries
        whose own vector lives in the index).
        """
        q = np.asarray(vector, dtype=np.float64).reshape(-1)
        if q.shape[0] != self.dim:
            raise ValueError(f"query dimension {q.shape[0]} != index dimension {self.dim}")
        if not np.all(np.isfinite(q)):
            raise ValueError("query vector must be finite")
        if exclude_id is None:
            candidates = list(range(self.size))
        else:
            candidates = [i for i in range(self.size) if self.ids[i] != exclude_id]
        if k < 1 or k > len(candidates):
            raise ValueError(f"k must be in [1, {len(candidates)}], got {k}")
        d2 = ((self.vectors.astype(np.float64) - q) ** 2).sum(axis=1)
        order = sorted(candidates, key=lambda i: (d2[i], self.ids[i]))
        return [(self.ids[i], math.sqrt(d2[i])) for i in order[:k]]

    def save(self, path: str | Path) -> None:
        """Write the index in the documented binary layout."""
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IQI", FORMAT_VERSION, self.size, self.dim))
            fh.write(self.vectors.tobytes(order="C"))
            for sample_id in self.ids:
                raw = sample_id.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)

    @classmethod
    def load(cls, path: str | Path) -> "FlatIndex":
        """Read an index written by save()."""
        path = Path(path)
        with open(path, "rb") as fh:
            magic = fh.read(len(MAGIC))
            if magic != MAGIC:
                raise ValueError(f"{path.name} is not a flat index file (bad magic {magic!r})")
            version, n, d = struct.unpack("<IQI", fh.read(16))
            if version != FORMAT_VERSION:
                raise ValueError(f"unsupported index format version {version}")
            data = fh.read(n * d * 4)
            if len(data) != n * d * 4:
                raise ValueError(f"{path.name} is truncated")
            vectors = np.frombuffer(data, dtype="<f4").reshape(n, d)
            ids = []
            for _ in range(n):
                (length,) = struct.unpack("<I", fh.read(4))
                ids.append(fh.read(length).decode("utf-8"))
        return cls(vectors, ids)


def build_index(
    samples: Sequence[CodeSample],
    embedder: Callable[[str], np.ndarray],
) -> FlatIndex:
    """Embed every sample's code and assemble a FlatIndex over the results."""
    if len(samples) == 0:
        raise ValueError("cannot build an index from zero samples")
    vectors = []
    for sample in samples:
        try:
            vec = np.asarray(embedder(sample.code), dtype=np.float64).reshape(-1)
        except Exception as exc:
            raise RuntimeError(f"embedding failed for sample {sample.id!r}: {exc}") from exc
        vectors.append(vec)
    dims = {v.shape[0] for v in vectors}
    if len(dims) != 1:
        raise ValueError(f"embedder produced mixed dimensions: {sorted(dims)}")
    return FlatIndex(np.stack(vectors), [s.id for s in samples])
