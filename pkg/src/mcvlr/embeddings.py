"""Dense embedding vectors, stacked embedding matrices and similarity primitives.

All arithmetic here is 64-bit numpy; the documented absolute tolerance for
numeric checks against these functions is 1e-6. The torch models elsewhere
run in 32-bit (tolerance 1e-4) unless explicitly cast to double.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionMismatchError, NumericError


def _as_float64(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError("embedding values must be finite")
    return arr


@dataclass(frozen=True)
class Embedding:
    """A single D-dimensional vector in the common embedding space."""

    values: np.ndarray

    def __post_init__(self):
        arr = _as_float64(self.values)
        if arr.ndim != 1 or arr.shape[0] == 0:
            raise DataError(f"embedding must be a nonempty 1-D vector, got shape {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class EmbeddingMatrix:
    """N stacked row embeddings, optionally labelled with unique row keys."""

    data: np.ndarray
    row_keys: tuple[str, ...] | None = field(default=None)

    def __post_init__(self):
        arr = _as_float64(self.data)
        if arr.ndim != 2 or 0 in arr.shape:
            raise DataError(f"embedding matrix must be nonempty 2-D, got shape {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        if self.row_keys is not None:
            keys = tuple(self.row_keys)
            if len(keys) != arr.shape[0]:
                raise DataError(f"{len(keys)} row keys for {arr.shape[0]} rows")
            if len(set(keys)) != len(keys):
                raise DataError("row keys must be unique")
            object.__setattr__(self, "row_keys", keys)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def row(self, i: int) -> Embedding:
        return Embedding(self.data[i])

    def save(self, path: str | Path) -> None:
        """Persist as <path>.npy (shape header + row-major float64 values) plus
        an optional newline-delimited <path>.keys.txt sidecar."""
        path = Path(path)
        np.save(path.with_suffix(".npy"), self.data)
        if self.row_keys is not None:
            path.with_suffix(".keys.txt").write_text(
                "\n".join(self.row_keys) + "\n", encoding="utf-8"
            )

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingMatrix":
        path = Path(path)
        data = np.load(path.with_suffix(".npy"))
        keys_path = path.with_suffix(".keys.txt")
        keys = None
        if keys_path.exists():
            keys = tuple(keys_path.read_text(encoding="utf-8").splitlines())
        return cls(data=data, row_keys=keys)


def dot_scores(query: Embedding, matrix: EmbeddingMatrix) -> np.ndarray:
    """Inner product of the query with every matrix row, in row order."""
    if query.dim != matrix.dim:
        raise DimensionMismatchError(
            f"query dim {query.dim} != matrix dim {matrix.dim}"
        )
    return matrix.data @ query.values


def l2_normalize(e: Embedding) -> Embedding:
    """Rescale to unit Euclidean norm; the zero vector is rejected."""
    norm = float(np.linalg.norm(e.values))
    if norm == 0.0:
        raise NumericError("cannot normalize the zero vector")
    return Embedding(e.values / norm)


def mean_pool(seq, mask=None) -> Embedding:
    """Arithmetic mean over the unmasked embeddings of a uniform-dim sequence."""
    vecs = [e.values if isinstance(e, Embedding) else _as_float64(e) for e in seq]
    if mask is not None:
        if len(mask) != len(vecs):
            raise DataError(f"mask length {len(mask)} != sequence length {len(vecs)}")
        vecs = [v for v, keep in zip(vecs, mask) if keep]
    if not vecs:
        raise DataError("mean_pool over an empty (or fully masked) sequence")
    dims = {v.shape for v in vecs}
    if len(dims) != 1:
        raise DimensionMismatchError(f"mixed dims in mean_pool: {sorted(dims)}")
    stacked = np.stack(vecs)
    # anchored mean: exact (zero rounding) when all vectors are identical
    return Embedding(stacked[0] + np.mean(stacked - stacked[0], axis=0))
