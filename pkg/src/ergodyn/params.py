"""Flat parameter vectors with a named block layout.

Every objective in this package exposes its parameters as a single 1-D
float64 vector so that update maps, trajectories and measures can treat
the state as a point in R^p.  ParamVector keeps the block shapes around
so layer matrices can be recovered without copying.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["ParamVector", "as_values", "unpack_many"]


@dataclass
class ParamVector:
    """A point in parameter space plus the shapes of its blocks.

    values : 1-D float64 array, finite.
    shapes : tuple of block shapes; their sizes must sum to values.size.
    """

    values: np.ndarray
    shapes: tuple[tuple[int, ...], ...] = field(default=())

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError(f"values must be 1-D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("parameter vector contains non-finite entries")
        self.shapes = tuple(tuple(int(d) for d in s) for s in self.shapes)
        if not self.shapes:
            self.shapes = ((self.values.size,),)
        total = sum(int(np.prod(s)) for s in self.shapes)
        if total != self.values.size:
            raise ValueError(
                f"block sizes sum to {total} but values has {self.values.size} entries"
            )

    @property
    def dim(self) -> int:
        return self.values.size

    def __len__(self) -> int:
        return self.values.size

    def blocks(self) -> list[np.ndarray]:
        """Views of the flat vector, one per block, reshaped."""
        out = []
        off = 0
        for s in self.shapes:
            n = int(np.prod(s))
            out.append(self.values[off:off + n].reshape(s))
            off += n
        return out

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.shapes)

    def __array__(self, dtype=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @staticmethod
    def from_blocks(blocks) -> "ParamVector":
        blocks = [np.asarray(b, dtype=np.float64) for b in blocks]
        values = np.concatenate([b.ravel() for b in blocks]) if blocks else np.empty(0)
        return ParamVector(values, tuple(b.shape for b in blocks))


def unpack_many(shapes, thetas: np.ndarray) -> list[np.ndarray]:
    """Split a stack of flat vectors (T, dim) into blocks of shape (T, *s)."""
    thetas = np.asarray(thetas, dtype=np.float64)
    T = thetas.shape[0]
    out, off = [], 0
    for s in shapes:
        n = int(np.prod(s))
        out.append(thetas[:, off:off + n].reshape((T,) + tuple(s)))
        off += n
    return out


def as_values(theta) -> np.ndarray:
    """Accept a ParamVector or a plain array, return the flat float64 values."""
    if isinstance(theta, ParamVector):
        return theta.values
    arr = np.asarray(theta, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a flat parameter vector, got shape {arr.shape}")
    return arr
