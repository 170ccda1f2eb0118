"""
Flat parameter storage with shape metadata, the unit every recovery
strategy reads and writes.
"""

import math
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from sim_utils.errors import ConfigurationError
from sim_utils.guards import ensure_finite


@dataclass(frozen=True, eq=False)
class ParameterVector:
    """Immutable float64 weights stored flat, plus the logical shape."""

    values: np.ndarray
    shape: Tuple[int, ...]

    def __post_init__(self):
        shape = tuple(int(d) for d in self.shape)
        values = np.array(self.values, dtype=np.float64).ravel()
        if any(d < 0 for d in shape) or values.size != math.prod(shape):
            raise ConfigurationError(
                f"ParameterVector holds {values.size} values but shape {shape} "
                f"needs {math.prod(shape)}"
            )
        ensure_finite(values, "parameter vector")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "shape", shape)

    @classmethod
    def from_array(cls, array) -> "ParameterVector":
        array = np.asarray(array, dtype=np.float64)
        return cls(array.ravel(), array.shape)

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "ParameterVector":
        return cls(np.zeros(math.prod(shape)), tuple(shape))

    @classmethod
    def concat(cls, parts: Iterable["ParameterVector"]) -> "ParameterVector":
        parts = list(parts)
        if not parts:
            return cls(np.zeros(0), (0,))
        values = np.concatenate([p.values for p in parts])
        return cls(values, (values.size,))

    @property
    def size(self) -> int:
        return int(self.values.size)

    def __len__(self):
        return self.size

    def as_array(self) -> np.ndarray:
        """Read-only view with the logical shape."""
        return self.values.reshape(self.shape)

    def with_values(self, values) -> "ParameterVector":
        """Same shape, new values."""
        return ParameterVector(values, self.shape)

    def split(self, shapes: Sequence[Sequence[int]]) -> List["ParameterVector"]:
        """Cut a flat vector back into pieces of the given shapes."""
        sizes = [math.prod(s) for s in shapes]
        if sum(sizes) != self.size:
            raise ConfigurationError(
                f"cannot split {self.size} values into shapes totalling {sum(sizes)}"
            )
        pieces, offset = [], 0
        for shape, size in zip(shapes, sizes):
            pieces.append(ParameterVector(self.values[offset:offset + size], tuple(shape)))
            offset += size
        return pieces

    def same_bits(self, other: "ParameterVector") -> bool:
        """Bit-exact equality of shape and values."""
        return self.shape == other.shape and self.values.tobytes() == other.values.tobytes()

    def squared_distance(self, other: "ParameterVector") -> float:
        require_same_shape(self, other)
        diff = self.values - other.values
        return float(np.dot(diff, diff))

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


def require_same_shape(*vectors: ParameterVector):
    shapes = {v.shape for v in vectors}
    if len(shapes) != 1:
        raise ConfigurationError(f"parameter shape mismatch: {sorted(shapes)}")
