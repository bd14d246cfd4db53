"""Dense C x H x W float32 grids: heatmaps, embeddings, offsets, regressions."""

from __future__ import annotations

import numpy as np

from .errors import ContractError


class DenseGrid:
    """A channels x height x width array of 32-bit floats.

    A grid is writable while it is being built and becomes read-only after
    :meth:`freeze`; loaded grids are always frozen. ``values`` exposes the
    flat row-major view, index ``(c * H + i) * W + j``.
    """

    __slots__ = ("_data", "name")

    def __init__(self, data, name: str = ""):
        arr = np.array(data, dtype=np.float32, order="C", copy=True)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3:
            raise ContractError(f"grid data must be 2-D or 3-D, got shape {arr.shape}")
        self._data = arr
        self.name = name

    @classmethod
    def zeros(cls, channels: int, height: int, width: int, name: str = "") -> "DenseGrid":
        return cls(np.zeros((channels, height, width), dtype=np.float32), name=name)

    @classmethod
    def wrap(cls, arr: np.ndarray, name: str = "") -> "DenseGrid":
        """Adopt ``arr`` without copying (it must already be C-contiguous float32 3-D)."""
        g = cls.__new__(cls)
        if arr.dtype != np.float32 or arr.ndim != 3 or not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr, dtype=np.float32).reshape(_as3d(arr.shape))
        g._data = arr
        g.name = name
        return g

    @property
    def shape(self) -> tuple[int, int, int]:
        return self._data.shape

    @property
    def channels(self) -> int:
        return self._data.shape[0]

    @property
    def height(self) -> int:
        return self._data.shape[1]

    @property
    def width(self) -> int:
        return self._data.shape[2]

    @property
    def array(self) -> np.ndarray:
        return self._data

    @property
    def values(self) -> np.ndarray:
        return self._data.reshape(-1)

    @property
    def frozen(self) -> bool:
        return not self._data.flags.writeable

    def freeze(self) -> "DenseGrid":
        self._data.flags.writeable = False
        return self

    def channel(self, c: int) -> np.ndarray:
        return self._data[c]

    def _check(self, c, i, j):
        C, H, W = self._data.shape
        if not (0 <= c < C and 0 <= i < H and 0 <= j < W):
            raise IndexError(f"cell ({c}, {i}, {j}) outside grid of shape {(C, H, W)}")

    def get(self, c: int, i: int, j: int) -> float:
        self._check(c, i, j)
        return float(self._data[c, i, j])

    def set(self, c: int, i: int, j: int, value: float) -> None:
        self._check(c, i, j)
        if self.frozen:
            raise ContractError(f"grid {self.name!r} is frozen")
        self._data[c, i, j] = value

    def copy(self) -> "DenseGrid":
        return DenseGrid(self._data, name=self.name)

    def __eq__(self, other):
        if not isinstance(other, DenseGrid):
            return NotImplemented
        return self.shape == other.shape and self._data.tobytes() == other._data.tobytes()

    def __repr__(self):
        return f"DenseGrid(name={self.name!r}, shape={self.shape})"


def _as3d(shape):
    if len(shape) == 2:
        return (1,) + tuple(shape)
    return tuple(shape)


def as_plane(grid, what: str = "grid") -> np.ndarray:
    """Return the single 2-D plane of a one-channel grid (or a 2-D array)."""
    arr = grid.array if isinstance(grid, DenseGrid) else np.asarray(grid, dtype=np.float32)
    if arr.ndim == 3:
        if arr.shape[0] != 1:
            raise ContractError(f"{what} must have exactly 1 channel, got {arr.shape[0]}")
        arr = arr[0]
    if arr.ndim != 2:
        raise ContractError(f"{what} must be a single-channel grid, got shape {arr.shape}")
    return np.ascontiguousarray(arr, dtype=np.float32)
