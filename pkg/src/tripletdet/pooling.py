"""Directional max scans and the pooling operators composed from them.

A scan takes, for every cell, the maximum over the ray that starts at the
cell (inclusive) and runs to the grid border in the given direction::

    TOWARD_RIGHT   out[i, j] = max(x[i, j:])
    TOWARD_LEFT    out[i, j] = max(x[i, :j+1])
    TOWARD_BOTTOM  out[i, j] = max(x[i:, j])
    TOWARD_TOP     out[i, j] = max(x[:i+1, j])

Top-left corners look into the object, i.e. down and to the right;
bottom-right corners look up and to the left::

    TL ---->          ^
    |    .            |    .
    v      .     <---- BR

The learnable conv/BN blocks that sit between scans in a network are not
part of this module; compose :func:`scan_max` directly to interpose them.
"""

from __future__ import annotations

import enum

import numpy as np

from . import _backend
from .errors import ContractError
from .grid import DenseGrid, as_plane


class ScanDirection(enum.IntEnum):
    TOWARD_LEFT = 0
    TOWARD_RIGHT = 1
    TOWARD_TOP = 2
    TOWARD_BOTTOM = 3


class Corner(str, enum.Enum):
    TOP_LEFT = "top-left"
    BOTTOM_RIGHT = "bottom-right"


def _scan(plane: np.ndarray, direction) -> np.ndarray:
    return _backend.kernels().scan_max(plane, int(direction))


def _pair(a, b, what):
    pa, pb = as_plane(a, what), as_plane(b, what)
    if pa.shape != pb.shape:
        raise ContractError(f"{what}: shape mismatch {pa.shape} vs {pb.shape}")
    return pa, pb


def scan_max(grid, direction: ScanDirection) -> DenseGrid:
    """Cumulative max along ``direction`` over a single-channel grid."""
    return DenseGrid.wrap(_scan(as_plane(grid, "scan_max input"), ScanDirection(direction))[None])


def center_pool(grid_h, grid_v) -> DenseGrid:
    """Row max of ``grid_h`` plus column max of ``grid_v`` at every cell.

    Each full-line max is realized as a rightward scan followed by a
    leftward one (resp. downward then upward).
    """
    h, v = _pair(grid_h, grid_v, "center_pool")
    row = _scan(_scan(h, ScanDirection.TOWARD_RIGHT), ScanDirection.TOWARD_LEFT)
    col = _scan(_scan(v, ScanDirection.TOWARD_BOTTOM), ScanDirection.TOWARD_TOP)
    return DenseGrid.wrap((row + col)[None])


def _rays(corner):
    corner = Corner(corner)
    if corner is Corner.TOP_LEFT:
        return ScanDirection.TOWARD_BOTTOM, ScanDirection.TOWARD_RIGHT
    return ScanDirection.TOWARD_TOP, ScanDirection.TOWARD_LEFT


def corner_pool(grid_v, grid_h, corner=Corner.TOP_LEFT) -> DenseGrid:
    """Vertical-ray max of ``grid_v`` plus horizontal-ray max of ``grid_h``."""
    v, h = _pair(grid_v, grid_h, "corner_pool")
    vertical, horizontal = _rays(corner)
    return DenseGrid.wrap((_scan(v, vertical) + _scan(h, horizontal))[None])


def cascade_corner_pool(grid_a, grid_b, corner=Corner.TOP_LEFT) -> DenseGrid:
    """Boundary max then interior max, for both boundary directions, summed.

    For a top-left corner ``grid_a`` is scanned rightward along the top
    boundary and then downward into the box; ``grid_b`` is scanned downward
    along the left boundary and then rightward. Pass the same grid twice
    when both branches share a feature map.
    """
    a, b = _pair(grid_a, grid_b, "cascade_corner_pool")
    vertical, horizontal = _rays(corner)
    first = _scan(_scan(a, horizontal), vertical)
    second = _scan(_scan(b, vertical), horizontal)
    return DenseGrid.wrap((first + second)[None])
