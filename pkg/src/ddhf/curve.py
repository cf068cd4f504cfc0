"""Serialization orders for scans.

3D Hilbert-curve indices (Skilling's transform on the bit-transpose form)
order sparse voxels so that sequence neighbors are spatial neighbors; dense
BEV maps use four raster orders (row/column, forward/reverse).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import SparseVoxelSet

MAX_BITS = 20

_ONE = np.uint64(1)


def _axes_to_transpose(x: np.ndarray, bits: int) -> np.ndarray:
    """Skilling's AxesToTranspose, vectorized over rows of x (n, d) uint64."""
    x = x.copy()
    d = x.shape[1]
    q = _ONE << np.uint64(bits - 1)
    while q > _ONE:
        p = q - _ONE
        for i in range(d):
            has = (x[:, i] & q) != 0
            x[has, 0] ^= p
            t = (x[~has, 0] ^ x[~has, i]) & p
            x[~has, 0] ^= t
            x[~has, i] ^= t
        q >>= _ONE
    # Gray encode
    for i in range(1, d):
        x[:, i] ^= x[:, i - 1]
    t = np.zeros(x.shape[0], dtype=np.uint64)
    q = _ONE << np.uint64(bits - 1)
    while q > _ONE:
        mask = (x[:, d - 1] & q) != 0
        t[mask] ^= q - _ONE
        q >>= _ONE
    for i in range(d):
        x[:, i] ^= t
    return x


def _interleave(x: np.ndarray, bits: int) -> np.ndarray:
    """Pack the transpose form into a single index, MSB-first across axes."""
    h = np.zeros(x.shape[0], dtype=np.uint64)
    for j in range(bits - 1, -1, -1):
        for i in range(x.shape[1]):
            h = (h << _ONE) | ((x[:, i] >> np.uint64(j)) & _ONE)
    return h


def hilbert_index(
    x: np.ndarray | int, y: np.ndarray | int, z: np.ndarray | int, bits: int
) -> np.ndarray | int:
    """Hilbert-curve index of 3D cells; bijective over [0, 2^bits)^3.

    Accepts scalars or equal-length arrays. Consecutive indices map to
    face-adjacent cells (L1 distance 1).
    """
    if not 1 <= bits <= MAX_BITS:
        raise ValueError(f"hilbert_index: bits must be in [1, {MAX_BITS}]")
    scalar = np.isscalar(x)
    coords = np.stack(
        [np.atleast_1d(np.asarray(c)) for c in (x, y, z)], axis=1
    )
    if np.any(coords < 0) or np.any(coords >= (1 << bits)):
        raise ValueError(f"hilbert_index: coordinate out of range for bits={bits}")
    h = _interleave(_axes_to_transpose(coords.astype(np.uint64), bits), bits)
    return int(h[0]) if scalar else h


@dataclass(frozen=True)
class CurveOrder:
    """A serialization order: permutation[k] = element visited at position k."""

    order_bits: int
    permutation: np.ndarray

    def __post_init__(self):
        perm = np.ascontiguousarray(self.permutation, dtype=np.int64)
        n = perm.shape[0]
        if n and (np.sort(perm) != np.arange(n)).any():
            raise ValueError("CurveOrder: permutation is not a bijection on [0, n)")
        perm.flags.writeable = False
        object.__setattr__(self, "permutation", perm)


def bits_for_extents(extents: tuple[int, int, int]) -> int:
    return max(1, math.ceil(math.log2(max(extents))))


def hilbert_sort(v: SparseVoxelSet) -> CurveOrder:
    """Order of voxel indices along the Hilbert curve covering the grid."""
    b = bits_for_extents(v.grid.extents)
    if v.n == 0:
        return CurveOrder(b, np.zeros(0, dtype=np.int64))
    keys = hilbert_index(v.coords[:, 0], v.coords[:, 1], v.coords[:, 2], b)
    return CurveOrder(b, np.argsort(keys, kind="stable").astype(np.int64))


@dataclass(frozen=True)
class ScanSet2D:
    """Four flattening orders of an H x W map (permutations of [0, H*W))."""

    row_fwd: np.ndarray
    row_rev: np.ndarray
    col_fwd: np.ndarray
    col_rev: np.ndarray

    def all(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.row_fwd, self.row_rev, self.col_fwd, self.col_rev


def scan_orders_2d(h: int, w: int) -> ScanSet2D:
    if h < 1 or w < 1:
        raise ValueError("scan_orders_2d: H and W must be >= 1")
    row = np.arange(h * w, dtype=np.int64)
    col = row.reshape(h, w).T.ravel().copy()
    return ScanSet2D(row, row[::-1].copy(), col, col[::-1].copy())


def scan_flatten(data: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """Flatten (H, W, C) into (H*W, C) visiting cells in perm order."""
    h, w, c = data.shape
    return data.reshape(h * w, c)[perm]


def cross_merge_2d(
    outputs: tuple[np.ndarray, ...], scans: ScanSet2D, h: int, w: int
) -> np.ndarray:
    """Scatter four scanned sequences back to 2D via each scan's inverse; sum."""
    perms = scans.all()
    if len(outputs) != 4:
        raise ValueError("cross_merge_2d: expected exactly 4 sequences")
    c = outputs[0].shape[1]
    acc = np.zeros((h * w, c), dtype=np.float64)
    for seq, perm in zip(outputs, perms):
        if seq.shape != (h * w, c):
            raise ValueError("cross_merge_2d: sequence shape mismatch")
        back = np.empty((h * w, c), dtype=np.float64)
        back[perm] = seq
        acc += back
    return acc.reshape(h, w, c).astype(np.float32)
