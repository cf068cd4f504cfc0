"""Core containers, deterministic PRNG/param init, camera geometry, voxelizer, tensor I/O.

Everything downstream builds on the types here. All float tensors are
row-major float32; all randomness flows through splitmix64 so that any
(name, shape, seed) triple reproduces identical bytes on every platform.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

VOXEL_FEATURE_DIM = 5  # (dx, dy, dz offsets from center, mean intensity, count)


# ---------------------------------------------------------------------------
# splitmix64 PRNG
# ---------------------------------------------------------------------------

def prng_next(state: int) -> tuple[int, float]:
    """Advance one splitmix64 step; returns (new_state, uniform in [0, 1))."""
    state = (state + _GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    z = z ^ (z >> 31)
    return state, (z >> 11) * 2.0**-53


def prng_fill(state: int, count: int) -> tuple[int, np.ndarray]:
    """Vectorized splitmix64: `count` uniform draws, bit-identical to prng_next chains."""
    steps = np.arange(1, count + 1, dtype=np.uint64)
    s = np.uint64(state) + steps * np.uint64(_GAMMA)
    z = s
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    z = z ^ (z >> np.uint64(31))
    out = (z >> np.uint64(11)).astype(np.float64) * 2.0**-53
    final = (state + count * _GAMMA) & MASK64
    return final, out


def fnv1a64(name: str) -> int:
    """FNV-1a 64-bit hash of a UTF-8 string."""
    h = _FNV_OFFSET
    for byte in name.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & MASK64
    return h


def init_param(name: str, shape: tuple[int, ...], global_seed: int) -> np.ndarray:
    """Deterministic parameter tensor seeded by FNV-1a(name) XOR global_seed.

    Weights are uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)] with fan_in
    taken from the last dim. Names ending in ".bias" are zero-initialized.
    Adding parameters elsewhere never shifts this tensor's values.
    """
    shape = tuple(int(d) for d in shape)
    if len(shape) == 0:
        raise ValueError("init_param: shape must be non-empty")
    if any(d <= 0 for d in shape):
        raise ValueError(f"init_param: zero-sized dim in shape {shape}")
    if name.endswith(".bias"):
        return np.zeros(shape, dtype=np.float32)
    seed = fnv1a64(name) ^ (global_seed & MASK64)
    _, draws = prng_fill(seed, int(np.prod(shape)))
    bound = 1.0 / math.sqrt(shape[-1])
    return ((draws * 2.0 - 1.0) * bound).astype(np.float32).reshape(shape)


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned voxel grid: world origin, per-axis cell size, cell counts."""

    origin: tuple[float, float, float]
    voxel_size: tuple[float, float, float]
    extents: tuple[int, int, int]

    def __post_init__(self):
        if any(s <= 0 for s in self.voxel_size):
            raise ValueError("GridSpec: voxel_size components must be > 0")
        if any(e <= 0 for e in self.extents):
            raise ValueError("GridSpec: extents components must be > 0")

    @property
    def nx(self) -> int:
        return self.extents[0]

    @property
    def ny(self) -> int:
        return self.extents[1]

    @property
    def nz(self) -> int:
        return self.extents[2]

    def centers(self, coords: np.ndarray) -> np.ndarray:
        """World coordinates of voxel centers for integer coords (n, 3)."""
        o = np.asarray(self.origin, dtype=np.float64)
        s = np.asarray(self.voxel_size, dtype=np.float64)
        return o + (coords.astype(np.float64) + 0.5) * s

    def point_coords(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Integer cell indices for points (n, 3) plus an in-range mask."""
        o = np.asarray(self.origin, dtype=np.float64)
        s = np.asarray(self.voxel_size, dtype=np.float64)
        idx = np.floor((points[:, :3].astype(np.float64) - o) / s).astype(np.int64)
        ext = np.asarray(self.extents, dtype=np.int64)
        mask = np.all((idx >= 0) & (idx < ext), axis=1)
        return idx, mask


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: 3x3 intrinsics, 4x4 world-to-camera extrinsics."""

    intrinsics: np.ndarray
    extrinsics: np.ndarray
    image_size: tuple[int, int]  # (height, width) in pixels

    def __post_init__(self):
        k = np.asarray(self.intrinsics, dtype=np.float64)
        e = np.asarray(self.extrinsics, dtype=np.float64)
        if k.shape != (3, 3) or k[2, 2] != 1.0:
            raise ValueError("CameraModel: intrinsics must be 3x3 with [2,2] == 1")
        if e.shape != (4, 4) or not np.array_equal(e[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError("CameraModel: extrinsics must be 4x4 with bottom row (0,0,0,1)")
        object.__setattr__(self, "intrinsics", k)
        object.__setattr__(self, "extrinsics", e)

    def world_to_cam(self, points: np.ndarray) -> np.ndarray:
        """Transform world points (n, 3) into camera frame (n, 3)."""
        p = points.astype(np.float64)
        return p @ self.extrinsics[:3, :3].T + self.extrinsics[:3, 3]

    def cam_to_world(self, points: np.ndarray) -> np.ndarray:
        rot = self.extrinsics[:3, :3]
        t = self.extrinsics[:3, 3]
        return (points.astype(np.float64) - t) @ rot


# ---------------------------------------------------------------------------
# Sparse voxel container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SparseVoxelSet:
    """Occupied voxels of a grid: integer coords (n, 3) with features (n, C)."""

    coords: np.ndarray
    feats: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        coords = np.ascontiguousarray(self.coords, dtype=np.int64).reshape(-1, 3)
        feats = np.ascontiguousarray(self.feats, dtype=np.float32)
        if feats.ndim != 2 or feats.shape[0] != coords.shape[0]:
            raise ValueError("SparseVoxelSet: feats must be (n, C) matching coords")
        if coords.shape[0]:
            ext = np.asarray(self.grid.extents, dtype=np.int64)
            if coords.min() < 0 or np.any(coords >= ext):
                raise ValueError("SparseVoxelSet: coords outside grid extents")
            flat = np.ravel_multi_index(coords.T, self.grid.extents)
            if np.unique(flat).size != coords.shape[0]:
                raise ValueError("SparseVoxelSet: duplicate coords")
        coords.flags.writeable = False
        feats.flags.writeable = False
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "feats", feats)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def channels(self) -> int:
        return self.feats.shape[1]

    def with_feats(self, feats: np.ndarray) -> "SparseVoxelSet":
        """Same occupancy, new per-voxel features."""
        return SparseVoxelSet(self.coords, feats, self.grid)

    def centers(self) -> np.ndarray:
        return self.grid.centers(self.coords)


def empty_voxel_set(grid: GridSpec, channels: int) -> SparseVoxelSet:
    return SparseVoxelSet(
        np.zeros((0, 3), dtype=np.int64), np.zeros((0, channels), dtype=np.float32), grid
    )


def voxelize(points: np.ndarray, grid: GridSpec) -> SparseVoxelSet:
    """Group (x, y, z, intensity) points into occupied voxels.

    Per-voxel feature: mean offsets from the voxel center, mean intensity,
    and point count. Points outside the grid are dropped; the result is
    independent of input point order.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 4)
    if points.shape[0] == 0:
        return empty_voxel_set(grid, VOXEL_FEATURE_DIM)
    idx, mask = grid.point_coords(points[:, :3])
    idx, pts = idx[mask], points[mask]
    if idx.shape[0] == 0:
        return empty_voxel_set(grid, VOXEL_FEATURE_DIM)

    flat = np.ravel_multi_index(idx.T, grid.extents)
    uniq, inverse, counts = np.unique(flat, return_inverse=True, return_counts=True)
    coords = np.stack(np.unravel_index(uniq, grid.extents), axis=1).astype(np.int64)

    offsets = pts[:, :3] - grid.centers(idx)
    sums = np.zeros((uniq.size, 4), dtype=np.float64)
    np.add.at(sums, inverse, np.concatenate([offsets, pts[:, 3:4]], axis=1))
    means = sums / counts[:, None]
    feats = np.concatenate([means, counts[:, None].astype(np.float64)], axis=1)
    return SparseVoxelSet(coords, feats.astype(np.float32), grid)


# ---------------------------------------------------------------------------
# Dense BEV feature map
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureMap:
    """Dense top-down feature grid: data[row, col, channel], row = y, col = x."""

    data: np.ndarray  # (H, W, C) float32
    origin: tuple[float, float]  # world (x, y) of the map's low corner
    cell_size: tuple[float, float]

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ValueError("FeatureMap: data must be (H, W, C)")
        if not np.all(np.isfinite(data)):
            raise ValueError("FeatureMap: non-finite values")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def h(self) -> int:
        return self.data.shape[0]

    @property
    def w(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def with_data(self, data: np.ndarray) -> "FeatureMap":
        return FeatureMap(data, self.origin, self.cell_size)

    def cell_centers(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """World (x, y) centers for (row, col) cells."""
        x = self.origin[0] + (np.asarray(cols, dtype=np.float64) + 0.5) * self.cell_size[0]
        y = self.origin[1] + (np.asarray(rows, dtype=np.float64) + 0.5) * self.cell_size[1]
        return np.stack([x, y], axis=-1)


def bev_map_for_grid(grid: GridSpec, channels: int) -> FeatureMap:
    """Zero map over a 3D grid's x/y footprint (rows = y cells, cols = x)."""
    return FeatureMap(
        np.zeros((grid.ny, grid.nx, channels), dtype=np.float32),
        (grid.origin[0], grid.origin[1]),
        (grid.voxel_size[0], grid.voxel_size[1]),
    )


# ---------------------------------------------------------------------------
# Binary tensor container
# ---------------------------------------------------------------------------

_MAGIC = b"DDHF"


def save_tensor(path: str | Path, arr: np.ndarray) -> None:
    """Write a float32 tensor: magic, version, dtype tag, dims (u64), LE payload."""
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    header = _MAGIC + struct.pack("<III", 1, 0, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    Path(path).write_bytes(header + arr.astype("<f4").tobytes())


def load_tensor(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    version, dtype, ndim = struct.unpack_from("<III", raw, 4)
    if version != 1:
        raise ValueError(f"{path}: unsupported version {version}")
    if dtype != 0:
        raise ValueError(f"{path}: unsupported dtype tag {dtype}")
    dims = struct.unpack_from(f"<{ndim}Q", raw, 16)
    payload = raw[16 + 8 * ndim :]
    n = int(np.prod(dims)) if ndim else 1
    data = np.frombuffer(payload, dtype="<f4", count=n)
    return data.reshape(dims).astype(np.float32)
