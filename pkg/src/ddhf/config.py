"""Pipeline configuration: detection range, grid shapes, thresholds, widths.

One frozen dataclass carries every knob the pipeline reads. Defaults follow
the reference operating point: score thresholds d=0.01 / s=0.25, sampling cap
N=18000, detection range x,y in [-54, 54] and z in [-5, 3], BEV strides
[1, 2, 4], three deformable decoder layers and one voxel fusion layer.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from .core import GridSpec
from .jsonio import dump, load
from .viewtrans import DepthBinSpec

WEIGHTS_MODES = ("seeded", "passthrough")


@dataclass(frozen=True)
class PipelineConfig:
    global_seed: int = 0
    x_range: tuple[float, float] = (-54.0, 54.0)
    y_range: tuple[float, float] = (-54.0, 54.0)
    z_range: tuple[float, float] = (-5.0, 3.0)
    # cells per axis; image branch doubles the lidar z resolution
    lidar_cells: tuple[int, int, int] = (48, 48, 8)
    image_cells: tuple[int, int, int] = (48, 48, 16)
    channels: int = 32
    d_state: int = 16
    d_thresh: float = 0.01
    s_thresh: float = 0.25
    safs_cap: int = 18000
    depth_min: float = 1.0
    depth_max: float = 54.0
    depth_count: int = 32
    k_easy: int = 100
    k_hard: int = 100
    k_classes: int = 3
    n_bev: int = 3
    m_vox: int = 1
    strides: tuple[int, ...] = (1, 2, 4)
    weights_mode: str = "seeded"

    def __post_init__(self):
        for name in ("x_range", "y_range", "z_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} must be ascending, got ({lo}, {hi})")
        lc, ic = self.lidar_cells, self.image_cells
        if len(lc) != 3 or len(ic) != 3:
            raise ValueError("grid cell counts must have three axes")
        if any(int(n) <= 0 for n in lc + ic):
            raise ValueError("grid cell counts must be positive")
        if lc[0] != ic[0] or lc[1] != ic[1]:
            raise ValueError("lidar and image grids must share x/y cell counts")
        if ic[2] != 2 * lc[2]:
            raise ValueError(
                f"image grid needs twice the lidar z cells, got {ic[2]} vs {lc[2]}"
            )
        # two sparse downsamplings in the voxel fusion stage
        if lc[0] % 4 != 0 or lc[1] % 4 != 0:
            raise ValueError("x/y cell counts must be divisible by 4")
        if self.channels < 4 or self.channels % 4 != 0:
            raise ValueError("channels must be a positive multiple of 4")
        if self.d_state < 1:
            raise ValueError("d_state must be >= 1")
        if not 0.0 < self.d_thresh < 1.0 or not 0.0 < self.s_thresh < 1.0:
            raise ValueError("score thresholds must lie in (0, 1)")
        if self.safs_cap < 1:
            raise ValueError("safs_cap must be >= 1")
        if not (self.depth_min > 0.0 and self.depth_max > self.depth_min):
            raise ValueError("depth bin range must satisfy 0 < min < max")
        if self.depth_count < 2:
            raise ValueError("depth_count must be >= 2")
        if min(self.k_easy, self.k_hard, self.k_classes) < 1:
            raise ValueError("k_easy, k_hard, k_classes must be >= 1")
        if self.n_bev < 1 or self.m_vox < 1:
            raise ValueError("decoder layer counts must be >= 1")
        if tuple(int(s) for s in self.strides) != (1, 2, 4):
            raise ValueError(f"strides must be (1, 2, 4), got {self.strides}")
        if self.weights_mode not in WEIGHTS_MODES:
            raise ValueError(f"weights_mode must be one of {WEIGHTS_MODES}")

    def lidar_grid(self) -> GridSpec:
        return _grid(self.x_range, self.y_range, self.z_range, self.lidar_cells)

    def image_grid(self) -> GridSpec:
        return _grid(self.x_range, self.y_range, self.z_range, self.image_cells)

    def depth_bins(self) -> DepthBinSpec:
        return DepthBinSpec(self.depth_min, self.depth_max, self.depth_count)

    def with_mode(self, mode: str) -> "PipelineConfig":
        return replace(self, weights_mode=mode)


def _grid(xr, yr, zr, cells) -> GridSpec:
    origin = (xr[0], yr[0], zr[0])
    spans = (xr[1] - xr[0], yr[1] - yr[0], zr[1] - zr[0])
    voxel = tuple(span / int(n) for span, n in zip(spans, cells))
    return GridSpec(origin=origin, voxel_size=voxel, extents=tuple(int(n) for n in cells))


_FIELD_KEYS = (
    "global_seed",
    "x_range",
    "y_range",
    "z_range",
    "lidar_cells",
    "image_cells",
    "channels",
    "d_state",
    "d_thresh",
    "s_thresh",
    "safs_cap",
    "depth_min",
    "depth_max",
    "depth_count",
    "k_easy",
    "k_hard",
    "k_classes",
    "n_bev",
    "m_vox",
    "strides",
    "weights_mode",
)

_TUPLE_KEYS = {"x_range", "y_range", "z_range", "lidar_cells", "image_cells", "strides"}


def config_to_dict(cfg: PipelineConfig) -> dict:
    out = {}
    for key in _FIELD_KEYS:
        val = getattr(cfg, key)
        out[key] = list(val) if key in _TUPLE_KEYS else val
    return out


def config_from_dict(data: dict) -> PipelineConfig:
    unknown = set(data) - set(_FIELD_KEYS)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for key, val in data.items():
        kwargs[key] = tuple(val) if key in _TUPLE_KEYS else val
    return PipelineConfig(**kwargs)


def save_config(cfg: PipelineConfig, path: str | Path) -> None:
    dump(config_to_dict(cfg), path)


def load_config(path: str | Path) -> PipelineConfig:
    return config_from_dict(load(path))
