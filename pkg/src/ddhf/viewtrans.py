"""Camera-to-3D transforms.

A small deterministic conv stack stands in for the image backbone and emits
features, per-pixel depth-bin distributions, and semantic scores. Those feed
two consumers sharing the same depth map: semantic-aware voxel selection
(project voxel centers, threshold on semantic and depth scores, cap with
farthest point sampling) and a lift-splat transform onto the BEV plane.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    CameraModel,
    FeatureMap,
    GridSpec,
    SparseVoxelSet,
    bev_map_for_grid,
    empty_voxel_set,
    init_param,
)
from .ops import conv2d, sigmoid, silu, softmax

FEATURE_STRIDE = 4  # two stride-2 convs


@dataclass(frozen=True)
class DepthBinSpec:
    """Uniform depth discretization over [d_min, d_max] into count bins."""

    d_min: float
    d_max: float
    count: int

    def __post_init__(self):
        if self.d_min <= 0:
            raise ValueError("DepthBinSpec: d_min must be > 0")
        if self.count < 2:
            raise ValueError("DepthBinSpec: count must be >= 2")
        if self.d_max <= self.d_min:
            raise ValueError("DepthBinSpec: d_max must exceed d_min")

    @property
    def width(self) -> float:
        return (self.d_max - self.d_min) / self.count

    def bin_of(self, depth: np.ndarray) -> np.ndarray:
        """Bin index per depth; values outside [d_min, d_max) fall out of range."""
        return np.floor((np.asarray(depth) - self.d_min) / self.width).astype(np.int64)

    def centers(self) -> np.ndarray:
        return self.d_min + (np.arange(self.count, dtype=np.float64) + 0.5) * self.width


@dataclass(frozen=True)
class ImageFeatureSet:
    """Per-camera encoder outputs at 1/stride of input resolution."""

    feats: tuple[np.ndarray, ...]  # each (h, w, C)
    depth: tuple[np.ndarray, ...]  # each (h, w, D), softmax-normalized rows
    sem: tuple[np.ndarray, ...]  # each (h, w) in [0, 1]
    stride: int = FEATURE_STRIDE

    def __post_init__(self):
        for dp in self.depth:
            sums = dp.sum(axis=-1)
            if np.any(np.abs(sums - 1.0) > 1e-5):
                raise ValueError("ImageFeatureSet: depth bins must sum to 1 per pixel")
        for sm in self.sem:
            if np.any(sm < 0) or np.any(sm > 1):
                raise ValueError("ImageFeatureSet: semantic scores must lie in [0, 1]")

    @property
    def cameras(self) -> int:
        return len(self.feats)


@dataclass(frozen=True)
class ImageEncoderWeights:
    conv1_k: np.ndarray  # (3, 3, 3, C)
    conv1_b: np.ndarray
    conv2_k: np.ndarray  # (3, 3, C, C)
    conv2_b: np.ndarray
    depth_w: np.ndarray  # (C, D)
    depth_b: np.ndarray
    sem_w: np.ndarray  # (C, 1)
    sem_b: np.ndarray


def init_image_encoder(
    name: str, c: int, depth_bins: int, global_seed: int
) -> ImageEncoderWeights:
    p = lambda suffix, shape: init_param(f"{name}.{suffix}", shape, global_seed)
    return ImageEncoderWeights(
        conv1_k=p("conv1.weight", (3, 3, 3, c)),
        conv1_b=p("conv1.bias", (c,)),
        conv2_k=p("conv2.weight", (3, 3, c, c)),
        conv2_b=p("conv2.bias", (c,)),
        depth_w=p("depth_head.weight", (c, depth_bins)),
        depth_b=p("depth_head.bias", (depth_bins,)),
        sem_w=p("sem_head.weight", (c, 1)),
        sem_b=p("sem_head.bias", (1,)),
    )


def encode_image(image: np.ndarray, w: ImageEncoderWeights) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One camera: (features (h, w, C), depth probs (h, w, D), semantics (h, w))."""
    if not np.all(np.isfinite(image)):
        raise ValueError("encode_image: image must be finite")
    f = silu(conv2d(image.astype(np.float32), w.conv1_k, w.conv1_b, stride=2))
    f = silu(conv2d(f, w.conv2_k, w.conv2_b, stride=2))
    depth = softmax((f @ w.depth_w + w.depth_b).astype(np.float64), axis=-1)
    sem = sigmoid((f @ w.sem_w + w.sem_b)[..., 0])
    return f.astype(np.float32), depth.astype(np.float32), sem.astype(np.float32)


def encode_images(images: list[np.ndarray], w: ImageEncoderWeights) -> ImageFeatureSet:
    parts = [encode_image(img, w) for img in images]
    return ImageFeatureSet(
        feats=tuple(p[0] for p in parts),
        depth=tuple(p[1] for p in parts),
        sem=tuple(p[2] for p in parts),
    )


# ---------------------------------------------------------------------------
# Projection and sampling
# ---------------------------------------------------------------------------

def bilinear_sample(grid: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sample grid (h, w, K) at fractional (v=row, u=col) with edge clamping."""
    h, w = grid.shape[:2]
    u = np.clip(u, 0.0, w - 1.0)
    v = np.clip(v, 0.0, h - 1.0)
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = (u - u0)[:, None]
    fv = (v - v0)[:, None]
    g = grid.reshape(h * w, -1).astype(np.float64)
    top = g[v0 * w + u0] * (1 - fu) + g[v0 * w + u1] * fu
    bot = g[v1 * w + u0] * (1 - fu) + g[v1 * w + u1] * fu
    return top * (1 - fv) + bot * fv


def project_points(
    points: np.ndarray, camera: CameraModel
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pinhole projection to pixel (u, v) plus camera-frame depth; u,v valid only
    where depth > 0."""
    cam = camera.world_to_cam(points)
    z = cam[:, 2]
    safe_z = np.where(z > 1e-9, z, 1.0)
    k = camera.intrinsics
    u = k[0, 0] * cam[:, 0] / safe_z + k[0, 2]
    v = k[1, 1] * cam[:, 1] / safe_z + k[1, 2]
    return u, v, z


def project_and_sample(
    centers: np.ndarray, camera: CameraModel, grid: np.ndarray, stride: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Project world points onto a (h, w, K) map sampled bilinearly.

    Points behind the camera or outside the image rectangle are invalid and
    get zero values. `stride` converts pixel coordinates to map coordinates.
    """
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    u, v, z = project_points(centers, camera)
    h_img, w_img = camera.image_size
    valid = (z > 1e-9) & (u >= 0) & (u <= w_img - 1) & (v >= 0) & (v <= h_img - 1)
    squeeze = grid.ndim == 2
    g = grid[:, :, None] if squeeze else grid
    vals = np.zeros((centers.shape[0], g.shape[2]), dtype=np.float64)
    if np.any(valid):
        vals[valid] = bilinear_sample(g, u[valid] / stride, v[valid] / stride)
    vals = vals.astype(np.float32)
    return (vals[:, 0] if squeeze else vals), valid


# ---------------------------------------------------------------------------
# Farthest point sampling
# ---------------------------------------------------------------------------

def fps(points: np.ndarray, n_target: int) -> np.ndarray:
    """Greedy max-min selection of n_target indices; first pick is index 0."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = points.shape[0]
    if n_target > n:
        raise ValueError(f"fps: target {n_target} exceeds point count {n}")
    if n_target < 1:
        raise ValueError("fps: target must be >= 1")
    # per-axis buffers; (dx^2 + dy^2) + dz^2 matches an axis-1 sum bit for bit
    x, y, z = (np.ascontiguousarray(points[:, k]) for k in range(3))
    sx, sy, sz = np.empty(n), np.empty(n), np.empty(n)

    def _sqdist(idx: int) -> np.ndarray:
        np.subtract(x, x[idx], out=sx)
        np.multiply(sx, sx, out=sx)
        np.subtract(y, y[idx], out=sy)
        np.multiply(sy, sy, out=sy)
        np.subtract(z, z[idx], out=sz)
        np.multiply(sz, sz, out=sz)
        np.add(sx, sy, out=sx)
        np.add(sx, sz, out=sx)
        return sx

    chosen = np.empty(n_target, dtype=np.int64)
    chosen[0] = 0
    dist = _sqdist(0).copy()
    for i in range(1, n_target):
        idx = int(np.argmax(dist))
        chosen[i] = idx
        np.minimum(dist, _sqdist(idx), out=dist)
    return chosen


# ---------------------------------------------------------------------------
# Semantic-aware voxel selection
# ---------------------------------------------------------------------------

def safs_select(
    grid: GridSpec,
    images: ImageFeatureSet,
    cameras: list[CameraModel],
    bins: DepthBinSpec,
    d_thresh: float,
    s_thresh: float,
    cap: int,
) -> SparseVoxelSet:
    """Select image voxels whose semantic and depth scores clear thresholds.

    Every voxel center is projected into each camera; the camera with the
    highest semantic score supplies the scores and features. v_d is the
    depth-distribution mass of the bin containing the projected depth; kept
    voxels carry feature = sampled image feature * v_d. If more than `cap`
    survive, farthest point sampling over voxel centers trims the set.
    """
    if not 0 <= d_thresh <= 1 or not 0 <= s_thresh <= 1:
        raise ValueError("safs_select: thresholds must lie in [0, 1]")
    nx, ny, nz = grid.extents
    coords = np.stack(
        np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"),
        axis=-1,
    ).reshape(-1, 3)
    centers = grid.centers(coords)
    n = coords.shape[0]
    c_width = images.feats[0].shape[2]

    best_sem = np.full(n, -1.0)
    best_vd = np.zeros(n)
    best_feat = np.zeros((n, c_width), dtype=np.float64)

    for cam_idx, cam in enumerate(cameras):
        u, v, z = project_points(centers, cam)
        h_img, w_img = cam.image_size
        valid = (z > 1e-9) & (u >= 0) & (u <= w_img - 1) & (v >= 0) & (v <= h_img - 1)
        kbin = bins.bin_of(z)
        valid &= (kbin >= 0) & (kbin < bins.count)
        if not np.any(valid):
            continue
        mu, mv = u[valid] / images.stride, v[valid] / images.stride
        sem = bilinear_sample(images.sem[cam_idx][:, :, None], mu, mv)[:, 0]
        depth_all = bilinear_sample(images.depth[cam_idx], mu, mv)
        vd = np.take_along_axis(depth_all, kbin[valid][:, None], axis=1)[:, 0]
        feat = bilinear_sample(images.feats[cam_idx], mu, mv)
        sel = np.where(valid)[0]
        better = sem > best_sem[sel]
        upd = sel[better]
        best_sem[upd] = sem[better]
        best_vd[upd] = vd[better]
        best_feat[upd] = feat[better]

    keep = (best_sem > s_thresh) & (best_vd > d_thresh)
    if not np.any(keep):
        return empty_voxel_set(grid, c_width)
    coords_k = coords[keep]
    feats_k = best_feat[keep] * best_vd[keep][:, None]
    if coords_k.shape[0] > cap:
        pick = fps(grid.centers(coords_k), cap)
        pick = np.sort(pick)  # keep grid order for deterministic downstream sorts
        coords_k, feats_k = coords_k[pick], feats_k[pick]
    return SparseVoxelSet(coords_k, feats_k.astype(np.float32), grid)


# ---------------------------------------------------------------------------
# Lift-splat to BEV
# ---------------------------------------------------------------------------

def lss_splat(
    images: ImageFeatureSet,
    cameras: list[CameraModel],
    bins: DepthBinSpec,
    bev: GridSpec,
) -> FeatureMap:
    """Distribute pixel features along their depth bins and sum-pool into BEV.

    Each feature pixel contributes (feature * bin probability) at the 3D
    point unprojected through that bin's center depth; contributions landing
    in the same BEV cell are summed, conserving total feature mass in range.
    """
    out = bev_map_for_grid(bev, images.feats[0].shape[2])
    acc = np.zeros_like(out.data, dtype=np.float64)
    centers_d = bins.centers()
    for cam_idx, cam in enumerate(cameras):
        f = images.feats[cam_idx].astype(np.float64)  # (h, w, C)
        p = images.depth[cam_idx].astype(np.float64)  # (h, w, D)
        h, w, c_width = f.shape
        jj, ii = np.meshgrid(np.arange(w), np.arange(h))
        u = (jj.ravel() * images.stride).astype(np.float64)
        v = (ii.ravel() * images.stride).astype(np.float64)
        k = cam.intrinsics
        rays = np.stack(
            [(u - k[0, 2]) / k[0, 0], (v - k[1, 2]) / k[1, 1], np.ones_like(u)], axis=1
        )
        for kbin in range(bins.count):
            pts_cam = rays * centers_d[kbin]
            pts_world = cam.cam_to_world(pts_cam)
            cx = np.floor((pts_world[:, 0] - bev.origin[0]) / bev.voxel_size[0]).astype(np.int64)
            cy = np.floor((pts_world[:, 1] - bev.origin[1]) / bev.voxel_size[1]).astype(np.int64)
            ok = (cx >= 0) & (cx < bev.nx) & (cy >= 0) & (cy < bev.ny)
            if not np.any(ok):
                continue
            contrib = f.reshape(-1, c_width)[ok] * p.reshape(-1, bins.count)[ok, kbin : kbin + 1]
            np.add.at(acc, (cy[ok], cx[ok]), contrib)
    return out.with_data(acc.astype(np.float32))
