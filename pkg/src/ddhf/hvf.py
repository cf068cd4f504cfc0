"""Homogeneous voxel fusion.

Two sparse branches (LiDAR, image) are encoded per scale by intra-modal
bidirectional scan blocks over Hilbert-ordered sequences, fused by a
cross-modal block over the merged two-modality sequence, and carried through
a three-scale U shape (strides 1, 2, 4) built from sparse stride-2
convolutions with skip additions on the way back up. LiDAR z indices are
doubled before merging so both modalities share one coordinate frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import GridSpec, SparseVoxelSet, init_param
from .curve import bits_for_extents, hilbert_index, hilbert_sort
from .ops import silu
from .ssm import SsmBlockWeights, bidirectional_block, init_ssm_block

TAG_LIDAR = 0
TAG_IMAGE = 1

N_SCALES = 3  # strides 1, 2, 4


# ---------------------------------------------------------------------------
# Merge and split
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MergedSequence:
    """Both modalities' voxels as one curve-ordered sequence.

    Coincident lifted coords stay distinct elements (LiDAR sorts first);
    tags plus original indices make the split exact.
    """

    feats: np.ndarray  # (n, C) in sequence order
    lifted: np.ndarray  # (n, 3) shared-frame coords (LiDAR z doubled)
    tags: np.ndarray  # (n,) TAG_LIDAR / TAG_IMAGE
    orig_idx: np.ndarray  # (n,) row in the source set
    lidar: SparseVoxelSet
    image: SparseVoxelSet

    @property
    def n(self) -> int:
        return self.feats.shape[0]


def _check_aligned(lidar_grid: GridSpec, image_grid: GridSpec) -> None:
    if (
        lidar_grid.nx != image_grid.nx
        or lidar_grid.ny != image_grid.ny
        or image_grid.nz != 2 * lidar_grid.nz
    ):
        raise ValueError(
            "cv_merge: grids must align in x,y with image z extent = 2x LiDAR's"
        )


def cv_merge(v_lidar: SparseVoxelSet, v_image: SparseVoxelSet) -> MergedSequence:
    """Interleave both sets in Hilbert order over the lifted coordinate frame."""
    _check_aligned(v_lidar.grid, v_image.grid)
    lifted_l = v_lidar.coords * np.array([1, 1, 2], dtype=np.int64)
    lifted = np.concatenate([lifted_l, v_image.coords], axis=0)
    tags = np.concatenate(
        [
            np.full(v_lidar.n, TAG_LIDAR, dtype=np.int64),
            np.full(v_image.n, TAG_IMAGE, dtype=np.int64),
        ]
    )
    orig = np.concatenate(
        [np.arange(v_lidar.n, dtype=np.int64), np.arange(v_image.n, dtype=np.int64)]
    )
    feats = np.concatenate([v_lidar.feats, v_image.feats], axis=0)
    if lifted.shape[0]:
        b = bits_for_extents(v_image.grid.extents)
        keys = hilbert_index(lifted[:, 0], lifted[:, 1], lifted[:, 2], b)
        order = np.lexsort((tags, keys))  # primary: curve key; tie: LiDAR first
    else:
        order = np.zeros(0, dtype=np.int64)
    return MergedSequence(
        feats[order], lifted[order], tags[order], orig[order], v_lidar, v_image
    )


def cv_split(seq: MergedSequence) -> tuple[SparseVoxelSet, SparseVoxelSet]:
    """Exact inverse of cv_merge: original coords and grids, sequence features."""
    is_l = seq.tags == TAG_LIDAR
    feats_l = np.zeros_like(seq.lidar.feats)
    feats_i = np.zeros_like(seq.image.feats)
    feats_l[seq.orig_idx[is_l]] = seq.feats[is_l]
    feats_i[seq.orig_idx[~is_l]] = seq.feats[~is_l]
    return seq.lidar.with_feats(feats_l), seq.image.with_feats(feats_i)


# ---------------------------------------------------------------------------
# Sparse stride-2 convolution and its transpose
# ---------------------------------------------------------------------------

def coarser_grid(grid: GridSpec) -> GridSpec:
    return GridSpec(
        grid.origin,
        tuple(s * 2 for s in grid.voxel_size),
        tuple(math.ceil(e / 2) for e in grid.extents),
    )


def _flat_lookup(coords: np.ndarray, extents: tuple[int, int, int]):
    """Sorted flat keys + row order for membership queries via searchsorted."""
    flat = np.ravel_multi_index(coords.T, extents)
    order = np.argsort(flat, kind="stable")
    return flat[order], order


def sparse_down(
    v: SparseVoxelSet, kernel: np.ndarray, bias: np.ndarray
) -> SparseVoxelSet:
    """Stride-2 sparse 3x3x3 convolution.

    Output occupancy is the floor-halved input occupancy; each output voxel
    at q gathers input voxels at 2q + t for t in {-1,0,1}^3 and applies
    SiLU(sum of kernel-weighted features + bias). kernel: (3,3,3,Cin,Cout).
    """
    grid_out = coarser_grid(v.grid)
    cout = kernel.shape[4]
    if v.n == 0:
        return SparseVoxelSet(
            np.zeros((0, 3), dtype=np.int64),
            np.zeros((0, cout), dtype=np.float32),
            grid_out,
        )
    half = v.coords // 2
    flat_out = np.ravel_multi_index(half.T, grid_out.extents)
    uniq = np.unique(flat_out)
    out_coords = np.stack(np.unravel_index(uniq, grid_out.extents), axis=1).astype(np.int64)

    flat_sorted, row_order = _flat_lookup(v.coords, v.grid.extents)
    feats = v.feats.astype(np.float64)
    ext = np.asarray(v.grid.extents, dtype=np.int64)
    acc = np.tile(bias.astype(np.float64), (out_coords.shape[0], 1))
    for tx in (-1, 0, 1):
        for ty in (-1, 0, 1):
            for tz in (-1, 0, 1):
                nb = out_coords * 2 + np.array([tx, ty, tz], dtype=np.int64)
                ok = np.all((nb >= 0) & (nb < ext), axis=1)
                if not np.any(ok):
                    continue
                nb_flat = np.ravel_multi_index(nb[ok].T, v.grid.extents)
                pos = np.searchsorted(flat_sorted, nb_flat)
                pos = np.minimum(pos, flat_sorted.size - 1)
                hit = flat_sorted[pos] == nb_flat
                rows_out = np.where(ok)[0][hit]
                rows_in = row_order[pos[hit]]
                w = kernel[tx + 1, ty + 1, tz + 1].astype(np.float64)
                acc[rows_out] += feats[rows_in] @ w
    return SparseVoxelSet(out_coords, silu(acc).astype(np.float32), grid_out)


def sparse_up(
    v_coarse: SparseVoxelSet, target: SparseVoxelSet, kernel: np.ndarray
) -> SparseVoxelSet:
    """Transposed stride-2 conv scattered onto a recorded finer occupancy.

    Each fine voxel p receives its single parent q = floor(p/2) weighted by
    kernel[p - 2q]; the result is added to target's features (skip path).
    kernel: (2,2,2,Cin,Cout) with Cout == target channel width.
    """
    fine_as_coarse = tuple(math.ceil(e / 2) for e in target.grid.extents)
    if fine_as_coarse != v_coarse.grid.extents:
        raise ValueError("sparse_up: target occupancy does not match the coarse grid")
    if target.n == 0 or v_coarse.n == 0:
        return target
    parents = target.coords // 2
    offsets = target.coords - parents * 2  # in {0,1}^3
    flat_sorted, row_order = _flat_lookup(v_coarse.coords, v_coarse.grid.extents)
    parent_flat = np.ravel_multi_index(parents.T, v_coarse.grid.extents)
    pos = np.searchsorted(flat_sorted, parent_flat)
    pos = np.minimum(pos, flat_sorted.size - 1)
    hit = flat_sorted[pos] == parent_flat

    add = np.zeros(target.feats.shape, dtype=np.float64)
    cfeats = v_coarse.feats.astype(np.float64)
    rows_fine = np.where(hit)[0]
    rows_coarse = row_order[pos[hit]]
    off_hit = offsets[hit]
    for tx in (0, 1):
        for ty in (0, 1):
            for tz in (0, 1):
                sel = np.all(off_hit == (tx, ty, tz), axis=1)
                if not np.any(sel):
                    continue
                w = kernel[tx, ty, tz].astype(np.float64)
                add[rows_fine[sel]] = cfeats[rows_coarse[sel]] @ w
    return target.with_feats((target.feats.astype(np.float64) + add).astype(np.float32))


# ---------------------------------------------------------------------------
# Full two-branch encoder
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HvfWeights:
    iv_lidar: tuple[SsmBlockWeights, ...]  # one per scale
    iv_image: tuple[SsmBlockWeights, ...]
    cv: tuple[SsmBlockWeights, ...]
    down_lidar: tuple[tuple[np.ndarray, np.ndarray], ...]  # (kernel, bias) per step
    down_image: tuple[tuple[np.ndarray, np.ndarray], ...]
    up_lidar: tuple[np.ndarray, ...]
    up_image: tuple[np.ndarray, ...]

    def __post_init__(self):
        if not (
            len(self.iv_lidar) == len(self.iv_image) == len(self.cv) == N_SCALES
        ):
            raise ValueError(f"HvfWeights: expected {N_SCALES} scales")

    def identity_configured(self) -> "HvfWeights":
        """Identity scan blocks and zero upsample kernels: features pass through."""
        return HvfWeights(
            tuple(w.identity_configured() for w in self.iv_lidar),
            tuple(w.identity_configured() for w in self.iv_image),
            tuple(w.identity_configured() for w in self.cv),
            self.down_lidar,
            self.down_image,
            tuple(np.zeros_like(k) for k in self.up_lidar),
            tuple(np.zeros_like(k) for k in self.up_image),
        )


def init_hvf(name: str, c: int, d_state: int, global_seed: int) -> HvfWeights:
    p = lambda suffix, shape: init_param(f"{name}.{suffix}", shape, global_seed)
    down = lambda branch, s: (
        p(f"down_{branch}{s}.weight", (3, 3, 3, c, c)),
        p(f"down_{branch}{s}.bias", (c,)),
    )
    return HvfWeights(
        iv_lidar=tuple(
            init_ssm_block(f"{name}.iv_lidar{s}", c, d_state, global_seed)
            for s in range(N_SCALES)
        ),
        iv_image=tuple(
            init_ssm_block(f"{name}.iv_image{s}", c, d_state, global_seed)
            for s in range(N_SCALES)
        ),
        cv=tuple(
            init_ssm_block(f"{name}.cv{s}", c, d_state, global_seed)
            for s in range(N_SCALES)
        ),
        down_lidar=tuple(down("lidar", s) for s in range(N_SCALES - 1)),
        down_image=tuple(down("image", s) for s in range(N_SCALES - 1)),
        up_lidar=tuple(
            p(f"up_lidar{s}.weight", (2, 2, 2, c, c)) for s in range(N_SCALES - 1)
        ),
        up_image=tuple(
            p(f"up_image{s}.weight", (2, 2, 2, c, c)) for s in range(N_SCALES - 1)
        ),
    )


def iv_mamba(v: SparseVoxelSet, w: SsmBlockWeights, chunk: int = 256) -> SparseVoxelSet:
    """Intra-modal block: scan the voxel features in Hilbert order."""
    if v.n == 0:
        return v
    perm = hilbert_sort(v).permutation
    seq = bidirectional_block(v.feats[perm], w, chunk)
    feats = np.empty_like(seq)
    feats[perm] = seq
    return v.with_feats(feats)


def cv_mamba(
    v_lidar: SparseVoxelSet,
    v_image: SparseVoxelSet,
    w: SsmBlockWeights,
    chunk: int = 256,
) -> tuple[SparseVoxelSet, SparseVoxelSet]:
    """Cross-modal block: one scan over the merged two-modality sequence."""
    seq = cv_merge(v_lidar, v_image)
    if seq.n == 0:
        return v_lidar, v_image
    out = bidirectional_block(seq.feats, w, chunk)
    return cv_split(
        MergedSequence(out, seq.lifted, seq.tags, seq.orig_idx, seq.lidar, seq.image)
    )


def hvf_forward(
    v_lidar: SparseVoxelSet, v_image: SparseVoxelSet, w: HvfWeights
) -> tuple[SparseVoxelSet, SparseVoxelSet]:
    """Three scales of IV + CV blocks with downsampling between scales, then
    upsampling back to stride 1 against the recorded skip occupancies."""
    skips: list[tuple[SparseVoxelSet, SparseVoxelSet]] = []
    vl, vi = v_lidar, v_image
    for s in range(N_SCALES):
        vl = iv_mamba(vl, w.iv_lidar[s])
        vi = iv_mamba(vi, w.iv_image[s])
        vl, vi = cv_mamba(vl, vi, w.cv[s])
        skips.append((vl, vi))
        if s < N_SCALES - 1:
            vl = sparse_down(vl, *w.down_lidar[s])
            vi = sparse_down(vi, *w.down_image[s])
    for s in range(N_SCALES - 2, -1, -1):
        skip_l, skip_i = skips[s]
        vl = sparse_up(vl, skip_l, w.up_lidar[s])
        vi = sparse_up(vi, skip_i, w.up_image[s])
    return vl, vi
