"""Homogeneous BEV fusion.

Voxel branches are collapsed to BEV by channelwise pillar max, concatenated
with the dense LiDAR/LSS maps, and fused by two scan blocks: an intra-modal
four-direction scan (SS2D) per modality, then a cross-modal block whose scan
parameters for both modalities are generated jointly from the concatenated
maps and whose outputs are blended by complementary gates summing to one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FeatureMap, SparseVoxelSet, init_param
from .curve import ScanSet2D, cross_merge_2d, scan_flatten, scan_orders_2d
from .ops import conv2d, layer_norm, silu
from .ssm import ScanParams, selective_scan, softplus_delta

N_DIRECTIONS = 4


def sparse_height_compress(v: SparseVoxelSet) -> FeatureMap:
    """Channelwise max over each BEV pillar's occupied voxels; empty pillars 0."""
    grid = v.grid
    acc = np.full((grid.ny, grid.nx, v.channels), -np.inf, dtype=np.float64)
    if v.n:
        np.maximum.at(acc, (v.coords[:, 1], v.coords[:, 0]), v.feats.astype(np.float64))
    acc[~np.isfinite(acc)] = 0.0
    return FeatureMap(
        acc.astype(np.float32),
        (grid.origin[0], grid.origin[1]),
        (grid.voxel_size[0], grid.voxel_size[1]),
    )


def _ss2d(
    x: np.ndarray,
    a: np.ndarray,
    dir_params: list[tuple[np.ndarray, np.ndarray, np.ndarray]],
    norm_scale: np.ndarray,
    norm_shift: np.ndarray,
    scans: ScanSet2D,
) -> np.ndarray:
    """Four-direction scan of x (H, W, C): flatten per direction, scan with that
    direction's (b, c, delta) maps, LayerNorm, scatter back, and sum."""
    h, w, _ = x.shape
    outs = []
    for k, perm in enumerate(scans.all()):
        bmap, cmap, dtmap = dir_params[k]
        params = ScanParams(
            scan_flatten(bmap, perm), scan_flatten(cmap, perm), scan_flatten(dtmap, perm)
        )
        y = selective_scan(scan_flatten(x, perm), a, params)
        outs.append(layer_norm(y, norm_scale[k], norm_shift[k]))
    return cross_merge_2d(tuple(outs), scans, h, w)


# ---------------------------------------------------------------------------
# Intra-modal BEV block
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IbMambaWeights:
    a: np.ndarray  # (C, d_state), negative
    in_w: np.ndarray
    in_b: np.ndarray
    b_w: np.ndarray  # (C, d_state)
    c_w: np.ndarray
    dt_w: np.ndarray  # (C, C)
    dt_b: np.ndarray
    norm_scale: np.ndarray  # (4, C)
    norm_shift: np.ndarray
    y_w: np.ndarray
    y_b: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray

    def identity_configured(self) -> "IbMambaWeights":
        z = np.zeros_like
        return IbMambaWeights(
            self.a, self.in_w, self.in_b, self.b_w, self.c_w, self.dt_w, self.dt_b,
            self.norm_scale, self.norm_shift,
            z(self.y_w), z(self.y_b), z(self.out_w), z(self.out_b),
        )


def init_ib_mamba(name: str, c: int, d_state: int, global_seed: int) -> IbMambaWeights:
    from .ssm import init_dt_bias

    p = lambda suffix, shape: init_param(f"{name}.{suffix}", shape, global_seed)
    return IbMambaWeights(
        a=-np.tile(np.arange(1, d_state + 1, dtype=np.float32), (c, 1)),
        in_w=p("in_proj.weight", (c, c)),
        in_b=p("in_proj.bias", (c,)),
        b_w=p("b_proj.weight", (c, d_state)),
        c_w=p("c_proj.weight", (c, d_state)),
        dt_w=p("dt_proj.weight", (c, c)),
        dt_b=init_dt_bias(f"{name}.dt_proj.floor", c, global_seed),
        norm_scale=np.ones((N_DIRECTIONS, c), dtype=np.float32),
        norm_shift=np.zeros((N_DIRECTIONS, c), dtype=np.float32),
        y_w=p("y_gate.weight", (c, c)),
        y_b=p("y_gate.bias", (c,)),
        out_w=p("out_proj.weight", (c, c)),
        out_b=p("out_proj.bias", (c,)),
    )


def ib_mamba(b: FeatureMap, w: IbMambaWeights) -> FeatureMap:
    """Four-direction scan block with gate modulation and residual add."""
    x_in = b.data
    h, wd, _ = x_in.shape
    x = (x_in @ w.in_w + w.in_b).astype(np.float32)
    bmap = (x @ w.b_w).astype(np.float32)
    cmap = (x @ w.c_w).astype(np.float32)
    dtmap = softplus_delta(x @ w.dt_w + w.dt_b).astype(np.float32)
    merged = _ss2d(
        x, w.a, [(bmap, cmap, dtmap)] * N_DIRECTIONS,
        w.norm_scale, w.norm_shift, scan_orders_2d(h, wd),
    )
    gated = merged * silu(x_in @ w.y_w + w.y_b)
    return b.with_data(x_in + gated @ w.out_w + w.out_b)


# ---------------------------------------------------------------------------
# Cross-modal BEV block
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CbMambaWeights:
    """Joint parameter generation plus per-modality scan weights.

    The generator map T is split, per modality (image first, then LiDAR) and
    per direction (row-fwd, row-rev, col-fwd, col-rev), into contiguous
    [B | C | delta] slices of widths d_state, d_state, C.
    """

    t1_w: np.ndarray  # (2C, hidden)
    t1_b: np.ndarray
    bn_scale: np.ndarray  # folded batch-norm affine, (hidden,)
    bn_shift: np.ndarray
    t2_w: np.ndarray  # (hidden, T_channels)
    t2_b: np.ndarray
    gate_w: np.ndarray  # (T_channels, C)
    gate_b: np.ndarray
    a_img: np.ndarray  # (C, d_state)
    a_lid: np.ndarray
    in_w_img: np.ndarray
    in_b_img: np.ndarray
    in_w_lid: np.ndarray
    in_b_lid: np.ndarray
    norm_scale_img: np.ndarray  # (4, C)
    norm_shift_img: np.ndarray
    norm_scale_lid: np.ndarray
    norm_shift_lid: np.ndarray
    d_state: int

    def __post_init__(self):
        c = self.a_img.shape[0]
        budget = 2 * N_DIRECTIONS * (2 * self.d_state + c)
        if self.t2_w.shape[1] != budget:
            raise ValueError(
                f"CbMambaWeights: T width {self.t2_w.shape[1]} != split budget {budget}"
            )


def init_cb_mamba(name: str, c: int, d_state: int, global_seed: int) -> CbMambaWeights:
    p = lambda suffix, shape: init_param(f"{name}.{suffix}", shape, global_seed)
    hidden = 2 * c
    t_ch = 2 * N_DIRECTIONS * (2 * d_state + c)
    a = -np.tile(np.arange(1, d_state + 1, dtype=np.float32), (c, 1))
    return CbMambaWeights(
        t1_w=p("t1.weight", (2 * c, hidden)),
        t1_b=p("t1.bias", (hidden,)),
        bn_scale=np.ones(hidden, dtype=np.float32),
        bn_shift=np.zeros(hidden, dtype=np.float32),
        t2_w=p("t2.weight", (hidden, t_ch)),
        t2_b=p("t2.bias", (t_ch,)),
        gate_w=p("gate.weight", (t_ch, c)),
        gate_b=p("gate.bias", (c,)),
        a_img=a,
        a_lid=a.copy(),
        in_w_img=p("in_proj_img.weight", (c, c)),
        in_b_img=p("in_proj_img.bias", (c,)),
        in_w_lid=p("in_proj_lid.weight", (c, c)),
        in_b_lid=p("in_proj_lid.bias", (c,)),
        norm_scale_img=np.ones((N_DIRECTIONS, c), dtype=np.float32),
        norm_shift_img=np.zeros((N_DIRECTIONS, c), dtype=np.float32),
        norm_scale_lid=np.ones((N_DIRECTIONS, c), dtype=np.float32),
        norm_shift_lid=np.zeros((N_DIRECTIONS, c), dtype=np.float32),
        d_state=d_state,
    )


def _split_t(t: np.ndarray, c: int, d_state: int):
    """Per-modality, per-direction (b, c, delta) maps from the generator output."""
    span = 2 * d_state + c
    out = []
    off = 0
    for _modality in range(2):
        dirs = []
        for _k in range(N_DIRECTIONS):
            bmap = t[..., off : off + d_state]
            cmap = t[..., off + d_state : off + 2 * d_state]
            dtmap = softplus_delta(t[..., off + 2 * d_state : off + span])
            dirs.append((
                bmap.astype(np.float32), cmap.astype(np.float32), dtmap.astype(np.float32),
            ))
            off += span
        out.append(dirs)
    return out[0], out[1]


def cb_mamba(
    b_img: FeatureMap,
    b_lidar: FeatureMap,
    w: CbMambaWeights,
    return_gates: bool = False,
):
    """Cross-modal fusion: jointly generated scan parameters, complementary gates.

    output = Y_img * SS2D(image map) + (1 - Y_img) * SS2D(LiDAR map)
             + mean of the two inputs (skip path).
    """
    if b_img.data.shape != b_lidar.data.shape:
        raise ValueError("cb_mamba: input maps must share (H, W, C)")
    h, wd, c = b_img.data.shape
    f_comb = np.concatenate([b_img.data, b_lidar.data], axis=-1)
    t1 = silu((f_comb @ w.t1_w + w.t1_b) * w.bn_scale + w.bn_shift)
    t = t1 @ w.t2_w + w.t2_b
    params_img, params_lid = _split_t(t, c, w.d_state)

    scans = scan_orders_2d(h, wd)
    x_img = (b_img.data @ w.in_w_img + w.in_b_img).astype(np.float32)
    x_lid = (b_lidar.data @ w.in_w_lid + w.in_b_lid).astype(np.float32)
    ss_img = _ss2d(x_img, w.a_img, params_img, w.norm_scale_img, w.norm_shift_img, scans)
    ss_lid = _ss2d(x_lid, w.a_lid, params_lid, w.norm_scale_lid, w.norm_shift_lid, scans)

    y_img = silu(t @ w.gate_w + w.gate_b).astype(np.float32)
    y_lid = (np.ones_like(y_img) - y_img).astype(np.float32)
    out = y_img * ss_img + y_lid * ss_lid + 0.5 * (b_img.data + b_lidar.data)
    result = b_img.with_data(out)
    if return_gates:
        return result, y_img, y_lid
    return result


# ---------------------------------------------------------------------------
# BEV backbone
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BevBackboneWeights:
    blocks: tuple[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray], ...]
    # each block: (conv_a kernel, conv_a bias, conv_b kernel, conv_b bias)

    def identity_configured(self) -> "BevBackboneWeights":
        return BevBackboneWeights(
            tuple((np.zeros_like(ka), np.zeros_like(ba), np.zeros_like(kb), np.zeros_like(bb))
                  for ka, ba, kb, bb in self.blocks)
        )


def init_bev_backbone(name: str, c: int, global_seed: int) -> BevBackboneWeights:
    p = lambda suffix, shape: init_param(f"{name}.{suffix}", shape, global_seed)
    return BevBackboneWeights(
        tuple(
            (
                p(f"block{i}.conv_a.weight", (3, 3, c, c)),
                p(f"block{i}.conv_a.bias", (c,)),
                p(f"block{i}.conv_b.weight", (3, 3, c, c)),
                p(f"block{i}.conv_b.bias", (c,)),
            )
            for i in range(2)
        )
    )


def bev_backbone(b: FeatureMap, w: BevBackboneWeights) -> FeatureMap:
    """Two residual 3x3 conv blocks, channel width preserved."""
    x = b.data
    for ka, ba, kb, bb in w.blocks:
        x = x + conv2d(silu(conv2d(x, ka, ba)), kb, bb)
    return b.with_data(x.astype(np.float32))


# ---------------------------------------------------------------------------
# Full BEV fusion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HbfWeights:
    proj_img_w: np.ndarray  # (C_dense + C_vox, C)
    proj_img_b: np.ndarray
    proj_lid_w: np.ndarray
    proj_lid_b: np.ndarray
    ib_img: IbMambaWeights
    ib_lid: IbMambaWeights
    cb: CbMambaWeights
    backbone: BevBackboneWeights


def init_hbf(name: str, c: int, d_state: int, global_seed: int) -> HbfWeights:
    p = lambda suffix, shape: init_param(f"{name}.{suffix}", shape, global_seed)
    return HbfWeights(
        proj_img_w=p("proj_img.weight", (2 * c, c)),
        proj_img_b=p("proj_img.bias", (c,)),
        proj_lid_w=p("proj_lid.weight", (2 * c, c)),
        proj_lid_b=p("proj_lid.bias", (c,)),
        ib_img=init_ib_mamba(f"{name}.ib_img", c, d_state, global_seed),
        ib_lid=init_ib_mamba(f"{name}.ib_lid", c, d_state, global_seed),
        cb=init_cb_mamba(f"{name}.cb", c, d_state, global_seed),
        backbone=init_bev_backbone(f"{name}.backbone", c, global_seed),
    )


def hbf_forward(
    b_lidar: FeatureMap,
    b_img: FeatureMap,
    v_lidar: SparseVoxelSet,
    v_img: SparseVoxelSet,
    w: HbfWeights,
) -> FeatureMap:
    """Compress voxel branches, concat with the dense maps per modality,
    project to the common width, then IB blocks, CB fusion, BEV backbone."""
    b_lidar_vox = sparse_height_compress(v_lidar)
    b_img_vox = sparse_height_compress(v_img)
    cat_lid = np.concatenate([b_lidar.data, b_lidar_vox.data], axis=-1)
    cat_img = np.concatenate([b_img.data, b_img_vox.data], axis=-1)
    m_lid = b_lidar.with_data((cat_lid @ w.proj_lid_w + w.proj_lid_b).astype(np.float32))
    m_img = b_img.with_data((cat_img @ w.proj_img_w + w.proj_img_b).astype(np.float32))
    m_lid = ib_mamba(m_lid, w.ib_lid)
    m_img = ib_mamba(m_img, w.ib_img)
    fused = cb_mamba(m_img, m_lid, w.cb)
    return bev_backbone(fused, w.backbone)
