"""Progressive decoder.

Queries are refined by deformable-attention layers over the fused BEV map,
then by voxel layers that pool box-lattice features from both sparse
branches and mix them with query-generated channel and spatial kernels,
and finally read out as scored boxes by a small detection head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import FeatureMap, SparseVoxelSet, init_param
from .ops import scaled_dot_attention, sigmoid, silu, softmax
from .pqg import Query
from .viewtrans import bilinear_sample

N_SAMPLE_POINTS = 4
GRID_SIDE = 4  # g; lattice has G = g^3 points
BOX_RAW_DIM = 8  # dx, dy, z, log sizes (3), sin, cos
BOX_RAW_CLIP = 30.0  # untrained readouts can reach +-1e3; exp must stay finite


@dataclass(frozen=True)
class ProposalBox:
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float

    def __post_init__(self):
        if any(s <= 0 for s in self.size):
            raise ValueError("ProposalBox: sizes must be positive")
        if not -math.pi < self.yaw <= math.pi:
            raise ValueError("ProposalBox: yaw must lie in (-pi, pi]")


@dataclass(frozen=True)
class DetectionBox:
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float
    class_id: int
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("DetectionBox: score must lie in [0, 1]")


@dataclass(frozen=True)
class GridFeatures:
    points: np.ndarray  # (G, 3) world coordinates
    feats: np.ndarray  # (G, C)
    offsets: np.ndarray  # (G, 3) relative to box center

    def __post_init__(self):
        if self.points.shape[0] % 4:
            raise ValueError("GridFeatures: G must be divisible by 4")


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SelfAttnWeights:
    q_w: np.ndarray
    q_b: np.ndarray
    k_w: np.ndarray
    k_b: np.ndarray
    v_w: np.ndarray
    v_b: np.ndarray
    o_w: np.ndarray
    o_b: np.ndarray


@dataclass(frozen=True)
class DeformableLayerWeights:
    off_w: np.ndarray  # (C, 2 * N_SAMPLE_POINTS)
    off_b: np.ndarray
    att_w: np.ndarray  # (C, N_SAMPLE_POINTS)
    att_b: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray
    ffn1_w: np.ndarray
    ffn1_b: np.ndarray
    ffn2_w: np.ndarray
    ffn2_b: np.ndarray


@dataclass(frozen=True)
class BoxHeadWeights:
    w1: np.ndarray  # (C, 2C)
    b1: np.ndarray
    w2: np.ndarray  # (2C, BOX_RAW_DIM)
    b2: np.ndarray


@dataclass(frozen=True)
class MixWeights:
    off_w: np.ndarray  # (3, C) offset embedding
    off_b: np.ndarray
    cw: np.ndarray  # (C, C*C) channel-kernel generator
    cb: np.ndarray
    sw: np.ndarray  # (C, G*G//4) spatial-kernel generator
    sb: np.ndarray
    down_w: np.ndarray  # (C*G//4, C)
    down_b: np.ndarray


@dataclass(frozen=True)
class MmvfmLayerWeights:
    mix_lid: MixWeights
    mix_img: MixWeights
    attn_lid: SelfAttnWeights
    attn_img: SelfAttnWeights
    comb_w: np.ndarray  # (3C, C)
    comb_b: np.ndarray


@dataclass(frozen=True)
class DetectionHeadWeights:
    attn: SelfAttnWeights
    ffn1_w: np.ndarray
    ffn1_b: np.ndarray
    ffn2_w: np.ndarray
    ffn2_b: np.ndarray
    cls_w: np.ndarray  # (C, K)
    cls_b: np.ndarray
    box: BoxHeadWeights


@dataclass(frozen=True)
class DecoderWeights:
    deform: tuple[DeformableLayerWeights, ...]
    mmvfm: tuple[MmvfmLayerWeights, ...]
    box: BoxHeadWeights  # shared proposal head for the voxel layers
    head: DetectionHeadWeights
    g_side: int = GRID_SIDE

    def identity_configured(self) -> "DecoderWeights":
        """Layers pass query features through unchanged; heads left as-is."""
        z = np.zeros_like
        deform = tuple(
            DeformableLayerWeights(
                d.off_w, d.off_b, d.att_w, d.att_b, z(d.out_w), z(d.out_b),
                d.ffn1_w, d.ffn1_b, z(d.ffn2_w), z(d.ffn2_b),
            )
            for d in self.deform
        )
        mmvfm = []
        for m in self.mmvfm:
            c = m.comb_w.shape[1]
            comb = np.zeros_like(m.comb_w)
            comb[:c, :] = np.eye(c, dtype=np.float32)
            mmvfm.append(
                MmvfmLayerWeights(m.mix_lid, m.mix_img, m.attn_lid, m.attn_img,
                                  comb, z(m.comb_b))
            )
        head = DetectionHeadWeights(
            SelfAttnWeights(
                self.head.attn.q_w, self.head.attn.q_b, self.head.attn.k_w,
                self.head.attn.k_b, self.head.attn.v_w, self.head.attn.v_b,
                z(self.head.attn.o_w), z(self.head.attn.o_b),
            ),
            self.head.ffn1_w, self.head.ffn1_b,
            z(self.head.ffn2_w), z(self.head.ffn2_b),
            self.head.cls_w, self.head.cls_b, self.head.box,
        )
        return DecoderWeights(deform, tuple(mmvfm), self.box, head, self.g_side)


def _init_attn(name: str, c: int, seed: int) -> SelfAttnWeights:
    p = lambda suffix, shape: init_param(f"{name}.{suffix}", shape, seed)
    return SelfAttnWeights(
        p("q.weight", (c, c)), p("q.bias", (c,)),
        p("k.weight", (c, c)), p("k.bias", (c,)),
        p("v.weight", (c, c)), p("v.bias", (c,)),
        p("o.weight", (c, c)), p("o.bias", (c,)),
    )


def _init_mix(name: str, c: int, g_side: int, seed: int) -> MixWeights:
    p = lambda suffix, shape: init_param(f"{name}.{suffix}", shape, seed)
    g = g_side**3
    return MixWeights(
        off_w=p("offset_embed.weight", (3, c)),
        off_b=p("offset_embed.bias", (c,)),
        cw=p("channel_kernel.weight", (c, c * c)),
        cb=p("channel_kernel.bias", (c * c,)),
        sw=p("spatial_kernel.weight", (c, g * (g // 4))),
        sb=p("spatial_kernel.bias", (g * (g // 4),)),
        down_w=p("down.weight", (c * (g // 4), c)),
        down_b=p("down.bias", (c,)),
    )


def _init_box_head(name: str, c: int, seed: int) -> BoxHeadWeights:
    p = lambda suffix, shape: init_param(f"{name}.{suffix}", shape, seed)
    return BoxHeadWeights(
        p("fc1.weight", (c, 2 * c)), p("fc1.bias", (2 * c,)),
        p("fc2.weight", (2 * c, BOX_RAW_DIM)), p("fc2.bias", (BOX_RAW_DIM,)),
    )


def init_decoder(
    name: str, c: int, k_classes: int, n_bev: int, m_vox: int, global_seed: int,
    g_side: int = GRID_SIDE,
) -> DecoderWeights:
    p = lambda suffix, shape: init_param(f"{name}.{suffix}", shape, global_seed)
    deform = tuple(
        DeformableLayerWeights(
            off_w=p(f"deform{i}.offset.weight", (c, 2 * N_SAMPLE_POINTS)),
            off_b=p(f"deform{i}.offset.bias", (2 * N_SAMPLE_POINTS,)),
            att_w=p(f"deform{i}.attn.weight", (c, N_SAMPLE_POINTS)),
            att_b=p(f"deform{i}.attn.bias", (N_SAMPLE_POINTS,)),
            out_w=p(f"deform{i}.out.weight", (c, c)),
            out_b=p(f"deform{i}.out.bias", (c,)),
            ffn1_w=p(f"deform{i}.ffn1.weight", (c, 2 * c)),
            ffn1_b=p(f"deform{i}.ffn1.bias", (2 * c,)),
            ffn2_w=p(f"deform{i}.ffn2.weight", (2 * c, c)),
            ffn2_b=p(f"deform{i}.ffn2.bias", (c,)),
        )
        for i in range(n_bev)
    )
    mmvfm = tuple(
        MmvfmLayerWeights(
            mix_lid=_init_mix(f"{name}.mmvfm{j}.mix_lid", c, g_side, global_seed),
            mix_img=_init_mix(f"{name}.mmvfm{j}.mix_img", c, g_side, global_seed),
            attn_lid=_init_attn(f"{name}.mmvfm{j}.attn_lid", c, global_seed),
            attn_img=_init_attn(f"{name}.mmvfm{j}.attn_img", c, global_seed),
            comb_w=p(f"mmvfm{j}.combine.weight", (3 * c, c)),
            comb_b=p(f"mmvfm{j}.combine.bias", (c,)),
        )
        for j in range(m_vox)
    )
    head = DetectionHeadWeights(
        attn=_init_attn(f"{name}.head.attn", c, global_seed),
        ffn1_w=p("head.ffn1.weight", (c, 2 * c)),
        ffn1_b=p("head.ffn1.bias", (2 * c,)),
        ffn2_w=p("head.ffn2.weight", (2 * c, c)),
        ffn2_b=p("head.ffn2.bias", (c,)),
        cls_w=p("head.cls.weight", (c, k_classes)),
        cls_b=p("head.cls.bias", (k_classes,)),
        box=_init_box_head(f"{name}.head.box", c, global_seed),
    )
    return DecoderWeights(
        deform, mmvfm, _init_box_head(f"{name}.box", c, global_seed), head, g_side
    )


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

def deformable_layer(
    feats: np.ndarray, rows: np.ndarray, cols: np.ndarray,
    b: FeatureMap, w: DeformableLayerWeights,
) -> np.ndarray:
    """Sample the map at 4 query-generated offsets around each query's cell,
    aggregate by softmax weights, and update features with two residuals."""
    raw_off = (feats @ w.off_w + w.off_b).reshape(-1, N_SAMPLE_POINTS, 2)
    logits = feats @ w.att_w + w.att_b
    weights = softmax(logits.astype(np.float64), axis=-1)
    m = feats.shape[0]
    agg = np.zeros((m, b.channels), dtype=np.float64)
    for j in range(N_SAMPLE_POINTS):
        u = cols.astype(np.float64) + raw_off[:, j, 0]
        v = rows.astype(np.float64) + raw_off[:, j, 1]
        agg += weights[:, j : j + 1] * bilinear_sample(b.data, u, v)
    x = feats + (agg @ w.out_w + w.out_b)
    x = x + (silu(x @ w.ffn1_w + w.ffn1_b) @ w.ffn2_w + w.ffn2_b)
    return x.astype(np.float32)


def box_from_query(
    feat: np.ndarray, row: int, col: int, fm: FeatureMap, w: BoxHeadWeights
) -> ProposalBox:
    """Two-layer MLP readout: center offsets from the cell center, log sizes,
    yaw from a (sin, cos) pair."""
    raw = silu(feat @ w.w1 + w.b1) @ w.w2 + w.b2
    # keep exp(log-size) positive-finite and centers inside int64 cell math
    raw = np.clip(raw, -BOX_RAW_CLIP, BOX_RAW_CLIP)
    cx, cy = fm.cell_centers(np.array([row]), np.array([col]))[0]
    yaw = math.atan2(float(raw[6]), float(raw[7]))
    if yaw <= -math.pi:
        yaw = math.pi
    return ProposalBox(
        center=(float(cx + raw[0]), float(cy + raw[1]), float(raw[2])),
        size=tuple(float(s) for s in np.exp(raw[3:6])),
        yaw=yaw,
    )


def grid_points(box: ProposalBox, g: int) -> np.ndarray:
    """g^3 lattice cell centers spanning the box, rotated and translated."""
    if g < 2 or (g**3) % 4:
        raise ValueError("grid_points: need g >= 2 with g^3 divisible by 4")
    frac = (np.arange(g, dtype=np.float64) + 0.5) / g - 0.5
    gx, gy, gz = np.meshgrid(frac, frac, frac, indexing="ij")
    local = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1) * np.array(box.size)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + np.array(box.center)


_NEIGHBOR_OFFSETS = np.array(
    [[0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
    dtype=np.int64,
)


def voxel_pool(v: SparseVoxelSet, points: np.ndarray) -> np.ndarray:
    """Average of occupied-voxel features over each point's containing cell
    and its 6 face neighbors; zero where nothing is occupied."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = points.shape[0]
    out = np.zeros((n, v.channels), dtype=np.float64)
    if v.n == 0:
        return out.astype(np.float32)
    cells, _ = v.grid.point_coords(points)
    ext = np.asarray(v.grid.extents, dtype=np.int64)
    flat = np.ravel_multi_index(v.coords.T, v.grid.extents)
    order = np.argsort(flat, kind="stable")
    flat_sorted = flat[order]
    feats = v.feats.astype(np.float64)
    counts = np.zeros(n, dtype=np.int64)
    for off in _NEIGHBOR_OFFSETS:
        cand = cells + off
        ok = np.all((cand >= 0) & (cand < ext), axis=1)
        if not np.any(ok):
            continue
        cand_flat = np.ravel_multi_index(cand[ok].T, v.grid.extents)
        pos = np.searchsorted(flat_sorted, cand_flat)
        pos = np.minimum(pos, flat_sorted.size - 1)
        hit = flat_sorted[pos] == cand_flat
        rows = np.where(ok)[0][hit]
        out[rows] += feats[order[pos[hit]]]
        counts[rows] += 1
    nz = counts > 0
    out[nz] /= counts[nz, None]
    return out.astype(np.float32)


def mmvfm_mix(q_feat: np.ndarray, grid: GridFeatures, w: MixWeights) -> np.ndarray:
    """Channel mixing then spatial mixing with query-generated kernels.

    F_g (G, C) gains an offset embedding, is multiplied by the (C, C) channel
    kernel, transposed against the (G, G/4) spatial kernel, and projected
    back down to a C-vector.
    """
    g, c = grid.feats.shape
    f = grid.feats.astype(np.float64) + (grid.offsets @ w.off_w + w.off_b)
    ck = (q_feat @ w.cw + w.cb).reshape(c, c).astype(np.float64)
    f = f @ ck
    sk = (q_feat @ w.sw + w.sb).reshape(g, g // 4).astype(np.float64)
    mixed = f.T @ sk  # (C, G/4)
    return (mixed.reshape(-1) @ w.down_w + w.down_b).astype(np.float32)


def _self_attention(x: np.ndarray, w: SelfAttnWeights) -> np.ndarray:
    attn, _ = scaled_dot_attention(x @ w.q_w + w.q_b, x @ w.k_w + w.k_b, x @ w.v_w + w.v_b)
    return (x + attn @ w.o_w + w.o_b).astype(np.float32)


def mmvfm_layer(
    feats: np.ndarray, rows: np.ndarray, cols: np.ndarray,
    v_lidar: SparseVoxelSet, v_img: SparseVoxelSet,
    fm: FeatureMap, box_w: BoxHeadWeights, w: MmvfmLayerWeights, g_side: int,
) -> np.ndarray:
    """Per query: proposal box -> lattice -> per-modality voxel pooling and
    mixing -> per-modality self-attention -> concat with the query -> linear."""
    m, c = feats.shape
    mixed = {"lid": np.zeros((m, c), dtype=np.float32),
             "img": np.zeros((m, c), dtype=np.float32)}
    for i in range(m):
        box = box_from_query(feats[i], int(rows[i]), int(cols[i]), fm, box_w)
        pts = grid_points(box, g_side)
        offsets = pts - np.array(box.center)
        for key, vox, mw in (("lid", v_lidar, w.mix_lid), ("img", v_img, w.mix_img)):
            gf = GridFeatures(pts, voxel_pool(vox, pts), offsets)
            mixed[key][i] = mmvfm_mix(feats[i], gf, mw)
    f_lid = _self_attention(mixed["lid"], w.attn_lid)
    f_img = _self_attention(mixed["img"], w.attn_img)
    cat = np.concatenate([feats, f_lid, f_img], axis=1)
    return (cat @ w.comb_w + w.comb_b).astype(np.float32)


def detection_head(
    feats: np.ndarray, rows: np.ndarray, cols: np.ndarray,
    fm: FeatureMap, w: DetectionHeadWeights,
) -> list[DetectionBox]:
    """Self-attention + feed-forward, then class scores and box readout."""
    x = _self_attention(feats, w.attn)
    x = (x + silu(x @ w.ffn1_w + w.ffn1_b) @ w.ffn2_w + w.ffn2_b).astype(np.float32)
    logits = x @ w.cls_w + w.cls_b
    out = []
    for i in range(x.shape[0]):
        cls = int(np.argmax(logits[i]))
        score = float(sigmoid(np.float64(logits[i, cls])))
        box = box_from_query(x[i], int(rows[i]), int(cols[i]), fm, w.box)
        out.append(DetectionBox(box.center, box.size, box.yaw, cls, score))
    return out


def decode(
    queries: list[Query],
    b_out: FeatureMap,
    v_lidar: SparseVoxelSet,
    v_img: SparseVoxelSet,
    w: DecoderWeights,
    n_bev: int,
    m_vox: int,
) -> list[DetectionBox]:
    """Full decoder stack: one output box per input query, no suppression."""
    if not queries:
        return []
    if n_bev > len(w.deform) or m_vox > len(w.mmvfm):
        raise ValueError("decode: more layers requested than weights provide")
    feats = np.stack([q.feature for q in queries]).astype(np.float32)
    rows = np.array([q.pos[0] for q in queries], dtype=np.int64)
    cols = np.array([q.pos[1] for q in queries], dtype=np.int64)
    for i in range(n_bev):
        feats = deformable_layer(feats, rows, cols, b_out, w.deform[i])
    for j in range(m_vox):
        feats = mmvfm_layer(
            feats, rows, cols, v_lidar, v_img, b_out, w.box, w.mmvfm[j], w.g_side
        )
    return detection_head(feats, rows, cols, b_out, w.head)
