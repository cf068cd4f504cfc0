"""Progressive query generation.

Stage one reads easy object candidates off a class heatmap with pooling NMS
and top-k. Their dilated neighborhoods are masked out, the map is re-excited
by attention against the easy queries (hard instance activation), and stage
two extracts the remaining candidates from the masked second heatmap, so no
hard query can land next to an easy one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FeatureMap, init_param
from .ops import (
    conv2d,
    max_pool2d_same,
    posenc_2d,
    scaled_dot_attention,
    sigmoid,
    silu,
)

STAGE_EASY = "easy"
STAGE_HARD = "hard"


@dataclass(frozen=True)
class Heatmap:
    """Per-class score maps, (K, H, W), sigmoid range."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError("Heatmap: data must be (K, H, W)")
        if np.any(self.data < 0) or np.any(self.data > 1):
            raise ValueError("Heatmap: values must lie in [0, 1]")


@dataclass(frozen=True)
class Query:
    pos: tuple[int, int]  # (row, col)
    class_id: int
    feature: np.ndarray  # (C,)
    stage: str
    score: float


@dataclass(frozen=True)
class QueryMask:
    """Binary (H, W) map; 0 marks cells suppressed for stage two."""

    data: np.ndarray

    def __post_init__(self):
        if not np.all((self.data == 0) | (self.data == 1)):
            raise ValueError("QueryMask: mask must be binary")


# ---------------------------------------------------------------------------
# Heatmap head
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HeatmapHeadWeights:
    conv_k: np.ndarray  # (3, 3, C, C)
    conv_b: np.ndarray
    head_w: np.ndarray  # (C, K)
    head_b: np.ndarray


def init_heatmap_head(
    name: str, c: int, k_classes: int, global_seed: int
) -> HeatmapHeadWeights:
    p = lambda suffix, shape: init_param(f"{name}.{suffix}", shape, global_seed)
    return HeatmapHeadWeights(
        conv_k=p("conv.weight", (3, 3, c, c)),
        conv_b=p("conv.bias", (c,)),
        head_w=p("head.weight", (c, k_classes)),
        head_b=p("head.bias", (k_classes,)),
    )


def heatmap_head(b: FeatureMap, w: HeatmapHeadWeights) -> Heatmap:
    f = silu(conv2d(b.data, w.conv_k, w.conv_b))
    scores = sigmoid((f @ w.head_w + w.head_b).astype(np.float64))
    return Heatmap(np.moveaxis(scores, -1, 0).astype(np.float32))


# ---------------------------------------------------------------------------
# Pooling NMS + top-k
# ---------------------------------------------------------------------------

def nms_topk(h: Heatmap, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cells equal to their 3x3 spatial max, ranked by score.

    Ties break on ascending flat (class, row, col) index. Returns
    (positions (m, 2), classes (m,), scores (m,)) with m <= k.
    """
    if k < 1:
        raise ValueError("nms_topk: k must be >= 1")
    kc, hh, ww = h.data.shape
    keep = np.zeros((kc, hh, ww), dtype=bool)
    for c in range(kc):
        keep[c] = h.data[c] == max_pool2d_same(h.data[c], 3)
    flat_idx = np.where(keep.reshape(-1))[0]
    scores = h.data.reshape(-1)[flat_idx]
    order = np.lexsort((flat_idx, -scores.astype(np.float64)))[: min(k, flat_idx.size)]
    sel = flat_idx[order]
    classes, rem = np.divmod(sel, hh * ww)
    rows, cols = np.divmod(rem, ww)
    return (
        np.stack([rows, cols], axis=1).astype(np.int64),
        classes.astype(np.int64),
        scores[order].astype(np.float32),
    )


def collect(
    b: FeatureMap,
    positions: np.ndarray,
    classes: np.ndarray,
    scores: np.ndarray,
    stage: str,
) -> list[Query]:
    """Read the map's feature vector at each position and build queries."""
    out = []
    for (r, c), cls, sc in zip(positions, classes, scores):
        if not (0 <= r < b.h and 0 <= c < b.w):
            raise ValueError(f"collect: position ({r}, {c}) outside map")
        out.append(
            Query((int(r), int(c)), int(cls), b.data[r, c].copy(), stage, float(sc))
        )
    return out


def build_mask(p_easy: np.ndarray, h: int, w: int, kernel: int = 3) -> QueryMask:
    """Complement of the kernel-dilated indicator of easy positions."""
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError("build_mask: kernel must be odd and >= 1")
    ind = np.zeros((h, w), dtype=np.float32)
    p_easy = np.asarray(p_easy, dtype=np.int64).reshape(-1, 2)
    if p_easy.shape[0]:
        ind[p_easy[:, 0], p_easy[:, 1]] = 1.0
    dilated = max_pool2d_same(ind, kernel)
    return QueryMask((1.0 - dilated).astype(np.uint8))


# ---------------------------------------------------------------------------
# Hard instance activation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HiaWeights:
    emb_w: np.ndarray  # (K + C, C): one-hot class ++ position encoding -> C
    emb_b: np.ndarray
    self_q: np.ndarray
    self_k: np.ndarray
    self_v: np.ndarray
    self_o: np.ndarray
    cross_q: np.ndarray
    cross_k: np.ndarray
    cross_v: np.ndarray
    cross_o: np.ndarray
    conv_a_k: np.ndarray  # (3, 3, C, C)
    conv_a_b: np.ndarray
    conv_b_k: np.ndarray
    conv_b_b: np.ndarray

    def identity_configured(self) -> "HiaWeights":
        z = np.zeros_like
        return HiaWeights(
            self.emb_w, self.emb_b,
            self.self_q, self.self_k, self.self_v, z(self.self_o),
            self.cross_q, self.cross_k, self.cross_v, z(self.cross_o),
            z(self.conv_a_k), z(self.conv_a_b), z(self.conv_b_k), z(self.conv_b_b),
        )


def init_hia(name: str, c: int, k_classes: int, global_seed: int) -> HiaWeights:
    p = lambda suffix, shape: init_param(f"{name}.{suffix}", shape, global_seed)
    sq = lambda suffix: p(suffix, (c, c))
    return HiaWeights(
        emb_w=p("embed.weight", (k_classes + c, c)),
        emb_b=p("embed.bias", (c,)),
        self_q=sq("self_attn.q.weight"),
        self_k=sq("self_attn.k.weight"),
        self_v=sq("self_attn.v.weight"),
        self_o=sq("self_attn.o.weight"),
        cross_q=sq("cross_attn.q.weight"),
        cross_k=sq("cross_attn.k.weight"),
        cross_v=sq("cross_attn.v.weight"),
        cross_o=sq("cross_attn.o.weight"),
        conv_a_k=p("conv_a.weight", (3, 3, c, c)),
        conv_a_b=p("conv_a.bias", (c,)),
        conv_b_k=p("conv_b.weight", (3, 3, c, c)),
        conv_b_b=p("conv_b.bias", (c,)),
    )


def _residual_conv(x: np.ndarray, w: HiaWeights) -> np.ndarray:
    return x + conv2d(silu(conv2d(x, w.conv_a_k, w.conv_a_b)), w.conv_b_k, w.conv_b_b)


def hia(q_easy: list[Query], b: FeatureMap, w: HiaWeights) -> FeatureMap:
    """Activate the map against easy queries.

    Easy queries, embedded with one-hot class and sinusoidal position codes,
    self-attend; every BEV cell then attends to them (query-to-map path) and
    the result feeds a residual conv block.
    """
    if not q_easy:
        return b.with_data(_residual_conv(b.data, w).astype(np.float32))
    k_classes = w.emb_w.shape[0] - b.channels
    onehot = np.zeros((len(q_easy), k_classes), dtype=np.float32)
    rows = np.array([q.pos[0] for q in q_easy], dtype=np.float64)
    cols = np.array([q.pos[1] for q in q_easy], dtype=np.float64)
    for i, q in enumerate(q_easy):
        onehot[i, q.class_id] = 1.0
    pe = posenc_2d(rows, cols, b.channels)
    tokens = np.stack([q.feature for q in q_easy]) + (
        np.concatenate([onehot, pe], axis=1) @ w.emb_w + w.emb_b
    )
    attn, _ = scaled_dot_attention(tokens @ w.self_q, tokens @ w.self_k, tokens @ w.self_v)
    tokens = tokens + attn @ w.self_o

    flat = b.data.reshape(-1, b.channels)
    cross, _ = scaled_dot_attention(flat @ w.cross_q, tokens @ w.cross_k, tokens @ w.cross_v)
    x = b.data + (cross @ w.cross_o).reshape(b.data.shape)
    return b.with_data(_residual_conv(x, w).astype(np.float32))


# ---------------------------------------------------------------------------
# Two-stage extraction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PqgWeights:
    head_easy: HeatmapHeadWeights
    head_hard: HeatmapHeadWeights  # independent second-stage weights
    hia: HiaWeights
    mask_kernel: int = 3


def init_pqg(name: str, c: int, k_classes: int, global_seed: int) -> PqgWeights:
    return PqgWeights(
        head_easy=init_heatmap_head(f"{name}.head_easy", c, k_classes, global_seed),
        head_hard=init_heatmap_head(f"{name}.head_hard", c, k_classes, global_seed),
        hia=init_hia(f"{name}.hia", c, k_classes, global_seed),
    )


def pqg_forward(
    b_out: FeatureMap, w: PqgWeights, k_easy: int, k_hard: int
) -> tuple[list[Query], list[Query], FeatureMap]:
    """Stage 1: heatmap -> NMS top-k easy queries. Stage 2: mask easy regions,
    re-activate the map with HIA, and extract hard queries from the product
    of the second heatmap and the mask. Zero-score (fully masked) candidates
    are dropped so hard queries can never touch an easy neighborhood."""
    h1 = heatmap_head(b_out, w.head_easy)
    pos_e, cls_e, sc_e = nms_topk(h1, k_easy)
    q_easy = collect(b_out, pos_e, cls_e, sc_e, STAGE_EASY)

    mask = build_mask(pos_e, b_out.h, b_out.w, w.mask_kernel)
    b_act = hia(q_easy, b_out, w.hia)
    h2 = heatmap_head(b_act, w.head_hard)
    masked = Heatmap(h2.data * mask.data[None, :, :].astype(np.float32))
    pos_h, cls_h, sc_h = nms_topk(masked, k_hard)
    live = sc_h > 0
    pos_h, cls_h, sc_h = pos_h[live], cls_h[live], sc_h[live]
    assert np.all(mask.data[pos_h[:, 0], pos_h[:, 1]] == 1)
    q_hard = collect(b_act, pos_h, cls_h, sc_h, STAGE_HARD)
    return q_easy, q_hard, b_act
