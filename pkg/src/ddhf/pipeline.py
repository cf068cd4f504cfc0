"""End-to-end runner: point cloud + camera images -> detection boxes.

Stage order: voxelize -> lidar embed -> image encode -> semantic voxel
selection + BEV splat -> dual-branch voxel fusion -> BEV fusion -> query
generation -> decoder. Each stage is timed and its output size recorded.

Two weight modes exist. "seeded" draws every parameter from the

name-keyed deterministic initializer. "passthrough" identity-configures all
residual blocks and hand-sets the heatmap and class heads to read the
point-count channel, which makes planted objects rank first without any
training; used by the end-to-end fixture tests.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .config import PipelineConfig
from .core import (
    SparseVoxelSet,
    bev_map_for_grid,
    empty_voxel_set,
    init_param,
    voxelize,
)
from .decoder import (
    BoxHeadWeights,
    DecoderWeights,
    DetectionBox,
    decode,
    init_decoder,
)
from .hbf import HbfWeights, hbf_forward, init_hbf, sparse_height_compress
from .hvf import HvfWeights, hvf_forward, init_hvf
from .pqg import HeatmapHeadWeights, PqgWeights, init_pqg, pqg_forward
from .viewtrans import (
    ImageEncoderWeights,
    encode_images,
    init_image_encoder,
    lss_splat,
    safs_select,
)

LIDAR_RAW_CHANNELS = 5  # mean offset xyz, mean intensity, point count
PASSTHROUGH_GAIN = 0.1


@dataclass(frozen=True)
class PipelineWeights:
    lidar_embed_w: np.ndarray  # (5, C)
    lidar_embed_b: np.ndarray
    encoder: ImageEncoderWeights
    hvf: HvfWeights
    hbf: HbfWeights
    pqg: PqgWeights
    decoder: DecoderWeights


def init_pipeline_weights(cfg: PipelineConfig) -> PipelineWeights:
    seed, c = cfg.global_seed, cfg.channels
    return PipelineWeights(
        lidar_embed_w=init_param("lidar_embed.weight", (LIDAR_RAW_CHANNELS, c), seed),
        lidar_embed_b=init_param("lidar_embed.bias", (c,), seed),
        encoder=init_image_encoder("image_encoder", c, cfg.depth_count, seed),
        hvf=init_hvf("hvf", c, cfg.d_state, seed),
        hbf=init_hbf("hbf", c, cfg.d_state, seed),
        pqg=init_pqg("pqg", c, cfg.k_classes, seed),
        decoder=init_decoder("decoder", c, cfg.k_classes, cfg.n_bev, cfg.m_vox, seed),
    )


def _density_heatmap_head(like: HeatmapHeadWeights) -> HeatmapHeadWeights:
    """Class-0 logit = gain * silu(channel 0); other classes stay at zero."""
    conv_k = np.zeros_like(like.conv_k)
    conv_k[1, 1, 0, 0] = 1.0
    head_w = np.zeros_like(like.head_w)
    head_w[0, 0] = PASSTHROUGH_GAIN
    return HeatmapHeadWeights(
        conv_k, np.zeros_like(like.conv_b), head_w, np.zeros_like(like.head_b)
    )


def passthrough_weights(cfg: PipelineConfig) -> PipelineWeights:
    """Identity-configured pipeline whose heads read the point-count channel.

    The LiDAR embed routes voxel point count to channel 0; the BEV fusion
    projections keep only that channel of the LiDAR branch, every residual
    block passes features through unchanged, and heatmap/class heads score
    channel 0 monotonically. Box readouts are zeroed, so each detection sits
    at its query's cell center with unit size.
    """
    base = init_pipeline_weights(cfg)
    c = cfg.channels

    embed_w = np.zeros((LIDAR_RAW_CHANNELS, c), dtype=np.float32)
    embed_w[4, 0] = 1.0
    embed_b = np.zeros(c, dtype=np.float32)

    hbf = base.hbf
    proj_lid_w = np.zeros_like(hbf.proj_lid_w)
    proj_lid_w[0, 0] = 1.0
    cb = replace(
        hbf.cb,
        gate_w=np.zeros_like(hbf.cb.gate_w),
        gate_b=np.zeros_like(hbf.cb.gate_b),
        in_w_img=np.zeros_like(hbf.cb.in_w_img),
        in_b_img=np.zeros_like(hbf.cb.in_b_img),
        in_w_lid=np.zeros_like(hbf.cb.in_w_lid),
        in_b_lid=np.zeros_like(hbf.cb.in_b_lid),
    )
    hbf = replace(
        hbf,
        proj_img_w=np.zeros_like(hbf.proj_img_w),
        proj_img_b=np.zeros_like(hbf.proj_img_b),
        proj_lid_w=proj_lid_w,
        proj_lid_b=np.zeros_like(hbf.proj_lid_b),
        ib_img=hbf.ib_img.identity_configured(),
        ib_lid=hbf.ib_lid.identity_configured(),
        cb=cb,
        backbone=hbf.backbone.identity_configured(),
    )

    pqg = PqgWeights(
        head_easy=_density_heatmap_head(base.pqg.head_easy),
        head_hard=_density_heatmap_head(base.pqg.head_hard),
        hia=base.pqg.hia.identity_configured(),
        mask_kernel=base.pqg.mask_kernel,
    )

    dec = base.decoder.identity_configured()
    zero_box = BoxHeadWeights(
        np.zeros_like(dec.box.w1),
        np.zeros_like(dec.box.b1),
        np.zeros_like(dec.box.w2),
        np.zeros_like(dec.box.b2),
    )
    cls_w = np.zeros_like(dec.head.cls_w)
    cls_w[0, 0] = PASSTHROUGH_GAIN
    head = replace(
        dec.head, cls_w=cls_w, cls_b=np.zeros_like(dec.head.cls_b), box=zero_box
    )
    dec = replace(dec, box=zero_box, head=head)

    return PipelineWeights(
        lidar_embed_w=embed_w,
        lidar_embed_b=embed_b,
        encoder=base.encoder,
        hvf=base.hvf.identity_configured(),
        hbf=hbf,
        pqg=pqg,
        decoder=dec,
    )


def build_weights(cfg: PipelineConfig) -> PipelineWeights:
    if cfg.weights_mode == "passthrough":
        return passthrough_weights(cfg)
    return init_pipeline_weights(cfg)


@dataclass
class StageLog:
    """Coarse per-stage timing and output sizes; not a hardware benchmark."""

    entries: list = field(default_factory=list)  # (name, seconds, out_bytes)

    def add(self, name: str, seconds: float, *outputs) -> None:
        nbytes = 0
        for out in outputs:
            if isinstance(out, np.ndarray):
                nbytes += out.nbytes
            elif isinstance(out, SparseVoxelSet):
                nbytes += out.coords.nbytes + out.feats.nbytes
            elif hasattr(out, "data"):
                nbytes += out.data.nbytes
        self.entries.append((name, seconds, nbytes))

    @property
    def total_seconds(self) -> float:
        return sum(e[1] for e in self.entries)

    @property
    def peak_live_bytes(self) -> int:
        # the runner keeps every stage output alive until the end
        return sum(e[2] for e in self.entries)

    def lines(self) -> list[str]:
        out = [
            f"{name:<16} {seconds * 1e3:9.1f} ms {nbytes / 1e6:9.3f} MB"
            for name, seconds, nbytes in self.entries
        ]
        out.append(
            f"{'total':<16} {self.total_seconds * 1e3:9.1f} ms"
            f" {self.peak_live_bytes / 1e6:9.3f} MB peak-live estimate"
        )
        return out


def run_pipeline(
    points: np.ndarray,
    images: list[np.ndarray],
    cameras: list,
    cfg: PipelineConfig,
    weights: PipelineWeights | None = None,
) -> tuple[list[DetectionBox], StageLog]:
    if len(images) != len(cameras):
        raise ValueError(f"{len(images)} images for {len(cameras)} cameras")
    if weights is None:
        weights = build_weights(cfg)
    grid_l, grid_i = cfg.lidar_grid(), cfg.image_grid()
    bins = cfg.depth_bins()
    log = StageLog()

    t = time.perf_counter()
    v_raw = voxelize(np.asarray(points, dtype=np.float32), grid_l)
    emb = (v_raw.feats @ weights.lidar_embed_w + weights.lidar_embed_b).astype(
        np.float32
    )
    v_lidar = v_raw.with_feats(emb)
    log.add("voxelize", time.perf_counter() - t, v_lidar)

    t = time.perf_counter()
    if cameras:
        img_feats = encode_images(list(images), weights.encoder)
        v_img = safs_select(
            grid_i, img_feats, cameras, bins, cfg.d_thresh, cfg.s_thresh, cfg.safs_cap
        )
        b_img = lss_splat(img_feats, cameras, bins, grid_l)
    else:
        v_img = empty_voxel_set(grid_i, cfg.channels)
        b_img = bev_map_for_grid(grid_l, cfg.channels)
    log.add("image_branch", time.perf_counter() - t, v_img, b_img)

    t = time.perf_counter()
    b_lid = sparse_height_compress(v_lidar)
    log.add("height_compress", time.perf_counter() - t, b_lid)

    t = time.perf_counter()
    vl, vi = hvf_forward(v_lidar, v_img, weights.hvf)
    log.add("voxel_fusion", time.perf_counter() - t, vl, vi)

    t = time.perf_counter()
    b_out = hbf_forward(b_lid, b_img, vl, vi, weights.hbf)
    log.add("bev_fusion", time.perf_counter() - t, b_out)

    t = time.perf_counter()
    q_easy, q_hard, b_act = pqg_forward(b_out, weights.pqg, cfg.k_easy, cfg.k_hard)
    log.add("queries", time.perf_counter() - t, b_act)

    t = time.perf_counter()
    dets = decode(
        q_easy + q_hard, b_act, vl, vi, weights.decoder, cfg.n_bev, cfg.m_vox
    )
    log.add("decode", time.perf_counter() - t)
    return dets, log


def detections_to_dicts(dets: list[DetectionBox]) -> list[dict]:
    return [
        {
            "center": [float(x) for x in d.center],
            "size": [float(s) for s in d.size],
            "yaw": float(d.yaw),
            "class": int(d.class_id),
            "score": float(d.score),
        }
        for d in dets
    ]
