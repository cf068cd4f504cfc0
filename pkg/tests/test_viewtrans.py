import numpy as np
import pytest

from ddhf import oracles
from ddhf.core import CameraModel, GridSpec
from ddhf.viewtrans import (
    DepthBinSpec,
    ImageEncoderWeights,
    ImageFeatureSet,
    bilinear_sample,
    encode_image,
    encode_images,
    fps,
    init_image_encoder,
    lss_splat,
    project_and_sample,
    project_points,
    safs_select,
)


def make_camera(extrinsics=None, focal=20.0, image_size=(16, 24)):
    h, w = image_size
    intr = np.array([[focal, 0.0, w / 2], [0.0, focal, h / 2], [0.0, 0.0, 1.0]])
    extr = np.eye(4) if extrinsics is None else extrinsics
    return CameraModel(intrinsics=intr, extrinsics=extr, image_size=image_size)


def make_feature_set(rng, shapes, depth_bins, channels=3):
    feats, depth, sem = [], [], []
    for h, w in shapes:
        feats.append(rng.normal(size=(h, w, channels)).astype(np.float32))
        logits = rng.normal(size=(h, w, depth_bins))
        e = np.exp(logits - logits.max(axis=-1, keepdims=True))
        depth.append((e / e.sum(axis=-1, keepdims=True)).astype(np.float32))
        sem.append(rng.uniform(0.0, 1.0, size=(h, w)).astype(np.float32))
    return ImageFeatureSet(feats=tuple(feats), depth=tuple(depth), sem=tuple(sem))


def test_depth_bins_basics():
    bins = DepthBinSpec(1.0, 5.0, 8)
    assert bins.width == 0.5
    assert bins.bin_of(np.array([1.0, 1.49, 4.99])).tolist() == [0, 0, 7]
    assert bins.bin_of(np.array([0.5, 5.0])).tolist() == [-1, 8]
    centers = bins.centers()
    assert centers[0] == 1.25 and centers[-1] == 4.75
    with pytest.raises(ValueError):
        DepthBinSpec(0.0, 5.0, 8)
    with pytest.raises(ValueError):
        DepthBinSpec(2.0, 1.0, 8)


def test_encoder_zero_weights_heads():
    c = 4
    w = ImageEncoderWeights(
        conv1_k=np.zeros((3, 3, 3, c), dtype=np.float32),
        conv1_b=np.zeros(c, dtype=np.float32),
        conv2_k=np.zeros((3, 3, c, c), dtype=np.float32),
        conv2_b=np.zeros(c, dtype=np.float32),
        depth_w=np.zeros((c, 6), dtype=np.float32),
        depth_b=np.zeros(6, dtype=np.float32),
        sem_w=np.zeros((c, 1), dtype=np.float32),
        sem_b=np.zeros(1, dtype=np.float32),
    )
    img = np.zeros((8, 12, 3), dtype=np.float32)
    feats, depth, sem = encode_image(img, w)
    assert feats.shape == (2, 3, c)
    assert np.allclose(depth, 1.0 / 6.0)  # softmax of zero logits is uniform
    assert np.allclose(sem, 0.5)  # sigmoid(0)


def test_encode_images_deterministic(rng):
    w = init_image_encoder("enc", 8, 6, 11)
    imgs = [rng.uniform(size=(16, 24, 3)).astype(np.float32) for _ in range(2)]
    a = encode_images(imgs, w)
    b = encode_images(imgs, w)
    assert a.cameras == 2
    for i in range(2):
        assert np.array_equal(a.feats[i], b.feats[i])
        assert np.allclose(a.depth[i].sum(axis=-1), 1.0, atol=1e-5)
        assert a.sem[i].min() >= 0 and a.sem[i].max() <= 1


def test_bilinear_matches_oracle(rng):
    grid = rng.normal(size=(5, 7, 3))
    u = rng.uniform(-1, 8, size=40)
    v = rng.uniform(-1, 6, size=40)
    got = bilinear_sample(grid, u, v)
    for i in range(40):
        assert np.allclose(got[i], oracles.bilinear(grid, u[i], v[i]), atol=1e-6)


def test_project_matches_oracle(rng):
    cam = make_camera()
    pts = rng.uniform([-3, -3, 1], [3, 3, 6], size=(30, 3))
    u, v, z = project_points(pts, cam)
    for i in range(30):
        ou, ov, oz = oracles.project(pts[i], cam.intrinsics, cam.extrinsics)
        assert abs(u[i] - ou) <= 1e-6
        assert abs(v[i] - ov) <= 1e-6
        assert abs(z[i] - oz) <= 1e-6


def test_project_and_sample_invalid_zero(rng):
    cam = make_camera()
    grid = rng.normal(size=(4, 6, 2)).astype(np.float32)
    pts = np.array([[0.0, 0.0, 2.0], [0.0, 0.0, -2.0], [50.0, 0.0, 2.0]])
    vals, valid = project_and_sample(pts, cam, grid, stride=4)
    assert valid.tolist() == [True, False, False]
    assert np.all(vals[~valid] == 0)


def test_fps_extremes(rng):
    pts = rng.normal(size=(20, 3))
    assert fps(pts, 1).tolist() == [0]
    assert sorted(fps(pts, 20).tolist()) == list(range(20))
    with pytest.raises(ValueError):
        fps(pts, 21)
    with pytest.raises(ValueError):
        fps(pts, 0)


def test_fps_matches_oracle(rng):
    pts = rng.normal(size=(50, 3))
    assert fps(pts, 12).tolist() == list(oracles.fps(pts, 12))


def test_fps_spreads_selection():
    # two tight clusters: second pick must come from the far cluster
    a = np.zeros((5, 3))
    b = np.full((5, 3), 10.0)
    pts = np.concatenate([a, b])
    picks = fps(pts, 2)
    assert picks[0] == 0
    assert picks[1] >= 5


def brute_force_safs(grid, images, cameras, bins, d_thresh, s_thresh, cap):
    rows = []
    for ix in range(grid.nx):
        for iy in range(grid.ny):
            for iz in range(grid.nz):
                center = grid.centers(np.array([[ix, iy, iz]]))[0]
                best = None
                for idx, cam in enumerate(cameras):
                    u, v, z = oracles.project(center, cam.intrinsics, cam.extrinsics)
                    h_img, w_img = cam.image_size
                    if z <= 1e-9 or not (0 <= u <= w_img - 1) or not (0 <= v <= h_img - 1):
                        continue
                    k = int(np.floor((z - bins.d_min) / bins.width))
                    if not (0 <= k < bins.count):
                        continue
                    mu, mv = u / images.stride, v / images.stride
                    sem = float(oracles.bilinear(images.sem[idx][:, :, None], mu, mv)[0])
                    vd = float(oracles.bilinear(images.depth[idx], mu, mv)[k])
                    feat = oracles.bilinear(images.feats[idx], mu, mv)
                    if best is None or sem > best[0]:
                        best = (sem, vd, feat)
                if best is not None and best[0] > s_thresh and best[1] > d_thresh:
                    rows.append(((ix, iy, iz), best[2] * best[1]))
    if len(rows) > cap:
        centers = grid.centers(np.array([r[0] for r in rows]))
        pick = sorted(oracles.fps(centers, cap))
        rows = [rows[i] for i in pick]
    return rows


def test_safs_matches_brute_force(rng):
    grid = GridSpec(origin=(-2.0, -2.0, 1.0), voxel_size=(0.5, 0.5, 0.5), extents=(8, 8, 4))
    shift = np.eye(4)
    shift[:3, 3] = [0.3, -0.2, 0.1]
    cameras = [make_camera(), make_camera(extrinsics=shift)]
    images = make_feature_set(rng, [(4, 6), (4, 6)], depth_bins=8)
    bins = DepthBinSpec(0.5, 4.5, 8)
    got = safs_select(grid, images, cameras, bins, d_thresh=0.05, s_thresh=0.3, cap=40)
    want = brute_force_safs(grid, images, cameras, bins, 0.05, 0.3, 40)
    assert got.n == len(want)
    assert got.n > 0
    for i, (coord, feat) in enumerate(want):
        assert tuple(got.coords[i]) == coord
        assert np.allclose(got.feats[i], feat, atol=1e-5)


def test_safs_empty_when_thresholds_max(rng):
    grid = GridSpec(origin=(-2.0, -2.0, 1.0), voxel_size=(0.5, 0.5, 0.5), extents=(8, 8, 4))
    images = make_feature_set(rng, [(4, 6)], depth_bins=8)
    out = safs_select(grid, images, [make_camera()], DepthBinSpec(0.5, 4.5, 8), 1.0, 1.0, 10)
    assert out.n == 0


def test_lss_splat_delta_case():
    c = 3
    feats = np.zeros((2, 3, c), dtype=np.float32)
    feats[1, 1] = [1.0, 2.0, 3.0]
    depth = np.full((2, 3, 4), 0.25, dtype=np.float32)
    depth[1, 1] = [0.0, 0.0, 1.0, 0.0]
    sem = np.full((2, 3), 0.5, dtype=np.float32)
    images = ImageFeatureSet(feats=(feats,), depth=(depth,), sem=(sem,))
    cam = make_camera(focal=10.0, image_size=(8, 12))
    bins = DepthBinSpec(1.0, 5.0, 4)  # centers 1.5, 2.5, 3.5, 4.5
    bev = GridSpec(origin=(-2.0, -2.0, 0.0), voxel_size=(0.5, 0.5, 1.0), extents=(8, 8, 1))
    out = lss_splat(images, [cam], bins, bev)
    # pixel (1,1) maps to ray (-0.2, 0, 1); bin 2 center 3.5 lands at cell (2, 4)
    want = np.zeros((8, 8, c), dtype=np.float32)
    want[4, 2] = [1.0, 2.0, 3.0]
    assert np.allclose(out.data, want, atol=1e-6)


def test_lss_splat_matches_oracle(rng):
    images = make_feature_set(rng, [(2, 3)], depth_bins=8, channels=4)
    cam = make_camera(focal=12.0, image_size=(8, 12))
    bins = DepthBinSpec(1.0, 9.0, 8)
    bev = GridSpec(origin=(-4.0, -4.0, 0.0), voxel_size=(0.5, 0.5, 1.0), extents=(16, 16, 1))
    out = lss_splat(images, [cam], bins, bev)
    want = oracles.lss_splat(
        images.feats[0],
        images.depth[0],
        cam.intrinsics,
        cam.extrinsics,
        images.stride,
        bins.centers(),
        (bev.origin[0], bev.origin[1]),
        (bev.voxel_size[0], bev.voxel_size[1]),
        bev.nx,
        bev.ny,
    )
    assert out.data.shape == want.shape
    assert np.max(np.abs(out.data - want)) < 1e-5


def test_feature_set_validation(rng):
    bad_depth = np.full((2, 2, 4), 0.3, dtype=np.float32)
    with pytest.raises(ValueError):
        ImageFeatureSet(
            feats=(np.zeros((2, 2, 3), dtype=np.float32),),
            depth=(bad_depth,),
            sem=(np.zeros((2, 2), dtype=np.float32),),
        )
    with pytest.raises(ValueError):
        ImageFeatureSet(
            feats=(np.zeros((2, 2, 3), dtype=np.float32),),
            depth=(np.full((2, 2, 4), 0.25, dtype=np.float32),),
            sem=(np.full((2, 2), 1.5, dtype=np.float32),),
        )
