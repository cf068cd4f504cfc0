"""Synthetic scene generation: surface-sampled boxes, clutter, blob images.

Stands in for a real driving dataset. Points are sampled on oriented box
surfaces plus a uniform ground-clutter layer; each camera renders objects as
class-colored Gaussian blobs on a dark background, which gives the image
branch structured input with controllable appearance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import CameraModel, fnv1a64, load_tensor, prng_fill, save_tensor
from .jsonio import dump, load

DEFAULT_IMAGE_SIZE = (64, 96)
DEFAULT_FOCAL = 48.0
CAMERA_HEIGHT = 2.0
GROUND_LAYER = 0.5
BACKGROUND = 0.05
CLASS_COLORS = (
    (1.0, 0.25, 0.2),
    (0.2, 1.0, 0.25),
    (0.25, 0.2, 1.0),
)


@dataclass(frozen=True)
class SceneObject:
    class_id: int
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float
    density: float = 40.0  # surface points per square meter

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError("class_id must be >= 0")
        if len(self.center) != 3 or len(self.size) != 3:
            raise ValueError("center and size must have three components")
        if any(s <= 0.0 for s in self.size):
            raise ValueError(f"box size must be positive, got {self.size}")
        if self.density <= 0.0:
            raise ValueError("point density must be > 0")


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    x_range: tuple[float, float] = (-54.0, 54.0)
    y_range: tuple[float, float] = (-54.0, 54.0)
    z_range: tuple[float, float] = (-5.0, 3.0)
    objects: tuple[SceneObject, ...] = ()
    cameras: tuple[CameraModel, ...] = ()
    image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE
    n_clutter: int = 3000
    noise_sigma: float = 0.02

    def __post_init__(self):
        for name in ("x_range", "y_range", "z_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} must be ascending")
        ranges = (self.x_range, self.y_range, self.z_range)
        for obj in self.objects:
            for axis, (lo, hi) in enumerate(ranges):
                c = obj.center[axis]
                if not lo <= c <= hi:
                    raise ValueError(
                        f"object center {obj.center} outside world range on axis {axis}"
                    )
        if not self.cameras:
            object.__setattr__(self, "cameras", default_cameras(image_size=self.image_size))
        for cam in self.cameras:
            if tuple(cam.image_size) != tuple(self.image_size):
                raise ValueError("camera image_size must match scene image_size")
        if self.n_clutter < 0:
            raise ValueError("n_clutter must be >= 0")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be >= 0")
        h, w = self.image_size
        if h < 8 or w < 8 or h % 4 or w % 4:
            raise ValueError("image size must be multiples of 4, at least 8")


def default_cameras(
    n: int = 4, image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE
) -> tuple[CameraModel, ...]:
    """Ring of cameras at the origin, 90-degree yaw steps, looking outward."""
    h, w = image_size
    intr = np.array(
        [
            [DEFAULT_FOCAL, 0.0, (w - 1) / 2.0],
            [0.0, DEFAULT_FOCAL, (h - 1) / 2.0],
            [0.0, 0.0, 1.0],
        ],
        dtype=np.float64,
    )
    cams = []
    pos = np.array([0.0, 0.0, CAMERA_HEIGHT])
    for i in range(n):
        yaw = 2.0 * math.pi * i / n
        c, s = math.cos(yaw), math.sin(yaw)
        # camera axes: x right, y down, z forward (= world heading (c, s, 0))
        rot = np.array(
            [
                [s, -c, 0.0],
                [0.0, 0.0, -1.0],
                [c, s, 0.0],
            ],
            dtype=np.float64,
        )
        extr = np.eye(4)
        extr[:3, :3] = rot
        extr[:3, 3] = -rot @ pos
        cams.append(CameraModel(intrinsics=intr, extrinsics=extr, image_size=(h, w)))
    return tuple(cams)


def _stream(label: str, seed: int, count: int) -> np.ndarray:
    _, vals = prng_fill(fnv1a64(label) ^ (seed & 0xFFFFFFFFFFFFFFFF), count)
    return vals


def _normals(label: str, seed: int, count: int) -> np.ndarray:
    u = _stream(label, seed, 2 * count)
    r = np.sqrt(-2.0 * np.log(1.0 - u[:count]))
    return r * np.cos(2.0 * math.pi * u[count:])


def sample_object_points(obj: SceneObject, seed: int, index: int) -> np.ndarray:
    """Sample (n, 4) points uniformly on the box surface, intensity in [0,1)."""
    length, width, height = obj.size
    areas = np.array(
        [
            width * height,
            width * height,
            length * height,
            length * height,
            length * width,
            length * width,
        ]
    )
    total = float(areas.sum())
    n = max(1, int(math.ceil(obj.density * total)))
    u = _stream(f"scene.object{index}.surface", seed, 3 * n)
    pick, ua, ub = u[:n], u[n : 2 * n], u[2 * n :]
    face = np.searchsorted(np.cumsum(areas) / total, pick, side="right")
    face = np.minimum(face, 5)

    half = np.array([length, width, height]) / 2.0
    local = np.empty((n, 3))
    axis = face // 2  # 0: +/-x face, 1: +/-y, 2: +/-z
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    others = np.array([(1, 2), (0, 2), (0, 1)])
    for ax in range(3):
        rows = axis == ax
        o1, o2 = others[ax]
        local[rows, ax] = sign[rows] * half[ax]
        local[rows, o1] = (ua[rows] - 0.5) * 2.0 * half[o1]
        local[rows, o2] = (ub[rows] - 0.5) * 2.0 * half[o2]

    c, s = math.cos(obj.yaw), math.sin(obj.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    world = local @ rot.T + np.asarray(obj.center)
    intensity = _stream(f"scene.object{index}.intensity", seed, n)
    return np.concatenate([world, intensity[:, None]], axis=1).astype(np.float32)


def _clutter_points(spec: SceneSpec) -> np.ndarray:
    n = spec.n_clutter
    if n == 0:
        return np.zeros((0, 4), dtype=np.float32)
    u = _stream("scene.clutter", spec.seed, 4 * n).reshape(4, n)
    x = spec.x_range[0] + u[0] * (spec.x_range[1] - spec.x_range[0])
    y = spec.y_range[0] + u[1] * (spec.y_range[1] - spec.y_range[0])
    z = spec.z_range[0] + u[2] * GROUND_LAYER
    return np.stack([x, y, z, u[3]], axis=1).astype(np.float32)


def gen_points(spec: SceneSpec) -> np.ndarray:
    """Full scene cloud: object surfaces (jittered by noise_sigma) + clutter."""
    parts = []
    for i, obj in enumerate(spec.objects):
        pts = sample_object_points(obj, spec.seed, i)
        if spec.noise_sigma > 0.0:
            jitter = _normals(f"scene.object{i}.noise", spec.seed, 3 * pts.shape[0])
            pts = pts.copy()
            pts[:, :3] += spec.noise_sigma * jitter.reshape(pts.shape[0], 3).astype(
                np.float32
            )
        parts.append(pts)
    parts.append(_clutter_points(spec))
    return np.concatenate(parts, axis=0).astype(np.float32)


def render_images(spec: SceneSpec) -> list[np.ndarray]:
    """One (h, w, 3) float image per camera, blobs over dark background."""
    h, w = spec.image_size
    vv, uu = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    images = []
    for cam in spec.cameras:
        img = np.full((h, w, 3), BACKGROUND, dtype=np.float64)
        for obj in spec.objects:
            pt = np.asarray(obj.center, dtype=np.float64)[None, :]
            cam_pt = cam.world_to_cam(pt)[0]
            z = cam_pt[2]
            if z < 0.5:
                continue
            u = cam.intrinsics[0, 0] * cam_pt[0] / z + cam.intrinsics[0, 2]
            v = cam.intrinsics[1, 1] * cam_pt[1] / z + cam.intrinsics[1, 2]
            radius = cam.intrinsics[0, 0] * 0.5 * max(obj.size[0], obj.size[1]) / z
            radius = min(max(radius, 1.0), 30.0)
            if u < -3 * radius or u > w - 1 + 3 * radius:
                continue
            if v < -3 * radius or v > h - 1 + 3 * radius:
                continue
            blob = np.exp(-((uu - u) ** 2 + (vv - v) ** 2) / (2.0 * (radius / 2.0) ** 2))
            color = np.asarray(CLASS_COLORS[obj.class_id % len(CLASS_COLORS)])
            img += blob[:, :, None] * color[None, None, :]
        images.append(np.clip(img, 0.0, 1.0).astype(np.float32))
    return images


def gen_scene(spec: SceneSpec, out_dir: str | Path) -> Path:
    """Write points.bin, cam_<i>.bin, cameras.json, gt.json under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_tensor(out / "points.bin", gen_points(spec))
    for i, img in enumerate(render_images(spec)):
        save_tensor(out / f"cam_{i}.bin", img)
    cams = [
        {
            "intrinsics": cam.intrinsics.tolist(),
            "extrinsics": cam.extrinsics.tolist(),
            "image_size": list(spec.image_size),
        }
        for cam in spec.cameras
    ]
    dump({"cameras": cams}, out / "cameras.json")
    gt = [
        {
            "class": obj.class_id,
            "center": list(obj.center),
            "size": list(obj.size),
            "yaw": obj.yaw,
        }
        for obj in spec.objects
    ]
    dump({"objects": gt}, out / "gt.json")
    return out


def load_scene(scene_dir: str | Path):
    """Read a scene directory -> (points, images, cameras, gt dict)."""
    d = Path(scene_dir)
    if not (d / "points.bin").exists():
        raise FileNotFoundError(f"not a scene directory (no points.bin): {d}")
    points = load_tensor(d / "points.bin")
    if points.ndim != 2 or points.shape[1] != 4:
        raise ValueError(f"points.bin must be (n, 4), got {points.shape}")
    meta = load(d / "cameras.json")
    cameras = []
    images = []
    for i, cam in enumerate(meta["cameras"]):
        cameras.append(
            CameraModel(
                intrinsics=np.asarray(cam["intrinsics"], dtype=np.float64),
                extrinsics=np.asarray(cam["extrinsics"], dtype=np.float64),
                image_size=tuple(int(s) for s in cam["image_size"]),
            )
        )
        img = load_tensor(d / f"cam_{i}.bin")
        expect = tuple(cam["image_size"]) + (3,)
        if img.shape != expect:
            raise ValueError(f"cam_{i}.bin shape {img.shape} != declared {expect}")
        images.append(img)
    gt = load(d / "gt.json")
    return points, images, cameras, gt


def spec_to_dict(spec: SceneSpec) -> dict:
    return {
        "seed": spec.seed,
        "x_range": list(spec.x_range),
        "y_range": list(spec.y_range),
        "z_range": list(spec.z_range),
        "objects": [
            {
                "class": o.class_id,
                "center": list(o.center),
                "size": list(o.size),
                "yaw": o.yaw,
                "density": o.density,
            }
            for o in spec.objects
        ],
        "image_size": list(spec.image_size),
        "n_clutter": spec.n_clutter,
        "noise_sigma": spec.noise_sigma,
    }


def spec_from_dict(data: dict) -> SceneSpec:
    objects = tuple(
        SceneObject(
            class_id=int(o["class"]),
            center=tuple(o["center"]),
            size=tuple(o["size"]),
            yaw=float(o["yaw"]),
            density=float(o.get("density", 40.0)),
        )
        for o in data.get("objects", [])
    )
    kwargs = dict(seed=int(data["seed"]), objects=objects)
    for key in ("x_range", "y_range", "z_range", "image_size"):
        if key in data:
            kwargs[key] = tuple(data[key])
    for key in ("n_clutter", "noise_sigma"):
        if key in data:
            kwargs[key] = data[key]
    return SceneSpec(**kwargs)


def save_spec(spec: SceneSpec, path: str | Path) -> None:
    dump(spec_to_dict(spec), path)


def load_spec(path: str | Path) -> SceneSpec:
    return spec_from_dict(load(path))
