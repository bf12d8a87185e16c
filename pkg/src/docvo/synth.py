"""Synthetic textured-plane scenes with closed-form depth and occlusion.

The world frame is the camera frame of the first generated view. Camera poses
passed to :func:`render_view` are world-to-camera transforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import Z_MIN, Intrinsics, PoseSE3, invert
from .photometric import Frame
from .warp import precompute_rays


class SceneGeometryError(ValueError):
    """Raised when generated cameras would not see the scene."""


@dataclass(frozen=True)
class Texture:
    """Sum of sinusoids over 2-D surface coordinates (meters)."""

    freqs: np.ndarray  # (n, 2) cycles per meter
    phases: np.ndarray
    amps: np.ndarray

    @classmethod
    def random(cls, rng, n: int = 8, min_wavelength: float = 0.1, max_wavelength: float = 0.4):
        wavelengths = rng.uniform(min_wavelength, max_wavelength, n)
        angles = rng.uniform(0, np.pi, n)
        freqs = np.stack([np.cos(angles), np.sin(angles)], axis=1) / wavelengths[:, None]
        phases = rng.uniform(0, 2 * np.pi, n)
        amps = rng.uniform(0.5, 1.0, n)
        amps *= 0.45 / amps.sum()
        return cls(freqs, phases, amps)

    def __call__(self, a, b):
        arg = 2 * np.pi * (a[..., None] * self.freqs[:, 0] + b[..., None] * self.freqs[:, 1])
        return 0.5 + np.sum(self.amps * np.sin(arg + self.phases), axis=-1)


def _plane_basis(normal):
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(helper, n)
    e1 /= np.linalg.norm(e1)
    return n, e1, np.cross(n, e1)


@dataclass(frozen=True)
class Rectangle:
    """Planar textured rectangle: ``center + a * axis_a + b * axis_b``."""

    center: np.ndarray
    axis_a: np.ndarray
    axis_b: np.ndarray
    half_a: float
    half_b: float
    texture: Texture

    @property
    def normal(self):
        n = np.cross(self.axis_a, self.axis_b)
        return n / np.linalg.norm(n)


@dataclass(frozen=True)
class PlaneScene:
    """Textured infinite plane ``n . X = offset`` plus an optional occluder."""

    normal: np.ndarray
    offset: float
    texture: Texture
    K: Intrinsics
    occluder: Rectangle | None = None

    def __post_init__(self):
        n, _, _ = _plane_basis(self.normal)
        object.__setattr__(self, "normal", n)

    @property
    def size(self):
        return self.K.width, self.K.height


def make_plane_scene(
    K: Intrinsics,
    depth: float = 10.0,
    tilt_deg: tuple[float, float] = (0.0, 0.0),
    seed: int = 0,
    min_wavelength_px: float = 20.0,
    max_wavelength_px: float = 60.0,
) -> PlaneScene:
    """Plane crossing the optical axis of the identity camera at ``depth``.

    ``tilt_deg`` rotates the plane normal about the x and y axes. Texture
    wavelengths are given in pixels as seen at ``depth`` on the optical axis.
    """
    rng = np.random.default_rng(seed)
    ax, ay = np.deg2rad(tilt_deg)
    n = np.array([np.sin(ay) * np.cos(ax), -np.sin(ax), np.cos(ay) * np.cos(ax)])
    m_per_px = depth / K.fx
    tex = Texture.random(rng, 8, min_wavelength_px * m_per_px, max_wavelength_px * m_per_px)
    return PlaneScene(n, float(n[2] * depth), tex, K)


def make_occluder_scene(
    base: PlaneScene,
    center,
    half_size: tuple[float, float],
    seed: int = 1,
    min_wavelength_px: float = 20.0,
    max_wavelength_px: float = 60.0,
) -> PlaneScene:
    """Add a fronto-parallel textured rectangle centred at ``center``."""
    center = np.asarray(center, dtype=float)
    rng = np.random.default_rng(seed)
    m_per_px = center[2] / base.K.fx
    tex = Texture.random(rng, 8, min_wavelength_px * m_per_px, max_wavelength_px * m_per_px)
    rect = Rectangle(center, np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), *half_size, tex)
    return replace(base, occluder=rect)


def _camera_rays(scene: PlaneScene, cam_pose):
    W = np.asarray(cam_pose, dtype=float)
    C = invert(W)
    origin = C[:3, 3]
    dirs = precompute_rays(scene.K) @ C[:3, :3].T
    return origin, dirs


def _hit_plane(origin, dirs, normal, offset):
    denom = dirs @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (offset - origin @ normal) / denom
    return np.where(np.abs(denom) > 1e-12, s, np.inf)


def _hit_rectangle(origin, dirs, rect: Rectangle):
    n = rect.normal
    s = _hit_plane(origin, dirs, n, float(n @ rect.center))
    with np.errstate(invalid="ignore"):
        P = origin + dirs * s[..., None]
    rel = P - rect.center
    a = rel @ rect.axis_a
    b = rel @ rect.axis_b
    with np.errstate(invalid="ignore"):
        inside = (np.abs(a) <= rect.half_a) & (np.abs(b) <= rect.half_b) & (s > Z_MIN)
    return np.where(inside, s, np.inf), a, b


def render_view(scene: PlaneScene, cam_pose):
    """Render image (H, W, 1) and depth (H, W) for a world-to-camera pose.

    Depth is the camera-frame z of the first surface hit along each pixel ray,
    so it is exact; intensities are the surface texture at the hit point.
    """
    origin, dirs = _camera_rays(scene, cam_pose)
    s = _hit_plane(origin, dirs, scene.normal, scene.offset)
    if not np.all(np.isfinite(s) & (s > Z_MIN)):
        raise SceneGeometryError("plane is behind or parallel to the camera for some pixels")
    _, e1, e2 = _plane_basis(scene.normal)
    P = origin + dirs * s[..., None]
    image = scene.texture(P @ e1, P @ e2)
    depth = s.copy()
    if scene.occluder is not None:
        so, a, b = _hit_rectangle(origin, dirs, scene.occluder)
        front = so < s
        depth = np.where(front, so, depth)
        image = np.where(front, scene.occluder.texture(a, b), image)
    return image[..., None], depth


def occluded_set(scene: PlaneScene, cam_tgt, cam_src) -> np.ndarray:
    """Target pixels whose surface point is hidden by the occluder in the source.

    Computed by intersecting the segment from the source camera centre to each
    visible target point with the occluder rectangle.
    """
    H, W = scene.K.height, scene.K.width
    if scene.occluder is None:
        return np.zeros((H, W), dtype=bool)
    origin, dirs = _camera_rays(scene, cam_tgt)
    s = _hit_plane(origin, dirs, scene.normal, scene.offset)
    so, _, _ = _hit_rectangle(origin, dirs, scene.occluder)
    s = np.minimum(s, so)
    P = origin + dirs * s[..., None]
    src_center = invert(np.asarray(cam_src, dtype=float))[:3, 3]
    seg = P - src_center
    rect = scene.occluder
    n = rect.normal
    denom = seg @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = (rect.center - src_center) @ n / denom
        Q = src_center + seg * lam[..., None]
    rel = Q - rect.center
    with np.errstate(invalid="ignore"):
        hit = (
            (np.abs(denom) > 1e-12)
            & (lam > 0)
            & (lam < 1.0 - 1e-9)
            & (np.abs(rel @ rect.axis_a) <= rect.half_a)
            & (np.abs(rel @ rect.axis_b) <= rect.half_b)
        )
    return hit


@dataclass
class SyntheticSequence:
    """Rendered frames with ground-truth and perturbed initial relative poses.

    ``gt_relative[j]`` and ``init_relative[j]`` map camera ``j + 1`` coordinates
    into camera ``j`` coordinates. ``gt_absolute`` holds camera-to-world poses
    with the first equal to the identity.
    """

    scene: PlaneScene
    frames: list
    K: Intrinsics
    world_to_cam: list
    gt_absolute: list
    gt_relative: list
    init_relative: list
    seed: int
    extra: dict = field(default_factory=dict)


def make_sequence(
    scene: PlaneScene,
    motion,
    k: int,
    sigma_rot: float = 0.0,
    sigma_trans: float = 0.0,
    seed: int = 0,
) -> SyntheticSequence:
    """Render ``k`` views moving by ``motion`` per frame.

    ``motion`` is a 6-vector ``(r, t)``, or a list of ``k - 1`` of them, giving
    the pose of each camera in the previous camera's frame. Initial poses are
    the ground truth plus Gaussian noise on the rotation-vector (rad) and
    translation (m) components.
    """
    if k < 2:
        raise ValueError("a sequence needs at least two frames")
    motion = np.asarray(motion, dtype=float)
    steps = np.broadcast_to(motion, (k - 1, 6)) if motion.ndim == 1 else motion
    if steps.shape != (k - 1, 6):
        raise ValueError(f"expected {k - 1} motion 6-vectors, got shape {motion.shape}")
    rng = np.random.default_rng(seed)
    gt_rel = [PoseSE3.from_vector(m) for m in steps]
    absolute = [np.eye(4)]
    for rel in gt_rel:
        absolute.append(absolute[-1] @ rel.matrix)
    w2c = [invert(C) for C in absolute]
    frames = []
    for W in w2c:
        try:
            image, depth = render_view(scene, W)
        except SceneGeometryError as exc:
            raise SceneGeometryError(f"motion drives the plane out of view: {exc}") from None
        frames.append(Frame(image, depth))
    init_rel = []
    for rel in gt_rel:
        noise_r = rng.normal(0.0, sigma_rot, 3) if sigma_rot > 0 else np.zeros(3)
        noise_t = rng.normal(0.0, sigma_trans, 3) if sigma_trans > 0 else np.zeros(3)
        init_rel.append(PoseSE3(rel.r + noise_r, rel.t + noise_t))
    return SyntheticSequence(scene, frames, scene.K, w2c, absolute, gt_rel, init_rel, seed)


def default_intrinsics(width: int = 96, height: int = 72, focal: float = 80.0) -> Intrinsics:
    return Intrinsics(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


def export_bundle(seq: SyntheticSequence, out_dir) -> Path:
    """Write ``seq`` in the on-disk formats read by :mod:`docvo.dataio`.

    Layout: ``images/NNNNNN.png`` (16-bit), ``depth/NNNNNN.bin``,
    ``intrinsics.txt``, ``init_relative.txt``, ``gt_poses.txt`` (KITTI),
    ``manifest.json`` and, with an occluder, ``occlusion/NNNNNN.png`` marking
    pixels of frame ``i`` hidden in frame ``i - 1``. Returns the manifest path.
    """
    from . import dataio

    out = Path(out_dir)
    for sub in ("images", "depth"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    records = []
    for i, f in enumerate(seq.frames):
        img, dep = f"images/{i:06d}.png", f"depth/{i:06d}.bin"
        dataio.save_image(out / img, f.image, bits=16)
        dataio.save_depth_grid(out / dep, f.depth)
        records.append({"image": img, "depth": dep, "timestamp": float(i)})
    dataio.save_intrinsics(out / "intrinsics.txt", seq.K)
    dataio.save_relative_poses(out / "init_relative.txt", seq.init_relative)
    dataio.save_poses_kitti(out / "gt_poses.txt", np.stack(seq.gt_absolute))
    manifest = {
        "intrinsics": "intrinsics.txt",
        "initial_poses": {"path": "init_relative.txt", "format": "relative"},
        "depth_scale_divisor": 256.0,
        "frames": records,
        "ground_truth": "gt_poses.txt",
    }
    if seq.scene.occluder is not None:
        (out / "occlusion").mkdir(exist_ok=True)
        for i in range(1, len(seq.frames)):
            occ = occluded_set(seq.scene, seq.world_to_cam[i], seq.world_to_cam[i - 1])
            dataio.save_image(out / "occlusion" / f"{i:06d}.png", occ.astype(float), bits=8)
        manifest["occlusion"] = [f"occlusion/{i:06d}.png" for i in range(1, len(seq.frames))]
    path = out / "manifest.json"
    dataio.save_manifest(path, manifest)
    return path
