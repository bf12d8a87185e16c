"""File formats: images, depth maps, masks, intrinsics, poses and manifests.

Depth files are either 16-bit PNGs (stored value / divisor = meters, 0 =
missing) or raw grids: little-endian ``uint32 width, uint32 height`` followed
by ``width * height`` float32 values, row-major.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy.spatial.transform import Rotation

from .geometry import Intrinsics, PoseSE3, invert, is_rigid
from .photometric import Frame

DEPTH_GRID_SUFFIXES = (".bin", ".depth", ".raw")


class DataError(ValueError):
    """Malformed or missing input; the message names the file (and line)."""


@dataclass
class Trajectory:
    """Camera-to-world poses (N, 4, 4) with frame indices and optional timestamps."""

    indices: np.ndarray
    poses: np.ndarray
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=int)
        self.poses = np.asarray(self.poses, dtype=float)
        if self.poses.ndim != 3 or self.poses.shape[1:] != (4, 4):
            raise ValueError(f"poses must be (N, 4, 4), got {self.poses.shape}")
        if len(self.indices) != len(self.poses):
            raise ValueError("indices and poses differ in length")
        if np.any(np.diff(self.indices) <= 0):
            raise ValueError("frame indices must be strictly increasing")
        if self.timestamps is not None:
            self.timestamps = np.asarray(self.timestamps, dtype=float)
            if len(self.timestamps) != len(self.poses):
                raise ValueError("timestamps and poses differ in length")
        for i, T in enumerate(self.poses):
            if not is_rigid(T, 1e-6):
                raise ValueError(f"pose {i} is not rigid")

    def __len__(self):
        return len(self.poses)

    @classmethod
    def from_poses(cls, poses, timestamps=None) -> "Trajectory":
        poses = np.asarray(poses, dtype=float)
        return cls(np.arange(len(poses)), poses, timestamps)


# -- images -----------------------------------------------------------------


def _open(path):
    try:
        return PILImage.open(path)
    except FileNotFoundError:
        raise DataError(f"{path}: file not found") from None
    except OSError as exc:
        raise DataError(f"{path}: unreadable image ({exc})") from None


def load_image(path, size: tuple[int, int] | None = None) -> np.ndarray:
    """Decode an 8- or 16-bit PNG/JPEG to an (H, W, C) float array in [0, 1].

    ``size=(width, height)`` resamples with bilinear filtering; rescale the
    intrinsics with :meth:`Intrinsics.scaled` to match.
    """
    with _open(path) as im:
        im.load()
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
            if size is not None:
                arr = np.asarray(
                    PILImage.fromarray(arr.astype(np.float32), mode="F").resize(size, PILImage.BILINEAR),
                    dtype=np.float64,
                )
            return arr[..., None]
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK", "YCbCr") else "L")
        if size is not None:
            im = im.resize(size, PILImage.BILINEAR)
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return arr[..., None] if arr.ndim == 2 else arr


def save_image(path, image, bits: int = 8) -> None:
    """Write a single-channel or RGB image in [0, 1] as PNG."""
    img = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if bits == 16:
        if img.ndim != 2:
            raise ValueError("16-bit output supports single-channel images only")
        PILImage.fromarray(np.round(img * 65535).astype(np.uint16)).save(path)
    elif bits == 8:
        PILImage.fromarray(np.round(img * 255).astype(np.uint8)).save(path)
    else:
        raise ValueError("bits must be 8 or 16")


def load_mask(path, size: tuple[int, int] | None = None) -> np.ndarray:
    """8-bit grayscale PNG mapped to [0, 1] weights."""
    with _open(path) as im:
        if im.mode != "L":
            raise DataError(f"{path}: mask must be 8-bit grayscale, got mode {im.mode}")
        if size is not None:
            im = im.resize(size, PILImage.NEAREST)
        return np.asarray(im, dtype=np.float64) / 255.0


# -- depth ------------------------------------------------------------------


def save_depth_grid(path, depth) -> None:
    depth = np.asarray(depth, dtype=np.float32)
    h, w = depth.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", w, h))
        fh.write(depth.astype("<f4").tobytes())


def _load_depth_grid(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise DataError(f"{path}: truncated depth grid header")
    w, h = struct.unpack("<II", data[:8])
    if len(data) != 8 + 4 * w * h:
        raise DataError(f"{path}: depth grid holds {len(data) - 8} bytes, expected {4 * w * h} for {w}x{h}")
    return np.frombuffer(data, dtype="<f4", offset=8).reshape(h, w)


def save_depth_png(path, depth, scale_divisor: float = 256.0) -> None:
    depth = np.asarray(depth, dtype=float)
    ok = np.isfinite(depth) & (depth > 0)
    stored = np.where(ok, np.round(depth * scale_divisor), 0)
    if stored.max(initial=0) > 65535:
        raise ValueError("depth exceeds the 16-bit range for this divisor")
    PILImage.fromarray(stored.astype(np.uint16)).save(path)


def load_depth(path, scale_divisor: float = 256.0, size: tuple[int, int] | None = None) -> np.ndarray:
    """Depth map in meters; missing pixels are 0.

    Raw grids are selected by file suffix (``.bin``, ``.depth``, ``.raw``);
    everything else must be a 16-bit PNG.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    if path.suffix.lower() in DEPTH_GRID_SUFFIXES:
        depth = _load_depth_grid(path).astype(np.float64)
        depth = np.where(np.isfinite(depth) & (depth > 0), depth, 0.0)
    else:
        with _open(path) as im:
            if im.mode not in ("I;16", "I;16B", "I;16L", "I"):
                raise DataError(f"{path}: depth PNG must be 16-bit, got mode {im.mode}")
            depth = np.asarray(im, dtype=np.float64) / scale_divisor
    if size is not None:
        depth = np.asarray(
            PILImage.fromarray(depth.astype(np.float32), mode="F").resize(size, PILImage.NEAREST),
            dtype=np.float64,
        )
    return depth


# -- intrinsics -------------------------------------------------------------


def load_intrinsics(path, image_size: tuple[int, int] | None = None, camera: str = "P2") -> Intrinsics:
    """Read ``fx fy cx cy width height`` or a KITTI calibration file.

    KITTI files carry no image size, so ``image_size=(width, height)`` is
    required for them. ``camera`` picks the projection line (``P0``..``P3``).
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from None
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise DataError(f"{path}: empty intrinsics file")
    proj = {}
    for lineno, ln in enumerate(text.splitlines(), start=1):
        if ":" in ln:
            key, _, rest = ln.partition(":")
            proj[key.strip()] = (lineno, rest)
    try:
        if proj:
            key = camera if camera in proj else next((k for k in ("P2", "P0") if k in proj), None)
            if key is None:
                raise DataError(f"{path}: no {camera} projection line")
            lineno, rest = proj[key]
            vals = [float(x) for x in rest.split()]
            if len(vals) != 12:
                raise DataError(f"{path}:{lineno}: {key} needs 12 values, found {len(vals)}")
            if image_size is None:
                raise DataError(f"{path}: KITTI calibration needs an explicit image size")
            P = np.array(vals).reshape(3, 4)
            return Intrinsics(P[0, 0], P[1, 1], P[0, 2], P[1, 2], int(image_size[0]), int(image_size[1]))
        vals = lines[0].split()
        if len(vals) != 6:
            raise DataError(f"{path}:1: expected 'fx fy cx cy width height', found {len(vals)} fields")
        fx, fy, cx, cy = (float(v) for v in vals[:4])
        w, h = float(vals[4]), float(vals[5])
        if w != int(w) or h != int(h):
            raise DataError(f"{path}:1: image size must be integral")
        return Intrinsics(fx, fy, cx, cy, int(w), int(h))
    except DataError:
        raise
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def save_intrinsics(path, K: Intrinsics) -> None:
    Path(path).write_text(f"{K.fx!r} {K.fy!r} {K.cx!r} {K.cy!r} {K.width} {K.height}\n")


# -- poses ------------------------------------------------------------------


def _nearest_rotation(R) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt


def load_poses_kitti(path) -> np.ndarray:
    """Read one row-major 3x4 pose per line into an (N, 4, 4) array.

    Rotations within 1e-4 of orthonormal are projected onto SO(3); exactly
    rigid rows are kept bit for bit.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from None
    poses = []
    for lineno, ln in enumerate(text.splitlines(), start=1):
        if not ln.strip():
            continue
        fields = ln.split()
        if len(fields) != 12:
            raise DataError(f"{path}:{lineno}: expected 12 values, found {len(fields)}")
        try:
            vals = np.array([float(x) for x in fields])
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric value") from None
        T = np.eye(4)
        T[:3] = vals.reshape(3, 4)
        R = T[:3, :3]
        if not np.all(np.isfinite(T)) or np.max(np.abs(R.T @ R - np.eye(3))) > 1e-4 or np.linalg.det(R) <= 0:
            raise DataError(f"{path}:{lineno}: rotation block is not a rotation")
        if not is_rigid(T):
            T[:3, :3] = _nearest_rotation(R)
        poses.append(T)
    if not poses:
        raise DataError(f"{path}: no poses")
    return np.stack(poses)


def save_poses_kitti(path, poses) -> None:
    poses = getattr(poses, "poses", poses)
    with open(path, "w") as fh:
        for T in np.asarray(poses, dtype=float):
            fh.write(" ".join(repr(float(x)) for x in T[:3].ravel()) + "\n")


def save_tum(path, traj: Trajectory) -> None:
    """``timestamp tx ty tz qx qy qz qw`` per line; indices stand in for missing timestamps."""
    stamps = traj.timestamps if traj.timestamps is not None else traj.indices.astype(float)
    quats = Rotation.from_matrix(traj.poses[:, :3, :3]).as_quat()
    with open(path, "w") as fh:
        for ts, T, q in zip(stamps, traj.poses, quats):
            q = q / np.linalg.norm(q)
            vals = [ts, *T[:3, 3], *q]
            fh.write(" ".join(repr(float(v)) for v in vals) + "\n")


def load_tum(path) -> Trajectory:
    path = Path(path)
    stamps, poses = [], []
    for lineno, ln in enumerate(path.read_text().splitlines(), start=1):
        if not ln.strip() or ln.lstrip().startswith("#"):
            continue
        fields = ln.split()
        if len(fields) != 8:
            raise DataError(f"{path}:{lineno}: expected 8 values, found {len(fields)}")
        try:
            v = [float(x) for x in fields]
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric value") from None
        T = np.eye(4)
        T[:3, :3] = Rotation.from_quat(v[4:]).as_matrix()
        T[:3, 3] = v[1:4]
        stamps.append(v[0])
        poses.append(T)
    return Trajectory(np.arange(len(poses)), np.stack(poses), np.array(stamps))


def save_trajectory(traj: Trajectory, fmt: str, path) -> None:
    if fmt == "kitti":
        save_poses_kitti(path, traj.poses)
    elif fmt == "tum":
        save_tum(path, traj)
    else:
        raise ValueError(f"unknown trajectory format {fmt!r}")


def relative_from_absolute(poses) -> list:
    """Motions ``inv(T_{i-1}) T_i`` between consecutive camera-to-world poses."""
    poses = np.asarray(getattr(poses, "poses", poses), dtype=float)
    if len(poses) < 2:
        raise ValueError("need at least two poses")
    return [PoseSE3.from_matrix(invert(a) @ b) for a, b in zip(poses[:-1], poses[1:])]


def absolute_from_relative(relatives, start=None) -> np.ndarray:
    out = [np.eye(4) if start is None else np.asarray(start, dtype=float)]
    for rel in relatives:
        M = rel.matrix if isinstance(rel, PoseSE3) else np.asarray(rel, dtype=float)
        out.append(out[-1] @ M)
    return np.stack(out)


def load_relative_poses(path) -> list:
    """One ``rx ry rz tx ty tz`` relative motion per line."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from None
    out = []
    for lineno, ln in enumerate(text.splitlines(), start=1):
        if not ln.strip() or ln.lstrip().startswith("#"):
            continue
        fields = ln.split()
        if len(fields) != 6:
            raise DataError(f"{path}:{lineno}: expected 6 values, found {len(fields)}")
        try:
            vals = [float(x) for x in fields]
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric value") from None
        if not all(math.isfinite(v) for v in vals):
            raise DataError(f"{path}:{lineno}: non-finite value")
        out.append(PoseSE3.from_vector(vals))
    return out


def save_relative_poses(path, poses) -> None:
    with open(path, "w") as fh:
        for p in poses:
            fh.write(" ".join(repr(float(x)) for x in p.as_vector()) + "\n")


# -- manifest ---------------------------------------------------------------


@dataclass
class FrameRecord:
    image: Path
    depth: Path
    mask: Path | None = None
    timestamp: float | None = None


@dataclass
class SequenceManifest:
    """Ordered frame list plus intrinsics and initial-pose sources.

    JSON layout::

        {"intrinsics": "calib.txt", "image_size": [w, h], "resize": [w, h],
         "depth_scale_divisor": 256,
         "initial_poses": {"path": "init.txt", "format": "kitti" | "relative"},
         "frames": [{"image": ..., "depth": ..., "mask": ..., "timestamp": ...}]}

    Relative paths resolve against the manifest's directory. ``image_size``
    is only needed for KITTI calibration files.
    """

    frames: list
    intrinsics: Path
    initial_poses: Path
    initial_pose_format: str = "kitti"
    depth_scale_divisor: float = 256.0
    image_size: tuple | None = None
    resize: tuple | None = None
    camera: str = "P2"
    path: Path | None = None
    extra: dict = field(default_factory=dict)


def load_manifest(path) -> SequenceManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise DataError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    base = path.parent

    def resolve(p):
        return p if p is None else (base / p)

    def need(obj, key, where):
        if key not in obj:
            raise DataError(f"{path}: missing field {where}{key!r}")
        return obj[key]

    init = need(raw, "initial_poses", "")
    if isinstance(init, str):
        init = {"path": init}
    fmt = init.get("format", "kitti")
    if fmt not in ("kitti", "relative"):
        raise DataError(f"{path}: initial_poses.format must be 'kitti' or 'relative', got {fmt!r}")
    frames = []
    for i, rec in enumerate(need(raw, "frames", "")):
        frames.append(
            FrameRecord(
                resolve(need(rec, "image", f"frames[{i}].")),
                resolve(need(rec, "depth", f"frames[{i}].")),
                resolve(rec.get("mask")),
                rec.get("timestamp"),
            )
        )
    if len(frames) < 2:
        raise DataError(f"{path}: a sequence needs at least two frames, found {len(frames)}")
    divisor = float(raw.get("depth_scale_divisor", 256.0))
    if not divisor > 0:
        raise DataError(f"{path}: depth_scale_divisor must be positive")
    m = SequenceManifest(
        frames=frames,
        intrinsics=resolve(need(raw, "intrinsics", "")),
        initial_poses=resolve(need(init, "path", "initial_poses.")),
        initial_pose_format=fmt,
        depth_scale_divisor=divisor,
        image_size=tuple(raw["image_size"]) if raw.get("image_size") else None,
        resize=tuple(raw["resize"]) if raw.get("resize") else None,
        camera=raw.get("camera", "P2"),
        path=path,
    )
    missing = [p for rec in frames for p in (rec.image, rec.depth, rec.mask) if p is not None and not p.exists()]
    missing += [p for p in (m.intrinsics, m.initial_poses) if not p.exists()]
    if missing:
        raise DataError(f"{path}: referenced file not found: {missing[0]}")
    return m


def save_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


@dataclass
class LoadedSequence:
    frames: list
    K: Intrinsics
    init_poses: list
    timestamps: np.ndarray | None


def load_frame(rec: FrameRecord, divisor: float, size=None) -> Frame:
    image = load_image(rec.image, size)
    depth = load_depth(rec.depth, divisor, size)
    if depth.shape != image.shape[:2]:
        raise DataError(f"{rec.depth}: depth is {depth.shape[1]}x{depth.shape[0]}, image is {image.shape[1]}x{image.shape[0]}")
    mask = None
    if rec.mask is not None:
        mask = load_mask(rec.mask, size)
        if mask.shape != depth.shape:
            raise DataError(f"{rec.mask}: mask size does not match image")
    return Frame(image, depth, mask)


def load_sequence(manifest: SequenceManifest) -> LoadedSequence:
    """Load all frames, the intrinsics and the relative initial poses."""
    first = load_image(manifest.frames[0].image)
    native = (first.shape[1], first.shape[0])
    K = load_intrinsics(manifest.intrinsics, manifest.image_size or native, manifest.camera)
    if (K.width, K.height) != native:
        raise DataError(f"{manifest.intrinsics}: intrinsics are for {K.width}x{K.height}, images are {native[0]}x{native[1]}")
    size = None
    if manifest.resize is not None and tuple(manifest.resize) != native:
        size = (int(manifest.resize[0]), int(manifest.resize[1]))
        K = K.scaled(*size)
    frames = []
    for rec in manifest.frames:
        f = load_frame(rec, manifest.depth_scale_divisor, size)
        if f.shape != (K.height, K.width):
            raise DataError(f"{rec.image}: resolution {f.shape[1]}x{f.shape[0]} differs from the first frame")
        frames.append(f)
    if manifest.initial_pose_format == "kitti":
        absolute = load_poses_kitti(manifest.initial_poses)
        if len(absolute) != len(frames):
            raise DataError(f"{manifest.initial_poses}: {len(absolute)} poses for {len(frames)} frames")
        init = relative_from_absolute(absolute)
    else:
        init = load_relative_poses(manifest.initial_poses)
        if len(init) != len(frames) - 1:
            raise DataError(f"{manifest.initial_poses}: {len(init)} relative poses for {len(frames)} frames")
    stamps = [rec.timestamp for rec in manifest.frames]
    timestamps = None if any(s is None for s in stamps) else np.array(stamps, dtype=float)
    return LoadedSequence(frames, K, init, timestamps)
