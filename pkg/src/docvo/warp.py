"""Inverse warping of a source frame into a target frame.

Images are float arrays of shape (H, W, C) with values in [0, 1]; depth maps
are (H, W) arrays in meters where non-positive or non-finite entries mark
missing depth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .geometry import Z_MIN, Intrinsics, is_rigid

# coordinates this far (px) outside the image still count as inside; absorbs
# round-off of pixels reprojected onto the border
BOUND_TOL = 1e-9


def as_image(img) -> np.ndarray:
    """View ``img`` as an (H, W, C) float array."""
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"image must be HxW, HxWx1 or HxWx3, got shape {img.shape}")
    if not np.issubdtype(img.dtype, np.floating):
        img = img.astype(np.float64)
    return img


def depth_valid(depth) -> np.ndarray:
    depth = np.asarray(depth, dtype=float)
    return np.isfinite(depth) & (depth > 0)


def precompute_rays(K: Intrinsics) -> np.ndarray:
    """Per-pixel rays ``((u - cx)/fx, (v - cy)/fy, 1)``, shape (H, W, 3).

    A camera-frame point is ``rays[v, u] * depth[v, u]``.
    """
    u = np.arange(K.width, dtype=float)
    v = np.arange(K.height, dtype=float)
    uu, vv = np.meshgrid(u, v)
    rays = np.stack([(uu - K.cx) / K.fx, (vv - K.cy) / K.fy, np.ones_like(uu)], axis=-1)
    rays.flags.writeable = False
    return rays


def bilinear_cells(u, v, width: int, height: int):
    """Top-left corner of the interpolation cell for each coordinate.

    Corners are clipped so the 2x2 neighbourhood stays inside the image; for
    out-of-range coordinates the interpolant is therefore a linear extension of
    the nearest border cell.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        u = np.nan_to_num(u, nan=0.0, posinf=width, neginf=-1.0)
        v = np.nan_to_num(v, nan=0.0, posinf=height, neginf=-1.0)
    x0 = np.clip(np.floor(u), 0, max(width - 2, 0)).astype(np.intp)
    y0 = np.clip(np.floor(v), 0, max(height - 2, 0)).astype(np.intp)
    return x0, y0


def in_bounds(u, v, width: int, height: int) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    with np.errstate(invalid="ignore"):
        return (u >= -BOUND_TOL) & (u <= width - 1 + BOUND_TOL) & (v >= -BOUND_TOL) & (v <= height - 1 + BOUND_TOL)


def bilinear_sample(img, u, v, cells=None, with_grad: bool = False):
    """Bilinearly interpolate ``img`` at continuous pixel coordinates.

    Returns ``(values, inside)``, or ``(values, inside, d_du, d_dv)`` when
    ``with_grad`` is set. ``values`` has shape ``u.shape + (C,)``. Coordinates
    outside ``[0, W-1] x [0, H-1]`` are reported through ``inside``; their
    values are meaningless. ``cells`` overrides the interpolation cell choice
    (see :func:`bilinear_cells`).
    """
    img = as_image(img) if np.ndim(img) != 3 else np.asarray(img, dtype=float)
    H, W, _ = img.shape
    scalar = np.ndim(u) == 0
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    x0, y0 = bilinear_cells(u, v, W, H) if cells is None else cells
    inside = in_bounds(u, v, W, H)
    with np.errstate(invalid="ignore"):
        fu = (u - x0)[..., None]
        fv = (v - y0)[..., None]
    flat = img.reshape(H * W, -1)
    idx = y0 * W + x0
    dx = 1 if W > 1 else 0
    dy = W if H > 1 else 0
    i00 = np.take(flat, idx, axis=0)
    i01 = np.take(flat, idx + dx, axis=0)
    i10 = np.take(flat, idx + dy, axis=0)
    i11 = np.take(flat, idx + dx + dy, axis=0)
    top = i00 + fu * (i01 - i00)
    bottom = i10 + fu * (i11 - i10)
    values = top + fv * (bottom - top)
    if scalar:
        values, inside = values[0], bool(inside[0])
    if not with_grad:
        return values, inside
    d_du = (1.0 - fv) * (i01 - i00) + fv * (i11 - i10)
    d_dv = bottom - top
    if scalar:
        d_du, d_dv = d_du[0], d_dv[0]
    return values, inside, d_du, d_dv


@dataclass
class WarpResult:
    """Source frame resampled onto the target pixel grid.

    ``warped`` holds raw interpolated values everywhere; only pixels flagged in
    ``valid`` are meaningful.

    ``coords`` is (H, W, 2) holding source ``(u, v)``; ``z_transformed`` the
    depth of each target point expressed in the source camera;
    ``sampled_depth`` the source depth map sampled at ``coords`` (NaN where
    unavailable), or None when no source depth was supplied. ``points`` holds
    the target-frame 3-D points and ``points_src`` the same points in the source
    frame, both (H, W, 3).
    """

    warped: np.ndarray
    valid: np.ndarray
    coords: np.ndarray
    z_transformed: np.ndarray
    sampled_depth: np.ndarray | None
    points: np.ndarray
    points_src: np.ndarray
    cells: tuple
    grad_u: np.ndarray | None = None
    grad_v: np.ndarray | None = None


def inverse_warp(
    depth_tgt,
    T,
    src_img,
    K: Intrinsics,
    rays=None,
    src_depth=None,
    cells=None,
    with_grad: bool = False,
) -> WarpResult:
    """Synthesize the target view by sampling ``src_img``.

    ``T`` maps target-camera coordinates to source-camera coordinates.
    """
    src_img = as_image(src_img)
    depth_tgt = np.asarray(depth_tgt, dtype=float)
    H, W = depth_tgt.shape
    if src_img.shape[:2] != (H, W) or (K.height, K.width) != (H, W):
        raise ValueError(
            f"dimension mismatch: depth {depth_tgt.shape}, image {src_img.shape[:2]}, "
            f"intrinsics {K.height}x{K.width}"
        )
    if src_depth is not None and np.shape(src_depth) != (H, W):
        raise ValueError(f"dimension mismatch: source depth {np.shape(src_depth)} vs {(H, W)}")
    T = np.asarray(T, dtype=float)
    if not is_rigid(T):
        raise ValueError("warp transform is not rigid")
    if rays is None:
        rays = precompute_rays(K)

    C = src_img.shape[2]
    if src_depth is not None:
        src_depth = np.asarray(src_depth, dtype=float)
        src_ok = depth_valid(src_depth)
        # depth and its validity ride along as extra channels
        stacked = np.concatenate(
            [src_img, np.where(src_ok, src_depth, 0.0)[..., None], src_ok[..., None]], axis=2
        )
    else:
        stacked = src_img
    n = H * W
    Cs = stacked.shape[2]
    points = np.empty((n, 3))
    points_src = np.empty((n, 3))
    coords = np.empty((n, 2))
    z = np.empty(n)
    x0 = np.empty(n, dtype=np.intp)
    y0 = np.empty(n, dtype=np.intp)
    values = np.empty((n, Cs))
    grad_u = np.empty((n, C) if with_grad else (0, C))
    grad_v = np.empty_like(grad_u)
    valid = np.empty(n, dtype=np.bool_)
    use_cells = cells is not None
    cx_in, cy_in = (np.ravel(cells[0]), np.ravel(cells[1])) if use_cells else (x0, y0)
    _kernels.warp_pixels(
        np.ascontiguousarray(depth_tgt), np.ascontiguousarray(rays, dtype=float),
        np.ascontiguousarray(T[:3, :3]), np.ascontiguousarray(T[:3, 3]),
        float(K.fx), float(K.fy), float(K.cx), float(K.cy), Z_MIN, BOUND_TOL, bool(np.array_equal(T, np.eye(4))),
        np.ascontiguousarray(stacked.reshape(n, Cs), dtype=float), C,
        np.ascontiguousarray(cx_in, dtype=np.intp), np.ascontiguousarray(cy_in, dtype=np.intp),
        use_cells, with_grad,
        points, points_src, coords, z, x0, y0, values, grad_u, grad_v, valid,
    )
    shape = (H, W)
    valid = valid.reshape(shape)
    values = values.reshape(H, W, Cs)
    sampled_depth = None
    if src_depth is not None:
        sd, ok = values[..., C], values[..., C + 1]
        # any missing corner makes the interpolated depth meaningless
        sampled_depth = np.where(valid & (ok > 1.0 - 1e-12), sd, np.nan)
    cells = (x0.reshape(shape), y0.reshape(shape)) if not use_cells else cells
    warped = values[..., :C]
    coords = coords.reshape(H, W, 2)
    z = z.reshape(shape)
    X = points.reshape(H, W, 3)
    Xs = points_src.reshape(H, W, 3)

    result = WarpResult(
        warped=warped,
        valid=valid,
        coords=coords,
        z_transformed=z,
        sampled_depth=sampled_depth,
        points=X,
        points_src=Xs,
        cells=cells,
    )
    if with_grad:
        result.grad_u, result.grad_v = grad_u.reshape(H, W, C), grad_v.reshape(H, W, C)
    return result
