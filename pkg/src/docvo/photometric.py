"""Photometric error maps, masks and the two- and three-frame energies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .geometry import Intrinsics
from .warp import as_image, depth_valid, inverse_warp, precompute_rays

LOSSES = ("truncated_l1", "l1_untruncated", "ssim")

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


class DegenerateWindowError(RuntimeError):
    """No pixel survives validity, masking and truncation."""


@dataclass(frozen=True)
class EnergyConfig:
    loss: str = "truncated_l1"
    use_occlusion_mask: bool = True
    use_explainability_mask: bool = True
    d_m: float = 5.0
    alpha: float = 0.8
    frames: int = 2
    # depth slack (m) of the occlusion test
    occlusion_slack: float = 0.1
    # compare sampled source depth against the raw target depth instead of the
    # transformed depth
    occlusion_literal: bool = False

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}, expected one of {LOSSES}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.d_m > 0:
            raise ValueError(f"d_m must be positive, got {self.d_m}")
        if self.frames not in (2, 3):
            raise ValueError(f"frames must be 2 or 3, got {self.frames}")
        if self.occlusion_slack < 0:
            raise ValueError("occlusion_slack must be nonnegative")


@dataclass(frozen=True)
class Frame:
    """Image (H, W, C), depth (H, W) in meters and optional weight mask (H, W)."""

    image: np.ndarray
    depth: np.ndarray
    explain_mask: np.ndarray | None = None

    def __post_init__(self):
        image = as_image(self.image)
        depth = np.asarray(self.depth, dtype=float)
        if depth.shape != image.shape[:2]:
            raise ValueError(f"depth shape {depth.shape} does not match image {image.shape[:2]}")
        object.__setattr__(self, "image", image)
        object.__setattr__(self, "depth", depth)
        if self.explain_mask is not None:
            mask = np.asarray(self.explain_mask, dtype=float)
            if mask.shape != depth.shape:
                raise ValueError(f"mask shape {mask.shape} does not match depth {depth.shape}")
            if np.any(~((mask >= 0) & (mask <= 1))):
                raise ValueError("mask values must lie in [0, 1]")
            object.__setattr__(self, "explain_mask", mask)

    @property
    def shape(self):
        return self.depth.shape


@dataclass
class ErrorMap:
    data: np.ndarray
    active: np.ndarray

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.active))

    def mean(self) -> float:
        n = self.count
        if n == 0:
            raise DegenerateWindowError("error map has no active pixels")
        return float(np.sum(self.data[self.active]) / n)


def _check_same(A, B):
    if A.shape != B.shape:
        raise ValueError(f"dimension mismatch: {A.shape} vs {B.shape}")


def photometric_l1(A, B, valid) -> ErrorMap:
    """Channel-averaged absolute difference, active where ``valid``."""
    A = as_image(A)
    B = as_image(B)
    _check_same(A, B)
    valid = np.asarray(valid).astype(bool)
    if valid.shape != A.shape[:2]:
        raise ValueError(f"dimension mismatch: valid {valid.shape} vs {A.shape[:2]}")
    err = np.mean(np.abs(A - B), axis=2)
    return ErrorMap(np.where(valid, err, 0.0), valid.copy())


def truncation_threshold(E: ErrorMap) -> tuple[float, float, float]:
    """Mean, population std and cutoff of the active errors."""
    vals = E.data[E.active]
    if vals.size == 0:
        raise DegenerateWindowError("cannot truncate an error map with no active pixels")
    mean = float(np.mean(vals))
    std = float(np.sqrt(np.mean((vals - mean) ** 2)))
    return mean, std, mean + std


def truncate_errors(E: ErrorMap) -> ErrorMap:
    """Drop active errors at or above mean + one (population) std.

    When all active errors are equal the map is returned unchanged.
    """
    _, std, cut = truncation_threshold(E)
    vals = E.data[E.active]
    if std == 0.0 or vals.min() == vals.max():
        return ErrorMap(E.data.copy(), E.active.copy())
    keep = E.active & (E.data < cut)
    return ErrorMap(np.where(keep, E.data, 0.0), keep)


def occlusion_mask(depth_tgt, warp, d_m: float = 5.0, slack: float = 0.1, literal: bool = False):
    """Binary mask, 0 where the target point is hidden in the source view.

    A pixel passes if the source depth sampled at its reprojection is not
    closer than the transformed point (minus ``slack``), or if its own depth
    exceeds ``d_m``. Pixels with an invalid warp get 0; pixels whose sampled
    depth is unavailable are not treated as occluded.
    """
    if warp.sampled_depth is None:
        raise ValueError("occlusion mask needs a warp computed with source depth")
    depth_tgt = np.asarray(depth_tgt, dtype=float)
    sd = warp.sampled_depth
    reference = depth_tgt if literal else warp.z_transformed - slack
    with np.errstate(invalid="ignore"):
        visible = np.where(np.isnan(sd), True, sd > reference)
        far = depth_valid(depth_tgt) & (depth_tgt > d_m)
    return (warp.valid & (visible | far)).astype(float)


def _box3(a):
    """3x3 box mean with zero padding; exact on interior pixels."""
    p = np.pad(a, [(1, 1), (1, 1)] + [(0, 0)] * (a.ndim - 2))
    H, W = a.shape[:2]
    out = np.zeros_like(a, dtype=float)
    for dy in range(3):
        for dx in range(3):
            out += p[dy : dy + H, dx : dx + W]
    return out / 9.0


def _ssim_support(valid):
    """Pixels whose whole 3x3 window is valid and inside the image."""
    valid = np.asarray(valid).astype(bool)
    full = _box3(valid.astype(float)) > 1.0 - 1e-9
    full[0, :] = full[-1, :] = False
    full[:, 0] = full[:, -1] = False
    return full


def _ssim_terms(x, y):
    mx, my = _box3(x), _box3(y)
    sxx = _box3(x * x) - mx * mx
    syy = _box3(y * y) - my * my
    sxy = _box3(x * y) - mx * my
    a1 = 2 * mx * my + SSIM_C1
    a2 = 2 * sxy + SSIM_C2
    b1 = mx * mx + my * my + SSIM_C1
    b2 = sxx + syy + SSIM_C2
    return mx, my, a1, a2, b1, b2


def ssim_error(A, B, valid) -> ErrorMap:
    """Per-pixel ``(1 - SSIM) / 2`` over 3x3 windows, channel averaged."""
    A = as_image(A)
    B = as_image(B)
    _check_same(A, B)
    valid = np.asarray(valid).astype(bool)
    if valid.shape != A.shape[:2]:
        raise ValueError(f"dimension mismatch: valid {valid.shape} vs {A.shape[:2]}")
    support = _ssim_support(valid)
    x = np.where(valid[..., None], A, 0.0)
    y = np.where(valid[..., None], B, 0.0)
    _, _, a1, a2, b1, b2 = _ssim_terms(x, y)
    s = (a1 * a2) / (b1 * b2)
    err = np.clip(np.mean((1.0 - s) / 2.0, axis=2), 0.0, 1.0)
    return ErrorMap(np.where(support, err, 0.0), support)


def _ssim_input_grad(x, y, weights):
    """d/dx of sum_p weights[p] * mean_c (1 - SSIM_pc) / 2."""
    mx, my, a1, a2, b1, b2 = _ssim_terms(x, y)
    den = b1 * b2
    s = a1 * a2 / den
    ds_dmx = (2 * my * a2 - s * 2 * mx * b2) / den
    ds_dsxx = -s * b1 / den
    ds_dsxy = 2 * a1 / den
    w = (-0.5 / x.shape[2]) * weights[..., None]
    g1 = w * (ds_dmx - 2 * mx * ds_dsxx - my * ds_dsxy)
    g2 = w * ds_dsxx
    g12 = w * ds_dsxy
    # the zero-padded box filter is self-adjoint
    return _box3(g1) + 2 * x * _box3(g2) + y * _box3(g12)


@dataclass
class FrozenTerm:
    """Discrete choices of one directed term held fixed for differentiation."""

    cells: tuple
    active: np.ndarray
    weights: np.ndarray
    count: int
    signs: np.ndarray | None = None


@dataclass
class TermEval:
    value: float
    error: ErrorMap
    frozen: FrozenTerm
    # gradient of value w.r.t. source-frame points, (P, 3), for active pixels
    grad_points_src: np.ndarray | None = None
    points: np.ndarray | None = None
    points_src: np.ndarray | None = None


def _combined_mask(tgt: Frame, warp, cfg: EnergyConfig):
    mask = np.ones(tgt.shape)
    if cfg.use_occlusion_mask:
        mask = mask * occlusion_mask(
            tgt.depth, warp, cfg.d_m, cfg.occlusion_slack, cfg.occlusion_literal
        )
    if cfg.use_explainability_mask and tgt.explain_mask is not None:
        mask = mask * tgt.explain_mask
    return mask


def evaluate_term(
    tgt: Frame,
    src: Frame,
    T,
    K: Intrinsics,
    cfg: EnergyConfig,
    rays=None,
    frozen: FrozenTerm | None = None,
    with_grad: bool = False,
) -> TermEval:
    """Directed error of ``src`` warped into ``tgt`` with ``T`` (tgt -> src).

    With ``frozen`` the validity/mask/truncation sets, residual signs and
    interpolation cells are reused instead of recomputed, which makes the value
    a smooth function of ``T`` near the point where they were captured.
    """
    need_depth = frozen is None and cfg.use_occlusion_mask
    warp = inverse_warp(
        tgt.depth,
        T,
        src.image,
        K,
        rays,
        src_depth=src.depth if need_depth else None,
        cells=None if frozen is None else frozen.cells,
        with_grad=with_grad,
    )
    ssim = cfg.loss == "ssim"
    if frozen is None:
        if ssim:
            err = ssim_error(warp.warped, tgt.image, warp.valid)
        else:
            err = photometric_l1(warp.warped, tgt.image, warp.valid)
        mask = _combined_mask(tgt, warp, cfg)
        err = ErrorMap(err.data * mask, err.active & (mask > 0))
        if err.count == 0:
            raise DegenerateWindowError("no active pixels after masking")
        if cfg.loss == "truncated_l1":
            err = truncate_errors(err)
        count = err.count
        signs = None if ssim else np.sign(warp.warped - tgt.image)
        frozen = FrozenTerm(warp.cells, err.active, np.where(err.active, mask, 0.0), count, signs)
        value = float(np.sum(err.data[err.active]) / count)
    else:
        if ssim:
            x = np.where(frozen.active[..., None] | _dilate(frozen.active)[..., None], warp.warped, 0.0)
            _, _, a1, a2, b1, b2 = _ssim_terms(x, tgt.image)
            e = np.mean((1.0 - a1 * a2 / (b1 * b2)) / 2.0, axis=2)
        else:
            e = np.mean(frozen.signs * (warp.warped - tgt.image), axis=2)
        data = np.where(frozen.active, e * frozen.weights, 0.0)
        err = ErrorMap(data, frozen.active)
        value = float(np.sum(data[frozen.active]) / frozen.count)

    result = TermEval(value, err, frozen)
    if not with_grad:
        return result

    act = frozen.active
    scale = frozen.weights / frozen.count
    if ssim:
        x = np.where(_dilate(act)[..., None], warp.warped, 0.0)
        g_img = _ssim_input_grad(x, tgt.image, np.where(act, scale, 0.0))
        # only pixels feeding an active window carry gradient
        sel = _dilate(act)
    else:
        g_img = frozen.signs * (scale / tgt.image.shape[2])[..., None]
        sel = act
    g_u = np.sum(g_img * warp.grad_u, axis=2)[sel]
    g_v = np.sum(g_img * warp.grad_v, axis=2)[sel]
    Xs = warp.points_src[sel]
    inv_z = 1.0 / Xs[:, 2]
    # chain through the pinhole projection
    gx = g_u * K.fx * inv_z
    gy = g_v * K.fy * inv_z
    gz = -(gx * Xs[:, 0] + gy * Xs[:, 1]) * inv_z
    result.grad_points_src = np.stack([gx, gy, gz], axis=1)
    result.points = warp.points[sel]
    result.points_src = Xs
    return result


def _dilate(active):
    """Pixels within the 3x3 window of an active pixel."""
    return _box3(np.asarray(active, dtype=float)) > 1e-12


def directed_error(tgt: Frame, src: Frame, T, K: Intrinsics, cfg: EnergyConfig, rays=None):
    """Masked photometric error of ``src`` warped into ``tgt``.

    Returns the mean over active pixels and the error map.
    """
    term = evaluate_term(tgt, src, T, K, cfg, rays)
    return term.value, term.error


# A directed term: (target index, source index, chain, weight). The chain lists
# (pose slot, inverted) factors whose product maps target to source coordinates.
Term = tuple


def window_terms(n_frames: int, alpha: float = 1.0) -> list[Term]:
    """Directed terms of a two- or three-frame window.

    Frames are ordered oldest first. Slots: for two frames slot 0 is the
    current relative pose; for three frames slot 0 is the previous relative
    pose and slot 1 the current one.
    """
    if n_frames == 2:
        return [(1, 0, ((0, False),), 1.0), (0, 1, ((0, True),), 1.0)]
    if n_frames == 3:
        terms = [(2, 1, ((1, False),), alpha), (1, 2, ((1, True),), alpha)]
        if alpha < 1.0:
            terms += [
                (2, 0, ((0, False), (1, False)), 1.0 - alpha),
                (0, 2, ((1, True), (0, True)), 1.0 - alpha),
            ]
        return terms
    raise ValueError(f"windows hold 2 or 3 frames, got {n_frames}")


def chain_matrix(chain, mats) -> np.ndarray:
    T = np.eye(4)
    for slot, inverted in chain:
        M = geometry.invert(mats[slot]) if inverted else mats[slot]
        T = T @ M
    T[3] = (0.0, 0.0, 0.0, 1.0)
    return T


def window_energy(frames, mats, K: Intrinsics, cfg: EnergyConfig, rays=None) -> float:
    if rays is None:
        rays = precompute_rays(K)
    alpha = cfg.alpha if len(frames) == 3 else 1.0
    total = 0.0
    for tgt, src, chain, weight in window_terms(len(frames), alpha):
        T = chain_matrix(chain, mats)
        total += weight * evaluate_term(frames[tgt], frames[src], T, K, cfg, rays).value
    return total


def energy_two_frame(frame_prev: Frame, frame_cur: Frame, T, K: Intrinsics, cfg: EnergyConfig, rays=None) -> float:
    """Forward plus backward error of a frame pair.

    ``T`` maps current-camera to previous-camera coordinates; the backward
    term uses its inverse.
    """
    return window_energy([frame_prev, frame_cur], [np.asarray(T, dtype=float)], K, cfg, rays)


def energy_three_frame(
    frame_a: Frame,
    frame_b: Frame,
    frame_c: Frame,
    T_prev,
    T_cur,
    K: Intrinsics,
    cfg: EnergyConfig,
    rays=None,
) -> float:
    """``alpha * E(b, c) + (1 - alpha) * E(a, c)`` for frames a, b, c (oldest first).

    ``T_prev`` maps b to a, ``T_cur`` maps c to b; the a-c pair uses their
    product.
    """
    mats = [np.asarray(T_prev, dtype=float), np.asarray(T_cur, dtype=float)]
    return window_energy([frame_a, frame_b, frame_c], mats, K, cfg, rays)
