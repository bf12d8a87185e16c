"""Pose gradients, Adam, and the two-/three-frame online refinement loops."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .geometry import Intrinsics, PoseSE3
from .photometric import (
    DegenerateWindowError,
    EnergyConfig,
    Frame,
    chain_matrix,
    evaluate_term,
    window_terms,
)
from .warp import precompute_rays

log = logging.getLogger(__name__)


class OptimizationError(RuntimeError):
    """Energy or gradient became non-finite."""


@dataclass
class CorrectionWindow:
    """Two or three consecutive frames (oldest first) sharing one camera."""

    frames: list
    K: Intrinsics
    rays: np.ndarray | None = None

    def __post_init__(self):
        if len(self.frames) not in (2, 3):
            raise ValueError(f"a window holds 2 or 3 frames, got {len(self.frames)}")
        shape = (self.K.height, self.K.width)
        for f in self.frames:
            if f.shape != shape:
                raise ValueError(f"frame of shape {f.shape} does not match intrinsics {shape}")
        if self.rays is None:
            self.rays = precompute_rays(self.K)

    @property
    def n_params(self) -> int:
        return 6 * (len(self.frames) - 1)


def _slot_matrices(params) -> list:
    params = np.asarray(params, dtype=float)
    return [PoseSE3.from_vector(params[i : i + 6]).matrix for i in range(0, params.size, 6)]


def _alpha(window: CorrectionWindow, cfg: EnergyConfig) -> float:
    return cfg.alpha if len(window.frames) == 3 else 1.0


def window_energy_frozen(window: CorrectionWindow, params, cfg: EnergyConfig, frozen) -> float:
    """Energy with every term's discrete choices fixed (see ``evaluate_term``)."""
    mats = _slot_matrices(params)
    total = 0.0
    terms = window_terms(len(window.frames), _alpha(window, cfg))
    for (tgt, src, chain, weight), fz in zip(terms, frozen):
        T = chain_matrix(chain, mats)
        term = evaluate_term(window.frames[tgt], window.frames[src], T, window.K, cfg, window.rays, frozen=fz)
        total += weight * term.value
    return total


def _chain_gradient(chain, params, points, grad_src, out):
    """Accumulate d(sum grad_src . X')/d(params) for X' = A_1 ... A_m X."""
    params = np.asarray(params, dtype=float)
    factors = []
    for slot, inverted in chain:
        x = params[6 * slot : 6 * slot + 6]
        R = geometry.rodrigues_exp(x[:3])
        factors.append((slot, inverted, x, R))
    # points entering each factor, from the right
    inputs = [None] * len(factors)
    Y = points
    for k in range(len(factors) - 1, -1, -1):
        _, inverted, x, R = factors[k]
        inputs[k] = Y
        Y = (Y - x[3:]) @ R if inverted else Y @ R.T + x[3:]
    R_left = np.eye(3)
    for k, (slot, inverted, x, R) in enumerate(factors):
        h = grad_src @ R_left
        dR = geometry.rotation_derivatives(x[:3])
        Yk = inputs[k]
        g = out[6 * slot : 6 * slot + 6]
        # sum_p h_p^T dR Y_p = <dR, sum_p h_p Y_p^T>
        if inverted:
            M = h.T @ (Yk - x[3:])
            for j in range(3):
                g[j] += np.sum(dR[j].T * M)
            g[3:] -= h.sum(axis=0) @ R.T
            R_left = R_left @ R.T
        else:
            M = h.T @ Yk
            for j in range(3):
                g[j] += np.sum(dR[j] * M)
            g[3:] += h.sum(axis=0)
            R_left = R_left @ R


def energy_gradient(window: CorrectionWindow, params, cfg: EnergyConfig, return_frozen: bool = False):
    """Energy and its analytic gradient w.r.t. the stacked pose 6-vectors.

    Masks, truncation and validity sets are recomputed at ``params`` and held
    constant for differentiation. Raises :class:`DegenerateWindowError` or
    :class:`OptimizationError`.
    """
    params = np.asarray(params, dtype=float)
    if params.shape != (window.n_params,):
        raise ValueError(f"expected {window.n_params} parameters, got shape {params.shape}")
    if not np.all(np.isfinite(params)):
        raise OptimizationError(f"non-finite pose parameters {params}")
    mats = _slot_matrices(params)
    grad = np.zeros_like(params)
    total = 0.0
    frozen = []
    for tgt, src, chain, weight in window_terms(len(window.frames), _alpha(window, cfg)):
        T = chain_matrix(chain, mats)
        term = evaluate_term(
            window.frames[tgt], window.frames[src], T, window.K, cfg, window.rays, with_grad=True
        )
        total += weight * term.value
        frozen.append(term.frozen)
        _chain_gradient(chain, params, term.points, weight * term.grad_points_src, grad)
    if not (math.isfinite(total) and np.all(np.isfinite(grad))):
        raise OptimizationError(f"non-finite energy {total} or gradient {grad}")
    if return_frozen:
        return total, grad, frozen
    return total, grad


def finite_difference_gradient(window, params, cfg, frozen, h: float = 1e-5) -> np.ndarray:
    """Central differences of the frozen-set energy."""
    params = np.asarray(params, dtype=float)
    fd = np.zeros_like(params)
    for j in range(params.size):
        e = np.zeros_like(params)
        e[j] = h
        up = window_energy_frozen(window, params + e, cfg, frozen)
        down = window_energy_frozen(window, params - e, cfg, frozen)
        fd[j] = (up - down) / (2 * h)
    return fd


@dataclass
class GradientCheck:
    analytic: np.ndarray
    numeric: np.ndarray
    max_rel_error: float
    checked: int

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error <= tol


def check_gradient(window, params, cfg, h: float = 1e-5, min_magnitude: float = 1e-8) -> GradientCheck:
    """Compare the analytic gradient with central finite differences.

    The relative error is taken over coordinates with ``|FD| > min_magnitude``.
    """
    _, grad, frozen = energy_gradient(window, params, cfg, return_frozen=True)
    fd = finite_difference_gradient(window, params, cfg, frozen, h)
    sel = np.abs(fd) > min_magnitude
    rel = np.abs(grad[sel] - fd[sel]) / np.abs(fd[sel])
    return GradientCheck(grad, fd, float(rel.max()) if rel.size else 0.0, int(sel.sum()))


@dataclass
class AdamState:
    lr: np.ndarray
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, lr, n: int | None = None, **kw) -> "AdamState":
        lr = np.asarray(lr, dtype=float)
        if lr.ndim == 0:
            lr = np.full(n if n is not None else 1, float(lr))
        return cls(lr, np.zeros_like(lr), np.zeros_like(lr), **kw)


def adam_step(state: AdamState, params, grad) -> np.ndarray:
    """One bias-corrected Adam update; advances ``state`` in place."""
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != state.m.shape or grad.shape != state.m.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grad {grad.shape}, state {state.m.shape}")
    state.step_count += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.step_count)
    v_hat = state.v / (1.0 - state.beta2**state.step_count)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass(frozen=True)
class RefineConfig:
    iterations: int = 20
    lr_rotation: float = 1e-3
    lr_translation: float = 1e-2
    # learning-rate multiplier for the already-refined previous pose
    lr_previous_scale: float = 0.1
    energy: EnergyConfig = field(default_factory=EnergyConfig)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not (self.lr_rotation > 0 and self.lr_translation > 0):
            raise ValueError("learning rates must be positive")
        if self.lr_previous_scale < 0:
            raise ValueError("lr_previous_scale must be nonnegative")

    def pose_lr(self) -> np.ndarray:
        return np.array([self.lr_rotation] * 3 + [self.lr_translation] * 3)


@dataclass
class RefineReport:
    initial_energy: float
    final_energy: float
    energy_trace: list
    iterations_run: int
    best_iteration: int
    poses: list
    fallback: bool = False
    message: str = ""
    seconds: float = 0.0


def _refine(window: CorrectionWindow, params0, lr, cfg: RefineConfig):
    start = time.perf_counter()
    params = np.array(params0, dtype=float)
    try:
        energy, grad = energy_gradient(window, params, cfg.energy)
    except (DegenerateWindowError, OptimizationError) as exc:
        log.warning("window not refined: %s", exc)
        report = RefineReport(math.nan, math.nan, [], 0, 0, [], True, str(exc))
        report.seconds = time.perf_counter() - start
        return params, report
    initial_energy = energy
    state = AdamState.create(lr)
    best_energy, best_params, best_iter = energy, params.copy(), 0
    trace = []
    message = ""
    for it in range(1, cfg.iterations + 1):
        params = adam_step(state, params, grad)
        try:
            energy, grad = energy_gradient(window, params, cfg.energy)
        except (DegenerateWindowError, OptimizationError) as exc:
            message = f"stopped at iteration {it}: {exc}"
            log.warning(message)
            break
        trace.append(energy)
        if energy < best_energy:
            best_energy, best_params, best_iter = energy, params.copy(), it
    report = RefineReport(
        initial_energy=float(initial_energy),
        final_energy=float(best_energy),
        energy_trace=trace,
        iterations_run=len(trace),
        best_iteration=best_iter,
        poses=[],
        message=message,
    )
    report.seconds = time.perf_counter() - start
    return best_params, report


def doc_refine(frame_prev: Frame, frame_cur: Frame, T_init: PoseSE3, K: Intrinsics, cfg: RefineConfig, rays=None):
    """Refine the pose of ``frame_cur`` relative to ``frame_prev``.

    Runs ``cfg.iterations`` Adam steps on the two-frame energy and returns the
    lowest-energy iterate. A degenerate window returns ``T_init`` with
    ``report.fallback`` set.
    """
    window = CorrectionWindow([frame_prev, frame_cur], K, rays)
    params, report = _refine(window, T_init.as_vector(), cfg.pose_lr(), cfg)
    pose = PoseSE3.from_vector(params)
    report.poses = [pose]
    return pose, report


def docplus_refine(
    frame_a: Frame,
    frame_b: Frame,
    frame_c: Frame,
    T_prev: PoseSE3,
    T_init: PoseSE3,
    K: Intrinsics,
    cfg: RefineConfig,
    rays=None,
):
    """Jointly refine ``T_prev`` (b -> a) and ``T_init`` (c -> b) on three frames.

    ``T_prev`` moves with learning rates scaled by ``cfg.lr_previous_scale``.
    Returns ``(T_prev_refined, T_cur_refined, report)``.
    """
    window = CorrectionWindow([frame_a, frame_b, frame_c], K, rays)
    lr = np.concatenate([cfg.pose_lr() * cfg.lr_previous_scale, cfg.pose_lr()])
    x0 = np.concatenate([T_prev.as_vector(), T_init.as_vector()])
    params, report = _refine(window, x0, lr, cfg)
    prev, cur = PoseSE3.from_vector(params[:6]), PoseSE3.from_vector(params[6:])
    report.poses = [prev, cur]
    return prev, cur, report


MODES = ("doc", "docplus", "none")


def run_sequence(frames, K: Intrinsics, init_poses, cfg: RefineConfig, mode: str | None = None, timestamps=None):
    """Refine every inter-frame motion and chain camera-to-world poses.

    ``init_poses[j]`` maps camera ``j + 1`` into camera ``j``. ``mode`` is
    ``"doc"``, ``"docplus"`` or ``"none"`` (no refinement); by default it
    follows ``cfg.energy.frames``. The first window of ``"docplus"`` uses the
    two-frame refinement. Returns ``(trajectory, relative_poses, reports)``.
    """
    from .dataio import Trajectory

    if mode is None:
        mode = "docplus" if cfg.energy.frames == 3 else "doc"
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
    k = len(frames)
    if k < 2:
        raise ValueError("need at least two frames")
    if len(init_poses) != k - 1:
        raise ValueError(f"expected {k - 1} initial poses, got {len(init_poses)}")
    rays = precompute_rays(K)
    absolute = [np.eye(4)]
    refined = []
    reports = []
    for i in range(1, k):
        T0 = init_poses[i - 1]
        if mode == "none":
            pose, report = T0, RefineReport(math.nan, math.nan, [], 0, 0, [T0])
        else:
            try:
                if mode == "docplus" and i >= 2:
                    _, pose, report = docplus_refine(
                        frames[i - 2], frames[i - 1], frames[i], refined[-1], T0, K, cfg, rays
                    )
                else:
                    pose, report = doc_refine(frames[i - 1], frames[i], T0, K, cfg, rays)
            except Exception as exc:  # keep the trajectory defined for every frame
                log.warning("frame %d: refinement failed (%s); using initialization", i, exc)
                pose = T0
                report = RefineReport(math.nan, math.nan, [], 0, 0, [T0], True, str(exc))
        refined.append(pose)
        reports.append(report)
        absolute.append(geometry.compose(absolute[-1], pose.matrix))
    traj = Trajectory(np.arange(k), np.stack(absolute), None if timestamps is None else np.asarray(timestamps, dtype=float))
    return traj, refined, reports
