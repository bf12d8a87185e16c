"""Seeded analytic-vs-finite-difference gradient checks on synthetic windows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .optimize import CorrectionWindow, check_gradient
from .photometric import LOSSES, EnergyConfig, Frame
from .synth import default_intrinsics, make_occluder_scene, make_plane_scene, make_sequence


@dataclass
class TrialResult:
    trial: int
    n_params: int
    loss: str
    max_rel_error: float
    checked: int

    def passed(self, tol: float) -> bool:
        return self.max_rel_error <= tol


def random_window(rng, n_frames: int, K=None):
    """Synthetic 2- or 3-frame window and a perturbed parameter vector."""
    K = K or default_intrinsics(64, 48, 56.0)
    depth = rng.uniform(3.0, 6.0)
    tilt = tuple(rng.uniform(-30.0, 30.0, 2))
    scene = make_plane_scene(K, depth=depth, tilt_deg=tilt, seed=int(rng.integers(2**31)))
    if rng.random() < 0.5:
        scene = make_occluder_scene(
            scene, [rng.uniform(-0.3, 0.3), rng.uniform(-0.2, 0.2), depth * 0.5], (0.3, 0.2),
            seed=int(rng.integers(2**31)),
        )
    motion = np.concatenate([rng.normal(0, 0.01, 3), rng.normal(0, 0.08, 3)])
    seq = make_sequence(scene, motion, n_frames)
    frames = seq.frames
    if rng.random() < 0.5:
        # smooth explainability weights
        yy, xx = np.mgrid[0 : K.height, 0 : K.width]
        frames = [
            Frame(f.image, f.depth, 0.5 + 0.5 * np.sin(xx / rng.uniform(4, 12) + rng.uniform(0, 6)) * np.cos(yy / 9.0))
            for f in frames
        ]
    gt = np.concatenate([p.as_vector() for p in seq.gt_relative])
    noise = np.tile(np.r_[[0.005] * 3, [0.03] * 3], n_frames - 1)
    params = gt + rng.normal(0.0, noise)
    return CorrectionWindow(frames, K), params


def run_gradcheck(seed: int = 0, trials: int = 20, h: float = 1e-5, corrupt: float = 0.0) -> list:
    """Run ``trials`` checks alternating 6-d and 12-d windows and losses.

    ``corrupt`` scales the analytic gradient by ``1 + corrupt`` before the
    comparison (harness self-test).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    results = []
    for i in range(trials):
        n_frames = 2 + i % 2
        window, params = random_window(rng, n_frames)
        loss = LOSSES[(i // 2) % len(LOSSES)]
        cfg = EnergyConfig(
            loss=loss,
            use_occlusion_mask=bool(rng.random() < 0.7),
            use_explainability_mask=bool(rng.random() < 0.7),
            alpha=float(rng.uniform(0.5, 0.95)),
            frames=n_frames,
        )
        gc = check_gradient(window, params, cfg, h=h)
        if corrupt:
            analytic = gc.analytic * (1.0 + corrupt)
            sel = np.abs(gc.numeric) > 1e-8
            err = float(np.max(np.abs(analytic[sel] - gc.numeric[sel]) / np.abs(gc.numeric[sel])))
        else:
            err = gc.max_rel_error
        results.append(TrialResult(i, params.size, loss, err, gc.checked))
    return results
