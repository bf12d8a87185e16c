"""Trajectory metrics: KITTI relative drift (RTE/RRE) and absolute error (ATE)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import invert, rodrigues_log

KITTI_LENGTHS = (100, 200, 300, 400, 500, 600, 700, 800)


def _poses(traj) -> np.ndarray:
    poses = getattr(traj, "poses", traj)
    poses = np.asarray(poses, dtype=float)
    if poses.ndim != 3 or poses.shape[1:] != (4, 4):
        raise ValueError(f"expected an (N, 4, 4) pose array, got {poses.shape}")
    return poses


def trajectory_distances(poses) -> np.ndarray:
    """Cumulative path length at every pose."""
    steps = np.linalg.norm(np.diff(poses[:, :3, 3], axis=0), axis=1)
    out = np.zeros(len(poses))
    acc = 0.0
    for i, s in enumerate(steps, start=1):
        acc = math.fsum((acc, s))
        out[i] = acc
    return out


def _rotation_angle(R) -> float:
    return float(np.linalg.norm(rodrigues_log(R)))


@dataclass
class LengthStats:
    length: float
    t_err_percent: float
    r_err_deg_per_100m: float
    segments: int


@dataclass
class MetricReport:
    rte_percent: float | None
    rre_deg_per_100m: float | None
    ate_rmse_m: float
    breakdown: list = field(default_factory=list)
    segments: int = 0
    too_short: bool = False
    ate_unaligned_m: float | None = None

    def as_text(self) -> str:
        def fmt(x, spec):
            return "n/a" if x is None or not math.isfinite(x) else format(x, spec)

        lines = [
            f"RTE (%):         {fmt(self.rte_percent, '.4f')}",
            f"RRE (deg/100m):  {fmt(self.rre_deg_per_100m, '.4f')}",
            f"ATE (m):         {fmt(self.ate_rmse_m, '.4f')}",
        ]
        if self.ate_unaligned_m is not None:
            lines.append(f"ATE unaligned:   {fmt(self.ate_unaligned_m, '.4f')}")
        lines.append(f"segments:        {self.segments}")
        if self.too_short:
            lines.append("trajectory shorter than the smallest segment length; no drift segments")
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["length_m", "t_err_percent", "r_err_deg_per_100m", "segments"])
            for row in self.breakdown:
                w.writerow([row.length, row.t_err_percent, row.r_err_deg_per_100m, row.segments])


def segment_errors(est, gt, lengths=KITTI_LENGTHS, step: int = 1):
    """Per-segment ``(start, length, t_err, r_err)`` with errors per meter.

    Each segment starts at a frame (every ``step`` frames) and ends at the
    first frame whose ground-truth path length from the start is >= length.
    """
    est, gt = _poses(est), _poses(gt)
    if len(est) != len(gt):
        raise ValueError(f"trajectory length mismatch: {len(est)} vs {len(gt)}")
    dist = trajectory_distances(gt)
    out = []
    for first in range(0, len(gt), step):
        for length in lengths:
            last = int(np.searchsorted(dist, dist[first] + length, side="left"))
            if last >= len(gt):
                continue
            rel_gt = invert(gt[first]) @ gt[last]
            rel_est = invert(est[first]) @ est[last]
            err = invert(rel_gt) @ rel_est
            t_err = float(np.linalg.norm(err[:3, 3]))
            r_err = _rotation_angle(err[:3, :3])
            out.append((first, float(length), t_err / length, r_err / length))
    return out


def compute_rte_rre(est, gt, lengths=KITTI_LENGTHS, step: int = 1):
    """Average drift over all segments of the given lengths.

    Returns ``(rte_percent, rre_deg_per_100m, breakdown, n_segments)``. Both
    averages are None when the ground truth is shorter than every length.
    """
    errs = segment_errors(est, gt, lengths, step)
    breakdown = []
    for length in lengths:
        sel = [e for e in errs if e[1] == float(length)]
        if sel:
            t = math.fsum(e[2] for e in sel) / len(sel) * 100.0
            r = math.degrees(math.fsum(e[3] for e in sel) / len(sel)) * 100.0
        else:
            t = r = math.nan
        breakdown.append(LengthStats(float(length), t, r, len(sel)))
    if not errs:
        return None, None, breakdown, 0
    rte = math.fsum(e[2] for e in errs) / len(errs) * 100.0
    rre = math.degrees(math.fsum(e[3] for e in errs) / len(errs)) * 100.0
    return rte, rre, breakdown, len(errs)


def umeyama_alignment(src, dst, with_scale: bool = False):
    """Least-squares ``s, R, t`` with ``dst ~= s R src + t`` for (N, 3) points."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    cov = xd.T @ xs / len(src)
    U, S, Vt = np.linalg.svd(cov)
    D = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[2, 2] = -1.0
    R = U @ D @ Vt
    s = 1.0
    if with_scale:
        var = np.mean(np.sum(xs * xs, axis=1))
        s = float(np.trace(np.diag(S) @ D) / var) if var > 0 else 1.0
    t = mu_d - s * R @ mu_s
    return s, R, t


def compute_ate(est, gt, align: str = "se3") -> float:
    """RMSE of position residuals, optionally after rigid alignment."""
    est, gt = _poses(est), _poses(gt)
    if len(est) != len(gt):
        raise ValueError(f"trajectory length mismatch: {len(est)} vs {len(gt)}")
    p_est, p_gt = est[:, :3, 3], gt[:, :3, 3]
    if align == "se3" and not np.array_equal(p_est, p_gt):
        # skipped for identical positions, where SVD round-off would leave ~1e-14
        _, R, t = umeyama_alignment(p_est, p_gt)
        p_est = p_est @ R.T + t
    elif align not in ("se3", "none"):
        raise ValueError(f"unknown alignment {align!r}")
    sq = np.sum((p_est - p_gt) ** 2, axis=1)
    return math.sqrt(math.fsum(sq) / len(sq))


def evaluate(est, gt, align: str = "se3", lengths=KITTI_LENGTHS, step: int = 1) -> MetricReport:
    rte, rre, breakdown, n = compute_rte_rre(est, gt, lengths, step)
    return MetricReport(
        rte_percent=rte,
        rre_deg_per_100m=rre,
        ate_rmse_m=compute_ate(est, gt, align),
        breakdown=breakdown,
        segments=n,
        too_short=n == 0,
        ate_unaligned_m=compute_ate(est, gt, "none") if align != "none" else None,
    )
