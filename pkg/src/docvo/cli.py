"""Command-line front end: ``docvo run | eval | synth | gradcheck | ablate``.

Settings resolve as flags > ``--config`` JSON file > built-in defaults.
Exit codes: 0 success, 1 input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import dataio, evaluation, synth
from .ablation import ABLATION_ROWS, ablation_config
from .gradcheck import run_gradcheck
from .optimize import MODES, RefineConfig, run_sequence
from .photometric import LOSSES, EnergyConfig
from .warp import precompute_rays

log = logging.getLogger("docvo")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2

DEFAULTS = {
    "mode": "doc",
    "loss": "truncated_l1",
    "occlusion_mask": True,
    "explainability_mask": True,
    "d_m": 5.0,
    "alpha": 0.8,
    "occlusion_slack": 0.1,
    "occlusion_literal": False,
    "iterations": 20,
    "lr_rotation": 1e-3,
    "lr_translation": 1e-2,
    "lr_previous_scale": 0.1,
    "seed": 0,
}


class InputError(Exception):
    """Invalid configuration or input; maps to exit code 1."""


class NumericalFailure(Exception):
    """Computation finished without a usable result; maps to exit code 2."""


# -- configuration ------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", type=Path, help="JSON file with default settings")
    p.add_argument("--loss", choices=LOSSES, default=S)
    p.add_argument("--occlusion-mask", dest="occlusion_mask", action=argparse.BooleanOptionalAction, default=S)
    p.add_argument(
        "--explainability-mask", dest="explainability_mask", action=argparse.BooleanOptionalAction, default=S
    )
    p.add_argument("--d-m", dest="d_m", type=float, default=S, help="far-depth bypass of the occlusion mask (m)")
    p.add_argument("--alpha", type=float, default=S, help="weight of the adjacent pair (docplus only)")
    p.add_argument("--occlusion-slack", dest="occlusion_slack", type=float, default=S)
    p.add_argument("--occlusion-literal", dest="occlusion_literal", action=argparse.BooleanOptionalAction, default=S)
    p.add_argument("--iterations", type=int, default=S)
    p.add_argument("--lr-rotation", dest="lr_rotation", type=float, default=S)
    p.add_argument("--lr-translation", dest="lr_translation", type=float, default=S)
    p.add_argument("--lr-previous-scale", dest="lr_previous_scale", type=float, default=S)
    p.add_argument("--seed", type=int, default=S)


def resolve_config(args: argparse.Namespace, alpha_needs_docplus: bool = True) -> dict:
    """Merge defaults, the optional config file and explicit flags."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None) is not None:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise InputError(f"{args.config}: file not found") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"{args.config}:{exc.lineno}: invalid JSON ({exc.msg})") from None
        loaded = loaded.get("config", loaded)
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            raise InputError(f"{args.config}: unknown settings {unknown}")
        cfg.update(loaded)
    flags = {k: getattr(args, k) for k in DEFAULTS if hasattr(args, k)}
    cfg.update(flags)
    if cfg["mode"] not in MODES:
        raise InputError(f"mode must be one of {MODES}, got {cfg['mode']!r}")
    if alpha_needs_docplus and "alpha" in flags and cfg["mode"] != "docplus":
        raise InputError("--alpha only applies to mode docplus")
    build_refine_config(cfg)
    return cfg


def build_refine_config(cfg: dict) -> RefineConfig:
    try:
        energy = EnergyConfig(
            loss=cfg["loss"],
            use_occlusion_mask=bool(cfg["occlusion_mask"]),
            use_explainability_mask=bool(cfg["explainability_mask"]),
            d_m=float(cfg["d_m"]),
            alpha=float(cfg["alpha"]),
            frames=3 if cfg["mode"] == "docplus" else 2,
            occlusion_slack=float(cfg["occlusion_slack"]),
            occlusion_literal=bool(cfg["occlusion_literal"]),
        )
        return RefineConfig(
            iterations=int(cfg["iterations"]),
            lr_rotation=float(cfg["lr_rotation"]),
            lr_translation=float(cfg["lr_translation"]),
            lr_previous_scale=float(cfg["lr_previous_scale"]),
            energy=energy,
        )
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid configuration: {exc}") from None


# -- run ----------------------------------------------------------------------


def _json_float(x):
    return None if x is None or not math.isfinite(x) else float(x)


def execute_run(manifest_path, cfg: dict, out_dir: Path) -> dict:
    """Load, refine and write trajectories plus reports; returns the summary."""
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    manifest = dataio.load_manifest(manifest_path)
    seq = dataio.load_sequence(manifest)
    t_load = time.perf_counter() - t0
    t0 = time.perf_counter()
    precompute_rays(seq.K)
    t_rays = time.perf_counter() - t0
    t0 = time.perf_counter()
    traj, _, reports = run_sequence(seq.frames, seq.K, seq.init_poses, build_refine_config(cfg), cfg["mode"], seq.timestamps)
    t_opt = time.perf_counter() - t0

    dataio.save_trajectory(traj, "kitti", out_dir / "trajectory_kitti.txt")
    dataio.save_trajectory(traj, "tum", out_dir / "trajectory_tum.txt")
    with open(out_dir / "frames.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "initial_energy", "final_energy", "iterations", "best_iteration", "fallback", "message"])
        for i, r in enumerate(reports, start=1):
            w.writerow([i, repr(r.initial_energy), repr(r.final_energy), r.iterations_run, r.best_iteration, int(r.fallback), r.message])
    with open(out_dir / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "seconds"])
        for i, r in enumerate(reports, start=1):
            w.writerow([i, f"{r.seconds:.6f}"])
    n_frames = len(reports)
    summary = {
        "config": cfg,
        "manifest": str(manifest_path),
        "frames": n_frames + 1,
        "fallbacks": sum(r.fallback for r in reports),
    }
    (out_dir / "run.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    timing = {
        "load_s": t_load,
        "ray_precompute_s": t_rays,
        "optimize_s": t_opt,
        "optimize_per_frame_s": t_opt / n_frames,
    }
    (out_dir / "timing.json").write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n")
    if cfg["mode"] != "none" and all(r.fallback for r in reports):
        raise NumericalFailure("every window was degenerate; trajectory equals the initialization")
    summary["timing"] = timing
    summary["trajectory"] = traj
    return summary


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    summary = execute_run(args.manifest, cfg, args.out)
    t = summary["timing"]
    print(
        f"{summary['frames']} frames, mode {cfg['mode']}, {summary['fallbacks']} fallbacks; "
        f"load {t['load_s']:.2f}s, rays {t['ray_precompute_s']:.3f}s, optimize {t['optimize_s']:.2f}s "
        f"({t['optimize_per_frame_s']:.3f}s/frame)"
    )
    print(f"wrote {args.out}")
    return EXIT_OK


# -- eval ---------------------------------------------------------------------


def _load_traj(path: Path, fmt: str):
    if fmt == "auto":
        fmt = "tum" if path.suffix == ".tum" or "tum" in path.name else "kitti"
    if fmt == "tum":
        return dataio.load_tum(path).poses
    return dataio.load_poses_kitti(path)


def evaluate_files(est: Path, gt: Path, fmt: str = "auto", align: str = "se3", lengths=None, step: int = 1):
    P_est, P_gt = _load_traj(est, fmt), _load_traj(gt, fmt)
    if len(P_est) != len(P_gt):
        raise InputError(f"{est}: {len(P_est)} poses, {gt}: {len(P_gt)} poses")
    return evaluation.evaluate(P_est, P_gt, align, lengths or evaluation.KITTI_LENGTHS, step)


def cmd_eval(args) -> int:
    rep = evaluate_files(args.est, args.gt, args.format, args.align, args.lengths, args.step)
    print(rep.as_text())
    if args.csv is not None:
        rep.write_csv(args.csv)
    return EXIT_OK


# -- synth --------------------------------------------------------------------


def cmd_synth(args) -> int:
    if args.frames < 2:
        raise InputError("--frames must be >= 2")
    try:
        K = synth.default_intrinsics(args.width, args.height, args.focal)
        scene = synth.make_plane_scene(K, depth=args.depth, tilt_deg=tuple(args.tilt), seed=args.seed)
        if args.occluder:
            scene = synth.make_occluder_scene(
                scene, args.occluder_center, tuple(args.occluder_size), seed=args.seed + 1
            )
        motion = np.r_[np.deg2rad(args.motion[:3]), args.motion[3:]]
        seq = synth.make_sequence(
            scene, motion, args.frames, np.deg2rad(args.sigma_rot), args.sigma_trans, seed=args.seed
        )
    except ValueError as exc:
        raise InputError(f"invalid scene: {exc}") from None
    path = synth.export_bundle(seq, args.out)
    print(f"wrote {path}")
    return EXIT_OK


# -- gradcheck ----------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    if args.trials < 1:
        raise InputError("--trials must be >= 1")
    results = run_gradcheck(args.seed, args.trials, corrupt=args.corrupt_gradient)
    print(f"{'trial':>5} {'params':>6} {'loss':<15} {'max rel err':>12}  result")
    failed = 0
    for r in results:
        ok = r.passed(args.tol)
        failed += not ok
        print(f"{r.trial:>5} {r.n_params:>6} {r.loss:<15} {r.max_rel_error:>12.3e}  {'pass' if ok else 'FAIL'}")
    print(f"{len(results) - failed}/{len(results)} trials within {args.tol:g}")
    if failed:
        raise NumericalFailure(f"{failed} gradient check(s) exceeded {args.tol:g}")
    return EXIT_OK


# -- ablate -------------------------------------------------------------------


def cmd_ablate(args) -> int:
    rows = args.rows
    bad = [r for r in rows if r not in ABLATION_ROWS]
    if bad:
        raise InputError(f"unknown ablation row(s) {''.join(bad)}; expected letters from {''.join(ABLATION_ROWS)}")
    base = resolve_config(args, alpha_needs_docplus=False)
    gt = args.gt
    if gt is None:
        raw = json.loads(Path(args.manifest).read_text())
        if "ground_truth" not in raw:
            raise InputError(f"{args.manifest}: no ground_truth entry; pass --gt")
        gt = Path(args.manifest).parent / raw["ground_truth"]
    P_gt = dataio.load_poses_kitti(gt)
    table = []
    for row in rows:
        energy = ablation_config(row)
        cfg = dict(base)
        cfg.update(
            mode="docplus" if energy.frames == 3 else "doc",
            loss=energy.loss,
            occlusion_mask=energy.use_occlusion_mask,
            explainability_mask=energy.use_explainability_mask,
        )
        summary = execute_run(args.manifest, cfg, args.out / f"row_{row}")
        rep = evaluation.evaluate(summary["trajectory"].poses, P_gt, "se3", args.lengths or evaluation.KITTI_LENGTHS)
        table.append((row, ABLATION_ROWS[row][4], rep))
    with open(args.out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "label", "rte_percent", "rre_deg_per_100m", "ate_m"])
        for row, label, rep in table:
            w.writerow([row, label, _json_float(rep.rte_percent), _json_float(rep.rre_deg_per_100m), rep.ate_rmse_m])
    fmt = lambda x: "n/a" if x is None else f"{x:.4f}"  # noqa: E731
    print(f"{'row':<4}{'configuration':<26}{'RTE %':>9}{'RRE':>9}{'ATE m':>10}")
    for row, label, rep in table:
        print(f"({row}) {label:<26}{fmt(rep.rte_percent):>9}{fmt(rep.rre_deg_per_100m):>9}{rep.ate_rmse_m:>10.5f}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="docvo", description="Photometric online pose correction.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="refine a sequence and write trajectories")
    r.add_argument("manifest", type=Path)
    r.add_argument("--out", type=Path, required=True)
    r.add_argument("--mode", choices=MODES, default=argparse.SUPPRESS)
    _add_config_flags(r)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="RTE, RRE and ATE of an estimate against ground truth")
    e.add_argument("est", type=Path)
    e.add_argument("gt", type=Path)
    e.add_argument("--format", choices=("auto", "kitti", "tum"), default="auto")
    e.add_argument("--align", choices=("se3", "none"), default="se3")
    e.add_argument("--lengths", type=float, nargs="+", default=None, help="segment lengths (m)")
    e.add_argument("--step", type=int, default=1, help="stride between segment start frames")
    e.add_argument("--csv", type=Path, default=None, help="per-length breakdown")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="export a synthetic textured-plane sequence")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--frames", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--width", type=int, default=96)
    s.add_argument("--height", type=int, default=72)
    s.add_argument("--focal", type=float, default=80.0)
    s.add_argument("--depth", type=float, default=5.0, help="plane depth on the optical axis (m)")
    s.add_argument("--tilt", type=float, nargs=2, default=(40.0, 40.0), metavar=("X_DEG", "Y_DEG"))
    s.add_argument(
        "--motion", type=float, nargs=6, default=(0.0, 0.3, 0.0, 0.02, 0.0, 0.3),
        metavar=("RX", "RY", "RZ", "TX", "TY", "TZ"), help="per-frame motion, degrees and meters",
    )
    s.add_argument("--sigma-rot", type=float, default=0.3, help="init rotation noise (deg)")
    s.add_argument("--sigma-trans", type=float, default=0.05, help="init translation noise (m)")
    s.add_argument("--occluder", action="store_true")
    s.add_argument("--occluder-center", type=float, nargs=3, default=(0.0, 0.0, 2.5))
    s.add_argument("--occluder-size", type=float, nargs=2, default=(0.4, 0.3), help="half extents (m)")
    s.set_defaults(func=cmd_synth)

    g = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--trials", type=int, default=20)
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--corrupt-gradient", type=float, default=0.0, help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)

    a = sub.add_parser("ablate", help="run the mask/loss/window ablation rows")
    a.add_argument("manifest", type=Path)
    a.add_argument("--out", type=Path, required=True)
    a.add_argument("--rows", default="".join(ABLATION_ROWS), help="subset of letters a-h")
    a.add_argument("--gt", type=Path, default=None)
    a.add_argument("--lengths", type=float, nargs="+", default=None)
    _add_config_flags(a)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, dataio.DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
