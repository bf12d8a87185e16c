"""Online photometric correction of inter-frame camera poses."""

from .dataio import DataError, Trajectory, load_manifest, load_sequence
from .evaluation import MetricReport, compute_ate, compute_rte_rre, evaluate
from .geometry import Intrinsics, NonRigidTransformError, PoseSE3, compose, invert, project, unproject
from .optimize import RefineConfig, RefineReport, check_gradient, doc_refine, docplus_refine, run_sequence
from .photometric import DegenerateWindowError, EnergyConfig, Frame, energy_three_frame, energy_two_frame
from .warp import WarpResult, inverse_warp, precompute_rays

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "DegenerateWindowError",
    "EnergyConfig",
    "Frame",
    "Intrinsics",
    "MetricReport",
    "NonRigidTransformError",
    "PoseSE3",
    "RefineConfig",
    "RefineReport",
    "Trajectory",
    "WarpResult",
    "check_gradient",
    "compose",
    "compute_ate",
    "compute_rte_rre",
    "doc_refine",
    "docplus_refine",
    "energy_three_frame",
    "energy_two_frame",
    "evaluate",
    "invert",
    "inverse_warp",
    "load_manifest",
    "load_sequence",
    "precompute_rays",
    "project",
    "run_sequence",
    "unproject",
]
