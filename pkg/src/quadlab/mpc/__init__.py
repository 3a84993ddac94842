from .ddp import DdpResult, solve_grf_ddp, solve_lqt
from .expert import ExpertDiagnostics, MpcExpert
from .reference import ReferenceTrajectory, build_reference
from .srb import MpcState, mpc_state_from_robot

__all__ = [
    "DdpResult",
    "solve_lqt",
    "solve_grf_ddp",
    "MpcExpert",
    "ExpertDiagnostics",
    "ReferenceTrajectory",
    "build_reference",
    "MpcState",
    "mpc_state_from_robot",
]
