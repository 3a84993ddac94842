"""quadlab: a desk-scale quadruped locomotion laboratory.

Pipeline: a constrained-DDP MPC expert generates trot locomotion, a DAgger
stage clones it into an MLP policy, and a constrained-exploration PPO stage
finetunes that policy on procedural terrains. Everything runs on plain
numpy, with optional numba-compiled kernels (QUADLAB_NUMBA=0 disables).
"""

from .backend import NUMBA_ENABLED, backend_name
from .model import RobotModel

__version__ = "0.1.0"

__all__ = ["RobotModel", "NUMBA_ENABLED", "backend_name", "__version__"]
