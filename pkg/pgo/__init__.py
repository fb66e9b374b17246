"""
pgo - pose-graph optimization with hierarchical initialization.
"""

from pgo.config import __version__
from pgo.core.g2o import load_g2o, parse_g2o, save_g2o, write_g2o
from pgo.core.graph import Edge, PoseGraph
from pgo.core.hipe import HipeParams, hipe_init
from pgo.core.se3 import Pose
from pgo.core.sparse_nls import SolverConfig, optimize

__license__ = "MIT"

__all__ = [
    "__version__",
    "Pose",
    "Edge",
    "PoseGraph",
    "load_g2o",
    "parse_g2o",
    "save_g2o",
    "write_g2o",
    "SolverConfig",
    "optimize",
    "HipeParams",
    "hipe_init",
]
