"""Configuration and constants for pgo."""

import os
from pathlib import Path

# Version
__version__ = "1.0.0"

# Configuration paths
USER_CONFIG_DIR = Path.home() / ".pgo"
PROFILES_FILE = USER_CONFIG_DIR / "profiles.yaml"
TEMPLATES_DIR = Path(__file__).parent / "templates"

# Fine-grained optimization
DEFAULT_MAX_ITERATIONS = 10
DEFAULT_COST_DECREASE_TOLERANCE = 1e-6
DEFAULT_TRUST_REGION_INITIAL = 1e4
DEFAULT_TRUST_REGION_MAX = 1e9
DEFAULT_CAUCHY_SCALE = 1.0

# HiPE partitioner
DEFAULT_K = 100
DEFAULT_GAMMA = 50
DEFAULT_LOCAL_ITERATIONS = 10
MARGINAL_FLOOR = 1e-8

# Sphere generator
DEFAULT_SPHERE_NODES = 2500
DEFAULT_SPHERE_RADIUS = 50.0
DEFAULT_SIGMA_ROT = 0.03
DEFAULT_SIGMA_TRANS = 0.01
DEFAULT_SEED = 42

# Parallelism cap for partition solves and benchmark cells
try:
    MAX_THREADS = max(1, int(os.environ.get("PGO_THREADS", os.cpu_count() or 1)))
except ValueError:
    MAX_THREADS = 1

# Public datasets (torus3D, grid3D, garage, ...) for the regression suite
DATASETS_DIR = os.environ.get("PGO_DATASETS")

# CHOLMOD availability
try:
    from sksparse import cholmod  # noqa: F401
    HAS_CHOLMOD = True
except ImportError:
    HAS_CHOLMOD = False
