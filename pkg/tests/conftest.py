"""Shared fixtures: seeded random generators and small synthetic graphs."""

import os
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pytest

from pgo.core.graph import Edge, PoseGraph
from pgo.core.se3 import Pose, exp_se3


def random_pose(rng: np.random.Generator, spread: float = 2.0, max_angle: float = 2.5) -> Pose:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    return exp_se3(np.concatenate([rng.uniform(-spread, spread, 3), angle * axis]))


def build_graph(
    poses: Sequence[Pose],
    pairs: Iterable[Tuple[int, int]],
    information: Optional[np.ndarray] = None,
    noise: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    fixed: Iterable[int] = (0,),
    estimates: Optional[Sequence[Pose]] = None
) -> PoseGraph:
    """Graph whose measurements are the true relative poses, optionally
    perturbed by ``exp`` of Gaussian tangents with std ``noise``."""
    information = np.eye(6) if information is None else information
    fixed = set(fixed)
    graph = PoseGraph()
    for var_id, pose in enumerate(poses):
        start = pose if estimates is None else estimates[var_id]
        graph.add_variable(var_id, start, var_id in fixed)
    for i, j in pairs:
        z = poses[i].inverse() @ poses[j]
        if noise:
            z = z @ exp_se3(noise * rng.normal(size=6))
        graph.add_edge(Edge(i, j, z, information))
    return graph


def chain_pairs(n: int) -> List[Tuple[int, int]]:
    return [(i, i + 1) for i in range(n - 1)]


def loop_pairs(rng: np.random.Generator, n: int, extra: int) -> List[Tuple[int, int]]:
    """Odometry chain plus ``extra`` distinct non-consecutive loop closures."""
    pairs = chain_pairs(n)
    seen = set(pairs)
    while len(pairs) < n - 1 + extra:
        i, j = sorted(rng.choice(n, size=2, replace=False).tolist())
        if j - i > 1 and (i, j) not in seen:
            seen.add((i, j))
            pairs.append((i, j))
    return pairs


def walk(rng: np.random.Generator, n: int, step: float = 1.0) -> List[Pose]:
    """Random trajectory with bounded per-step motion."""
    poses = [Pose.identity()]
    for _ in range(n - 1):
        delta = np.concatenate([rng.normal(scale=step, size=3), rng.normal(scale=0.3, size=3)])
        poses.append(poses[-1] @ exp_se3(delta))
    return poses


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


@pytest.fixture
def random_graph(rng):
    """Factory for noisy loop-closure graphs started at perturbed poses."""
    def make(n: int = 12, extra: int = 8, noise: float = 0.01, start_noise: float = 0.1):
        poses = walk(rng, n)
        start = [p @ exp_se3(start_noise * rng.normal(size=6)) for p in poses]
        start[0] = poses[0]
        graph = build_graph(poses, loop_pairs(rng, n, extra), noise=noise, rng=rng, estimates=start)
        return graph, poses
    return make


@pytest.fixture
def datasets_dir():
    """Directory of public g2o datasets; tests using it skip when unset."""
    location = os.environ.get("PGO_DATASETS")
    if not location or not Path(location).is_dir():
        pytest.skip("PGO_DATASETS not set")
    return Path(location)


@pytest.fixture
def profiles_file(tmp_path, monkeypatch):
    """Point the profile store at a temporary file."""
    path = tmp_path / "profiles.yaml"
    monkeypatch.setattr("pgo.core.profile_manager.PROFILES_FILE", path)
    return path
