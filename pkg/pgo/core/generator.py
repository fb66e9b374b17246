"""
Synthetic sphere datasets.

A vehicle drives along latitude rings of a sphere, one pose per azimuth
step, heading along the ring with its z axis on the outward normal.
Consecutive poses are linked by odometry; each pose is also linked to the
three nearest poses of the previous ring.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from pgo.config import (
    DEFAULT_SEED,
    DEFAULT_SIGMA_ROT,
    DEFAULT_SIGMA_TRANS,
    DEFAULT_SPHERE_NODES,
    DEFAULT_SPHERE_RADIUS,
)
from pgo.core.graph import Edge, PoseGraph
from pgo.core.se3 import Pose, exp_se3


@dataclass(frozen=True)
class GeneratorSpec:
    node_count: int = DEFAULT_SPHERE_NODES
    radius: float = DEFAULT_SPHERE_RADIUS
    sigma_rot: float = DEFAULT_SIGMA_ROT
    sigma_trans: float = DEFAULT_SIGMA_TRANS
    seed: int = DEFAULT_SEED
    nodes_per_ring: Optional[int] = None
    fix_first: bool = True

    def __post_init__(self):
        if self.node_count < 2:
            raise ValueError(f"node_count must be at least 2, got {self.node_count}")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.sigma_rot < 0 or self.sigma_trans < 0:
            raise ValueError("noise sigmas must be non-negative")
        if self.nodes_per_ring is not None and self.nodes_per_ring < 2:
            raise ValueError("nodes_per_ring must be at least 2")

    @property
    def ring_size(self) -> int:
        return self.nodes_per_ring or max(2, math.ceil(math.sqrt(self.node_count)))

    @property
    def ring_count(self) -> int:
        return math.ceil(self.node_count / self.ring_size)

    def information(self) -> np.ndarray:
        """Diagonal information; a zero sigma gives unit weight."""
        def weight(sigma):
            return 1.0 / (sigma * sigma) if sigma > 0 else 1.0
        return np.diag([weight(self.sigma_trans)] * 3 + [weight(self.sigma_rot)] * 3)


def sphere_poses(spec: GeneratorSpec) -> List[Pose]:
    per_ring, rings = spec.ring_size, spec.ring_count
    poses = []
    for index in range(spec.node_count):
        ring, step = divmod(index, per_ring)
        theta = math.pi * (ring + 1) / (rings + 1)
        phi = 2.0 * math.pi * step / per_ring
        normal = np.array([
            math.sin(theta) * math.cos(phi),
            math.sin(theta) * math.sin(phi),
            math.cos(theta)
        ])
        heading = np.array([-math.sin(phi), math.cos(phi), 0.0])
        rotation = np.column_stack([heading, np.cross(normal, heading), normal])
        poses.append(Pose(rotation, spec.radius * normal))
    return poses


def sphere_edges(spec: GeneratorSpec) -> List[Tuple[int, int]]:
    """Odometry pairs first, then ring-to-ring loop closures."""
    per_ring, n = spec.ring_size, spec.node_count
    pairs = [(i, i + 1) for i in range(n - 1)]
    for index in range(per_ring, n):
        ring, step = divmod(index, per_ring)
        for offset in (-1, 0, 1):
            source = (ring - 1) * per_ring + (step + offset) % per_ring
            if index - source != 1:
                pairs.append((source, index))
    return pairs


def generate_sphere(spec: GeneratorSpec) -> Tuple[PoseGraph, PoseGraph]:
    """Ground-truth and noisy graphs.

    Noisy measurements are ``Z * exp(xi)`` with ``xi`` drawn per axis from
    zero-mean Gaussians; the noisy graph's estimates are its odometry chain.
    """
    poses = sphere_poses(spec)
    pairs = sphere_edges(spec)
    information = spec.information()
    rng = np.random.default_rng(spec.seed)
    sigmas = np.array([spec.sigma_trans] * 3 + [spec.sigma_rot] * 3)
    noise = rng.standard_normal((len(pairs), 6)) * sigmas

    truth, noisy = PoseGraph(), PoseGraph()
    for var_id, pose in enumerate(poses):
        fixed = spec.fix_first and var_id == 0
        truth.add_variable(var_id, pose, fixed)
        noisy.add_variable(var_id, pose if var_id == 0 else None, fixed)

    for (i, j), xi in zip(pairs, noise):
        measurement = poses[i].inverse() @ poses[j]
        truth.add_edge(Edge(i, j, measurement, information))
        noisy.add_edge(Edge(i, j, measurement @ exp_se3(xi), information))

    # Odometry edges come first, one per consecutive pair.
    for i in range(spec.node_count - 1):
        noisy.set_estimate(i + 1, noisy.estimate(i) @ noisy.edges[i].measurement)
    return truth, noisy
