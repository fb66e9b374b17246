"""Evaluation metrics: normalized chi-square and absolute trajectory error."""

from typing import Tuple

import click
import numpy as np

from pgo.core.costs import CostKind, RobustKernel, total_cost
from pgo.core.errors import EmptyInput, IdMismatch
from pgo.core.graph import PoseGraph
from pgo.core.se3 import Pose, rotation_angle


def normalized_chi2(
    graph: PoseGraph,
    cost: CostKind = CostKind.GEODESIC,
    kernel: RobustKernel = RobustKernel()
) -> float:
    """Summed squared Mahalanobis errors ``rho(r' W r)`` divided by ``6 (m - n)``.

    This is twice the solver's objective, so a graph with correctly
    modelled noise sits near 1 at its optimum. Graphs with no redundancy
    (m <= n) return the raw sum with a warning.
    """
    total = 2.0 * total_cost(graph, cost, kernel)
    redundancy = graph.num_edges - graph.num_variables
    if redundancy <= 0:
        click.echo(
            click.style(
                f"Warning: {graph.num_edges} edges for {graph.num_variables} variables, "
                f"reporting the unnormalized cost",
                fg='yellow'
            ),
            err=True
        )
        return total
    return total / (6.0 * redundancy)


def align_trajectories(estimate: np.ndarray, reference: np.ndarray) -> Pose:
    """Rigid transform (no scale) taking ``estimate`` points closest to
    ``reference`` points in the least-squares sense (Horn's method)."""
    mu_est = estimate.mean(axis=0)
    mu_ref = reference.mean(axis=0)
    w = (reference - mu_ref).T @ (estimate - mu_est)
    u, _, vt = np.linalg.svd(w)
    s = np.diag([1.0, 1.0, np.sign(np.linalg.det(u @ vt)) or 1.0])
    rotation = u @ s @ vt
    return Pose(rotation, mu_ref - rotation @ mu_est)


def absolute_trajectory_error(
    estimate: PoseGraph,
    reference: PoseGraph,
    align: bool = True
) -> Tuple[float, float]:
    """RMS rotation angle (rad) and RMS translation distance after alignment."""
    est_ids, ref_ids = set(estimate.variables), set(reference.variables)
    if est_ids != ref_ids:
        raise IdMismatch(missing=ref_ids - est_ids, extra=est_ids - ref_ids)
    if not ref_ids:
        raise EmptyInput("trajectories have no poses")

    ids = sorted(ref_ids)
    est_poses = [estimate.estimate(i) for i in ids]
    ref_poses = [reference.estimate(i) for i in ids]

    if align:
        correction = align_trajectories(
            np.array([p.translation for p in est_poses]),
            np.array([p.translation for p in ref_poses])
        )
        est_poses = [correction @ p for p in est_poses]

    trans = np.array([
        np.linalg.norm(e.translation - r.translation) for e, r in zip(est_poses, ref_poses)
    ])
    rot = np.array([
        rotation_angle(r.rotation.T @ e.rotation) for e, r in zip(est_poses, ref_poses)
    ])
    return float(np.sqrt(np.mean(rot ** 2))), float(np.sqrt(np.mean(trans ** 2)))
