"""
Baseline initializers: odometry, spanning tree, chordal relaxation and
Cauchy boosting.

All initializers work in place on the free variables of a graph. Variables
outside the free set (and fixed ones) are constants that seed propagation;
a component without any constant is pinned at its smallest id.
"""

from collections import deque
from enum import Enum
from typing import Dict, Iterable, List, Optional, Set, Tuple

import numpy as np
import scipy.sparse as sp

from pgo.config import DEFAULT_CAUCHY_SCALE, DEFAULT_MAX_ITERATIONS
from pgo.core.costs import CostKind, RobustKernel
from pgo.core.errors import NotPositiveDefinite, RankDeficient, SingularSystem
from pgo.core.graph import PoseGraph, connected_components
from pgo.core.se3 import Pose, project_to_so3
from pgo.core.sparse_nls import (
    OptimizeReport,
    SolverConfig,
    free_variables,
    factorize,
    optimize,
)


class InitKind(Enum):
    ODOMETRY = "odometry"
    SPANNING_TREE = "spanning-tree"
    CHORDAL = "chordal"
    CAUCHY = "cauchy"
    HIPE = "hipe"

    @classmethod
    def parse(cls, value: str) -> 'InitKind':
        aliases = {"sp": "spanning-tree", "ci": "chordal", "cb": "cauchy"}
        value = aliases.get(value.lower(), value.lower())
        try:
            return cls(value)
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown initializer '{value}' (choose from {choices})")


def gauge_constants(graph: PoseGraph, free: Set[int]) -> Set[int]:
    """Variables held constant: everything not free, plus the smallest id of
    any component that would otherwise be entirely free."""
    constants = set(graph.variables) - free
    for component in connected_components(graph):
        if component <= free:
            constants.add(min(component))
    return constants


def _step(graph: PoseGraph, edge_index: int, parent: int) -> Pose:
    """Pose of the edge's other endpoint composed from ``parent``."""
    edge = graph.edges[edge_index]
    x_parent = graph.estimate(parent)
    if edge.id_from == parent:
        return x_parent @ edge.measurement
    return x_parent @ edge.measurement.inverse()


def _propagate(
    graph: PoseGraph,
    sources: List[int],
    assigned: Set[int],
    free: Set[int]
) -> Dict[int, Pose]:
    """Breadth-first propagation from ``sources`` into unassigned free variables.

    Neighbours are expanded by ascending id; between parallel edges the
    earliest one wins.
    """
    updated = {}
    queue = deque(sources)
    while queue:
        parent = queue.popleft()
        for child, index in graph.adjacent(parent):
            if child in assigned or child not in free:
                continue
            pose = _step(graph, index, parent)
            graph.set_estimate(child, pose)
            updated[child] = pose
            assigned.add(child)
            queue.append(child)
    return updated


def spanning_tree_init(
    graph: PoseGraph,
    free_set: Optional[Iterable[int]] = None
) -> Dict[int, Pose]:
    """Compose measurements along a breadth-first spanning tree rooted at the
    constant variables."""
    free = free_variables(graph, free_set)
    constants = gauge_constants(graph, free)
    free -= constants
    return _propagate(graph, sorted(constants), set(constants), free)


def odometry_init(
    graph: PoseGraph,
    free_set: Optional[Iterable[int]] = None
) -> Dict[int, Pose]:
    """Chain consecutive-id edges ``(i, i+1)`` outward from the constants,
    then reach whatever is left through the spanning tree."""
    free = free_variables(graph, free_set)
    constants = gauge_constants(graph, free)
    free -= constants

    consecutive: Dict[Tuple[int, int], int] = {}
    for index, edge in enumerate(graph.edges):
        lo, hi = sorted(edge.key)
        if hi - lo == 1:
            consecutive.setdefault((lo, hi), index)

    assigned = set(constants)
    updated = {}
    for source in sorted(constants):
        for direction in (1, -1):
            current = source
            while True:
                nxt = current + direction
                index = consecutive.get((min(current, nxt), max(current, nxt)))
                if index is None or nxt in assigned or nxt not in free:
                    break
                pose = _step(graph, index, current)
                graph.set_estimate(nxt, pose)
                updated[nxt] = pose
                assigned.add(nxt)
                current = nxt

    updated.update(_propagate(graph, sorted(assigned), assigned, free))
    return updated


def _edge_positions(graph: PoseGraph, order: List[int]) -> Tuple[np.ndarray, np.ndarray]:
    """Row of each edge endpoint in ``order``, -1 for constants."""
    arrays = graph.edge_arrays()
    position = np.full(graph.id_bound, -1, dtype=np.int64)
    position[np.asarray(order, dtype=np.int64)] = np.arange(len(order))
    return position[arrays.id_from], position[arrays.id_to]


def _block_coo(rows: np.ndarray, cols: np.ndarray, blocks: np.ndarray):
    """COO triplets of 3x3 ``blocks`` placed at block rows and columns."""
    r = np.arange(3)
    full_rows = np.broadcast_to(3 * rows[:, None, None] + r[None, :, None], blocks.shape)
    full_cols = np.broadcast_to(3 * cols[:, None, None] + r[None, None, :], blocks.shape)
    return full_rows.ravel(), full_cols.ravel(), blocks.ravel()


def rotation_relaxation(
    graph: PoseGraph,
    free_set: Optional[Iterable[int]] = None
) -> Dict[int, np.ndarray]:
    """Unconstrained minimizer ``A_i`` of ``sum ||R_ij^T A_i - A_j||_F^2``.

    ``A_i`` stands for the transposed rotation of variable i. Constants are
    clamped to their current rotation. The three columns of ``A`` decouple,
    so one 3x3-block system is solved with three right-hand sides.
    """
    free = free_variables(graph, free_set)
    constants = gauge_constants(graph, free)
    order = sorted(free - constants)
    if not order:
        return {}
    n = len(order)
    a, b = _edge_positions(graph, order)
    fi, fj = a >= 0, b >= 0
    both = fi & fj
    r_ij = graph.edge_arrays().measurement_rotation
    r_ij_t = np.transpose(r_ij, (0, 2, 1))
    eye = np.broadcast_to(np.eye(3), (int(fi.sum() + fj.sum()), 3, 3))

    triplets = [
        _block_coo(np.concatenate([a[fi], b[fj]]), np.concatenate([a[fi], b[fj]]), eye),
        _block_coo(a[both], b[both], -r_ij[both]),
        _block_coo(b[both], a[both], -r_ij_t[both]),
    ]
    rows, cols, vals = (np.concatenate(parts) for parts in zip(*triplets))
    matrix = sp.coo_matrix((vals, (rows, cols)), shape=(3 * n, 3 * n)).tocsc()

    lookup, rotations, _ = graph.pose_arrays()
    arrays = graph.edge_arrays()
    rhs = np.zeros((n, 3, 3))
    only_i, only_j = fi & ~fj, fj & ~fi
    a_j = np.transpose(rotations[lookup[arrays.id_to[only_i]]], (0, 2, 1))
    a_i = np.transpose(rotations[lookup[arrays.id_from[only_j]]], (0, 2, 1))
    np.add.at(rhs, a[only_i], r_ij[only_i] @ a_j)
    np.add.at(rhs, b[only_j], r_ij_t[only_j] @ a_i)

    try:
        solution = factorize(matrix).solve(rhs.reshape(3 * n, 3))
    except NotPositiveDefinite as e:
        raise SingularSystem(f"rotation relaxation: {e}") from e
    return {v: solution[3 * k:3 * k + 3] for k, v in enumerate(order)}


def relaxation_objective(graph: PoseGraph, relaxed: Dict[int, np.ndarray]) -> float:
    """``sum ||R_ij^T A_i - A_j||_F^2``; variables missing from ``relaxed`` use
    their current transposed rotation."""
    def a(v):
        return relaxed[v] if v in relaxed else graph.estimate(v).rotation.T
    total = 0.0
    for edge in graph.edges:
        diff = edge.measurement.rotation.T @ a(edge.id_from) - a(edge.id_to)
        total += float(np.sum(diff * diff))
    return total


def _solve_translations(
    graph: PoseGraph,
    order: List[int],
    rotations: Dict[int, np.ndarray]
) -> Dict[int, np.ndarray]:
    """Least squares on ``sum ||t_j - t_i - R_i t_ij||^2`` over ``order``."""
    n = len(order)
    a, b = _edge_positions(graph, order)
    fi, fj = a >= 0, b >= 0
    both = fi & fj
    only_i, only_j = fi & ~fj, fj & ~fi

    lookup, current, translations = graph.pose_arrays()
    current = current.copy()
    for var_id, rotation in rotations.items():
        current[lookup[var_id]] = rotation
    arrays = graph.edge_arrays()
    rows_i, rows_j = lookup[arrays.id_from], lookup[arrays.id_to]
    offset = np.einsum('nij,nj->ni', current[rows_i], arrays.measurement_translation)

    ones = np.ones(int(fi.sum() + fj.sum()))
    couplings = -np.ones(int(both.sum()))
    laplacian = sp.coo_matrix(
        (
            np.concatenate([ones, couplings, couplings]),
            (
                np.concatenate([a[fi], b[fj], a[both], b[both]]),
                np.concatenate([a[fi], b[fj], b[both], a[both]])
            )
        ),
        shape=(n, n)
    ).tocsc()
    rhs = np.zeros((n, 3))
    np.add.at(rhs, a[fi], -offset[fi])
    np.add.at(rhs, b[fj], offset[fj])
    np.add.at(rhs, a[only_i], translations[rows_j[only_i]])
    np.add.at(rhs, b[only_j], translations[rows_i[only_j]])

    try:
        solution = factorize(laplacian).solve(rhs)
    except NotPositiveDefinite as e:
        raise SingularSystem(f"translation system: {e}") from e
    return {v: solution[k] for k, v in enumerate(order)}


def chordal_init(
    graph: PoseGraph,
    free_set: Optional[Iterable[int]] = None
) -> Dict[int, Pose]:
    """Rotation relaxation, projection onto SO(3), then translations by
    linear least squares. Only free variables are written."""
    free = free_variables(graph, free_set)
    constants = gauge_constants(graph, free)
    order = sorted(free - constants)
    if not order:
        return {}

    relaxed = rotation_relaxation(graph, free)
    rotations = {}
    for var_id, a in relaxed.items():
        try:
            rotations[var_id] = project_to_so3(a.T, min_rank=2)
        except RankDeficient as e:
            raise SingularSystem(f"variable {var_id}: {e}") from e

    translations = _solve_translations(graph, order, rotations)
    updated = {v: Pose(rotations[v], translations[v]) for v in order}
    graph.set_estimates(updated)
    return updated


def cauchy_boost_init(
    graph: PoseGraph,
    iterations: int = DEFAULT_MAX_ITERATIONS,
    free_set: Optional[Iterable[int]] = None,
    scale: float = DEFAULT_CAUCHY_SCALE,
    verbose: bool = False
) -> OptimizeReport:
    """Spanning-tree guess refined by Geodesic iterations under a Cauchy kernel."""
    free = free_variables(graph, free_set)
    spanning_tree_init(graph, free)
    constants = gauge_constants(graph, free)
    config = SolverConfig(
        cost=CostKind.GEODESIC,
        kernel=RobustKernel.cauchy(scale),
        max_iterations=iterations,
        verbose=verbose
    )
    return optimize(graph, config, free - constants)
