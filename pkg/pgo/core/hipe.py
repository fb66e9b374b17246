"""
Hierarchical pose-graph initialization.

The graph is cut into breadth-first partitions. Each partition is solved
locally with its max-degree variable fixed, and condensed into virtual
measurements from that anchor to the partition's boundary variables. The
resulting skeleton is optimized on its own and then held fixed while the
remaining variables are initialized and optimized around it.
"""

import time
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Set, Tuple

import numpy as np

from pgo.config import (
    DEFAULT_GAMMA,
    DEFAULT_K,
    DEFAULT_LOCAL_ITERATIONS,
    DEFAULT_MAX_ITERATIONS,
    MARGINAL_FLOOR,
)
from pgo.core.costs import CostKind
from pgo.core.errors import EmptyInput
from pgo.core.g2o import write_g2o
from pgo.core.graph import Edge, PoseGraph, connected_components
from pgo.core.initializers import chordal_init, spanning_tree_init
from pgo.core.se3 import Pose, pseudo_inverse
from pgo.core.sparse_nls import (
    OptimizeReport,
    SolverConfig,
    build_normal_equations,
    marginal_covariance,
    optimize,
)
from pgo.utils.async_utils import run_parallel

DISTANCES = ("hops", "metric")


@dataclass(frozen=True)
class HipeParams:
    k: int = DEFAULT_K
    gamma: float = DEFAULT_GAMMA
    local_cost: CostKind = CostKind.GEODESIC
    skeleton_cost: CostKind = CostKind.GEODESIC
    local_iterations: int = DEFAULT_LOCAL_ITERATIONS
    skeleton_iterations: int = DEFAULT_MAX_ITERATIONS
    remaining_iterations: int = DEFAULT_MAX_ITERATIONS
    distance: str = "hops"
    workers: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be at least 1, got {self.k}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")
        if self.distance not in DISTANCES:
            raise ValueError(f"distance must be one of {DISTANCES}, got '{self.distance}'")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if min(self.local_iterations, self.skeleton_iterations, self.remaining_iterations) < 1:
            raise ValueError("iteration budgets must be at least 1")


@dataclass
class Partition:
    root: int
    anchor: int
    variables: Set[int]
    edges: List[int]
    boundary: Set[int]
    # Variables first marked visited by this partition.
    claimed: Set[int] = field(default_factory=set)

    @property
    def interior(self) -> Set[int]:
        return self.variables - self.boundary - {self.anchor}


@dataclass
class VirtualMeasurement:
    anchor: int
    boundary: int
    relative_pose: Pose
    covariance: np.ndarray

    def information(self) -> np.ndarray:
        return pseudo_inverse(self.covariance + MARGINAL_FLOOR * np.eye(6))

    def to_edge(self) -> Edge:
        return Edge(self.anchor, self.boundary, self.relative_pose, self.information())


@dataclass
class Skeleton:
    graph: PoseGraph
    partitions: List[Partition]
    measurements: List[VirtualMeasurement]

    @property
    def variables(self) -> Set[int]:
        return set(self.graph.variables)

    def export(self) -> str:
        """g2o text of the skeleton with a ``# skeleton`` header."""
        return write_g2o(self.graph, header="skeleton")


@dataclass
class HipeReport:
    partitions: int = 0
    skeleton_variables: int = 0
    skeleton_edges: int = 0
    t_partition: float = 0.0
    t_skeleton: float = 0.0
    t_propagate: float = 0.0
    skeletons: List[Skeleton] = field(default_factory=list)

    @property
    def total_time(self) -> float:
        return self.t_partition + self.t_skeleton + self.t_propagate

    def export_skeleton(self) -> str:
        """All component skeletons as one g2o document."""
        merged = PoseGraph()
        for skeleton in self.skeletons:
            for var_id in skeleton.graph.ids():
                variable = skeleton.graph.variables[var_id]
                merged.add_variable(var_id, variable.estimate, variable.fixed)
            for edge in skeleton.graph.edges:
                merged.add_edge(edge)
        return write_g2o(merged, header="skeleton")


def max_degree_node(variables: Iterable[int], edges: Iterable[Edge]) -> int:
    """Variable with the most incident ``edges``; ties go to the smallest id."""
    degree = {v: 0 for v in variables}
    if not degree:
        raise EmptyInput("max_degree_node needs at least one variable")
    for edge in edges:
        for endpoint in edge.key:
            if endpoint in degree:
                degree[endpoint] += 1
    return min(degree, key=lambda v: (-degree[v], v))


def breadth_first_visit(
    graph: PoseGraph,
    root: int,
    k: int,
    gamma: float,
    distance: str = "hops"
) -> Tuple[Set[int], List[int], Set[int]]:
    """Limited breadth-first visit from ``root`` over unvisited variables.

    Whole levels are expanded while fewer than ``k`` variables were collected
    or the deepest level is closer than ``gamma``. Returns the collected
    variables, the indices of edges with both endpoints in variables or
    boundary, and the boundary: unvisited frontier, previously visited
    neighbours and the root itself when it was visited before.
    """
    variables = graph.variables
    members = {root}
    level = [root]
    reach = {root: 0.0}
    depth = 0.0

    while level and (len(members) < k or depth < gamma):
        next_level = []
        for u in level:
            for v, index in graph.adjacent(u):
                if v in members or variables[v].visited:
                    continue
                members.add(v)
                next_level.append(v)
                if distance == "metric":
                    step = float(np.linalg.norm(graph.edges[index].measurement.translation))
                    reach[v] = reach[u] + step
                else:
                    reach[v] = reach[u] + 1.0
        if not next_level:
            break
        level = next_level
        depth = max(reach[v] for v in level)

    boundary = set()
    for u in members:
        for v in graph.neighbors(u):
            if v not in members:
                boundary.add(v)
    if variables[root].visited:
        boundary.add(root)

    local = members | boundary
    edges = sorted({
        index for u in local for index in graph.incident_edges(u)
        if graph.edges[index].other(u) in local
    })
    return members, edges, boundary


def partition_graph(graph: PoseGraph, params: HipeParams) -> List[Partition]:
    """Cut one connected graph into partitions, in visit order.

    Every variable lands in some partition's variables. A queued root whose
    neighbourhood is already visited starts no partition of its own; it is
    added to the partition that claimed it, where it already sits on the
    boundary.
    """
    graph.reset_visited()
    if not graph.variables:
        return []
    start = max_degree_node(graph.variables, graph.edges)
    queue = deque([start])
    partitions = []
    owner: Dict[int, Partition] = {}

    while queue:
        root = queue.popleft()
        variables = graph.variables
        if variables[root].visited and all(variables[v].visited for v in graph.neighbors(root)):
            owner[root].variables.add(root)
            continue
        members, edges, boundary = breadth_first_visit(
            graph, root, params.k, params.gamma, params.distance
        )
        anchor = max_degree_node(members, (graph.edges[e] for e in edges))
        frontier = sorted(v for v in boundary if not variables[v].visited)
        claimed = {v for v in members if not variables[v].visited} | set(frontier)
        for v in claimed:
            variables[v].visited = True
        partition = Partition(
            root=root,
            anchor=anchor,
            variables=members,
            edges=edges,
            boundary=boundary - {anchor},
            claimed=claimed
        )
        partitions.append(partition)
        owner.update((v, partition) for v in frontier)
        queue.extend(frontier)

    return partitions


def _local_graph(graph: PoseGraph, partition: Partition) -> PoseGraph:
    local = graph.subgraph(partition.variables | partition.boundary, partition.edges)
    for variable in local.variables.values():
        variable.fixed = variable.id == partition.anchor
    return local


def solve_partition(
    graph: PoseGraph,
    partition: Partition,
    local_cost: CostKind = CostKind.GEODESIC,
    iterations: int = DEFAULT_LOCAL_ITERATIONS
) -> Tuple[PoseGraph, OptimizeReport]:
    """Local estimate of a partition with only its anchor fixed.

    Works on a copy; ``graph`` is not modified.
    """
    local = _local_graph(graph, partition)
    spanning_tree_init(local)
    report = optimize(local, SolverConfig(cost=local_cost, max_iterations=iterations))
    return local, report


def compute_virtual_measurements(
    partition: Partition,
    local: PoseGraph,
    local_cost: CostKind = CostKind.GEODESIC
) -> List[VirtualMeasurement]:
    """One anchor-to-boundary measurement per boundary variable, with the
    boundary's marginal covariance given the anchor."""
    if not partition.boundary:
        return []
    system = build_normal_equations(local, local_cost)
    marginals = marginal_covariance(system, partition.boundary)
    x_anchor_inv = local.estimate(partition.anchor).inverse()
    return [
        VirtualMeasurement(
            anchor=partition.anchor,
            boundary=b,
            relative_pose=x_anchor_inv @ local.estimate(b),
            covariance=marginals[b]
        )
        for b in sorted(partition.boundary)
    ]


def build_skeleton(graph: PoseGraph, params: HipeParams = HipeParams()) -> Skeleton:
    """Partition a connected graph, solve every partition and collect the
    anchors, boundary variables and virtual measurements."""
    partitions = partition_graph(graph, params)

    def condense(partition: Partition) -> List[VirtualMeasurement]:
        local, _ = solve_partition(graph, partition, params.local_cost, params.local_iterations)
        return compute_virtual_measurements(partition, local, params.local_cost)

    chunks = run_parallel(partitions, condense, params.workers)

    skeleton_graph = PoseGraph()
    ids = set()
    for partition in partitions:
        ids.add(partition.anchor)
        ids.update(partition.boundary)
    for var_id in sorted(ids):
        skeleton_graph.add_variable(var_id, graph.estimate(var_id))

    measurements = [m for chunk in chunks for m in chunk]
    for measurement in measurements:
        skeleton_graph.add_edge(measurement.to_edge())
    return Skeleton(skeleton_graph, partitions, measurements)


def optimize_skeleton(
    skeleton: Skeleton,
    skeleton_cost: CostKind = CostKind.GEODESIC,
    iterations: int = DEFAULT_MAX_ITERATIONS
) -> Dict[int, Pose]:
    """Chordal initialization and optimization of the skeleton with its
    max-degree variable fixed."""
    graph = skeleton.graph
    if not graph.variables:
        return {}
    pinned = max_degree_node(graph.variables, graph.edges)
    for variable in graph.variables.values():
        variable.fixed = variable.id == pinned
    chordal_init(graph)
    optimize(graph, SolverConfig(cost=skeleton_cost, max_iterations=iterations))
    return graph.estimates()


def propagate_to_remaining(
    graph: PoseGraph,
    skeleton_estimates: Dict[int, Pose],
    cost: CostKind = CostKind.GEODESIC,
    iterations: int = DEFAULT_MAX_ITERATIONS
) -> Optional[OptimizeReport]:
    """Fix the skeleton at its estimates, then chordal-initialize and
    optimize every other non-fixed variable of ``graph`` in place."""
    graph.set_estimates(skeleton_estimates)
    free = {
        v for v, variable in graph.variables.items()
        if v not in skeleton_estimates and not variable.fixed
    }
    if not free:
        return None
    chordal_init(graph, free)
    return optimize(graph, SolverConfig(cost=cost, max_iterations=iterations), free)


def _align(poses: Dict[int, Pose], reference_id: int, reference: Pose) -> Dict[int, Pose]:
    """Left-compose all poses so ``reference_id`` lands on ``reference``."""
    correction = reference @ poses[reference_id].inverse()
    return {v: correction @ pose for v, pose in poses.items()}


def hipe_init(graph: PoseGraph, params: HipeParams = HipeParams()) -> HipeReport:
    """Initialize every non-fixed variable of ``graph`` in place.

    Each connected component is handled on its own. The result is aligned so
    that the component's lowest-id fixed variable (or lowest id, when none is
    fixed) keeps its stored pose.
    """
    report = HipeReport()
    for component in connected_components(graph):
        if len(component) == 1:
            continue
        work = graph.subgraph(component)
        for variable in work.variables.values():
            variable.fixed = False

        start = time.perf_counter()
        skeleton = build_skeleton(work, params)
        report.t_partition += time.perf_counter() - start

        start = time.perf_counter()
        estimates = optimize_skeleton(skeleton, params.skeleton_cost, params.skeleton_iterations)
        report.t_skeleton += time.perf_counter() - start

        start = time.perf_counter()
        propagate_to_remaining(work, estimates, params.local_cost, params.remaining_iterations)
        report.t_propagate += time.perf_counter() - start

        fixed = sorted(v for v in component if graph.variables[v].fixed)
        reference_id = fixed[0] if fixed else min(component)
        aligned = _align(work.estimates(), reference_id, graph.estimate(reference_id))
        graph.set_estimates({v: p for v, p in aligned.items() if not graph.variables[v].fixed})

        report.partitions += len(skeleton.partitions)
        report.skeleton_variables += skeleton.graph.num_variables
        report.skeleton_edges += skeleton.graph.num_edges
        report.skeletons.append(skeleton)
    return report
