"""Pose-graph data model."""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np

from pgo.core.se3 import (
    Pose,
    flat_batch,
    flat_jacobian,
    propagate_covariance,
    pseudo_inverse,
)


@dataclass
class PoseVariable:
    """A pose unknown. ``visited`` is scratch state for the partitioner."""

    id: int
    estimate: Pose = field(default_factory=Pose.identity)
    fixed: bool = False
    visited: bool = False


@dataclass(eq=False)
class Edge:
    """Relative measurement: ``measurement`` is the pose of ``id_to`` in the
    frame of ``id_from``. ``information`` is ordered (translation, rotation).
    """

    id_from: int
    id_to: int
    measurement: Pose
    information: np.ndarray

    def __post_init__(self):
        if self.id_from == self.id_to:
            raise ValueError(f"edge {self.id_from}->{self.id_to} is a self loop")
        information = np.array(self.information, dtype=float).reshape(6, 6)
        information.flags.writeable = False
        self.information = information

    @property
    def key(self) -> Tuple[int, int]:
        return (self.id_from, self.id_to)

    def other(self, var_id: int) -> int:
        return self.id_to if var_id == self.id_from else self.id_from

    @cached_property
    def covariance(self) -> np.ndarray:
        return pseudo_inverse(self.information)

    @cached_property
    def chordal_weight(self) -> np.ndarray:
        """12x12 weight of the flat residual, linearized at the measurement."""
        sigma12 = propagate_covariance(self.covariance, flat_jacobian(self.measurement))
        return pseudo_inverse(sigma12)

    @cached_property
    def langevin_concentrations(self) -> Tuple[float, float]:
        """Isotropic (kappa, tau) collapsed from the information diagonal."""
        diag = np.diag(self.information)
        return float(np.mean(diag[3:])), float(np.mean(diag[:3]))


class EdgeArrays:
    """Edge data stacked along a leading axis, in edge-index order."""

    def __init__(self, edges: Sequence[Edge]):
        self.edges = list(edges)
        m = len(self.edges)
        self.id_from = np.array([e.id_from for e in self.edges], dtype=np.int64)
        self.id_to = np.array([e.id_to for e in self.edges], dtype=np.int64)
        self.measurement_rotation = np.array(
            [e.measurement.rotation for e in self.edges], dtype=float
        ).reshape(m, 3, 3)
        self.measurement_translation = np.array(
            [e.measurement.translation for e in self.edges], dtype=float
        ).reshape(m, 3)
        self.information = np.array(
            [e.information for e in self.edges], dtype=float
        ).reshape(m, 6, 6)

    def __len__(self) -> int:
        return len(self.edges)

    @cached_property
    def measurement_flat(self) -> np.ndarray:
        return flat_batch(self.measurement_rotation, self.measurement_translation)

    @cached_property
    def chordal_weight(self) -> np.ndarray:
        return np.array(
            [e.chordal_weight for e in self.edges], dtype=float
        ).reshape(len(self), 12, 12)

    @cached_property
    def langevin_scale(self) -> np.ndarray:
        """Per-row square roots of (kappa, tau) spread over the 12 flat entries."""
        concentrations = np.array(
            [e.langevin_concentrations for e in self.edges], dtype=float
        ).reshape(len(self), 2)
        roots = np.sqrt(np.maximum(concentrations, 0.0))
        return np.repeat(roots, [9, 3], axis=1)


class PoseGraph:
    """Id-keyed pose variables plus an ordered list of edges."""

    def __init__(self):
        self.variables: Dict[int, PoseVariable] = {}
        self.edges: List[Edge] = []
        self._incident: Dict[int, List[int]] = {}
        self._edge_arrays: Optional[EdgeArrays] = None

    def __len__(self) -> int:
        return len(self.variables)

    def __contains__(self, var_id: int) -> bool:
        return var_id in self.variables

    @property
    def num_variables(self) -> int:
        return len(self.variables)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def add_variable(
        self,
        var_id: int,
        estimate: Optional[Pose] = None,
        fixed: bool = False
    ) -> PoseVariable:
        if var_id in self.variables:
            raise ValueError(f"variable {var_id} already exists")
        if var_id < 0:
            raise ValueError(f"variable id must be non-negative, got {var_id}")
        variable = PoseVariable(var_id, estimate or Pose.identity(), fixed)
        self.variables[var_id] = variable
        self._incident[var_id] = []
        return variable

    def add_edge(self, edge: Edge) -> int:
        """Append an edge and return its index."""
        for endpoint in edge.key:
            if endpoint not in self.variables:
                raise KeyError(f"edge endpoint {endpoint} is not a variable")
        index = len(self.edges)
        self.edges.append(edge)
        self._edge_arrays = None
        self._incident[edge.id_from].append(index)
        self._incident[edge.id_to].append(index)
        return index

    def ids(self) -> List[int]:
        return sorted(self.variables)

    def fixed_ids(self) -> List[int]:
        return sorted(i for i, v in self.variables.items() if v.fixed)

    def free_ids(self) -> Set[int]:
        return {i for i, v in self.variables.items() if not v.fixed}

    def estimate(self, var_id: int) -> Pose:
        return self.variables[var_id].estimate

    def set_estimate(self, var_id: int, pose: Pose):
        self.variables[var_id].estimate = pose

    def estimates(self) -> Dict[int, Pose]:
        return {i: v.estimate for i, v in self.variables.items()}

    def set_estimates(self, poses: Dict[int, Pose]):
        for var_id, pose in poses.items():
            self.variables[var_id].estimate = pose

    def edge_arrays(self) -> EdgeArrays:
        """Stacked edge data, rebuilt after edges are added."""
        if self._edge_arrays is None:
            self._edge_arrays = EdgeArrays(self.edges)
        return self._edge_arrays

    @property
    def id_bound(self) -> int:
        """One past the largest variable id."""
        return max(self.variables, default=-1) + 1

    def membership(self, ids: Iterable[int]) -> np.ndarray:
        """Boolean mask indexed by variable id, True for ``ids``."""
        mask = np.zeros(self.id_bound, dtype=bool)
        mask[np.fromiter(ids, dtype=np.int64)] = True
        return mask

    def pose_arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Row lookup indexed by variable id, with stacked rotations and
        translations of the current estimates in those rows."""
        n = len(self.variables)
        lookup = np.full(self.id_bound, -1, dtype=np.int64)
        lookup[np.fromiter(self.variables, dtype=np.int64, count=n)] = np.arange(n)
        estimates = [v.estimate for v in self.variables.values()]
        rotations = np.array([p.rotation for p in estimates], dtype=float).reshape(n, 3, 3)
        translations = np.array([p.translation for p in estimates], dtype=float).reshape(n, 3)
        return lookup, rotations, translations

    def incident_edges(self, var_id: int) -> List[int]:
        return self._incident[var_id]

    def degree(self, var_id: int) -> int:
        return len(self._incident[var_id])

    def neighbors(self, var_id: int) -> List[int]:
        """Adjacent variable ids in ascending order."""
        return sorted({self.edges[e].other(var_id) for e in self._incident[var_id]})

    def adjacent(self, var_id: int) -> List[Tuple[int, int]]:
        """``(neighbor, edge index)`` pairs sorted by neighbor, then edge."""
        return sorted((self.edges[e].other(var_id), e) for e in self._incident[var_id])

    def reset_visited(self):
        for variable in self.variables.values():
            variable.visited = False

    def copy(self) -> 'PoseGraph':
        """Copy with independent variables; edges are shared (read-only)."""
        out = PoseGraph()
        for var_id in self.ids():
            v = self.variables[var_id]
            out.add_variable(var_id, v.estimate, v.fixed).visited = v.visited
        for edge in self.edges:
            out.add_edge(edge)
        out._edge_arrays = self._edge_arrays
        return out

    def subgraph(
        self,
        var_ids: Iterable[int],
        edge_indices: Optional[Iterable[int]] = None
    ) -> 'PoseGraph':
        """Graph over ``var_ids``.

        Without ``edge_indices`` every edge with both endpoints inside is kept.
        """
        keep = set(var_ids)
        out = PoseGraph()
        for var_id in sorted(keep):
            v = self.variables[var_id]
            out.add_variable(var_id, v.estimate, v.fixed)
        if edge_indices is None:
            edge_indices = (
                i for i, e in enumerate(self.edges)
                if e.id_from in keep and e.id_to in keep
            )
        for index in sorted(edge_indices):
            out.add_edge(self.edges[index])
        return out

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(self.variables)
        graph.add_edges_from(edge.key for edge in self.edges)
        return graph


def connected_components(graph: PoseGraph) -> List[Set[int]]:
    """Variable ids grouped by undirected connectivity, ordered by smallest id."""
    components = [set(c) for c in nx.connected_components(graph.to_networkx())]
    return sorted(components, key=min)
