"""
Block-sparse non-linear least squares over SE(3) poses.

The normal equations ``H dx = -g`` are assembled from 6x6 blocks, one row
block per free variable. Fixed variables and variables outside the free set
enter the residuals as constants and get no rows. Steps are applied with the
right retraction ``X <- X * exp(dx)``.
"""

import heapq
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Set, Tuple

import click
import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from pgo.config import (
    DEFAULT_COST_DECREASE_TOLERANCE,
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_TRUST_REGION_INITIAL,
    DEFAULT_TRUST_REGION_MAX,
    HAS_CHOLMOD,
)
from pgo.core.costs import (
    CostKind,
    RobustKernel,
    apply_robust_kernel,
    edge_residuals,
    summed_cost,
)
from pgo.core.errors import NoAnchor, NotPositiveDefinite
from pgo.core.graph import PoseGraph, connected_components
from pgo.core.se3 import Pose, exp_se3_batch

if HAS_CHOLMOD:
    from sksparse import cholmod

BLOCK = 6

# Smallest accepted pivot, relative to the largest one.
PIVOT_TOLERANCE = 1e-12
# Gradient infinity norm treated as stationary.
GRADIENT_TOLERANCE = 1e-12
# Trust-region acceptance thresholds on gain ratio.
GAIN_LOW = 0.25
GAIN_HIGH = 0.75
MAX_STEP_TRIALS = 20
MAX_DAMPING_TRIALS = 12
# Targets per right-hand side when recovering marginals by column solves.
MARGINAL_CHUNK = 32


@dataclass
class SolverConfig:
    cost: CostKind = CostKind.GEODESIC
    kernel: RobustKernel = field(default_factory=RobustKernel)
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    cost_decrease_tolerance: float = DEFAULT_COST_DECREASE_TOLERANCE
    trust_region_initial: float = DEFAULT_TRUST_REGION_INITIAL
    trust_region_max: float = DEFAULT_TRUST_REGION_MAX
    verbose: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be at least 1, got {self.max_iterations}")
        if self.cost_decrease_tolerance <= 0:
            raise ValueError("cost_decrease_tolerance must be positive")
        if not 0 < self.trust_region_initial <= self.trust_region_max:
            raise ValueError("trust region radii must satisfy 0 < initial <= max")


@dataclass
class OptimizeReport:
    iterations: int
    initial_cost: float
    final_cost: float
    cost_trace: List[float]
    converged: bool
    wall_time: float
    rejected_steps: int = 0


class BlockSparseSystem:
    """Symmetric block-sparse ``H`` and gradient ``g`` over free variables.

    Blocks are keyed by variable-id pairs ``(a, b)`` with ``index[a] <= index[b]``;
    the lower triangle is implied by symmetry.
    """

    def __init__(self, variables: Iterable[int]):
        self.order: List[int] = sorted(variables)
        self.index: Dict[int, int] = {v: k for k, v in enumerate(self.order)}
        self.blocks: Dict[Tuple[int, int], np.ndarray] = {
            (v, v): np.zeros((BLOCK, BLOCK)) for v in self.order
        }
        self.gradient = np.zeros(BLOCK * len(self.order))
        self.cost = 0.0

    @property
    def size(self) -> int:
        return len(self.order)

    @property
    def dim(self) -> int:
        return BLOCK * len(self.order)

    def _key(self, a: int, b: int) -> Tuple[Tuple[int, int], bool]:
        if self.index[a] <= self.index[b]:
            return (a, b), False
        return (b, a), True

    def add_block(self, a: int, b: int, block: np.ndarray):
        key, transposed = self._key(a, b)
        block = block.T if transposed else block
        if key in self.blocks:
            self.blocks[key] += block
        else:
            self.blocks[key] = block.copy()

    def add_blocks(self, rows: np.ndarray, cols: np.ndarray, blocks: np.ndarray):
        """Accumulate many blocks addressed by block index (position in
        ``order``) rather than by variable id."""
        if not len(blocks):
            return
        swap = rows > cols
        blocks = np.where(swap[:, None, None], np.transpose(blocks, (0, 2, 1)), blocks)
        keys = np.where(swap, cols, rows) * self.size + np.where(swap, rows, cols)
        order = np.argsort(keys, kind='stable')
        keys = keys[order]
        starts = np.flatnonzero(np.concatenate([[True], keys[1:] != keys[:-1]]))
        summed = np.add.reduceat(blocks[order], starts, axis=0)
        for key, block in zip(keys[starts].tolist(), summed):
            pair = (self.order[key // self.size], self.order[key % self.size])
            if pair in self.blocks:
                self.blocks[pair] += block
            else:
                self.blocks[pair] = block

    def positions(self, bound: int) -> np.ndarray:
        """Block index per variable id below ``bound``; -1 outside the system."""
        lookup = np.full(bound, -1, dtype=np.int64)
        lookup[np.asarray(self.order, dtype=np.int64)] = np.arange(self.size)
        return lookup

    def block(self, a: int, b: int) -> Optional[np.ndarray]:
        key, transposed = self._key(a, b)
        found = self.blocks.get(key)
        if found is None:
            return None
        return found.T if transposed else found

    def add_gradient(self, a: int, value: np.ndarray):
        k = BLOCK * self.index[a]
        self.gradient[k:k + BLOCK] += value

    def gradient_of(self, a: int) -> np.ndarray:
        k = BLOCK * self.index[a]
        return self.gradient[k:k + BLOCK]

    def to_sparse(self) -> sp.csc_matrix:
        """Full symmetric ``H`` as CSC."""
        if not self.blocks:
            return sp.csc_matrix((0, 0))
        keys = list(self.blocks)
        rows_a = np.array([self.index[a] for a, _ in keys])
        cols_b = np.array([self.index[b] for _, b in keys])
        data = np.stack([self.blocks[k] for k in keys])
        off = rows_a != cols_b

        r = np.arange(BLOCK)
        rows = BLOCK * rows_a[:, None, None] + r[None, :, None]
        cols = BLOCK * cols_b[:, None, None] + r[None, None, :]
        rows_t = BLOCK * cols_b[off][:, None, None] + r[None, :, None]
        cols_t = BLOCK * rows_a[off][:, None, None] + r[None, None, :]
        all_rows = np.concatenate([
            np.broadcast_to(rows, data.shape).ravel(),
            np.broadcast_to(rows_t, data[off].shape).ravel()
        ])
        all_cols = np.concatenate([
            np.broadcast_to(cols, data.shape).ravel(),
            np.broadcast_to(cols_t, data[off].shape).ravel()
        ])
        all_data = np.concatenate([
            data.ravel(),
            np.transpose(data[off], (0, 2, 1)).ravel()
        ])
        return sp.coo_matrix(
            (all_data, (all_rows, all_cols)), shape=(self.dim, self.dim)
        ).tocsc()

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()

    def split(self, vector: np.ndarray) -> Dict[int, np.ndarray]:
        """Per-variable 6-blocks of a stacked vector."""
        return {v: vector[BLOCK * k:BLOCK * k + BLOCK] for v, k in self.index.items()}


def free_variables(graph: PoseGraph, free_set: Optional[Iterable[int]]) -> Set[int]:
    if free_set is None:
        return graph.free_ids()
    return {v for v in free_set if v in graph.variables and not graph.variables[v].fixed}


def build_normal_equations(
    graph: PoseGraph,
    cost: CostKind = CostKind.GEODESIC,
    kernel: RobustKernel = RobustKernel(),
    free_set: Optional[Iterable[int]] = None
) -> BlockSparseSystem:
    """Assemble ``H = sum s J^T W J`` and ``g = sum s J^T W r``.

    ``s`` is the robust-kernel weight. Edges without a free endpoint are skipped.
    """
    free = free_variables(graph, free_set)
    system = BlockSparseSystem(free)
    active, free_i, free_j = _active_edges(graph, free)
    if not len(active):
        return system

    batch = edge_residuals(cost, graph, active)
    rho, scale = apply_robust_kernel(kernel, batch.chi2)
    system.cost = 0.5 * float(np.sum(rho))
    weighted = np.asarray(scale, dtype=float)[..., None, None] * batch.weight
    wr = np.einsum('nij,nj->ni', weighted, batch.residual)
    jit_w = np.transpose(batch.jacobian_i, (0, 2, 1)) @ weighted
    jjt_w = np.transpose(batch.jacobian_j, (0, 2, 1)) @ weighted

    arrays = graph.edge_arrays()
    position = system.positions(graph.id_bound)
    a = position[arrays.id_from[active]]
    b = position[arrays.id_to[active]]
    both = free_i & free_j
    system.add_blocks(
        np.concatenate([a[free_i], b[free_j], a[both]]),
        np.concatenate([a[free_i], b[free_j], b[both]]),
        np.concatenate([
            jit_w[free_i] @ batch.jacobian_i[free_i],
            jjt_w[free_j] @ batch.jacobian_j[free_j],
            jit_w[both] @ batch.jacobian_j[both],
        ])
    )
    gradient = system.gradient.reshape(-1, BLOCK)
    np.add.at(gradient, a[free_i], np.einsum('nki,nk->ni', batch.jacobian_i[free_i], wr[free_i]))
    np.add.at(gradient, b[free_j], np.einsum('nki,nk->ni', batch.jacobian_j[free_j], wr[free_j]))
    return system


def _active_edges(graph: PoseGraph, free: Set[int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Indices of edges with a free endpoint, and which endpoints are free."""
    arrays = graph.edge_arrays()
    in_free = graph.membership(free)
    free_i = in_free[arrays.id_from]
    free_j = in_free[arrays.id_to]
    active = np.flatnonzero(free_i | free_j)
    return active, free_i[active], free_j[active]


class SparseFactor:
    """Sparse Cholesky-type factorization of a symmetric positive definite matrix.

    Uses CHOLMOD when scikit-sparse is installed, SuperLU in symmetric mode
    with a minimum-degree ordering otherwise.
    """

    def __init__(self, matrix: sp.spmatrix):
        matrix = sp.csc_matrix(matrix)
        self.shape = matrix.shape
        if matrix.shape[0] == 0:
            self._solve = lambda rhs: np.zeros_like(rhs)
            return
        if HAS_CHOLMOD:
            self._factor_cholmod(matrix)
        else:
            self._factor_superlu(matrix)

    def _factor_cholmod(self, matrix):
        try:
            factor = cholmod.cholesky(matrix)
        except cholmod.CholmodError as e:
            raise NotPositiveDefinite(str(e)) from e
        self._check_pivots(factor.D())
        self._solve = factor.solve_A

    def _factor_superlu(self, matrix):
        try:
            lu = splu(
                matrix,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True}
            )
        except RuntimeError as e:
            raise NotPositiveDefinite(str(e)) from e
        self._check_pivots(lu.U.diagonal())
        self._solve = lu.solve

    @staticmethod
    def _check_pivots(pivots: np.ndarray):
        largest = float(np.max(np.abs(pivots)))
        smallest = float(np.min(pivots))
        if not np.isfinite(largest) or smallest <= PIVOT_TOLERANCE * largest:
            raise NotPositiveDefinite(
                f"pivot {smallest:.3e} against largest {largest:.3e}"
            )

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self._solve(rhs)


def factorize(matrix: sp.spmatrix) -> SparseFactor:
    return SparseFactor(matrix)


def solve_linear(system: BlockSparseSystem, damping: float = 0.0) -> np.ndarray:
    """Solve ``(H + damping I) dx = -g``; one 6-block per free variable."""
    matrix = system.to_sparse()
    if damping:
        matrix = matrix + damping * sp.identity(system.dim, format='csc')
    return -factorize(matrix).solve(system.gradient)


def _elimination_order(system: BlockSparseSystem) -> Tuple[List[int], Dict[int, Set[int]]]:
    """Minimum-degree order on the block graph and the fill pattern of each column.

    Returns the elimination order (as block indices) and, for each eliminated
    block, the set of later blocks in its factor column.
    """
    n = system.size
    adjacency: Dict[int, Set[int]] = {k: set() for k in range(n)}
    for a, b in system.blocks:
        ka, kb = system.index[a], system.index[b]
        if ka != kb:
            adjacency[ka].add(kb)
            adjacency[kb].add(ka)

    heap = [(len(adj), k) for k, adj in adjacency.items()]
    heapq.heapify(heap)
    eliminated: Set[int] = set()
    order: List[int] = []
    pattern: Dict[int, Set[int]] = {}
    while heap:
        degree, k = heapq.heappop(heap)
        if k in eliminated or degree != len(adjacency[k]):
            continue
        neighbours = adjacency.pop(k)
        pattern[k] = neighbours
        order.append(k)
        eliminated.add(k)
        for u in neighbours:
            adj = adjacency[u]
            adj.discard(k)
            adj.update(neighbours - {u})
            heapq.heappush(heap, (len(adj), u))
    return order, pattern


def marginal_covariance(
    system: BlockSparseSystem,
    targets: Iterable[int],
    method: str = "solve"
) -> Dict[int, np.ndarray]:
    """Diagonal 6x6 blocks of ``H^-1`` for ``targets``.

    ``solve`` factorizes ``H`` once and solves for the unit columns of the
    targets, a chunk at a time. ``recurrence`` runs the block
    covariance-recovery recurrence over the filled factor pattern instead.
    """
    targets = list(dict.fromkeys(targets))
    missing = [t for t in targets if t not in system.index]
    if missing:
        raise KeyError(f"variables {missing} are not free in the system")
    if not targets:
        return {}
    if method == "recurrence":
        return _marginals_by_recurrence(system, targets)
    if method != "solve":
        raise ValueError(f"unknown marginal method '{method}'")

    factor = factorize(system.to_sparse())
    marginals = {}
    for start in range(0, len(targets), MARGINAL_CHUNK):
        chunk = targets[start:start + MARGINAL_CHUNK]
        rhs = np.zeros((system.dim, BLOCK * len(chunk)))
        for c, var_id in enumerate(chunk):
            k = BLOCK * system.index[var_id]
            rhs[k:k + BLOCK, BLOCK * c:BLOCK * c + BLOCK] = np.eye(BLOCK)
        columns = factor.solve(rhs)
        for c, var_id in enumerate(chunk):
            k = BLOCK * system.index[var_id]
            block = columns[k:k + BLOCK, BLOCK * c:BLOCK * c + BLOCK]
            marginals[var_id] = 0.5 * (block + block.T)
    return marginals


def _marginals_by_recurrence(
    system: BlockSparseSystem,
    targets: List[int]
) -> Dict[int, np.ndarray]:
    """Factorizes ``H = L L^T`` block-wise along a minimum-degree order, then
    runs the recurrence backwards over the filled pattern:

        S_IJ = -(sum_K S_IK L_KJ) L_JJ^-1
        S_JJ = (L_JJ^-T - sum_K S_JK L_KJ) L_JJ^-1
    """
    order, pattern = _elimination_order(system)
    position = {k: p for p, k in enumerate(order)}

    # Working lower blocks keyed (later, earlier) in elimination order.
    work: Dict[Tuple[int, int], np.ndarray] = {}
    for (a, b), block in system.blocks.items():
        ka, kb = system.index[a], system.index[b]
        if position[ka] >= position[kb]:
            work[(ka, kb)] = block.copy()
        else:
            work[(kb, ka)] = block.T.copy()

    factor_diag: Dict[int, np.ndarray] = {}
    factor_off: Dict[Tuple[int, int], np.ndarray] = {}
    for j in order:
        try:
            ljj = np.linalg.cholesky(work.pop((j, j)))
        except np.linalg.LinAlgError as e:
            raise NotPositiveDefinite(f"block {system.order[j]}: {e}") from e
        factor_diag[j] = ljj
        column = {}
        for i in pattern[j]:
            wij = work.pop((i, j), np.zeros((BLOCK, BLOCK)))
            column[i] = scipy.linalg.solve_triangular(ljj, wij.T, lower=True).T
            factor_off[(i, j)] = column[i]
        for i, lij in column.items():
            for k, lkj in column.items():
                if position[i] < position[k]:
                    continue
                update = lij @ lkj.T
                if (i, k) in work:
                    work[(i, k)] -= update
                else:
                    work[(i, k)] = -update

    sigma: Dict[Tuple[int, int], np.ndarray] = {}

    def cov(a: int, b: int) -> np.ndarray:
        if position[a] >= position[b]:
            return sigma[(a, b)]
        return sigma[(b, a)].T

    for j in reversed(order):
        ljj_inv = scipy.linalg.solve_triangular(
            factor_diag[j], np.eye(BLOCK), lower=True
        )
        later = sorted(pattern[j], key=position.get)
        for i in later:
            acc = np.zeros((BLOCK, BLOCK))
            for k in later:
                acc += cov(i, k) @ factor_off[(k, j)]
            sigma[(i, j)] = -acc @ ljj_inv
        acc = ljj_inv.T.copy()
        for k in later:
            acc -= cov(k, j).T @ factor_off[(k, j)]
        sjj = acc @ ljj_inv
        sigma[(j, j)] = 0.5 * (sjj + sjj.T)

    return {t: sigma[(system.index[t], system.index[t])] for t in targets}


def check_anchors(graph: PoseGraph, free: Set[int]):
    """Raise NoAnchor if a component touched by ``free`` has only free variables."""
    for component in connected_components(graph):
        if component & free and component <= free:
            raise NoAnchor(component)


def active_cost(
    graph: PoseGraph,
    cost: CostKind,
    kernel: RobustKernel,
    free: Set[int]
) -> float:
    """Cost over edges with at least one free endpoint."""
    active, _, _ = _active_edges(graph, free)
    return summed_cost(cost, graph, active, kernel)


def dogleg_step(
    gauss_newton: np.ndarray,
    steepest: np.ndarray,
    radius: float
) -> Tuple[np.ndarray, str]:
    """Blend of the Gauss-Newton and Cauchy steps inside the trust region."""
    gn_norm = np.linalg.norm(gauss_newton)
    if gn_norm <= radius:
        return gauss_newton, "gauss-newton"
    sd_norm = np.linalg.norm(steepest)
    if sd_norm >= radius:
        return (radius / sd_norm) * steepest, "steepest-descent"
    # |sd + beta (gn - sd)| = radius
    d = gauss_newton - steepest
    a = float(d @ d)
    b = float(steepest @ d)
    c = float(steepest @ steepest) - radius * radius
    disc = np.sqrt(max(b * b - a * c, 0.0))
    beta = -c / (b + disc) if b > 0 else (disc - b) / a
    return steepest + beta * d, "dogleg"


def _factor_damped(matrix: sp.csc_matrix, verbose: bool) -> SparseFactor:
    damping = 0.0
    scale = max(float(np.mean(np.abs(matrix.diagonal()))), 1.0)
    for _ in range(MAX_DAMPING_TRIALS):
        try:
            damped = matrix
            if damping:
                damped = matrix + damping * sp.identity(matrix.shape[0], format='csc')
            return factorize(damped)
        except NotPositiveDefinite:
            damping = 1e-9 * scale if damping == 0.0 else damping * 10.0
            if verbose:
                click.echo(f"  factorization failed, damping {damping:.3e}", err=True)
    raise NotPositiveDefinite(f"matrix not positive definite after damping {damping:.3e}")


def _retract(graph: PoseGraph, system: BlockSparseSystem, step: np.ndarray):
    variables = [graph.variables[v] for v in system.order]
    rotations = np.array([v.estimate.rotation for v in variables]).reshape(-1, 3, 3)
    translations = np.array([v.estimate.translation for v in variables]).reshape(-1, 3)
    d_rot, d_trans = exp_se3_batch(step.reshape(-1, BLOCK))
    new_rot = rotations @ d_rot
    new_trans = np.einsum('nij,nj->ni', rotations, d_trans) + translations
    for variable, rotation, translation in zip(variables, new_rot, new_trans):
        variable.estimate = Pose(rotation, translation)


def optimize(
    graph: PoseGraph,
    config: Optional[SolverConfig] = None,
    free_set: Optional[Iterable[int]] = None,
    on_iteration: Optional[Callable[[int, float], None]] = None
) -> OptimizeReport:
    """Powell dogleg iterations on ``graph`` in place.

    Stops after ``max_iterations`` accepted or attempted steps, when the
    relative cost decrease falls below ``cost_decrease_tolerance`` or when
    the gradient vanishes.
    """
    config = config or SolverConfig()
    start = time.perf_counter()
    free = free_variables(graph, free_set)
    check_anchors(graph, free)

    system = build_normal_equations(graph, config.cost, config.kernel, free)
    cost = system.cost
    report = OptimizeReport(0, cost, cost, [cost], False, 0.0)
    radius = config.trust_region_initial

    while report.iterations < config.max_iterations:
        g = system.gradient
        if system.size == 0 or cost == 0.0 or np.max(np.abs(g)) <= GRADIENT_TOLERANCE:
            report.converged = True
            break
        report.iterations += 1

        matrix = system.to_sparse()
        gauss_newton = -_factor_damped(matrix, config.verbose).solve(g)
        curvature = float(g @ (matrix @ g))
        if curvature > 0:
            steepest = -(float(g @ g) / curvature) * g
        else:
            steepest = -(radius / np.linalg.norm(g)) * g

        saved = {v: graph.variables[v].estimate for v in system.order}
        accepted = False
        for _ in range(MAX_STEP_TRIALS):
            step, kind = dogleg_step(gauss_newton, steepest, radius)
            predicted = -float(g @ step) - 0.5 * float(step @ (matrix @ step))
            _retract(graph, system, step)
            new_cost = active_cost(graph, config.cost, config.kernel, free)
            gain = (cost - new_cost) / predicted if predicted > 0 else -1.0

            if gain > GAIN_HIGH:
                radius = min(max(radius, 2.0 * np.linalg.norm(step)), config.trust_region_max)
            elif gain < GAIN_LOW:
                radius *= 0.5

            if config.verbose:
                click.echo(
                    f"  iter {report.iterations:3d}  cost {new_cost:.6e}  "
                    f"radius {radius:.3e}  {kind}",
                    err=True
                )
            if gain > 0 and new_cost < cost:
                accepted = True
                break
            graph.set_estimates(saved)
            report.rejected_steps += 1

        if not accepted:
            report.converged = True
            break

        decrease = (cost - new_cost) / cost
        cost = new_cost
        report.cost_trace.append(cost)
        if on_iteration:
            on_iteration(report.iterations, cost)
        if decrease < config.cost_decrease_tolerance:
            report.converged = True
            break
        if report.iterations < config.max_iterations:
            system = build_normal_equations(graph, config.cost, config.kernel, free)

    report.final_cost = cost
    report.wall_time = time.perf_counter() - start
    return report
