"""
Edge residuals, Jacobians and robust kernels.

Every residual comes with its weight matrix and the Jacobians with respect to
right perturbations ``X * exp(d)`` of both endpoints. An edge contributes
``0.5 * rho(r^T W r)`` to the cost, ``rho`` being the robust kernel.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from pgo.core.errors import AngleAtPi
from pgo.core.graph import Edge, PoseGraph
from pgo.core.se3 import (
    Pose,
    adjoint,
    adjoint_batch,
    exp_se3,
    flat,
    flat_batch,
    flat_jacobian,
    flat_jacobian_batch,
    log_se3,
    log_se3_batch,
    se3_right_jacobian_inverse,
    se3_right_jacobian_inverse_batch,
    skew,
    skew_batch,
)

# Rotational nudge applied to X_j when the error rotation sits at pi.
PI_RETRY_STEP = 1e-6

_EYE3 = np.eye(3)
_EYE12 = np.eye(12)


class CostKind(Enum):
    GEODESIC = "geodesic"
    CHORDAL = "chordal"
    LANGEVIN = "langevin"

    @property
    def dim(self) -> int:
        return 6 if self is CostKind.GEODESIC else 12

    @classmethod
    def parse(cls, value: str) -> 'CostKind':
        try:
            return cls(value.lower())
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown cost '{value}' (choose from {choices})")


@dataclass(frozen=True)
class RobustKernel:
    """No kernel when ``cauchy_scale`` is None, else Cauchy with that scale."""

    cauchy_scale: Optional[float] = None

    def __post_init__(self):
        if self.cauchy_scale is not None and self.cauchy_scale <= 0:
            raise ValueError(f"Cauchy scale must be positive, got {self.cauchy_scale}")

    @classmethod
    def none(cls) -> 'RobustKernel':
        return cls()

    @classmethod
    def cauchy(cls, scale: float = 1.0) -> 'RobustKernel':
        return cls(scale)

    @property
    def is_robust(self) -> bool:
        return self.cauchy_scale is not None

    def __str__(self) -> str:
        return "none" if self.cauchy_scale is None else f"cauchy({self.cauchy_scale:g})"


def apply_robust_kernel(kernel: RobustKernel, chi2: float) -> Tuple[float, float]:
    """Return ``(rho(chi2), rho'(chi2))``."""
    if kernel.cauchy_scale is None:
        return chi2, 1.0
    c2 = kernel.cauchy_scale ** 2
    ratio = chi2 / c2
    return c2 * np.log1p(ratio), 1.0 / (1.0 + ratio)


@dataclass
class EdgeResidual:
    residual: np.ndarray
    weight: np.ndarray
    jacobian_i: np.ndarray
    jacobian_j: np.ndarray

    @property
    def chi2(self) -> float:
        return max(float(self.residual @ self.weight @ self.residual), 0.0)

    @property
    def cost(self) -> float:
        return 0.5 * self.chi2


def geodesic_error(edge: Edge, xi: Pose, xj: Pose) -> Pose:
    """``Z_ij^-1 X_i^-1 X_j``."""
    return edge.measurement.inverse() @ xi.inverse() @ xj


def geodesic_residual(
    edge: Edge,
    xi: Pose,
    xj: Pose,
    edge_index: Optional[int] = None
) -> EdgeResidual:
    try:
        r = log_se3(geodesic_error(edge, xi, xj))
    except AngleAtPi:
        # The error rotation is exactly a half turn: back X_j off along its axis.
        axis = Rotation.from_matrix(geodesic_error(edge, xi, xj).rotation).as_rotvec()
        axis /= np.linalg.norm(axis)
        xj = xj @ exp_se3(np.concatenate([np.zeros(3), -PI_RETRY_STEP * axis]))
        try:
            r = log_se3(geodesic_error(edge, xi, xj))
        except AngleAtPi as e:
            raise AngleAtPi(e.angle, edge_index) from e

    jr_inv = se3_right_jacobian_inverse(r)
    jacobian_j = jr_inv
    jacobian_i = -jr_inv @ adjoint(xj.inverse() @ xi)
    return EdgeResidual(r, edge.information, jacobian_i, jacobian_j)


def _relative_flat_jacobian_i(relative: Pose) -> np.ndarray:
    """Jacobian of flat(exp(-d) P) at d = 0, i.e. a perturbation of X_i."""
    jac = np.zeros((12, 6))
    for k in range(3):
        jac[3 * k:3 * k + 3, 3:] = skew(relative.rotation[:, k])
    jac[9:, :3] = -_EYE3
    jac[9:, 3:] = skew(relative.translation)
    return jac


def _flat_difference(edge: Edge, xi: Pose, xj: Pose):
    relative = xi.inverse() @ xj
    r = flat(relative) - flat(edge.measurement)
    return r, _relative_flat_jacobian_i(relative), flat_jacobian(relative)


def chordal_residual(edge: Edge, xi: Pose, xj: Pose) -> EdgeResidual:
    r, jacobian_i, jacobian_j = _flat_difference(edge, xi, xj)
    return EdgeResidual(r, edge.chordal_weight, jacobian_i, jacobian_j)


def langevin_residual(edge: Edge, xi: Pose, xj: Pose) -> EdgeResidual:
    kappa, tau = edge.langevin_concentrations
    scale = np.concatenate([
        np.full(9, np.sqrt(max(kappa, 0.0))),
        np.full(3, np.sqrt(max(tau, 0.0)))
    ])
    r, jacobian_i, jacobian_j = _flat_difference(edge, xi, xj)
    return EdgeResidual(
        scale * r,
        _EYE12,
        scale[:, None] * jacobian_i,
        scale[:, None] * jacobian_j
    )


def edge_residual(
    kind: CostKind,
    edge: Edge,
    xi: Pose,
    xj: Pose,
    edge_index: Optional[int] = None
) -> EdgeResidual:
    if kind is CostKind.GEODESIC:
        return geodesic_residual(edge, xi, xj, edge_index)
    if kind is CostKind.CHORDAL:
        return chordal_residual(edge, xi, xj)
    if kind is CostKind.LANGEVIN:
        return langevin_residual(edge, xi, xj)
    raise ValueError(f"unhandled cost kind {kind!r}")


@dataclass
class ResidualBatch:
    """Residuals of many edges stacked row-wise. Jacobians are None when
    they were not requested."""

    residual: np.ndarray
    weight: np.ndarray
    jacobian_i: Optional[np.ndarray] = None
    jacobian_j: Optional[np.ndarray] = None

    @property
    def chi2(self) -> np.ndarray:
        value = np.einsum('ni,nij,nj->n', self.residual, self.weight, self.residual)
        return np.maximum(value, 0.0)


def _relative_batch(ri, ti, rj, tj) -> Tuple[np.ndarray, np.ndarray]:
    """Rows of ``X_i^-1 X_j``."""
    rotations = np.transpose(ri, (0, 2, 1)) @ rj
    translations = np.einsum('nji,nj->ni', ri, tj - ti)
    return rotations, translations


def _relative_flat_jacobian_i_batch(rotations, translations) -> np.ndarray:
    jac = np.zeros((len(rotations), 12, 6))
    for k in range(3):
        jac[:, 3 * k:3 * k + 3, 3:] = skew_batch(rotations[:, :, k])
    jac[:, 9:, :3] = -_EYE3
    jac[:, 9:, 3:] = skew_batch(translations)
    return jac


def edge_residuals(
    kind: CostKind,
    graph: PoseGraph,
    edge_indices: Optional[np.ndarray] = None,
    jacobians: bool = True
) -> ResidualBatch:
    """Vectorized ``edge_residual`` over ``edge_indices`` (all edges by default).

    Geodesic rows whose error rotation sits at pi go through the scalar path.
    """
    arrays = graph.edge_arrays()
    indices = np.arange(len(arrays)) if edge_indices is None else np.asarray(edge_indices, dtype=np.int64)
    lookup, rotations, translations = graph.pose_arrays()
    rows_i = lookup[arrays.id_from[indices]]
    rows_j = lookup[arrays.id_to[indices]]
    rel_rot, rel_trans = _relative_batch(
        rotations[rows_i], translations[rows_i], rotations[rows_j], translations[rows_j]
    )

    if kind is CostKind.GEODESIC:
        rz_t = np.transpose(arrays.measurement_rotation[indices], (0, 2, 1))
        err_rot = rz_t @ rel_rot
        err_trans = np.einsum('nij,nj->ni', rz_t, rel_trans - arrays.measurement_translation[indices])
        residual, at_pi = log_se3_batch(err_rot, err_trans)
        batch = ResidualBatch(residual, arrays.information[indices])
        if jacobians:
            jr_inv = se3_right_jacobian_inverse_batch(residual)
            inv_rot = np.transpose(rel_rot, (0, 2, 1))
            inv_trans = -np.einsum('nij,nj->ni', inv_rot, rel_trans)
            batch.jacobian_i = -jr_inv @ adjoint_batch(inv_rot, inv_trans)
            batch.jacobian_j = jr_inv
        for row in np.flatnonzero(at_pi):
            index = int(indices[row])
            edge = arrays.edges[index]
            single = geodesic_residual(edge, graph.estimate(edge.id_from), graph.estimate(edge.id_to), index)
            batch.residual[row] = single.residual
            if jacobians:
                batch.jacobian_i[row] = single.jacobian_i
                batch.jacobian_j[row] = single.jacobian_j
        return batch

    if kind not in (CostKind.CHORDAL, CostKind.LANGEVIN):
        raise ValueError(f"unhandled cost kind {kind!r}")
    residual = flat_batch(rel_rot, rel_trans) - arrays.measurement_flat[indices]
    jacobian_i = _relative_flat_jacobian_i_batch(rel_rot, rel_trans) if jacobians else None
    jacobian_j = flat_jacobian_batch(rel_rot) if jacobians else None
    if kind is CostKind.CHORDAL:
        return ResidualBatch(residual, arrays.chordal_weight[indices], jacobian_i, jacobian_j)

    scale = arrays.langevin_scale[indices]
    return ResidualBatch(
        scale * residual,
        np.broadcast_to(_EYE12, (len(indices), 12, 12)),
        None if jacobian_i is None else scale[:, :, None] * jacobian_i,
        None if jacobian_j is None else scale[:, :, None] * jacobian_j
    )


def summed_cost(
    kind: CostKind,
    graph: PoseGraph,
    edge_indices: Optional[np.ndarray] = None,
    kernel: RobustKernel = RobustKernel()
) -> float:
    """``sum 0.5 * rho(chi2)`` over ``edge_indices`` (all edges by default)."""
    if edge_indices is not None and not len(edge_indices):
        return 0.0
    if not graph.num_edges:
        return 0.0
    batch = edge_residuals(kind, graph, edge_indices, jacobians=False)
    rho, _ = apply_robust_kernel(kernel, batch.chi2)
    return 0.5 * float(np.sum(rho))


def edge_cost(
    kind: CostKind,
    edge: Edge,
    xi: Pose,
    xj: Pose,
    kernel: RobustKernel = RobustKernel(),
    edge_index: Optional[int] = None
) -> float:
    """``0.5 * rho(chi2)`` for one edge."""
    residual = edge_residual(kind, edge, xi, xj, edge_index)
    rho, _ = apply_robust_kernel(kernel, residual.chi2)
    return 0.5 * rho


def total_cost(
    graph: PoseGraph,
    kind: CostKind,
    kernel: RobustKernel = RobustKernel(),
    skip_constant: bool = False
) -> float:
    """Summed edge costs at the current estimates.

    With ``skip_constant`` edges whose endpoints are both fixed are ignored.
    """
    if not skip_constant:
        return summed_cost(kind, graph, kernel=kernel)
    arrays = graph.edge_arrays()
    fixed = graph.membership(graph.fixed_ids())
    keep = np.flatnonzero(~(fixed[arrays.id_from] & fixed[arrays.id_to]))
    return summed_cost(kind, graph, keep, kernel)
