"""
Lie-group primitives for SO(3) and SE(3).

Tangent vectors are 6-vectors ordered (translation, rotation), i.e.
``v = (rho, phi)``. The same ordering is used for covariance and information
matrices everywhere in pgo, including the blocks read from g2o files.

The flat operator stacks the rotation columns r1, r2, r3 and then the
translation into a 12-vector.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation as ScipyRotation

from pgo.core.errors import AngleAtPi, RankDeficient

# Below this angle closed-form coefficients are replaced by their Taylor series.
SERIES_ANGLE = 1e-2
# Logarithm refuses rotations this close to pi.
PI_TOLERANCE = 1e-9
# Relative eigenvalue cutoff of the Moore-Penrose pseudo-inverse.
PINV_CUTOFF = 1e-10
# Smallest singular value accepted by project_to_so3.
RANK_TOLERANCE = 1e-12

_EYE3 = np.eye(3)


def skew(v: Sequence[float]) -> np.ndarray:
    """Cross-product matrix of a 3-vector."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid-body transform: rotation (3x3) and translation (meters).

    Instances are immutable; both arrays are stored read-only.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=float).reshape(3, 3)
        translation = np.array(self.translation, dtype=float).reshape(3)
        rotation.flags.writeable = False
        translation.flags.writeable = False
        object.__setattr__(self, 'rotation', rotation)
        object.__setattr__(self, 'translation', translation)

    @classmethod
    def identity(cls) -> 'Pose':
        return cls(_EYE3, np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> 'Pose':
        matrix = np.asarray(matrix, dtype=float)
        return cls(matrix[:3, :3], matrix[:3, 3])

    @classmethod
    def from_quaternion(
        cls,
        translation: Sequence[float],
        quaternion: Sequence[float]
    ) -> 'Pose':
        """Build a pose from a translation and a (qx, qy, qz, qw) quaternion."""
        rotation = ScipyRotation.from_quat(np.asarray(quaternion, dtype=float))
        return cls(rotation.as_matrix(), translation)

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 matrix."""
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def quaternion(self) -> np.ndarray:
        """Rotation as (qx, qy, qz, qw) with qw >= 0."""
        q = ScipyRotation.from_matrix(self.rotation).as_quat()
        return -q if q[3] < 0 else q

    def inverse(self) -> 'Pose':
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def compose(self, other: 'Pose') -> 'Pose':
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation
        )

    def __matmul__(self, other: 'Pose') -> 'Pose':
        return self.compose(other)

    def transform_point(self, point: Sequence[float]) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.translation

    def angle(self) -> float:
        """Rotation angle in [0, pi]."""
        return rotation_angle(self.rotation)

    def allclose(self, other: 'Pose', atol: float = 1e-9) -> bool:
        return (
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0.0)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0.0)
        )

    def __repr__(self) -> str:
        return (
            f"Pose(t={np.array2string(self.translation, precision=4)}, "
            f"angle={self.angle():.4f})"
        )


def rotation_angle(rotation: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, robust near 0 and pi."""
    return float(np.linalg.norm(ScipyRotation.from_matrix(rotation).as_rotvec()))


def exp_so3(phi: Sequence[float]) -> np.ndarray:
    return ScipyRotation.from_rotvec(np.asarray(phi, dtype=float)).as_matrix()


def log_so3(rotation: np.ndarray) -> np.ndarray:
    """Rotation vector of ``rotation``; raises AngleAtPi at the cut locus."""
    phi = ScipyRotation.from_matrix(rotation).as_rotvec()
    angle = float(np.linalg.norm(phi))
    if abs(angle - np.pi) < PI_TOLERANCE:
        raise AngleAtPi(angle)
    return phi


def so3_left_jacobian(phi: Sequence[float]) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    a = skew(phi)
    if theta < SERIES_ANGLE:
        t2 = theta * theta
        c1 = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        c2 = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        half_sin = np.sin(0.5 * theta)
        c1 = 2.0 * half_sin * half_sin / theta ** 2
        c2 = (theta - np.sin(theta)) / theta ** 3
    return _EYE3 + c1 * a + c2 * (a @ a)


def so3_left_jacobian_inverse(phi: Sequence[float]) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    a = skew(phi)
    if theta < SERIES_ANGLE:
        t2 = theta * theta
        c = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        c = 1.0 / theta ** 2 - 1.0 / (2.0 * theta * np.tan(0.5 * theta))
    return _EYE3 - 0.5 * a + c * (a @ a)


def _q_matrix(rho: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Coupling block of the SE(3) left Jacobian."""
    theta = float(np.linalg.norm(phi))
    p = skew(rho)
    a = skew(phi)
    ap = a @ p
    pa = p @ a
    apa = ap @ a
    if theta < SERIES_ANGLE:
        t2 = theta * theta
        c1 = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
        c2 = 1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0
        c3 = 1.0 / 120.0 - t2 / 2520.0
    else:
        s, c = np.sin(theta), np.cos(theta)
        c1 = (theta - s) / theta ** 3
        c2 = (theta * theta + 2.0 * c - 2.0) / (2.0 * theta ** 4)
        c3 = (2.0 * theta - 3.0 * s + theta * c) / (2.0 * theta ** 5)
    return (
        0.5 * p
        + c1 * (ap + pa + apa)
        + c2 * (a @ ap + pa @ a - 3.0 * apa)
        + c3 * (apa @ a + a @ apa)
    )


def se3_left_jacobian(v: Sequence[float]) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    jl = so3_left_jacobian(v[3:])
    out = np.zeros((6, 6))
    out[:3, :3] = jl
    out[3:, 3:] = jl
    out[:3, 3:] = _q_matrix(v[:3], v[3:])
    return out


def se3_left_jacobian_inverse(v: Sequence[float]) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    jl_inv = so3_left_jacobian_inverse(v[3:])
    out = np.zeros((6, 6))
    out[:3, :3] = jl_inv
    out[3:, 3:] = jl_inv
    out[:3, 3:] = -jl_inv @ _q_matrix(v[:3], v[3:]) @ jl_inv
    return out


def se3_right_jacobian_inverse(v: Sequence[float]) -> np.ndarray:
    """Inverse right Jacobian: Log(Exp(v) Exp(d)) = v + Jr^-1(v) d + O(d^2)."""
    return se3_left_jacobian_inverse(-np.asarray(v, dtype=float))


def adjoint(pose: Pose) -> np.ndarray:
    """Adjoint of ``pose`` acting on (translation, rotation) tangents."""
    out = np.zeros((6, 6))
    out[:3, :3] = pose.rotation
    out[3:, 3:] = pose.rotation
    out[:3, 3:] = skew(pose.translation) @ pose.rotation
    return out


def exp_se3(v: Sequence[float]) -> Pose:
    """SE(3) exponential of a (translation, rotation) tangent vector."""
    v = np.asarray(v, dtype=float).reshape(6)
    rotation = exp_so3(v[3:])
    translation = so3_left_jacobian(v[3:]) @ v[:3]
    return Pose(rotation, translation)


def log_se3(pose: Pose) -> np.ndarray:
    """SE(3) logarithm; raises AngleAtPi when the rotation angle is pi."""
    phi = log_so3(pose.rotation)
    rho = so3_left_jacobian_inverse(phi) @ pose.translation
    return np.concatenate([rho, phi])


def flat(pose: Pose) -> np.ndarray:
    """12-vector (r1, r2, r3, t) of rotation columns and translation."""
    return np.concatenate([pose.rotation.flatten(order='F'), pose.translation])


def unflat(vector: Sequence[float]) -> Pose:
    vector = np.asarray(vector, dtype=float)
    return Pose(vector[:9].reshape(3, 3, order='F'), vector[9:])


def flat_jacobian(pose: Pose) -> np.ndarray:
    """Jacobian of flat(pose * exp(d)) with respect to d at d = 0 (12x6)."""
    jac = np.zeros((12, 6))
    for k in range(3):
        jac[3 * k:3 * k + 3, 3:] = -pose.rotation @ skew(_EYE3[k])
    jac[9:, :3] = pose.rotation
    return jac


def propagate_covariance(sigma: np.ndarray, jacobian: np.ndarray) -> np.ndarray:
    """First-order propagation ``J sigma J^T``, symmetrized."""
    out = jacobian @ sigma @ jacobian.T
    return 0.5 * (out + out.T)


def project_to_so3(matrix: np.ndarray, min_rank: int = 3) -> np.ndarray:
    """Closest rotation in Frobenius norm, via the SVD.

    The projection is unique once ``matrix`` has rank two: the last
    singular direction then follows from the determinant sign. Rank is
    judged relative to the largest singular value.
    """
    if min_rank not in (2, 3):
        raise ValueError(f"min_rank must be 2 or 3, got {min_rank}")
    u, s, vt = np.linalg.svd(np.asarray(matrix, dtype=float))
    if s[0] == 0.0 or s[min_rank - 1] <= RANK_TOLERANCE * s[0]:
        raise RankDeficient(f"singular values {s[0]:.3e} .. {s[-1]:.3e}, need rank {min_rank}")
    correction = np.diag([1.0, 1.0, np.sign(np.linalg.det(u @ vt)) or 1.0])
    return u @ correction @ vt


def pseudo_inverse(matrix: np.ndarray, cutoff: float = PINV_CUTOFF) -> np.ndarray:
    """Moore-Penrose inverse of a symmetric PSD matrix via eigendecomposition.

    Eigenvalues below ``cutoff`` times the largest one are treated as zero.
    """
    sym = 0.5 * (matrix + matrix.T)
    values, vectors = np.linalg.eigh(sym)
    largest = float(np.max(np.abs(values))) if values.size else 0.0
    if largest == 0.0:
        return np.zeros_like(sym)
    keep = values > cutoff * largest
    inv_values = np.zeros_like(values)
    inv_values[keep] = 1.0 / values[keep]
    out = (vectors * inv_values) @ vectors.T
    return 0.5 * (out + out.T)


def mahalanobis_sq(
    v: Sequence[float],
    sigma: np.ndarray,
    sigma_pinv: Optional[np.ndarray] = None
) -> float:
    """Squared Mahalanobis norm ``v^T sigma^+ v``."""
    v = np.asarray(v, dtype=float)
    if sigma_pinv is None:
        sigma_pinv = pseudo_inverse(np.asarray(sigma, dtype=float))
    return max(float(v @ sigma_pinv @ v), 0.0)


# Batched forms over leading axes; rows follow the scalar functions above.

def skew_batch(v: np.ndarray) -> np.ndarray:
    """Stacked cross-product matrices of an (n, 3) array."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _coefficient(theta: np.ndarray, series, closed) -> np.ndarray:
    small = theta < SERIES_ANGLE
    safe = np.where(small, 1.0, theta)
    return np.where(small, series(theta * theta), closed(safe))


def _expand(c: np.ndarray) -> np.ndarray:
    return c[..., None, None]


def so3_left_jacobian_batch(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    a = skew_batch(phi)
    c1 = _coefficient(
        theta,
        lambda t2: 0.5 - t2 / 24.0 + t2 * t2 / 720.0,
        lambda t: 2.0 * np.sin(0.5 * t) ** 2 / t ** 2
    )
    c2 = _coefficient(
        theta,
        lambda t2: 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        lambda t: (t - np.sin(t)) / t ** 3
    )
    return _EYE3 + _expand(c1) * a + _expand(c2) * (a @ a)


def so3_left_jacobian_inverse_batch(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    a = skew_batch(phi)
    c = _coefficient(
        theta,
        lambda t2: 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0,
        lambda t: 1.0 / t ** 2 - 1.0 / (2.0 * t * np.tan(0.5 * t))
    )
    return _EYE3 - 0.5 * a + _expand(c) * (a @ a)


def _q_matrix_batch(rho: np.ndarray, phi: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(phi, axis=-1)
    p = skew_batch(rho)
    a = skew_batch(phi)
    ap = a @ p
    pa = p @ a
    apa = ap @ a
    c1 = _coefficient(
        theta,
        lambda t2: 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        lambda t: (t - np.sin(t)) / t ** 3
    )
    c2 = _coefficient(
        theta,
        lambda t2: 1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0,
        lambda t: (t * t + 2.0 * np.cos(t) - 2.0) / (2.0 * t ** 4)
    )
    c3 = _coefficient(
        theta,
        lambda t2: 1.0 / 120.0 - t2 / 2520.0,
        lambda t: (2.0 * t - 3.0 * np.sin(t) + t * np.cos(t)) / (2.0 * t ** 5)
    )
    return (
        0.5 * p
        + _expand(c1) * (ap + pa + apa)
        + _expand(c2) * (a @ ap + pa @ a - 3.0 * apa)
        + _expand(c3) * (apa @ a + a @ apa)
    )


def se3_left_jacobian_inverse_batch(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    jl_inv = so3_left_jacobian_inverse_batch(v[..., 3:])
    out = np.zeros(v.shape[:-1] + (6, 6))
    out[..., :3, :3] = jl_inv
    out[..., 3:, 3:] = jl_inv
    out[..., :3, 3:] = -jl_inv @ _q_matrix_batch(v[..., :3], v[..., 3:]) @ jl_inv
    return out


def se3_right_jacobian_inverse_batch(v: np.ndarray) -> np.ndarray:
    return se3_left_jacobian_inverse_batch(-np.asarray(v, dtype=float))


def adjoint_batch(rotations: np.ndarray, translations: np.ndarray) -> np.ndarray:
    out = np.zeros(rotations.shape[:-2] + (6, 6))
    out[..., :3, :3] = rotations
    out[..., 3:, 3:] = rotations
    out[..., :3, 3:] = skew_batch(translations) @ rotations
    return out


def exp_se3_batch(v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Rotations (n, 3, 3) and translations (n, 3) of ``exp`` of each row."""
    v = np.asarray(v, dtype=float).reshape(-1, 6)
    if not len(v):
        return np.zeros((0, 3, 3)), np.zeros((0, 3))
    rotations = ScipyRotation.from_rotvec(v[:, 3:]).as_matrix()
    translations = np.einsum('nij,nj->ni', so3_left_jacobian_batch(v[:, 3:]), v[:, :3])
    return rotations, translations


def log_se3_batch(
    rotations: np.ndarray,
    translations: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Tangents (n, 6) and a mask of rows whose angle is within
    ``PI_TOLERANCE`` of pi. Masked rows are not meaningful."""
    if not len(rotations):
        return np.zeros((0, 6)), np.zeros(0, dtype=bool)
    phi = ScipyRotation.from_matrix(rotations).as_rotvec().reshape(-1, 3)
    at_pi = np.abs(np.linalg.norm(phi, axis=1) - np.pi) < PI_TOLERANCE
    rho = np.einsum('nij,nj->ni', so3_left_jacobian_inverse_batch(phi), translations)
    return np.concatenate([rho, phi], axis=1), at_pi


def flat_batch(rotations: np.ndarray, translations: np.ndarray) -> np.ndarray:
    n = len(rotations)
    return np.concatenate([
        np.transpose(rotations, (0, 2, 1)).reshape(n, 9),
        np.reshape(translations, (n, 3))
    ], axis=1)


def flat_jacobian_batch(rotations: np.ndarray) -> np.ndarray:
    jac = np.zeros((len(rotations), 12, 6))
    for k in range(3):
        jac[:, 3 * k:3 * k + 3, 3:] = -rotations @ skew(_EYE3[k])
    jac[:, 9:, :3] = rotations
    return jac
