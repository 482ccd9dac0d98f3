"""Large-rotation algebra on SO(3).

Rotation tensors ("triads") are parametrized by rotation (pseudo-)vectors
psi = angle * axis.  All maps here are written so that they remain valid
for complex-valued inputs along the smooth branches; the rest of the
library exploits this for forward-mode (complex-step) differentiation of
residuals.

Conventions
-----------
* spin (multiplicative) variation:  delta Lambda = skew(delta_theta) Lambda
* additive variation of the rotation vector:  delta psi = T(psi) delta_theta
* canonical angle domain after extraction: ||psi|| in [0, pi]
"""

import numpy as np

# series fallbacks below this angle avoid 0/0 without losing accuracy
ANGLE_SERIES = 1.0e-8

# T(psi) has a pole at ||psi|| -> 2*pi (tan(psi/2) -> 0 from below)
ANGLE_MAX = 2.0 * np.pi

RotationVector = np.ndarray  # shape (3,)
Triad = np.ndarray  # shape (3, 3), proper orthonormal
TransformationMatrix = np.ndarray  # shape (3, 3)


class NonOrthonormalInput(ValueError):
    """Input matrix is not a proper rotation (orthonormal, det = +1)."""


class AngleOutOfRange(ValueError):
    """Rotation-vector magnitude outside the supported domain."""


def _norm(v):
    # complex-step safe norm (no abs/conj); fine for the real use case too
    return np.sqrt(v @ v)


def skew(a: np.ndarray) -> np.ndarray:
    """Skew tensor S(a) with S(a) b = a x b."""
    S = np.zeros((3, 3), dtype=np.result_type(a[0], float))
    S[0, 1] = -a[2]
    S[0, 2] = a[1]
    S[1, 0] = a[2]
    S[1, 2] = -a[0]
    S[2, 0] = -a[1]
    S[2, 1] = a[0]
    return S


def axial(S: np.ndarray) -> np.ndarray:
    """Axial vector of a (skew) tensor, inverse of :func:`skew`."""
    v = np.empty(3, dtype=np.result_type(S.dtype, float))
    v[0] = 0.5 * (S[2, 1] - S[1, 2])
    v[1] = 0.5 * (S[0, 2] - S[2, 0])
    v[2] = 0.5 * (S[1, 0] - S[0, 1])
    return v


def exp_rodrigues(psi: RotationVector) -> Triad:
    """Rotation tensor from a rotation vector (Rodrigues formula).

    Smooth through psi = 0 via a second-order series branch.
    """
    psi = np.asarray(psi)
    angle = _norm(psi)
    S = skew(psi)
    if angle.real < ANGLE_SERIES:
        return np.eye(3) + S + 0.5 * (S @ S)
    alpha = np.sin(angle) / angle
    beta = (1.0 - np.cos(angle)) / (angle * angle)
    return np.eye(3) + alpha * S + beta * (S @ S)


def _quaternion_spurrier(L: np.ndarray):
    """Unit quaternion (q0, q) from a rotation tensor, Spurrier's rule.

    Branch selection by the maximum of {trace, diagonal entries} keeps the
    leading square root well conditioned for all input angles.
    """
    tr = L[0, 0] + L[1, 1] + L[2, 2]
    diag = [L[0, 0].real, L[1, 1].real, L[2, 2].real]
    m = max(diag)
    if tr.real >= m:
        q0 = 0.5 * np.sqrt(1.0 + tr)
        q = (
            np.array([L[2, 1] - L[1, 2], L[0, 2] - L[2, 0], L[1, 0] - L[0, 1]])
            / (4.0 * q0)
        )
    else:
        i = diag.index(m)
        j, k = (i + 1) % 3, (i + 2) % 3
        qi = np.sqrt(0.5 * L[i, i] + 0.25 * (1.0 - tr))
        q = np.zeros(3, dtype=L.dtype)
        q[i] = qi
        q0 = 0.25 * (L[k, j] - L[j, k]) / qi
        q[j] = 0.25 * (L[j, i] + L[i, j]) / qi
        q[k] = 0.25 * (L[k, i] + L[i, k]) / qi
    if q0.real < 0.0:  # canonical representative: angle in [0, pi]
        q0, q = -q0, -q
    return q0, q


def log_spurrier(L: Triad) -> RotationVector:
    """Rotation vector of a rotation tensor via Spurrier extraction.

    Returns the canonical representative with ||psi|| <= pi.

    Raises
    ------
    NonOrthonormalInput
        if ||L^T L - I||_F > 1e-8 or det L < 0.
    """
    L = np.asarray(L)
    defect = np.linalg.norm((L.T @ L - np.eye(3)).real)
    if defect > 1.0e-8:
        raise NonOrthonormalInput(f"orthonormality defect {defect:.3e}")
    if np.linalg.det(L.real) < 0.0:
        raise NonOrthonormalInput("improper rotation (det < 0)")
    return _log_unchecked(L)


def _log_unchecked(L: Triad) -> RotationVector:
    # guard-free extraction for hot loops that perturb already-validated
    # triads (complex-step columns); public callers go through log_spurrier
    q0, q = _quaternion_spurrier(L)
    s2 = q @ q
    s = np.sqrt(s2)
    if q0.real > 0.1:
        # psi = 2*atan(s/q0)/s * q, expanded in (s/q0)^2 for small s
        if s.real < ANGLE_SERIES:
            u = s2 / (q0 * q0)
            c = (2.0 / q0) * (1.0 - u / 3.0 + u * u / 5.0)
        else:
            c = 2.0 * np.arctan(s / q0) / s
    else:
        # angle near pi; vector sign resolved by the quaternion branch
        c = 2.0 * np.arctan2(s.real, q0.real) / s
    return c * q


def relative_rotation(lambda1: Triad, lambda2: Triad) -> RotationVector:
    """Rotation vector psi21 with exp(psi21) lambda1 = lambda2."""
    return log_spurrier(np.asarray(lambda2) @ np.asarray(lambda1).T)


def _check_angle(angle):
    if angle.real >= ANGLE_MAX:
        raise AngleOutOfRange(f"||psi|| = {angle.real:.6f} >= 2*pi")


def transformation_matrix(psi: RotationVector) -> TransformationMatrix:
    """T(psi) mapping spin to additive variations, delta psi = T delta_theta.

    Closed form
        T = psi psi^T/psi^2 - S(psi)/2 + psi/(2 tan(psi/2)) (I - psi psi^T/psi^2)

    psi = pi is safe (tan(pi/2) = inf is handled by 1/tan -> 0); the pole
    sits at ||psi|| -> 2*pi, guarded by AngleOutOfRange.
    """
    psi = np.asarray(psi)
    angle = _norm(psi)
    _check_angle(angle)
    S = skew(psi)
    if angle.real < ANGLE_SERIES:
        return np.eye(3) - 0.5 * S + (S @ S) / 12.0
    ee = np.outer(psi, psi) / (angle * angle)
    # 1/tan stays finite at angle = pi
    cot_half = np.cos(0.5 * angle) / np.sin(0.5 * angle)
    return ee - 0.5 * S + 0.5 * angle * cot_half * (np.eye(3) - ee)


def transformation_matrix_inverse(psi: RotationVector) -> TransformationMatrix:
    """Closed-form inverse of :func:`transformation_matrix`."""
    psi = np.asarray(psi)
    angle = _norm(psi)
    _check_angle(angle)
    S = skew(psi)
    if angle.real < ANGLE_SERIES:
        return np.eye(3) + 0.5 * S + (S @ S) / 6.0
    a2 = angle * angle
    return (
        np.eye(3)
        + (1.0 - np.cos(angle)) / a2 * S
        + (angle - np.sin(angle)) / (a2 * angle) * (S @ S)
    )


def objective_variation_factor(psi21: RotationVector) -> TransformationMatrix:
    """Factor of the objective variation of a relative rotation vector.

    delta_o psi21 = T(psi21) (delta_theta2 - delta_theta1).
    """
    return transformation_matrix(psi21)
