"""Geometrically exact Simo-Reissner beam element.

Kinematics: C1 cubic Hermite centerline with two position/tangent nodes, and
an orthonormal triad field interpolated from three nodal rotation vectors
(two end nodes plus a middle node) via local rotation vectors relative to the
first nodal triad. Test functions are Petrov-Galerkin: plain quadratic
Lagrange spin vectors for the rotations, Hermite variations for the
centerline, so element tangents are non-symmetric.

Element DOF vector (21):
    [r1 (0:3), t1 (3:6), r2 (6:9), t2 (9:12), psi1 (12:15), psi2 (15:18),
     psi3 (18:21)]
with rotation nodes at xi = -1, +1 and the middle node (xi = 0) last.
Rotation DOFs update multiplicatively; everything else additively.

The arc-length Jacobian is evaluated pointwise from the reference
centerline, J(xi) = |dr0/dxi|, so material measures are per unit reference
arc length. All state-dependent paths accept complex inputs (complex-step
differentiation is used for the consistent tangent).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import so3

# 3-point Gauss rule on [-1, 1]
GAUSS3_XI = np.array([-np.sqrt(3.0 / 5.0), 0.0, np.sqrt(3.0 / 5.0)])
GAUSS3_W = np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])

_CS_STEP = 1.0e-30  # complex-step size for consistent tangents


@dataclass
class CrossSectionProperties:
    """Constitutive diagonals C_F = diag(EA, GA2, GA3), C_M = diag(GIt, EI2, EI3)."""

    C_F: np.ndarray
    C_M: np.ndarray
    radius: float

    def __post_init__(self):
        self.C_F = np.asarray(self.C_F, dtype=float)
        self.C_M = np.asarray(self.C_M, dtype=float)
        if np.any(self.C_F <= 0.0) or np.any(self.C_M <= 0.0):
            raise ValueError("cross-section stiffness entries must be positive")

    @classmethod
    def circular(cls, youngs_modulus: float, poisson_ratio: float, radius: float):
        """Solid circular section; no shear correction factor."""
        E, nu, R = youngs_modulus, poisson_ratio, radius
        G = E / (2.0 * (1.0 + nu))
        A = np.pi * R**2
        I = np.pi * R**4 / 4.0
        return cls(
            C_F=np.array([E * A, G * A, G * A]),
            C_M=np.array([G * 2.0 * I, E * I, E * I]),
            radius=R,
        )


@dataclass
class BeamElement:
    """Self-contained element view: reference geometry plus current state."""

    X: np.ndarray  # (12,) reference centerline DOFs [r1, t1, r2, t2]
    d: np.ndarray  # (12,) centerline displacements
    psi_ref: np.ndarray  # (3, 3) reference nodal rotation vectors (rows)
    psi: np.ndarray  # (3, 3) current nodal rotation vectors (rows)
    props: CrossSectionProperties
    length: float  # reference arc length

    def current_triads(self):
        return [so3.exp_rodrigues(self.psi[i]) for i in range(3)]

    def reference_triads(self):
        return [so3.exp_rodrigues(self.psi_ref[i]) for i in range(3)]


@dataclass
class BeamDirichletBC:
    node: int
    field: str  # "pos" | "tan" | "rot"
    dof: int
    value: float = 0.0


@dataclass
class BeamPointForce:
    node: int
    force: np.ndarray


@dataclass
class BeamPointMoment:
    node: int
    moment: np.ndarray


@dataclass
class BeamDistributedMoment:
    """Constant moment per unit reference arc length on one element (or all)."""

    moment: np.ndarray
    element: Optional[int] = None  # None = every element


@dataclass
class BeamMesh:
    nodes: np.ndarray  # (nb, 3) reference centerline positions
    tangents: np.ndarray  # (nb, 3) unit reference tangents
    elements: np.ndarray  # (ne, 2) node index pairs
    psi_nodes_ref: np.ndarray  # (nb, 3)
    psi_mid_ref: np.ndarray  # (ne, 3)
    lengths: np.ndarray  # (ne,) reference arc lengths
    props: CrossSectionProperties
    dirichlet: list = field(default_factory=list)
    point_forces: list = field(default_factory=list)
    point_moments: list = field(default_factory=list)
    distributed_moments: list = field(default_factory=list)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.tangents = np.asarray(self.tangents, dtype=float)
        self.elements = np.asarray(self.elements, dtype=np.intp)
        self.psi_nodes_ref = np.asarray(self.psi_nodes_ref, dtype=float)
        self.psi_mid_ref = np.asarray(self.psi_mid_ref, dtype=float)
        self.lengths = np.asarray(self.lengths, dtype=float)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def element_reference_dofs(self, index: int) -> np.ndarray:
        i, j = self.elements[index]
        return np.concatenate(
            [self.nodes[i], self.tangents[i], self.nodes[j], self.tangents[j]]
        )

    def element(self, index: int, state: "BeamState") -> BeamElement:
        i, j = self.elements[index]
        d = np.concatenate(
            [
                state.pos_disp[i],
                state.tan_disp[i],
                state.pos_disp[j],
                state.tan_disp[j],
            ]
        )
        psi_ref = np.vstack(
            [self.psi_nodes_ref[i], self.psi_nodes_ref[j], self.psi_mid_ref[index]]
        )
        psi = np.vstack([state.psi[i], state.psi[j], state.psi_mid[index]])
        return BeamElement(
            X=self.element_reference_dofs(index),
            d=d,
            psi_ref=psi_ref,
            psi=psi,
            props=self.props,
            length=self.lengths[index],
        )

    def validate(self, tol: float = 1e-8):
        """Arc-length calibration: unit nodal tangents, length = integral of |dr0/dxi|."""
        err = np.abs(np.linalg.norm(self.tangents, axis=1) - 1.0)
        if np.any(err > tol):
            raise ValueError("reference nodal tangents are not unit vectors")
        xs, ws = np.polynomial.legendre.leggauss(10)
        for e in range(self.n_elements):
            X = self.element_reference_dofs(e)
            arc = sum(
                w * np.linalg.norm(hermite_derivative(x, X, self.lengths[e]))
                for x, w in zip(xs, ws)
            )
            if abs(arc - self.lengths[e]) > tol * max(self.lengths[e], 1.0):
                raise ValueError(f"element {e} arc length off by {arc - self.lengths[e]:.2e}")


@dataclass
class BeamState:
    pos_disp: np.ndarray  # (nb, 3)
    tan_disp: np.ndarray  # (nb, 3)
    psi: np.ndarray  # (nb, 3) current nodal rotation vectors
    psi_mid: np.ndarray  # (ne, 3)

    @classmethod
    def zero(cls, mesh: BeamMesh) -> "BeamState":
        return cls(
            pos_disp=np.zeros((mesh.n_nodes, 3)),
            tan_disp=np.zeros((mesh.n_nodes, 3)),
            psi=mesh.psi_nodes_ref.copy(),
            psi_mid=mesh.psi_mid_ref.copy(),
        )


# ---------------------------------------------------------------------------
# shape functions

def _hermite_values(xi, length):
    u = 0.5 * (xi + 1.0)
    return np.array(
        [
            2 * u**3 - 3 * u**2 + 1,
            length * (u**3 - 2 * u**2 + u),
            -2 * u**3 + 3 * u**2,
            length * (u**3 - u**2),
        ]
    )


def _hermite_derivs(xi, length):
    # d/dxi = 0.5 d/du
    u = 0.5 * (xi + 1.0)
    return 0.5 * np.array(
        [
            6 * u**2 - 6 * u,
            length * (3 * u**2 - 4 * u + 1),
            -6 * u**2 + 6 * u,
            length * (3 * u**2 - 2 * u),
        ]
    )


def hermite_matrix(xi, length) -> np.ndarray:
    """Position shape matrix H (3 x 12) with tangent scaling by arc length."""
    h = _hermite_values(xi, length)
    H = np.zeros((3, 12))
    for k in range(4):
        H[:, 3 * k : 3 * k + 3] = h[k] * np.eye(3)
    return H


def hermite_matrix_derivative(xi, length) -> np.ndarray:
    h = _hermite_derivs(xi, length)
    H = np.zeros((3, 12))
    for k in range(4):
        H[:, 3 * k : 3 * k + 3] = h[k] * np.eye(3)
    return H


def hermite_centerline(xi, element: BeamElement):
    """Interpolated centerline position and the shape matrix H(xi)."""
    H = hermite_matrix(xi, element.length)
    return H @ (element.X + element.d), H


def hermite_derivative(xi, dofs, length):
    """dr/dxi of a Hermite curve given its 12 DOFs."""
    return hermite_matrix_derivative(xi, length) @ dofs


def _lagrange2(xi):
    return np.array([0.5 * xi * (xi - 1.0), 0.5 * xi * (xi + 1.0), 1.0 - xi * xi])


def _lagrange2_derivs(xi):
    return np.array([xi - 0.5, xi + 0.5, -2.0 * xi])


def spin_shape_functions(xi) -> np.ndarray:
    """Quadratic Lagrange spin test matrix L (3 x 9); middle node last."""
    vals = _lagrange2(xi)
    L = np.zeros((3, 9))
    for k in range(3):
        L[:, 3 * k : 3 * k + 3] = vals[k] * np.eye(3)
    return L


def spin_shape_functions_derivative(xi) -> np.ndarray:
    vals = _lagrange2_derivs(xi)
    L = np.zeros((3, 9))
    for k in range(3):
        L[:, 3 * k : 3 * k + 3] = vals[k] * np.eye(3)
    return L


# ---------------------------------------------------------------------------
# triad field

def _triad_pre(triads):
    """Pair-level triad-field data shared by all xi of one element."""
    base = triads[0]
    psi2 = so3.log_spurrier(base.T @ triads[1])
    psi3 = so3.log_spurrier(base.T @ triads[2])
    return base, psi2, psi3


def _triad_at(xi, pre):
    """Interpolated triad only; curvature terms skipped (hot loops)."""
    base, psi2, psi3 = pre
    L = _lagrange2(xi)
    return base @ so3.exp_rodrigues(L[1] * psi2 + L[2] * psi3)


def _triad_field(xi, triads):
    """Interpolated triad, its material curvature per xi, and phi.

    triads: list of three nodal triads; local rotation vectors are taken
    relative to the first one and interpolated with quadratic Lagrange
    polynomials.
    """
    L = _lagrange2(xi)
    dL = _lagrange2_derivs(xi)
    base = triads[0]
    psi2 = so3.log_spurrier(base.T @ triads[1])
    psi3 = so3.log_spurrier(base.T @ triads[2])
    phi = L[1] * psi2 + L[2] * psi3
    dphi = dL[1] * psi2 + dL[2] * psi3
    lam_rel = so3.exp_rodrigues(phi)
    triad = base @ lam_rel
    # material curvature per xi: axial(Lambda^T dLambda/dxi)
    k_xi = lam_rel.T @ (so3.transformation_matrix_inverse(phi) @ dphi)
    return triad, k_xi, phi, (psi2, psi3)


def interpolate_triad(xi, element: BeamElement):
    """Orthonormal triad at xi from the three current nodal rotation vectors."""
    triad, _, _, _ = _triad_field(xi, element.current_triads())
    return triad


def multiplicative_increment_shapes(xi, element: BeamElement) -> np.ndarray:
    """Generalized shape matrix I~ (3 x 9): dtheta_h = I~ dtheta_hat.

    Deformation dependent; for a constant triad field it reduces to the
    Lagrange matrix L.
    """
    triads = element.current_triads()
    _, _, phi, (psi2, psi3) = _triad_field(xi, triads)
    L = _lagrange2(xi)
    base = triads[0]
    Tinv = so3.transformation_matrix_inverse(phi)
    psis = (np.zeros(3), psi2, psi3)
    B = [
        base @ Tinv @ (L[i] * so3.transformation_matrix(psis[i])) @ base.T
        for i in range(3)
    ]
    out = np.zeros((3, 9))
    out[:, 0:3] = B[0] + np.eye(3) - (B[0] + B[1] + B[2])
    out[:, 3:6] = B[1]
    out[:, 6:9] = B[2]
    return out


# ---------------------------------------------------------------------------
# deformation measures, internal forces, energy

def reference_jacobian(xi, element: BeamElement):
    """Pointwise arc-length Jacobian J(xi) = |dr0/dxi|."""
    return np.linalg.norm(hermite_derivative(xi, element.X, element.length))


def _reference_cache(element: BeamElement):
    """Per-Gauss-point reference data plus shape matrices (state independent)."""
    triads_ref = element.reference_triads()
    cache = []
    for xi, w in zip(GAUSS3_XI, GAUSS3_W):
        J = reference_jacobian(xi, element)
        r0p = hermite_derivative(xi, element.X, element.length)
        lam0, k0_xi, _, _ = _triad_field(xi, triads_ref)
        cache.append(
            (
                xi,
                w,
                J,
                r0p,
                lam0,
                k0_xi,
                hermite_matrix_derivative(xi, element.length),
                spin_shape_functions(xi),
                spin_shape_functions_derivative(xi),
            )
        )
    return cache


def _measures(xi, element: BeamElement, triads, triads_ref):
    J = reference_jacobian(xi, element)
    r0p = hermite_derivative(xi, element.X, element.length)
    rp = hermite_derivative(xi, element.X + element.d, element.length)
    lam, k_xi, _, _ = _triad_field(xi, triads)
    lam0, k0_xi, _, _ = _triad_field(xi, triads_ref)
    gamma = (lam.T @ rp - lam0.T @ r0p) / J
    omega = (k_xi - k0_xi) / J
    return gamma, omega, lam, rp, J


def deformation_measures(xi, element: BeamElement):
    """Material measures (Gamma, Omega) per unit reference arc length."""
    gamma, omega, _, _, _ = _measures(
        xi, element, element.current_triads(), element.reference_triads()
    )
    return gamma, omega


def _internal_force_given_triads(element: BeamElement, triads, d, cache):
    """Residual (21,) for explicit centerline DOFs d and nodal triads."""
    dtype = np.result_type(d, triads[0], float)
    f = np.zeros(21, dtype=dtype)
    dofs = element.X + d
    for xi, w, J, r0p, lam0, k0_xi, Hp, L, Lp in cache:
        rp = hermite_derivative(xi, dofs, element.length)
        lam, k_xi, _, _ = _triad_field(xi, triads)
        gamma = (lam.T @ rp - lam0.T @ r0p) / J
        omega = (k_xi - k0_xi) / J
        n = lam @ (element.props.C_F * gamma)
        m = lam @ (element.props.C_M * omega)
        f[:12] += w * (Hp.T @ n)
        f[12:] += w * (L.T @ np.cross(n, rp) + Lp.T @ m)
    return f


def element_internal_force(element: BeamElement) -> np.ndarray:
    return _internal_force_given_triads(
        element, element.current_triads(), element.d, _reference_cache(element)
    )


def element_internal_force_and_tangent(element: BeamElement):
    """Residual and consistent tangent (multiplicative rotation updates).

    The tangent is the derivative with respect to additive centerline
    increments and multiplicative nodal spin increments, computed by
    complex-step differentiation of the residual (machine-precision forward
    mode); it is non-symmetric.
    """
    cache = _reference_cache(element)
    triads = element.current_triads()
    f = _internal_force_given_triads(element, triads, element.d, cache)
    K = np.empty((21, 21))
    h = _CS_STEP
    for col in range(12):
        d = element.d.astype(complex)
        d[col] += 1j * h
        K[:, col] = _internal_force_given_triads(element, triads, d, cache).imag / h
    for node in range(3):
        for j in range(3):
            pert = [t.astype(complex) for t in triads]
            spin = so3.exp_rodrigues(1j * h * np.eye(3)[j])
            pert[node] = spin @ pert[node]
            col = 12 + 3 * node + j
            K[:, col] = (
                _internal_force_given_triads(element, pert, element.d, cache).imag / h
            )
    return f, K


def element_energy_components(element: BeamElement):
    """Stored energy split (tension, shear, torsion, bending)."""
    triads = element.current_triads()
    triads_ref = element.reference_triads()
    parts = np.zeros(4)
    for xi, w in zip(GAUSS3_XI, GAUSS3_W):
        gamma, omega, _, _, J = _measures(xi, element, triads, triads_ref)
        cf, cm = element.props.C_F, element.props.C_M
        parts += 0.5 * w * J * np.array(
            [
                cf[0] * gamma[0] ** 2,
                cf[1] * gamma[1] ** 2 + cf[2] * gamma[2] ** 2,
                cm[0] * omega[0] ** 2,
                cm[1] * omega[1] ** 2 + cm[2] * omega[2] ** 2,
            ]
        )
    return {
        "tension": parts[0],
        "shear": parts[1],
        "torsion": parts[2],
        "bending": parts[3],
    }


def element_energy(element: BeamElement) -> float:
    return sum(element_energy_components(element).values())


def element_distributed_moment_load(element: BeamElement, moment) -> np.ndarray:
    """External load (21,) from a constant moment per unit arc length."""
    mbar = np.asarray(moment, dtype=float)
    f = np.zeros(21)
    for xi, w in zip(GAUSS3_XI, GAUSS3_W):
        J = reference_jacobian(xi, element)
        L = spin_shape_functions(xi)
        f[12:] += w * J * (L.T @ mbar)
    return f


def apply_multiplicative_update(element: BeamElement, delta_theta_hat):
    """Update nodal rotation vectors: psi_i <- rv(exp(dtheta_i) Lambda(psi_i))."""
    delta = np.asarray(delta_theta_hat, dtype=float).reshape(3, 3)
    for i in range(3):
        element.psi[i] = so3.log_spurrier(
            so3.exp_rodrigues(delta[i]) @ so3.exp_rodrigues(element.psi[i])
        )
    return element


def update_rotation_vector(psi, delta_theta):
    """Multiplicative update of a single rotation vector (canonical result)."""
    return so3.log_spurrier(
        so3.exp_rodrigues(np.asarray(delta_theta)) @ so3.exp_rodrigues(np.asarray(psi))
    )
