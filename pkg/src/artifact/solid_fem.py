"""3D solid continuum: 8-node hexahedra with Saint Venant-Kirchhoff material.

Provides shape functions, deformation gradients at arbitrary parametric
points, element internal forces with consistent analytic tangents, and
consistent nodal loads from surface tractions.

Conventions
-----------
* Parametric coordinates (xi, eta, zeta) in [-1, 1]^3; corner numbering is
  bottom face counter-clockwise, then top face:
  0:(-,-,-) 1:(+,-,-) 2:(+,+,-) 3:(-,+,-) 4:(-,-,+) 5:(+,-,+) 6:(+,+,+) 7:(-,+,+)
* Element DOF vectors are node-major: [u0x, u0y, u0z, u1x, ...] (24 entries).
* Face ids for surface tractions:
  0: zeta=-1, 1: zeta=+1, 2: eta=-1, 3: xi=+1, 4: eta=+1, 5: xi=-1.
* Tractions are dead loads given per reference area (first Piola sense).

All state-dependent paths are safe for complex-step differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

PARAM_TOL = 1.0e-10
DETJ_MIN = 1.0e-14

# 2x2x2 Gauss rule (weights are all 1)
_G = 1.0 / np.sqrt(3.0)
GAUSS2 = np.array([-_G, _G])


class OutOfElement(ValueError):
    """Parametric coordinate outside [-1-tol, 1+tol]^3."""


class SingularJacobian(ValueError):
    """|det J| below the invertibility threshold."""


class BadFaceReference(ValueError):
    """Traction record points at a nonexistent element or face."""


# local corner numbering of the 6 faces, counter-clockwise seen from outside
FACE_NODES = {
    0: (0, 3, 2, 1),
    1: (4, 5, 6, 7),
    2: (0, 1, 5, 4),
    3: (1, 2, 6, 5),
    4: (2, 3, 7, 6),
    5: (3, 0, 4, 7),
}

_CORNERS = np.array(
    [
        [-1, -1, -1],
        [1, -1, -1],
        [1, 1, -1],
        [-1, 1, -1],
        [-1, -1, 1],
        [1, -1, 1],
        [1, 1, 1],
        [-1, 1, 1],
    ],
    dtype=float,
)


@dataclass
class SVKMaterial:
    """Saint Venant-Kirchhoff material, S = lam*tr(E)*I + 2*mu*E."""

    youngs_modulus: float
    poisson_ratio: float

    def __post_init__(self):
        if self.youngs_modulus <= 0.0:
            raise ValueError("youngs_modulus must be positive")
        if not -1.0 < self.poisson_ratio < 0.5:
            raise ValueError("poisson_ratio must lie in (-1, 0.5)")

    @property
    def lame(self) -> tuple[float, float]:
        E, nu = self.youngs_modulus, self.poisson_ratio
        lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
        mu = E / (2.0 * (1.0 + nu))
        return lam, mu


@dataclass
class DirichletBC:
    node: int
    dof: int  # 0, 1, 2
    value: float = 0.0


Traction = Union[Sequence[float], Callable[[np.ndarray], np.ndarray]]


@dataclass
class NeumannBC:
    element: int
    face: int
    traction: Traction  # constant 3-vector or callable X -> 3-vector


@dataclass
class SolidMesh:
    nodes: np.ndarray  # (m, 3) reference positions
    elements: np.ndarray  # (ne, 8) node indices
    dirichlet: list = field(default_factory=list)
    neumann: list = field(default_factory=list)

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=float)
        self.elements = np.ascontiguousarray(self.elements, dtype=np.intp)
        self._cache = None

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def element(self, index: int) -> "SolidElement":
        ids = self.elements[index]
        return SolidElement(node_ids=ids, coords_ref=self.nodes[ids])

    def validate(self):
        """Check the positive-Jacobian invariant at all reference quadrature points."""
        _, detj = _reference_gradients(self)
        if np.any(detj <= 0.0):
            raise SingularJacobian("non-positive Jacobian determinant in reference mesh")


@dataclass
class SolidElement:
    node_ids: np.ndarray  # (8,)
    coords_ref: np.ndarray  # (8, 3)


@dataclass
class SolidState:
    displacements: np.ndarray  # (m, 3)

    def __post_init__(self):
        self.displacements = np.asarray(self.displacements)

    @classmethod
    def zero(cls, mesh: SolidMesh) -> "SolidState":
        return cls(np.zeros((mesh.n_nodes, 3)))


def shape_functions(xi, eta, zeta):
    """Trilinear hex8 shape functions and parametric gradients.

    Returns (values (8,), gradients (8, 3)); raises OutOfElement outside
    the tolerance band around [-1, 1]^3.
    """
    for c in (xi, eta, zeta):
        if abs(np.real(c)) > 1.0 + PARAM_TOL:
            raise OutOfElement(f"parametric point ({xi}, {eta}, {zeta}) outside element")
    return shape_functions_unchecked(xi, eta, zeta)


def shape_functions_unchecked(xi, eta, zeta):
    """Same as shape_functions without the domain guard (used by projection
    iterations that may leave the element temporarily)."""
    s = np.asarray([xi, eta, zeta])
    a = 1.0 + _CORNERS * s  # (8, 3) factors (1 + xi_i*xi) etc.
    vals = 0.125 * a[:, 0] * a[:, 1] * a[:, 2]
    grads = np.empty((8, 3), dtype=np.result_type(s, float))
    grads[:, 0] = 0.125 * _CORNERS[:, 0] * a[:, 1] * a[:, 2]
    grads[:, 1] = 0.125 * _CORNERS[:, 1] * a[:, 0] * a[:, 2]
    grads[:, 2] = 0.125 * _CORNERS[:, 2] * a[:, 0] * a[:, 1]
    return vals, grads


def _material_gradients(element: SolidElement, xi, eta, zeta):
    """Shape values, material gradients dN/dX (8,3) and det J at one point."""
    vals, dn_dxi = shape_functions(xi, eta, zeta)
    J = element.coords_ref.T @ dn_dxi  # J_ij = dX_i/dxi_j
    detj = np.linalg.det(np.real(J)) if np.iscomplexobj(J) else np.linalg.det(J)
    if abs(detj) < DETJ_MIN:
        raise SingularJacobian(f"|det J| = {abs(detj):.3e}")
    dn_dx = np.linalg.solve(J.T, dn_dxi.T).T  # dN/dX = dN/dxi * J^{-1}
    return vals, dn_dx, np.linalg.det(J)


def deformation_gradient(element: SolidElement, state: SolidState, xi, eta, zeta):
    """F = I + sum_a u_a (dN_a/dX)^T at a parametric point."""
    _, dn_dx, _ = _material_gradients(element, xi, eta, zeta)
    u = state.displacements[element.node_ids]
    return np.eye(3) + u.T @ dn_dx


def green_lagrange(F):
    return 0.5 * (F.T @ F - np.eye(3))


def pk2_stress(material: SVKMaterial, E):
    lam, mu = material.lame
    return lam * np.trace(E) * np.eye(3) + 2.0 * mu * E


def element_internal_force_and_tangent(element: SolidElement, material: SVKMaterial,
                                       state: SolidState):
    """Internal force (24,) and consistent tangent (24, 24) by 2x2x2 quadrature.

    The tangent is assembled analytically from the SVK stress derivative:
        K[ai, bj] = int (gn_a . S gn_b) d_ij + lam (F gn_a)_i (F gn_b)_j
                      + mu (F gn_b)_i (F gn_a)_j + mu (F F^T)_ij (gn_a . gn_b) dV
    which is symmetric (hyperelastic material, dead loading).
    """
    lam, mu = material.lame
    u = state.displacements[element.node_ids]
    dtype = np.result_type(u, float)
    force = np.zeros(24, dtype=dtype)
    K = np.zeros((24, 24), dtype=dtype)
    eye = np.eye(3)
    for xi in GAUSS2:
        for eta in GAUSS2:
            for zeta in GAUSS2:
                _, gn, detj = _material_gradients(element, xi, eta, zeta)
                F = eye + u.T @ gn
                S = pk2_stress(material, green_lagrange(F))
                P = F @ S
                force += detj * (gn @ P.T).reshape(24)
                fg = gn @ F.T  # (8,3): (F gn_a)_i
                gg = gn @ gn.T  # (8,8): gn_a . gn_b
                gs = gn @ S @ gn.T  # (8,8)
                b = F @ F.T
                Kblk = (
                    np.einsum("ab,ij->aibj", gs, eye)
                    + lam * np.einsum("ai,bj->aibj", fg, fg)
                    + mu * np.einsum("bi,aj->aibj", fg, fg)
                    + mu * np.einsum("ij,ab->aibj", b, gg)
                )
                K += detj * Kblk.reshape(24, 24)
    return force, K


# ---------------------------------------------------------------------------
# batched evaluation over the whole mesh (used by the global assembler)

def _parametric_gradient_table():
    """dN/dxi at the 8 Gauss points, shape (8 gp, 8 node, 3)."""
    pts = [(x, e, z) for x in GAUSS2 for e in GAUSS2 for z in GAUSS2]
    return np.array([shape_functions(*p)[1] for p in pts])


_GRAD_TABLE = _parametric_gradient_table()


def _reference_gradients(mesh: SolidMesh):
    """Cached material gradients (ne, 8gp, 8node, 3) and det J (ne, 8gp)."""
    if mesh._cache is None:
        X = mesh.nodes[mesh.elements]  # (ne, 8, 3)
        J = np.einsum("eni,gnj->egij", X, _GRAD_TABLE)
        detj = np.linalg.det(J)
        if np.any(np.abs(detj) < DETJ_MIN):
            raise SingularJacobian("singular element in reference mesh")
        invJ = np.linalg.inv(J)
        dn_dx = np.einsum("gnj,egji->egni", _GRAD_TABLE, invJ)
        mesh._cache = (dn_dx, detj)
    return mesh._cache


def batch_internal_force_and_tangent(mesh: SolidMesh, material: SVKMaterial,
                                     state: SolidState, need_tangent: bool = True):
    """All element forces (ne, 24) and tangents (ne, 24, 24) in one pass."""
    lam, mu = material.lame
    gn, detj = _reference_gradients(mesh)  # (ne,g,n,3), (ne,g)
    u = state.displacements[mesh.elements]  # (ne, 8, 3)
    F = np.einsum("eni,egnj->egij", u, gn)
    F = F + np.eye(3)
    E = 0.5 * (np.einsum("egki,egkj->egij", F, F) - np.eye(3))
    trE = np.trace(E, axis1=-2, axis2=-1)
    S = 2.0 * mu * E
    S[..., 0, 0] += lam * trE
    S[..., 1, 1] += lam * trE
    S[..., 2, 2] += lam * trE
    P = np.einsum("egik,egkj->egij", F, S)
    force = np.einsum("eg,egnk,egik->eni", detj, gn, P).reshape(-1, 24)
    if not need_tangent:
        return force, None
    fg = np.einsum("egik,egnk->egni", F, gn)  # (F gn_a)_i
    gs = np.einsum("egak,egkl,egbl->egab", gn, S, gn)
    gg = np.einsum("egak,egbk->egab", gn, gn)
    b = np.einsum("egik,egjk->egij", F, F)
    eye = np.eye(3)
    K = np.einsum("eg,egab,ij->eaibj", detj, gs, eye)
    K += lam * np.einsum("eg,egai,egbj->eaibj", detj, fg, fg)
    K += mu * np.einsum("eg,egbi,egaj->eaibj", detj, fg, fg)
    K += mu * np.einsum("eg,egij,egab->eaibj", detj, b, gg)
    return force, K.reshape(-1, 24, 24)


def _face_quadrature(face: int):
    """Four Gauss points on a face: (xi, eta, zeta) triples plus the two
    in-face parametric directions as column picks."""
    # map face-local (s, t) to the volume coords; normal coord is fixed
    fixed_axis, fixed_val = {0: (2, -1.0), 1: (2, 1.0), 2: (1, -1.0),
                             3: (0, 1.0), 4: (1, 1.0), 5: (0, -1.0)}[face]
    free = [ax for ax in range(3) if ax != fixed_axis]
    pts = []
    for s in GAUSS2:
        for t in GAUSS2:
            c = [0.0, 0.0, 0.0]
            c[fixed_axis] = fixed_val
            c[free[0]] = s
            c[free[1]] = t
            pts.append((tuple(c), free))
    return pts


def apply_neumann(mesh: SolidMesh, state: SolidState | None = None) -> np.ndarray:
    """Consistent nodal loads from all surface-traction records (dead loads).

    Tractions act per reference area; `state` is accepted for interface
    symmetry but unused. Returns a flat (3 m,) vector.
    """
    f = np.zeros(3 * mesh.n_nodes)
    for rec in mesh.neumann:
        if not 0 <= rec.element < mesh.n_elements:
            raise BadFaceReference(f"element {rec.element} does not exist")
        if rec.face not in FACE_NODES:
            raise BadFaceReference(f"face {rec.face} is not a hex8 face")
        elem = mesh.element(rec.element)
        trac = rec.traction
        if not callable(trac):
            const = np.asarray(trac, dtype=float)
            trac = lambda X, v=const: v
        for (coords, free) in _face_quadrature(rec.face):
            vals, dn_dxi = shape_functions(*coords)
            X = vals @ elem.coords_ref
            tang = elem.coords_ref.T @ dn_dxi  # (3,3); columns = dX/dxi_k
            da = np.cross(tang[:, free[0]], tang[:, free[1]])
            w = np.linalg.norm(da)  # unit quadrature weights
            load = np.asarray(trac(X), dtype=float) * w
            np.add.at(f.reshape(-1, 3), elem.node_ids, np.outer(vals, load))
    return f
