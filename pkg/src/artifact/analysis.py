"""Post-processing: L2 displacement errors, beam energy split, point moments
applied to solids through the spin map, and the in-plane optimality oracle."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import beam_fem as bf
from . import so3
from . import solid_fem as sf
from .coupling import element_boxes, find_containing_element
from .solid_triads import solid_spin_linearization


class PointNotLocated(ValueError):
    """A material point could not be found in the target mesh."""


# ---------------------------------------------------------------------------
# L2 displacement error
# ---------------------------------------------------------------------------


@dataclass
class FieldComparison:
    """Coarse vs reference displacement fields over the same solid domain."""

    coarse_mesh: sf.SolidMesh
    coarse_state: sf.SolidState
    ref_mesh: sf.SolidMesh
    ref_state: sf.SolidState
    order: int = 3  # Gauss points per direction on the coarse mesh


def l2_displacement_error(comparison: FieldComparison, relative: bool = True):
    """L2 norm of the displacement difference over the coarse mesh.

    relative: ||u_h - u_ref||_L2 / ||u_ref||_L2; otherwise
    sqrt( (1/V0) int ||u_h - u_ref||^2 dV0 ).  Reference values are obtained
    by inverse trilinear mapping at every quadrature point (the meshes need
    not match).
    """
    mesh, state = comparison.coarse_mesh, comparison.coarse_state
    ref_mesh, ref_state = comparison.ref_mesh, comparison.ref_state
    boxes = element_boxes(ref_mesh)
    pts, wts = np.polynomial.legendre.leggauss(comparison.order)

    err2 = 0.0
    ref2 = 0.0
    vol = 0.0
    for e in range(mesh.n_elements):
        elem = mesh.element(e)
        u_elem = state.displacements[elem.node_ids]
        for i, xi in enumerate(pts):
            for j, eta in enumerate(pts):
                for k, zeta in enumerate(pts):
                    vals, _, detj = sf._material_gradients(elem, xi, eta, zeta)
                    w = wts[i] * wts[j] * wts[k] * detj
                    X = vals @ elem.coords_ref
                    u_h = vals @ u_elem
                    hit = find_containing_element(ref_mesh, X, boxes)
                    if hit is None:
                        raise PointNotLocated(
                            f"quadrature point {X} not inside the reference mesh")
                    re, im = hit
                    rvals = sf.shape_functions(*im)[0]
                    u_ref = rvals @ ref_state.displacements[
                        ref_mesh.elements[re]]
                    diff = u_h - u_ref
                    err2 += w * (diff @ diff)
                    ref2 += w * (u_ref @ u_ref)
                    vol += w
    if relative:
        return float(np.sqrt(err2 / ref2))
    return float(np.sqrt(err2 / vol))


# ---------------------------------------------------------------------------
# beam energy decomposition
# ---------------------------------------------------------------------------


def beam_energy_decomposition(mesh: bf.BeamMesh, state: bf.BeamState) -> dict:
    """Tension/shear/torsion/bending split of the stored beam energy (J).

    The parts sum to the total element energy exactly (same quadrature)."""
    totals = {"tension": 0.0, "shear": 0.0, "torsion": 0.0, "bending": 0.0}
    for e in range(mesh.n_elements):
        parts = bf.element_energy_components(mesh.element(e, state))
        for key in totals:
            totals[key] += parts[key]
    totals["total"] = sum(totals.values())
    return totals


# ---------------------------------------------------------------------------
# point moments on the solid
# ---------------------------------------------------------------------------


def point_moment_element_force(mesh: sf.SolidMesh, state: sf.SolidState,
                               point, moment, kind: str = "avg",
                               reference_triad=None, location=None):
    """Element force vector equivalent to a point moment via the spin map.

    Returns (element id, node_ids, f (24,)) with f = spin_map^T m, i.e. the
    nodal forces whose virtual work matches m against the solid spin at the
    (reference-configuration) material point.  Deformation dependent.
    """
    if location is None:
        hit = find_containing_element(mesh, np.asarray(point, float))
        if hit is None:
            raise PointNotLocated(f"point {point} outside the solid mesh")
        e, im = hit
    else:
        e, im = location
    if reference_triad is None:
        reference_triad = np.eye(3)
    elem = mesh.element(int(e))
    _, _, spin_map = solid_spin_linearization(kind, elem, state, im,
                                              reference_triad)
    return int(e), elem.node_ids, spin_map.T @ np.asarray(moment, float)


def apply_point_moment_to_solid(mesh: sf.SolidMesh, state: sf.SolidState,
                                point, moment, kind: str = "avg",
                                reference_triad=None) -> np.ndarray:
    """Global external force vector (3 n_nodes,) equivalent to a point moment."""
    _, node_ids, f = point_moment_element_force(mesh, state, point, moment,
                                                kind, reference_triad)
    out = np.zeros(3 * mesh.n_nodes)
    dofs = (3 * node_ids[:, None] + np.arange(3)).ravel()
    out[dofs] = f
    return out


def point_moment_force_and_tangent(mesh: sf.SolidMesh, state: sf.SolidState,
                                   point, moment, kind: str = "avg",
                                   reference_triad=None, location=None):
    """Element force of a point moment plus its derivative w.r.t. the element
    displacements (complex-step columns), for consistent Newton iterations."""
    if location is None:
        hit = find_containing_element(mesh, np.asarray(point, float))
        if hit is None:
            raise PointNotLocated(f"point {point} outside the solid mesh")
        location = hit
    e, node_ids, f = point_moment_element_force(mesh, state, point, moment,
                                                kind, reference_triad, location)
    h = bf._CS_STEP
    K = np.empty((24, 24))
    u = state.displacements.astype(complex)
    for a_local, node in enumerate(node_ids):
        for c in range(3):
            u[node, c] += 1j * h
            _, _, fc = point_moment_element_force(
                mesh, sf.SolidState(u), point, moment, kind, reference_triad,
                location)
            K[:, 3 * a_local + c] = fc.imag / h
            u[node, c] = u[node, c].real
    return e, node_ids, f, K


# ---------------------------------------------------------------------------
# in-plane optimality oracle
# ---------------------------------------------------------------------------


_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def appendix_a_oracle(F_2d, n_quad: int = 2048, tol: float = 1e-10) -> float:
    """Brute-force minimizer of the mean-square cross-section angle mismatch.

    For the in-plane deformation F_2d (2x2), material directions at angle
    theta_0 map to directions at the continuous angle theta_S(theta_0); the
    returned theta* minimizes int (theta_B + theta_0 - theta_S)^2 d theta_0
    over [-pi, pi] (midpoint rule, n_quad points, golden-section search)."""
    F = np.asarray(F_2d, dtype=float)
    if F.shape != (2, 2) or abs(np.linalg.det(F)) < 1e-12:
        raise ValueError("F_2d must be a non-degenerate 2x2 matrix")
    theta0 = -np.pi + (np.arange(n_quad) + 0.5) * (2.0 * np.pi / n_quad)
    mapped = F @ np.vstack([np.cos(theta0), np.sin(theta0)])
    theta_s = np.unwrap(np.arctan2(mapped[1], mapped[0]))
    offset = theta_s - theta0  # continuous, periodic
    # unwrap fixes the branch only up to a global 2*pi shift; centre it
    offset -= 2.0 * np.pi * np.round(np.mean(offset) / (2.0 * np.pi))

    # int (offset - theta)^2 equals const + N theta^2 - 2 S theta exactly;
    # dropping the constant avoids cancellation near the minimum
    s = float(offset.sum())

    def objective(theta_b):
        return n_quad * theta_b * theta_b - 2.0 * s * theta_b

    a, b = float(offset.min()), float(offset.max())
    if b - a < tol:  # isotropic in-plane map: every direction rotates equally
        return 0.5 * (a + b)
    # golden-section search on the strictly convex objective
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = objective(c), objective(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = objective(d)
    return 0.5 * (a + b)


def polar_in_plane_angle(F_2d) -> float:
    """Rotation angle of the 2x2 polar decomposition F = R(theta) U."""
    F = np.asarray(F_2d, dtype=float)
    p = F[0, 0] + F[1, 1]
    q = F[1, 0] - F[0, 1]
    return float(np.arctan2(q, p))


# ---------------------------------------------------------------------------
# CSV emitters
# ---------------------------------------------------------------------------


def write_table(path, header, rows, comment: str = ""):
    """CSV table with an optional leading '#' comment line."""
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_convergence_table(path, h_values, errors):
    write_table(
        path,
        ["h_solid", "l2_error"],
        list(zip(h_values, errors)),
        comment="h_solid = edge length of the uniform solid grid",
    )
