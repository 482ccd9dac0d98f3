"""Beam-to-solid coupling terms.

Pairing and segmentation of embedded centerlines, mortar matrices for the
positional constraint, rotational constraint terms in Gauss-point-to-segment
and mortar form, weighted penalty regularization of the multipliers, and a
surface-based (2D-3D) penalty coupling used as a reference solver.

Conventions
-----------
* All pairing/segmentation happens in the reference configuration.
* Per coupling pair the column layout of consistent tangents is
  [12 centerline DOFs | 9 rotation spins | 24 solid DOFs]; rotation columns
  are multiplicative (left spin increments on the nodal triads).
* Forces returned here are residual contributions, i.e. they are added to
  the same side as internal forces.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import beam_fem as bf
from . import so3
from . import solid_fem as sf
from .solid_triads import constraint_kinds, triad_and_derivative

PROJECT_TOL = 1e-12
PROJECT_MAX_ITER = 20
INSIDE_TOL = 1e-8  # parametric band accepted around [-1, 1]^3
BISECT_TOL = 1e-10  # |delta xi| for face-crossing location
AABB_INFLATE = 1e-8
MULTIPLIER_TOL = 1e-12  # integrated weight below which a node is inactive
_N_SAMPLES = 64  # owner samples per beam element before bisection

COUPLING_MODES = ("BTS-TRANS", "BTS-FULL-GPTS", "BTS-FULL-MORTAR", "REF-2D3D")


class Outside(ValueError):
    """Projection converged to a point outside the element."""


class NoConvergence(RuntimeError):
    """Closest-point projection did not converge (degenerate or far)."""


class SurfacePointOutsideMesh(UserWarning):
    """A circumferential coupling point found no containing solid element."""


class InactiveMultiplier(UserWarning):
    """Multiplier node with (numerically) zero integrated weight."""


@dataclass
class PenaltyParams:
    """Penalty magnitudes and formulation switches for one coupled model."""

    eps_r: float
    eps_theta: float
    mode: str = "BTS-FULL-MORTAR"
    triad: str = "pol"
    gauss_per_segment: int = 6
    circ_points: int = 8

    def __post_init__(self):
        if self.mode not in COUPLING_MODES:
            raise ValueError(f"unknown coupling mode {self.mode!r}")
        if self.eps_r <= 0.0 or self.eps_theta <= 0.0:
            raise ValueError("penalty parameters must be positive")


@dataclass
class CouplingPair:
    """One beam element vs one solid element, with its quadrature layout.

    segments are (xi_start, xi_end) in the beam parameter, disjoint and
    ascending; xi_b / weights hold the mapped Gauss rule of every segment
    (weights in the xi measure) and xi_s the solid parametric images.
    """

    beam_element: int
    solid_element: int
    segments: list
    xi_b: np.ndarray  # (ng,)
    weights: np.ndarray  # (ng,)
    xi_s: np.ndarray  # (ng, 3)


# ---------------------------------------------------------------------------
# projection and segmentation
# ---------------------------------------------------------------------------


def project_to_solid(element: sf.SolidElement, point, start=None):
    """Parametric coordinates of a spatial point in a hex8 element.

    Newton iteration on the trilinear reference map; raises Outside when the
    converged image leaves [-1, 1]^3 by more than INSIDE_TOL and NoConvergence
    when the iteration stalls.
    """
    target = np.asarray(point, dtype=float)
    X = element.coords_ref
    scale = max(1.0, float(np.max(np.abs(X))))
    s = np.zeros(3) if start is None else np.array(start, dtype=float)
    for _ in range(PROJECT_MAX_ITER):
        vals, grads = sf.shape_functions_unchecked(*s)
        residual = vals @ X - target
        if np.linalg.norm(residual) < PROJECT_TOL * scale:
            if np.any(np.abs(s) > 1.0 + INSIDE_TOL):
                raise Outside(f"image {s} outside the parametric box")
            return s
        J = X.T @ grads
        if abs(np.linalg.det(J)) < sf.DETJ_MIN:
            raise NoConvergence("singular projection Jacobian")
        s = s - np.linalg.solve(J, residual)
        if np.linalg.norm(s) > 1e3:
            raise NoConvergence("projection iterate diverged")
    raise NoConvergence(f"no convergence after {PROJECT_MAX_ITER} iterations")


def element_boxes(mesh: sf.SolidMesh):
    """Inflated axis-aligned bounding boxes of all elements, (ne,3) min/max."""
    corners = mesh.nodes[mesh.elements]  # (ne, 8, 3)
    return (corners.min(axis=1) - AABB_INFLATE, corners.max(axis=1) + AABB_INFLATE)


def find_containing_element(mesh: sf.SolidMesh, point, boxes=None):
    """(element id, parametric image) of the lowest-id element containing
    the point, or None.  Broad phase by inflated AABB."""
    if boxes is None:
        boxes = element_boxes(mesh)
    lo, hi = boxes
    p = np.asarray(point, dtype=float)
    candidates = np.nonzero(np.all((lo <= p) & (p <= hi), axis=1))[0]
    for e in candidates:  # ascending ids: deterministic tie-break on faces
        try:
            return int(e), project_to_solid(mesh.element(int(e)), p)
        except (Outside, NoConvergence):
            continue
    return None


def _segment_gauss(n: int):
    return np.polynomial.legendre.leggauss(n)


def segment_beam_element(beam_mesh: bf.BeamMesh, index: int, solid_mesh: sf.SolidMesh,
                         params: PenaltyParams, boxes=None) -> list:
    """Split one beam element into per-solid-element integration segments.

    Owner changes along the sampled centerline are located by bisection to
    BISECT_TOL; every segment carries a fixed Gauss rule whose points are
    projected into the owning element.  Portions outside the mesh are
    dropped.  Returns a CouplingPair per touched solid element.
    """
    if boxes is None:
        boxes = element_boxes(solid_mesh)
    X = beam_mesh.element_reference_dofs(index)
    length = beam_mesh.lengths[index]

    owner_cache: dict = {}

    def owner(xi):
        key = round(float(xi), 14)
        if key not in owner_cache:
            r0 = bf.hermite_matrix(xi, length) @ X
            hit = find_containing_element(solid_mesh, r0, boxes)
            owner_cache[key] = None if hit is None else hit[0]
        return owner_cache[key]

    xs = np.linspace(-1.0, 1.0, _N_SAMPLES)
    owners = [owner(x) for x in xs]

    # locate owner transitions, then assemble maximal single-owner runs
    breaks = [-1.0]
    run_owner = [owners[0]]
    for k in range(len(xs) - 1):
        if owners[k] == owners[k + 1]:
            continue
        a, b = xs[k], xs[k + 1]
        oa = owners[k]
        while b - a > BISECT_TOL:
            m = 0.5 * (a + b)
            if owner(m) == oa:
                a = m
            else:
                b = m
        breaks.append(0.5 * (a + b))
        run_owner.append(owners[k + 1])
    breaks.append(1.0)

    xg, wg = _segment_gauss(params.gauss_per_segment)
    per_solid: dict = {}
    for k, o in enumerate(run_owner):
        if o is None:
            continue
        a, b = breaks[k], breaks[k + 1]
        if b - a < BISECT_TOL:
            continue
        half, mid = 0.5 * (b - a), 0.5 * (a + b)
        entry = per_solid.setdefault(o, {"segments": [], "xi": [], "w": [], "im": []})
        entry["segments"].append((a, b))
        elem = solid_mesh.element(o)
        start = None
        for x, w in zip(xg, wg):
            xi = mid + half * x
            r0 = bf.hermite_matrix(xi, length) @ X
            im = project_to_solid(elem, r0, start=start)
            start = im  # warm start along the segment
            entry["xi"].append(xi)
            entry["w"].append(w * half)
            entry["im"].append(np.clip(im, -1.0, 1.0))

    pairs = []
    for o in sorted(per_solid):
        entry = per_solid[o]
        pairs.append(
            CouplingPair(
                beam_element=index,
                solid_element=o,
                segments=entry["segments"],
                xi_b=np.array(entry["xi"]),
                weights=np.array(entry["w"]),
                xi_s=np.array(entry["im"]).reshape(-1, 3),
            )
        )
    return pairs


def build_pairs(beam_mesh: bf.BeamMesh, solid_mesh: sf.SolidMesh,
                params: PenaltyParams) -> list:
    """Segment every beam element against the solid mesh (reference config)."""
    boxes = element_boxes(solid_mesh)
    pairs = []
    for e in range(beam_mesh.n_elements):
        pairs.extend(segment_beam_element(beam_mesh, e, solid_mesh, params, boxes))
    return pairs


# ---------------------------------------------------------------------------
# per-pair reference cache
# ---------------------------------------------------------------------------


@dataclass
class PairCache:
    """State-independent quantities of one pair at its Gauss points."""

    beam_element: int
    solid_element: int
    node_ids: np.ndarray  # (8,) solid node indices
    X_beam: np.ndarray  # (12,) reference centerline DOFs
    length: float
    xi_b: np.ndarray  # (ng,)
    wj: np.ndarray  # (ng,) weight * |dr0/dxi|  (arc measure)
    H: np.ndarray  # (ng, 3, 12) centerline interpolation
    L: np.ndarray  # (ng, 3, 9) rotation spin shapes
    phi: np.ndarray  # (ng, 2) linear multiplier shapes
    N: np.ndarray  # (ng, 8) solid shape values at the images
    dn_dx: np.ndarray  # (ng, 8, 3) material gradients at the images
    dF_syn: np.ndarray  # (ng, 6, 3, 3) spanning dF directions e_a (x) g2_0/g3_0
    dir_w: np.ndarray  # (ng, 2, 8) node weights dN.g2_0 / dN.g3_0 per direction
    lam_ref: np.ndarray  # (ng, 3, 3) beam reference triad (= solid ref triad)

    @property
    def n_gauss(self) -> int:
        return self.xi_b.size


def build_pair_cache(pair: CouplingPair, beam_mesh: bf.BeamMesh,
                     solid_mesh: sf.SolidMesh) -> PairCache:
    X = beam_mesh.element_reference_dofs(pair.beam_element)
    length = beam_mesh.lengths[pair.beam_element]
    i, j = beam_mesh.elements[pair.beam_element]
    psi_ref = np.vstack(
        [beam_mesh.psi_nodes_ref[i], beam_mesh.psi_nodes_ref[j],
         beam_mesh.psi_mid_ref[pair.beam_element]]
    )
    ref_triads = [so3.exp_rodrigues(p) for p in psi_ref]
    elem = solid_mesh.element(pair.solid_element)

    ng = pair.xi_b.size
    wj = np.empty(ng)
    H = np.empty((ng, 3, 12))
    L = np.empty((ng, 3, 9))
    phi = np.empty((ng, 2))
    N = np.empty((ng, 8))
    dn_dx = np.empty((ng, 8, 3))
    dF_syn = np.zeros((ng, 6, 3, 3))
    dir_w = np.empty((ng, 2, 8))
    lam_ref = np.empty((ng, 3, 3))
    for g, (xi, w) in enumerate(zip(pair.xi_b, pair.weights)):
        jac = np.linalg.norm(bf.hermite_matrix_derivative(xi, length) @ X)
        wj[g] = w * jac
        H[g] = bf.hermite_matrix(xi, length)
        L[g] = bf.spin_shape_functions(xi)
        phi[g] = (0.5 * (1.0 - xi), 0.5 * (1.0 + xi))
        vals, grads, _ = sf._material_gradients(elem, *pair.xi_s[g])
        N[g] = vals
        dn_dx[g] = grads
        lam_ref[g] = bf._triad_field(xi, ref_triads)[0]
        # the triads depend on F only through F g2_0 and F g3_0, so six
        # directions span all DOF derivatives; dir_w maps them back
        g2_0, g3_0 = lam_ref[g, :, 1], lam_ref[g, :, 2]
        for c in range(3):
            dF_syn[g, c, c, :] = g2_0
            dF_syn[g, 3 + c, c, :] = g3_0
        dir_w[g, 0] = grads @ g2_0
        dir_w[g, 1] = grads @ g3_0
    return PairCache(
        beam_element=pair.beam_element,
        solid_element=pair.solid_element,
        node_ids=elem.node_ids,
        X_beam=X,
        length=length,
        xi_b=pair.xi_b.copy(),
        wj=wj,
        H=H,
        L=L,
        phi=phi,
        N=N,
        dn_dx=dn_dx,
        dF_syn=dF_syn,
        dir_w=dir_w,
        lam_ref=lam_ref,
    )


# ---------------------------------------------------------------------------
# translational mortar terms (reference configuration only)
# ---------------------------------------------------------------------------


def translational_mortar(cache: PairCache):
    """Mortar matrices D = int Phi^T H ds (6,12), M = int Phi^T N ds (6,24)
    and the integrated multiplier weights kappa (2,) of one pair."""
    D = np.zeros((6, 12))
    M = np.zeros((6, 24))
    kappa = np.zeros(2)
    for g in range(cache.n_gauss):
        w = cache.wj[g]
        Nmat = np.kron(cache.N[g], np.eye(3)).reshape(3, 24)
        for a in range(2):
            p = w * cache.phi[g, a]
            D[3 * a:3 * a + 3] += p * cache.H[g]
            M[3 * a:3 * a + 3] += p * Nmat
            kappa[a] += p
    return D, M, kappa


# ---------------------------------------------------------------------------
# rotational terms: shared state evaluation
# ---------------------------------------------------------------------------


def _solid_spin_chain(cache: PairCache, g: int, u_flat, kind: str, F=None):
    """Current solid triad and spin matrix Theta (3,24) at Gauss point g."""
    if F is None:
        u = u_flat.reshape(8, 3)
        F = np.eye(3) + u.T @ cache.dn_dx[g]
    lam, dlam = triad_and_derivative(kind, F, cache.dF_syn[g], cache.lam_ref[g])
    spin = np.einsum("kil,jl->kij", dlam, lam)
    th = np.stack([so3.axial(s) for s in spin], axis=1)  # (3, 6)
    c2, c3 = cache.dir_w[g]
    theta = (th[:, None, :3] * c2[None, :, None]
             + th[:, None, 3:] * c3[None, :, None]).reshape(3, 24)
    return lam, theta


def _beam_triads_at(cache: PairCache, g: int, triads):
    return bf._triad_field(cache.xi_b[g], triads)[0]


def gpts_rotational_residual(cache: PairCache, triads, u_flat, kind: str,
                             eps_theta: float):
    """Gauss-point-to-segment rotational penalty residual of one pair.

    Returns (f_beam (9,), f_solid (24,)): f_beam = -eps int L^T psi_SB ds,
    f_solid = +eps int Theta^T psi_SB ds.
    """
    dtype = np.result_type(*triads, u_flat, float)
    f_b = np.zeros(9, dtype=dtype)
    f_s = np.zeros(24, dtype=dtype)
    pre = bf._triad_pre(triads)
    for g in range(cache.n_gauss):
        lam_b = bf._triad_at(cache.xi_b[g], pre)
        lam_s, theta = _solid_spin_chain(cache, g, u_flat, kind)
        psi_sb = so3.relative_rotation(lam_b, lam_s)
        w = eps_theta * cache.wj[g]
        f_b -= w * (cache.L[g].T @ psi_sb)
        f_s += w * (theta.T @ psi_sb)
    return f_b, f_s


def mortar_rotational_terms(cache: PairCache, triads, u_flat, kind: str):
    """Constraint residual and force matrices of the rotational mortar pair.

    Returns (g (6,), C_beam (9,6), C_solid (24,6), kappa (2,)) with
      g       = int Phi^T psi_SB ds
      f_beam  = C_beam  lam_hat = -int L^T T^T(psi_SB) Phi ds lam_hat
      f_solid = C_solid lam_hat = +int Theta^T T^T(psi_SB) Phi ds lam_hat
    so that for psi_SB = 0 the beam integrand reduces to -L^T Phi lam_hat
    (equal and opposite to the multiplier load on the beam).
    """
    dtype = np.result_type(*triads, u_flat, float)
    g_c = np.zeros(6, dtype=dtype)
    C_b = np.zeros((9, 6), dtype=dtype)
    C_s = np.zeros((24, 6), dtype=dtype)
    kappa = np.zeros(2)
    pre = bf._triad_pre(triads)
    for g in range(cache.n_gauss):
        lam_b = bf._triad_at(cache.xi_b[g], pre)
        lam_s, theta = _solid_spin_chain(cache, g, u_flat, kind)
        psi_sb = so3.relative_rotation(lam_b, lam_s)
        Tt = so3.transformation_matrix(psi_sb).T
        w = cache.wj[g]
        LtT = cache.L[g].T @ Tt  # (9, 3)
        StT = theta.T @ Tt  # (24, 3)
        for a in range(2):
            p = w * cache.phi[g, a]
            g_c[3 * a:3 * a + 3] += p * psi_sb
            C_b[:, 3 * a:3 * a + 3] -= p * LtT
            C_s[:, 3 * a:3 * a + 3] += p * StT
            kappa[a] += p

    return g_c, C_b, C_s, kappa


# ---------------------------------------------------------------------------
# consistent pair tangents by complex step
# ---------------------------------------------------------------------------


def _complex_step_columns(fun: Callable, n_out: int, triads, u_flat,
                          d: Optional[np.ndarray] = None) -> np.ndarray:
    """Derivative matrix of fun w.r.t. the pair DOF columns.

    fun(d, triads, u) -> (n_out,); columns are [12 centerline (additive,
    only when d is given) | 9 spins (multiplicative) | 24 solid (additive)].
    """
    h = bf._CS_STEP
    n_d = 0 if d is None else 12
    K = np.empty((n_out, n_d + 33))
    col = 0
    if d is not None:
        dc = d.astype(complex)
        for k in range(12):
            dc[k] += 1j * h
            K[:, col] = fun(dc, triads, u_flat).imag / h
            dc[k] = d[k]
            col += 1
    for node in range(3):
        for c in range(3):
            spin = np.zeros(3, dtype=complex)
            spin[c] = 1j * h
            pert = list(triads)
            pert[node] = so3.exp_rodrigues(spin) @ triads[node]
            K[:, col] = fun(d, pert, u_flat).imag / h
            col += 1
    uc = u_flat.astype(complex)
    for k in range(24):
        uc[k] += 1j * h
        K[:, col] = fun(d, triads, uc).imag / h
        uc[k] = u_flat[k]
        col += 1
    return K


def _gpts_tangent_bruteforce(cache: PairCache, triads, u_flat, kind: str,
                             eps_theta: float):
    """Whole-pair complex step; oracle for the split per-point tangent."""

    def stacked(_d, tr, u):
        f_b, f_s = gpts_rotational_residual(cache, tr, u, kind, eps_theta)
        return np.concatenate([f_b, f_s])

    return _complex_step_columns(stacked, 33, triads, u_flat)


def _mortar_linearization_bruteforce(cache: PairCache, triads, u_flat,
                                     kind: str, lam_hat: np.ndarray):
    """Whole-pair complex step; oracle for the split per-point tangent."""

    def stacked(_d, tr, u):
        g_c, C_b, C_s, _ = mortar_rotational_terms(cache, tr, u, kind)
        return np.concatenate([g_c, C_b @ lam_hat, C_s @ lam_hat])

    K = _complex_step_columns(stacked, 39, triads, u_flat)
    return K[:6], K[6:]


def _rotational_pair_tangent(cache: PairCache, triads, u_flat, kind: str,
                             gp_out: Callable, n_out: int):
    """Tangent of a per-Gauss-point rotational integrand, columns
    [9 spins | 24 solid].

    gp_out(g, lam_b, lam_s, theta) -> (n_out,) is the weighted integrand at
    point g.  The complex step is taken per Gauss point against the cached
    opposite side: spin columns reuse the real solid chain, solid columns
    reuse the real beam triad and step along the six spanning F directions
    of the cache, mapped back to the 24 DOF columns through dir_w.
    """
    h = bf._CS_STEP
    ng = cache.n_gauss
    pre = bf._triad_pre(triads)
    lam_b = [bf._triad_at(cache.xi_b[g], pre) for g in range(ng)]
    chains = [_solid_spin_chain(cache, g, u_flat, kind) for g in range(ng)]
    u = u_flat.reshape(8, 3)
    F_g = [np.eye(3) + u.T @ cache.dn_dx[g] for g in range(ng)]

    K = np.zeros((n_out, 33))
    col = 0
    for node in range(3):
        for c in range(3):
            spin = np.zeros(3, dtype=complex)
            spin[c] = 1j * h
            pert = list(triads)
            pert[node] = so3.exp_rodrigues(spin) @ triads[node]
            pre_c = bf._triad_pre(pert)
            for g in range(ng):
                lam_s, theta = chains[g]
                out = gp_out(g, bf._triad_at(cache.xi_b[g], pre_c),
                             lam_s, theta)
                K[:, col] += out.imag / h
            col += 1
    for g in range(ng):
        c2, c3 = cache.dir_w[g]
        for j in range(6):
            dcol = gp_out(g, lam_b[g], *_solid_spin_chain(
                cache, g, None, kind,
                F=F_g[g] + 1j * h * cache.dF_syn[g, j])).imag / h
            a = j % 3
            w = c2 if j < 3 else c3
            K[:, 9 + a::3] += np.outer(dcol, w)
    return K, lam_b, chains


def gpts_rotational_residual_and_tangent(cache: PairCache, triads, u_flat,
                                         kind: str, eps_theta: float):
    """Pair residual and consistent tangent of the GPTS rotational penalty.

    Tangent columns/rows: [9 beam spins | 24 solid DOFs] (33, 33).
    """

    def gp_out(g, lam_b, lam_s, theta):
        psi = so3._log_unchecked(lam_s @ lam_b.T)
        w = eps_theta * cache.wj[g]
        return np.concatenate([-w * (cache.L[g].T @ psi),
                               w * (theta.T @ psi)])

    K, lam_b, chains = _rotational_pair_tangent(cache, triads, u_flat, kind,
                                                gp_out, 33)
    dtype = np.result_type(*triads, u_flat, float)
    f_b = np.zeros(9, dtype=dtype)
    f_s = np.zeros(24, dtype=dtype)
    for g in range(cache.n_gauss):
        out = gp_out(g, lam_b[g], *chains[g])
        f_b += out[:9]
        f_s += out[9:]
    return f_b, f_s, K


def mortar_rotational_linearization(cache: PairCache, triads, u_flat, kind: str,
                                    lam_hat: np.ndarray):
    """Constraint Jacobian and fixed-multiplier force tangent of one pair.

    Returns (G (6,33), K_f (33,33)): G = d g_c / d[spins, solid], K_f the
    derivative of [C_beam lam_hat; C_solid lam_hat] at fixed lam_hat.  The
    multiplier elimination lam = eps V^-1 R_c adds eps C V^-1 G afterwards.
    """

    def gp_out(g, lam_b, lam_s, theta):
        psi = so3._log_unchecked(lam_s @ lam_b.T)
        Tt = so3.transformation_matrix(psi).T
        w = cache.wj[g]
        p1, p2 = w * cache.phi[g]
        tl = Tt @ (cache.phi[g, 0] * lam_hat[:3] + cache.phi[g, 1] * lam_hat[3:])
        return np.concatenate([p1 * psi, p2 * psi,
                               -w * (cache.L[g].T @ tl),
                               w * (theta.T @ tl)])

    K, _, _ = _rotational_pair_tangent(cache, triads, u_flat, kind, gp_out, 39)
    return K[:6], K[6:]


# ---------------------------------------------------------------------------
# weighted penalty regularization
# ---------------------------------------------------------------------------


def penalty_regularize(constraint: np.ndarray, kappa: np.ndarray, eps: float):
    """Multipliers lam = eps V^-1 R_c with V = diag(kappa_i I_3).

    constraint is the assembled (3n,) constraint residual, kappa the (n,)
    integrated multiplier weights.  Nodes with kappa below MULTIPLIER_TOL are
    excluded (their multipliers stay zero) and reported once via the
    InactiveMultiplier warning category.  Returns (lam (3n,), active (n,))."""
    constraint = np.asarray(constraint, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    n = kappa.size
    if constraint.size != 3 * n:
        raise ValueError("constraint vector does not match the weight vector")
    active = kappa > MULTIPLIER_TOL
    if not np.all(active):
        warnings.warn(
            f"{int(np.sum(~active))} multiplier node(s) without support excluded",
            InactiveMultiplier,
            stacklevel=2,
        )
    lam = np.zeros_like(constraint)
    blocks = constraint.reshape(n, 3)
    lam_blocks = lam.reshape(n, 3)
    lam_blocks[active] = eps * blocks[active] / kappa[active, None]
    return lam, active


# ---------------------------------------------------------------------------
# surface-based reference coupling (2D-3D)
# ---------------------------------------------------------------------------


@dataclass
class SurfacePair:
    """Circumferential coupling points of one (beam, solid) element pair."""

    beam_element: int
    solid_element: int
    node_ids: np.ndarray  # (8,)
    X_beam: np.ndarray  # (12,)
    length: float
    xi_b: np.ndarray  # (np,)
    w: np.ndarray  # (np,) arc weight / circ points
    rho0: np.ndarray  # (np, 3) material cross-section offsets
    H: np.ndarray  # (np, 3, 12)
    L: np.ndarray  # (np, 3, 9)
    N: np.ndarray  # (np, 8)

    @property
    def n_points(self) -> int:
        return self.xi_b.size


def build_surface_pairs(beam_mesh: bf.BeamMesh, solid_mesh: sf.SolidMesh,
                        params: PenaltyParams, radius: Optional[float] = None):
    """Cross-section surface points for the 2D-3D reference coupling.

    For every centerline Gauss point of the 1D segmentation, circ_points
    equally spaced points on the lateral surface are projected into the solid
    (reference configuration); points outside the mesh raise the
    SurfacePointOutsideMesh warning and are skipped.  Returns (pairs,
    n_skipped)."""
    if radius is None:
        radius = beam_mesh.props.radius
    boxes = element_boxes(solid_mesh)
    angles = 2.0 * np.pi * np.arange(params.circ_points) / params.circ_points
    collected: dict = {}
    n_skipped = 0
    for e in range(beam_mesh.n_elements):
        X = beam_mesh.element_reference_dofs(e)
        length = beam_mesh.lengths[e]
        i, j = beam_mesh.elements[e]
        ref_triads = [
            so3.exp_rodrigues(p)
            for p in (beam_mesh.psi_nodes_ref[i], beam_mesh.psi_nodes_ref[j],
                      beam_mesh.psi_mid_ref[e])
        ]
        for pair in segment_beam_element(beam_mesh, e, solid_mesh, params, boxes):
            for xi, w in zip(pair.xi_b, pair.weights):
                jac = np.linalg.norm(bf.hermite_matrix_derivative(xi, length) @ X)
                lam0 = bf._triad_field(xi, ref_triads)[0]
                r0 = bf.hermite_matrix(xi, length) @ X
                for phi in angles:
                    rho = radius * np.array([0.0, np.cos(phi), np.sin(phi)])
                    point = r0 + lam0 @ rho
                    hit = find_containing_element(solid_mesh, point, boxes)
                    if hit is None:
                        warnings.warn(
                            f"surface point at xi={xi:.4f}, phi={phi:.3f} "
                            "outside the solid mesh",
                            SurfacePointOutsideMesh,
                            stacklevel=2,
                        )
                        n_skipped += 1
                        continue
                    s_elem, im = hit
                    key = (e, s_elem)
                    entry = collected.setdefault(key, {"xi": [], "w": [], "rho": [],
                                                       "im": []})
                    entry["xi"].append(xi)
                    entry["w"].append(w * jac / params.circ_points)
                    entry["rho"].append(rho)
                    entry["im"].append(np.clip(im, -1.0, 1.0))

    pairs = []
    for (e, s_elem) in sorted(collected):
        entry = collected[(e, s_elem)]
        X = beam_mesh.element_reference_dofs(e)
        length = beam_mesh.lengths[e]
        elem = solid_mesh.element(s_elem)
        n_p = len(entry["xi"])
        H = np.empty((n_p, 3, 12))
        L = np.empty((n_p, 3, 9))
        N = np.empty((n_p, 8))
        for p, (xi, im) in enumerate(zip(entry["xi"], entry["im"])):
            H[p] = bf.hermite_matrix(xi, length)
            L[p] = bf.spin_shape_functions(xi)
            N[p] = sf.shape_functions(*im)[0]
        pairs.append(
            SurfacePair(
                beam_element=e,
                solid_element=s_elem,
                node_ids=elem.node_ids,
                X_beam=X,
                length=length,
                xi_b=np.array(entry["xi"]),
                w=np.array(entry["w"]),
                rho0=np.array(entry["rho"]).reshape(-1, 3),
                H=H,
                L=L,
                N=N,
            )
        )
    return pairs, n_skipped


def surface_pair_residual(pair: SurfacePair, d, triads, u_flat, X_solid,
                          eps: float):
    """Penalty residual of one surface pair: gap g = r + Lambda_B rho - x_S
    per point, beam centerline rows +eps H^T g, beam rotation rows
    +eps L^T S(Lambda_B rho) g, solid rows -eps N^T g."""
    dtype = np.result_type(d, *triads, u_flat, float)
    f_b = np.zeros(21, dtype=dtype)
    f_s = np.zeros(24, dtype=dtype)
    x_nodes = X_solid + u_flat.reshape(8, 3)
    for p in range(pair.n_points):
        lam_b = bf._triad_field(pair.xi_b[p], triads)[0]
        r = pair.H[p] @ (pair.X_beam + d)
        off = lam_b @ pair.rho0[p]
        gap = r + off - pair.N[p] @ x_nodes
        w = eps * pair.w[p]
        f_b[:12] += w * (pair.H[p].T @ gap)
        f_b[12:] += w * (pair.L[p].T @ np.cross(off, gap))
        f_s -= w * np.outer(pair.N[p], gap).ravel()
    return f_b, f_s


def surface_pair_residual_and_tangent(pair: SurfacePair, d, triads, u_flat,
                                      X_solid, eps: float):
    """Residual plus consistent (45,45) tangent of a surface pair; columns
    [12 centerline | 9 spins | 24 solid]."""

    def stacked(dd, tr, u):
        f_b, f_s = surface_pair_residual(pair, dd, tr, u, X_solid, eps)
        return np.concatenate([f_b, f_s])

    f_b, f_s = surface_pair_residual(pair, d, triads, u_flat, X_solid, eps)
    K = _complex_step_columns(stacked, 45, triads, u_flat, d=np.asarray(d, float))
    return f_b, f_s, K
