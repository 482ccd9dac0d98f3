"""Orthonormal solid triads constructed from the deformation gradient.

Five variants select how the cross-section orientation of an embedded fiber
is extracted from the surrounding continuum deformation at a point:

* ``pol``  -- in-plane polar decomposition of the modified deformation
  gradient (unique angle-preserving average of the in-plane directors),
* ``fix2`` / ``fix3`` -- align with one normalized in-plane director,
* ``avg``  -- bisector of the two normalized in-plane directors, back-rotated
  by pi/4 so the reference configuration is reproduced,
* ``ort``  -- not a constructor: a coupling mode that applies the fix2 and
  fix3 constraint sets simultaneously.

All constructions act on the push-forwards g_i = F g_i0 of the reference
directors (columns of the reference triad, which equals the fiber reference
triad at coupling points) and share the unit normal
n = normalize(g_2 x g_3) of the deformed cross-section plane.

Value paths and the analytic derivative chains are free of branches,
eigen-solvers and absolute values, so they remain valid for complex-step
differentiation; the public ``triad_pol`` additionally implements the
eigendecomposition route and is tested against the closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import so3
from .so3 import _norm

DEGENERATE_TOL = 1.0e-12

TRIAD_KINDS = ("pol", "fix2", "fix3", "avg", "ort")


class DegenerateInPlane(ValueError):
    """Push-forward directors no longer span a plane."""


class SingularStretch(ValueError):
    """In-plane stretch is singular; polar rotation undefined."""


class AntiparallelDirectors(ValueError):
    """Normalized in-plane directors cancel; average direction undefined."""


@dataclass
class MaterialDirectors:
    """Reference directors and their push-forwards at one material point."""

    g2_0: np.ndarray
    g3_0: np.ndarray
    g2: np.ndarray
    g3: np.ndarray
    n: np.ndarray
    g2_hat: np.ndarray
    g3_hat: np.ndarray

    @classmethod
    def from_triad(cls, F, reference_triad):
        g2_0 = reference_triad[:, 1]
        g3_0 = reference_triad[:, 2]
        g2 = F @ g2_0
        g3 = F @ g3_0
        c = np.cross(g2, g3)
        cn = _norm(c)
        if cn.real < DEGENERATE_TOL:
            raise DegenerateInPlane(f"|g2 x g3| = {cn.real:.3e}")
        return cls(
            g2_0=g2_0,
            g3_0=g3_0,
            g2=g2,
            g3=g3,
            n=c / cn,
            g2_hat=g2 / _norm(g2),
            g3_hat=g3 / _norm(g3),
        )


def modified_deformation_gradient(F, directors: MaterialDirectors):
    """F^n: replaces the out-of-plane response by the unit normal map."""
    g1_0 = np.cross(directors.g2_0, directors.g3_0)
    return (
        np.outer(directors.n, g1_0)
        + np.outer(directors.g2, directors.g2_0)
        + np.outer(directors.g3, directors.g3_0)
    )


# ---------------------------------------------------------------------------
# derivative chains (dF is a stack of K directional derivatives of F)

def _cross(a, b):
    # np.cross spends most of its time on axis bookkeeping for these tiny
    # operands; the chains below call it thousands of times per assembly
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    out = np.empty(np.broadcast_shapes(a.shape, b.shape),
                   dtype=np.result_type(a, b))
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


def _d_normalize(v, dv, nrm=None):
    if nrm is None:
        nrm = _norm(v)
    u = v / nrm
    du = (dv - np.outer(dv @ u, u)) / nrm
    return u, du


def _d_cross(a, da, b, db):
    return _cross(da, b) + _cross(a, db)


def _push_forward(F, dF, reference_triad):
    """Directors, normal, and all directional derivatives."""
    g2_0 = reference_triad[:, 1]
    g3_0 = reference_triad[:, 2]
    g2 = F @ g2_0
    g3 = F @ g3_0
    dg2 = dF @ g2_0
    dg3 = dF @ g3_0
    c = _cross(g2, g3)
    cn = _norm(c)
    if cn.real < DEGENERATE_TOL:
        raise DegenerateInPlane(f"|g2 x g3| = {cn.real:.3e}")
    dc = _d_cross(g2, dg2, g3, dg3)
    n, dn = _d_normalize(c, dc, cn)
    return g2, dg2, g3, dg3, n, dn


def _stack_columns(c1, c2, c3, d1, d2, d3):
    lam = np.column_stack([c1, c2, c3])
    dlam = np.stack([d1, d2, d3], axis=-1)  # (K, 3, 3) column stack per direction
    return lam, dlam


def _fix2_chain(F, dF, reference_triad):
    g2, dg2, _, _, n, dn = _push_forward(F, dF, reference_triad)
    g2h, dg2h = _d_normalize(g2, dg2)
    c3 = _cross(n, g2h)
    d3 = _d_cross(n, dn, g2h, dg2h)
    return _stack_columns(n, g2h, c3, dn, dg2h, d3)


def _fix3_chain(F, dF, reference_triad):
    _, _, g3, dg3, n, dn = _push_forward(F, dF, reference_triad)
    g3h, dg3h = _d_normalize(g3, dg3)
    c2 = _cross(g3h, n)
    d2 = _d_cross(g3h, dg3h, n, dn)
    return _stack_columns(n, c2, g3h, dn, d2, dg3h)


def _avg_chain(F, dF, reference_triad):
    g2, dg2, g3, dg3, n, dn = _push_forward(F, dF, reference_triad)
    g2h, dg2h = _d_normalize(g2, dg2)
    g3h, dg3h = _d_normalize(g3, dg3)
    s = g2h + g3h
    if _norm(s).real < DEGENERATE_TOL:
        raise AntiparallelDirectors("normalized directors cancel")
    gavg, dgavg = _d_normalize(s, dg2h + dg3h)
    c3 = _cross(n, gavg)
    d3 = _d_cross(n, dn, gavg, dgavg)
    base, dbase = _stack_columns(n, gavg, c3, dn, dgavg, d3)
    # back-rotation about n by -pi/4 so that F = I reproduces the reference
    st, ct = np.sin(-np.pi / 4), np.cos(-np.pi / 4)
    Sn = so3.skew(n)
    R = np.eye(3) + st * Sn + (1.0 - ct) * (np.outer(n, n) - np.eye(3))
    dSn = np.array([so3.skew(v) for v in dn]).reshape(len(dn), 3, 3)
    dR = st * dSn + (1.0 - ct) * (
        np.einsum("ki,j->kij", dn, n) + np.einsum("i,kj->kij", n, dn)
    )
    lam = R @ base
    dlam = dR @ base + R @ dbase
    return lam, dlam


def _pol_chain(F, dF, reference_triad):
    """Closed-form in-plane polar rotation (and derivatives) in the
    intermediate-triad frame; equals the eigendecomposition route."""
    lam_bar, dlam_bar = _fix2_chain(F, dF, reference_triad)
    g2_0 = reference_triad[:, 1]
    g3_0 = reference_triad[:, 2]
    g1_0 = _cross(g2_0, g3_0)
    g2 = F @ g2_0
    g3 = F @ g3_0
    n = lam_bar[:, 0]
    dn = dlam_bar[:, :, 0]
    Fn = np.outer(n, g1_0) + np.outer(g2, g2_0) + np.outer(g3, g3_0)
    dFn = (
        np.einsum("ki,j->kij", dn, g1_0)
        + np.einsum("kij,j,l->kil", dF, g2_0, g2_0)
        + np.einsum("kij,j,l->kil", dF, g3_0, g3_0)
    )
    Ft = lam_bar.T @ Fn @ reference_triad
    dFt = np.einsum("kji,jl,lm->kim", dlam_bar, Fn, reference_triad) + np.einsum(
        "ji,kjl,lm->kim", lam_bar, dFn, reference_triad
    )
    a, b = Ft[1, 1], Ft[1, 2]
    c, d = Ft[2, 1], Ft[2, 2]
    # smallest singular value of the in-plane block (guard only)
    t = (a * a + b * b + c * c + d * d).real
    det = (a * d - b * c).real
    smin_sq = 0.5 * (t - np.sqrt(max(t * t - 4.0 * det * det, 0.0)))
    if np.sqrt(max(smin_sq, 0.0)) < DEGENERATE_TOL:
        raise SingularStretch("in-plane stretch singular")
    p = a + d
    q = c - b
    h = np.sqrt(p * p + q * q)
    if h.real < DEGENERATE_TOL:
        raise SingularStretch("polar rotation angle undefined")
    ct, st = p / h, q / h
    dp = dFt[:, 1, 1] + dFt[:, 2, 2]
    dq = dFt[:, 2, 1] - dFt[:, 1, 2]
    h3 = h**3
    dct = q * (q * dp - p * dq) / h3
    dst = p * (p * dq - q * dp) / h3
    dtype = np.result_type(Ft, dFt)
    R2 = np.eye(3, dtype=dtype)
    R2[1, 1] = ct
    R2[1, 2] = -st
    R2[2, 1] = st
    R2[2, 2] = ct
    K = dF.shape[0]
    dR2 = np.zeros((K, 3, 3), dtype=dtype)
    dR2[:, 1, 1] = dct
    dR2[:, 1, 2] = -dst
    dR2[:, 2, 1] = dst
    dR2[:, 2, 2] = dct
    lam = lam_bar @ R2
    dlam = dlam_bar @ R2 + lam_bar @ dR2
    return lam, dlam


_CHAINS = {
    "pol": _pol_chain,
    "fix2": _fix2_chain,
    "fix3": _fix3_chain,
    "avg": _avg_chain,
}


def triad_and_derivative(kind: str, F, dF, reference_triad):
    """Triad Lambda_S and the stack of directional derivatives dLambda_S.

    dF has shape (K, 3, 3); the result derivative has shape (K, 3, 3) with
    dlam[k] = directional derivative of Lambda_S along dF[k].
    """
    try:
        chain = _CHAINS[kind]
    except KeyError:
        raise ValueError(f"not a triad constructor: {kind!r}") from None
    return chain(F, np.asarray(dF), reference_triad)


_NO_DIRECTIONS = np.zeros((0, 3, 3))


def triad_fix2(F, reference_triad):
    """[n, normalized g2, n x g2]."""
    return _fix2_chain(F, _NO_DIRECTIONS, reference_triad)[0]


def triad_fix3(F, reference_triad):
    """[n, g3 x n, normalized g3]."""
    return _fix3_chain(F, _NO_DIRECTIONS, reference_triad)[0]


def triad_avg(F, reference_triad):
    """Director bisector, back-rotated by pi/4 about the normal."""
    return _avg_chain(F, _NO_DIRECTIONS, reference_triad)[0]


def triad_pol(F, reference_triad, in_plane_offset: float = 0.0):
    """In-plane polar decomposition route.

    Steps: intermediate in-plane triad, rotation to the reference frame,
    modified gradient relative to it, left stretch from the eigendecomposition
    of F2d F2d^T (inverted on the plane, normal direction mapped to itself),
    and the resulting in-plane rotation. `in_plane_offset` rotates the
    intermediate triad about the normal; the result must not depend on it.
    """
    directors = MaterialDirectors.from_triad(F, reference_triad)
    n = directors.n
    lam_bar = np.column_stack([n, directors.g2_hat, np.cross(n, directors.g2_hat)])
    if in_plane_offset != 0.0:
        lam_bar = so3.exp_rodrigues(in_plane_offset * n) @ lam_bar
    Rn = lam_bar @ reference_triad.T
    F2d = modified_deformation_gradient(F, directors) @ Rn.T
    v2 = F2d @ F2d.T
    w, Q = np.linalg.eigh(v2)
    i_n = int(np.argmax(np.abs(Q.T @ n)))
    coeff = np.empty(3)
    for i in range(3):
        if i == i_n:
            coeff[i] = 1.0  # map n -> n
        else:
            if w[i] < DEGENERATE_TOL**2:
                raise SingularStretch("in-plane stretch singular")
            coeff[i] = 1.0 / np.sqrt(w[i])
    v_inv = (Q * coeff) @ Q.T
    R2d = v_inv @ F2d
    return R2d @ Rn @ reference_triad


def solid_triad(kind: str, F, reference_triad):
    """Dispatch by config string; 'ort' is a coupling mode, not a constructor."""
    if kind == "ort":
        raise ValueError("'ort' emits fix2+fix3 constraint sets; not a single triad")
    if kind == "pol":
        return triad_pol(F, reference_triad)
    return triad_and_derivative(kind, F, _NO_DIRECTIONS, reference_triad)[0]


def constraint_kinds(kind: str):
    """Constraint sets a coupling mode applies (ort doubles up)."""
    if kind not in TRIAD_KINDS:
        raise ValueError(f"unknown solid triad kind: {kind!r}")
    return ("fix2", "fix3") if kind == "ort" else (kind,)


# ---------------------------------------------------------------------------

def solid_spin_linearization(kind, element, state, point, reference_triad):
    """Solid rotation vector and its linearization at one material point.

    Returns (psi_S, dpsi_dd, spin_map): psi_S = rv(Lambda_S) relative to the
    global frame; dpsi_dd (3 x 24) the additive derivative with respect to
    the element displacement vector; spin_map (3 x 24) maps nodal
    displacement increments to the solid spin vector,
    delta theta_S = spin_map . delta d, with spin_map = T^{-1}(psi_S) dpsi_dd.
    """
    from .solid_fem import _material_gradients

    _, dn_dx, _ = _material_gradients(element, *point)
    u = state.displacements[element.node_ids]
    F = np.eye(3) + u.T @ dn_dx
    dF = np.zeros((24, 3, 3))
    for a in range(8):
        for j in range(3):
            dF[3 * a + j, j, :] = dn_dx[a].real
    lam, dlam = triad_and_derivative(kind, F, dF, reference_triad)
    psi = so3.log_spurrier(lam)
    spin = np.einsum("kil,jl->kij", dlam, lam)  # dlam[k] lam^T
    spin_map = 0.5 * np.stack(
        [
            spin[:, 2, 1] - spin[:, 1, 2],
            spin[:, 0, 2] - spin[:, 2, 0],
            spin[:, 1, 0] - spin[:, 0, 1],
        ]
    )
    dpsi_dd = so3.transformation_matrix(psi) @ spin_map
    return psi, dpsi_dd, spin_map
