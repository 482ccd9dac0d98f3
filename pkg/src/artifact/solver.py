"""Quasi-static solution driver for coupled beam/solid models.

Global DOF layout: solid displacements first (3 per node), then per beam node
[position(3), tangent(3), rotation(3)] and per beam element the mid-node
rotation (3).  Rotation DOFs are spin increments applied multiplicatively;
everything else is additive.  Lagrange multipliers never enter the global
vector: they are eliminated through the weighted penalty regularization and
their stiffness contributions are added as condensed blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from . import analysis
from . import beam_fem as bf
from . import coupling as cp
from . import solid_fem as sf
from .solid_triads import constraint_kinds


class DofMapMismatch(ValueError):
    """State or block dimensions disagree with the assembled DOF map."""


@dataclass
class NewtonSettings:
    tol: float = 1e-9
    max_iter: int = 25
    divergence: float = 1e6  # failure when the norm exceeds this times max(first, 1)
    # recompute the coupling pair tangents only every k-th iteration (the
    # residual stays exact, so the converged state is unaffected)
    rot_tangent_every: int = 1

    def __post_init__(self):
        if self.tol <= 0.0 or self.max_iter < 1:
            raise ValueError("need tol > 0 and max_iter >= 1")
        if self.rot_tangent_every < 1:
            raise ValueError("rot_tangent_every must be >= 1")


@dataclass
class LoadProgram:
    """Per-step scale factors applied to all loads and Dirichlet targets."""

    scales: np.ndarray

    def __post_init__(self):
        self.scales = np.atleast_1d(np.asarray(self.scales, dtype=float))

    @classmethod
    def ramp(cls, n_steps: int) -> "LoadProgram":
        if n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        return cls(np.linspace(1.0 / n_steps, 1.0, n_steps))

    @property
    def n_steps(self) -> int:
        return self.scales.size


@dataclass
class SolidPointMoment:
    """Point moment applied to the solid through the spin map (deformation
    dependent, re-evaluated every iteration)."""

    point: np.ndarray
    moment: np.ndarray
    kind: str = "avg"
    reference_triad: Optional[np.ndarray] = None


@dataclass
class CoupledModel:
    solid: sf.SolidMesh
    material: sf.SVKMaterial
    beam: Optional[bf.BeamMesh] = None
    coupling: Optional[cp.PenaltyParams] = None
    solid_point_moments: list = field(default_factory=list)


@dataclass
class ModelState:
    solid: sf.SolidState
    beam: Optional[bf.BeamState] = None

    def copy(self) -> "ModelState":
        beam = None
        if self.beam is not None:
            beam = bf.BeamState(
                pos_disp=self.beam.pos_disp.copy(),
                tan_disp=self.beam.tan_disp.copy(),
                psi=self.beam.psi.copy(),
                psi_mid=self.beam.psi_mid.copy(),
            )
        return ModelState(sf.SolidState(self.solid.displacements.copy()), beam)


@dataclass
class Failure:
    reason: str  # "diverged" | "max_iter" | "singular_matrix"
    trace: list
    message: str = ""


@dataclass
class StepInfo:
    iterations: int
    trace: list  # combined residual norms, one per evaluation
    reactions: np.ndarray  # full-length vector, nonzero at constrained DOFs
    scale: float


# ---------------------------------------------------------------------------
# system construction
# ---------------------------------------------------------------------------


@dataclass
class CoupledSystem:
    model: CoupledModel
    n_dofs: int
    n_solid_dofs: int
    beam_offset: int
    mid_offset: int
    solid_elem_dofs: np.ndarray  # (ne, 24) int
    beam_elem_dofs: np.ndarray  # (ne_b, 21) int
    force_rows: np.ndarray  # bool mask
    f_ext_unit: np.ndarray
    dirichlet_idx: np.ndarray  # translational constrained DOFs
    dirichlet_val: np.ndarray
    rot_bcs: list  # (node, comp, value, global dof)
    constrained: np.ndarray  # all constrained DOFs (sorted)
    free: np.ndarray  # complementary index array
    point_moments: list  # (SolidPointMoment, (element, image))
    # coupling blocks (None when not applicable)
    pair_caches: list
    pair_rot_dofs: list  # per pair: (33,) global columns [9 rot | 24 solid]
    C_trans: Optional[sparse.csr_matrix]
    W_trans: Optional[sparse.dia_matrix]
    K_trans: Optional[sparse.csr_matrix]
    rot_kinds: tuple
    W_rot: Optional[sparse.dia_matrix]
    surface_pairs: list
    surface_dofs: list  # per pair: (45,) global columns


def reference_state(model: CoupledModel) -> ModelState:
    beam = bf.BeamState.zero(model.beam) if model.beam is not None else None
    return ModelState(sf.SolidState.zero(model.solid), beam)


def _beam_node_dofs(offset, node):
    base = offset + 9 * node
    return np.arange(base, base + 9)


def build_system(model: CoupledModel) -> CoupledSystem:
    solid, beam = model.solid, model.beam
    n_s = 3 * solid.n_nodes
    if np.max(solid.elements) >= solid.n_nodes:
        raise DofMapMismatch("solid connectivity exceeds the node count")
    nb = beam.n_nodes if beam is not None else 0
    ne_b = beam.n_elements if beam is not None else 0
    beam_offset = n_s
    mid_offset = n_s + 9 * nb
    n_dofs = n_s + 9 * nb + 3 * ne_b

    solid_elem_dofs = (3 * solid.elements[:, :, None]
                       + np.arange(3)).reshape(-1, 24)

    beam_elem_dofs = np.zeros((ne_b, 21), dtype=int)
    for e in range(ne_b):
        i, j = beam.elements[e]
        di, dj = _beam_node_dofs(beam_offset, i), _beam_node_dofs(beam_offset, j)
        beam_elem_dofs[e, 0:6] = di[0:6]
        beam_elem_dofs[e, 6:12] = dj[0:6]
        beam_elem_dofs[e, 12:15] = di[6:9]
        beam_elem_dofs[e, 15:18] = dj[6:9]
        beam_elem_dofs[e, 18:21] = np.arange(mid_offset + 3 * e,
                                             mid_offset + 3 * e + 3)

    # force rows: solid DOFs and beam positions; tangent/rotation rows carry
    # moment-like units (work-conjugate to dimensionless/spin variations)
    force_rows = np.zeros(n_dofs, dtype=bool)
    force_rows[:n_s] = True
    for i in range(nb):
        force_rows[beam_offset + 9 * i:beam_offset + 9 * i + 3] = True

    # constant external loads (scaled per step)
    f_ext = np.zeros(n_dofs)
    f_ext[:n_s] += sf.apply_neumann(solid)
    if beam is not None:
        for pf in beam.point_forces:
            f_ext[beam_offset + 9 * pf.node:beam_offset + 9 * pf.node + 3] += \
                np.asarray(pf.force, dtype=float)
        for pm in beam.point_moments:
            f_ext[beam_offset + 9 * pm.node + 6:beam_offset + 9 * pm.node + 9] += \
                np.asarray(pm.moment, dtype=float)
        for dm in beam.distributed_moments:
            targets = range(ne_b) if dm.element is None else [dm.element]
            for e in targets:
                load = bf.element_distributed_moment_load(
                    beam.element(e, bf.BeamState.zero(beam)), dm.moment)
                np.add.at(f_ext, beam_elem_dofs[e], load)

    # Dirichlet data
    idx, val, rot_bcs = [], [], []
    for bc in solid.dirichlet:
        idx.append(3 * bc.node + bc.dof)
        val.append(bc.value)
    if beam is not None:
        for bc in beam.dirichlet:
            base = beam_offset + 9 * bc.node
            if bc.field == "pos":
                idx.append(base + bc.dof)
                val.append(bc.value)
            elif bc.field == "tan":
                idx.append(base + 3 + bc.dof)
                val.append(bc.value)
            elif bc.field == "rot":
                rot_bcs.append((bc.node, bc.dof, bc.value, base + 6 + bc.dof))
            else:
                raise ValueError(f"unknown beam BC field {bc.field!r}")
    dirichlet_idx = np.asarray(idx, dtype=int)
    dirichlet_val = np.asarray(val, dtype=float)
    constrained = np.unique(np.concatenate(
        [dirichlet_idx, [b[3] for b in rot_bcs]]).astype(int)
    ) if (len(idx) + len(rot_bcs)) else np.empty(0, dtype=int)
    free_mask = np.ones(n_dofs, dtype=bool)
    free_mask[constrained] = False
    free = np.nonzero(free_mask)[0]

    # solid point moments: locate the material points once
    point_moments = []
    for pm in model.solid_point_moments:
        hit = cp.find_containing_element(solid, np.asarray(pm.point, float))
        if hit is None:
            raise analysis.PointNotLocated(f"moment point {pm.point}")
        point_moments.append((pm, hit))

    # coupling structures
    pair_caches: list = []
    pair_rot_dofs: list = []
    C_trans = W_trans = K_trans = None
    rot_kinds: tuple = ()
    W_rot = None
    surface_pairs: list = []
    surface_dofs: list = []

    params = model.coupling
    if beam is not None and params is not None:
        if params.mode in ("BTS-TRANS", "BTS-FULL-GPTS", "BTS-FULL-MORTAR"):
            pairs = cp.build_pairs(beam, solid, params)
            rows, cols, vals = [], [], []
            kappa = np.zeros(nb)
            for pair in pairs:
                cache = cp.build_pair_cache(pair, beam, solid)
                pair_caches.append(cache)
                D, M, kap = cp.translational_mortar(cache)
                i, j = beam.elements[pair.beam_element]
                kappa[i] += kap[0]
                kappa[j] += kap[1]
                mult = np.concatenate([3 * i + np.arange(3),
                                       3 * j + np.arange(3)])
                line = beam_elem_dofs[pair.beam_element, 0:12]
                ed = solid_elem_dofs[pair.solid_element]
                for block, cdofs in ((D, line), (-M, ed)):
                    nc = block.shape[1]
                    rows.extend(mult[np.repeat(np.arange(6), nc)])
                    cols.extend(cdofs[np.tile(np.arange(nc), 6)])
                    vals.extend(block.ravel())
                pair_rot_dofs.append(np.concatenate(
                    [beam_elem_dofs[pair.beam_element, 12:21], ed]))
            C_trans = sparse.coo_matrix(
                (vals, (rows, cols)), shape=(3 * nb, n_dofs)).tocsr()
            # probe call reports unsupported multiplier nodes once, at build
            _, active = cp.penalty_regularize(
                np.zeros(3 * nb), kappa, params.eps_r)
            weights = np.zeros(3 * nb)
            weights[np.repeat(active, 3)] = params.eps_r / np.repeat(
                kappa[active], 3)
            W_trans = sparse.diags(weights)
            K_trans = (C_trans.T @ W_trans @ C_trans).tocsr()
            if params.mode == "BTS-FULL-MORTAR":
                rot_kinds = constraint_kinds(params.triad)
                w_rot = np.zeros(3 * nb)
                w_rot[np.repeat(active, 3)] = params.eps_theta / np.repeat(
                    kappa[active], 3)
                W_rot = sparse.diags(w_rot)
            elif params.mode == "BTS-FULL-GPTS":
                rot_kinds = constraint_kinds(params.triad)
        elif params.mode == "REF-2D3D":
            surface_pairs, _ = cp.build_surface_pairs(beam, solid, params)
            for sp in surface_pairs:
                surface_dofs.append(np.concatenate(
                    [beam_elem_dofs[sp.beam_element, 0:12],
                     beam_elem_dofs[sp.beam_element, 12:21],
                     solid_elem_dofs[sp.solid_element]]))

    return CoupledSystem(
        model=model,
        n_dofs=n_dofs,
        n_solid_dofs=n_s,
        beam_offset=beam_offset,
        mid_offset=mid_offset,
        solid_elem_dofs=solid_elem_dofs,
        beam_elem_dofs=beam_elem_dofs,
        force_rows=force_rows,
        f_ext_unit=f_ext,
        dirichlet_idx=dirichlet_idx,
        dirichlet_val=dirichlet_val,
        rot_bcs=rot_bcs,
        constrained=constrained,
        free=free,
        point_moments=point_moments,
        pair_caches=pair_caches,
        pair_rot_dofs=pair_rot_dofs,
        C_trans=C_trans,
        W_trans=W_trans,
        K_trans=K_trans,
        rot_kinds=rot_kinds,
        W_rot=W_rot,
        surface_pairs=surface_pairs,
        surface_dofs=surface_dofs,
    )


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def _displacement_vector(system: CoupledSystem, state: ModelState):
    """Global vector of additive displacements (rotation slots zero)."""
    x = np.zeros(system.n_dofs)
    x[:system.n_solid_dofs] = state.solid.displacements.ravel()
    beam = system.model.beam
    if beam is not None:
        nb = beam.n_nodes
        block = np.zeros((nb, 9))
        block[:, 0:3] = state.beam.pos_disp
        block[:, 3:6] = state.beam.tan_disp
        x[system.beam_offset:system.beam_offset + 9 * nb] = block.ravel()
    return x


def _check_state(system: CoupledSystem, state: ModelState):
    if 3 * state.solid.displacements.shape[0] != system.n_solid_dofs:
        raise DofMapMismatch("solid state size differs from the DOF map")
    beam = system.model.beam
    if beam is not None:
        if state.beam is None or state.beam.pos_disp.shape[0] != beam.n_nodes:
            raise DofMapMismatch("beam state size differs from the DOF map")


def assemble(system: CoupledSystem, state: ModelState, scale: float,
             need_tangent: bool = True, rot_cache: Optional[dict] = None):
    """Global residual R = f_int + f_coupling - scale*f_ext and tangent.

    rot_cache (a mutable dict) opts into reuse of the coupling pair
    tangents: when it holds "K_rot" from an earlier call that block is
    added unchanged, otherwise it is computed and stored.  The residual is
    always evaluated exactly.
    """
    _check_state(system, state)
    model = system.model
    n = system.n_dofs
    R = np.zeros(n)
    rows, cols, vals = [], [], []
    reuse_rot = (need_tangent and rot_cache is not None
                 and "K_rot" in rot_cache)
    build_rot = need_tangent and not reuse_rot
    rot_rows, rot_cols, rot_vals, rot_extra = [], [], [], []

    def scatter(dofs, f, K):
        np.add.at(R, dofs, f)
        if need_tangent and K is not None:
            r, c = np.meshgrid(dofs, dofs, indexing="ij")
            rows.append(r.ravel())
            cols.append(c.ravel())
            vals.append(np.asarray(K, dtype=float).ravel())

    def scatter_rot(dofs, f, K):
        np.add.at(R, dofs, f)
        if K is not None:
            r, c = np.meshgrid(dofs, dofs, indexing="ij")
            rot_rows.append(r.ravel())
            rot_cols.append(c.ravel())
            rot_vals.append(np.asarray(K, dtype=float).ravel())

    # solid internal forces
    fs, Ks = sf.batch_internal_force_and_tangent(
        model.solid, model.material, state.solid, need_tangent=need_tangent)
    np.add.at(R, system.solid_elem_dofs.ravel(), fs.ravel())
    if need_tangent:
        ed = system.solid_elem_dofs
        rows.append(np.repeat(ed, 24, axis=1).ravel())
        cols.append(np.tile(ed, (1, 24)).ravel())
        vals.append(Ks.ravel())

    # beam internal forces
    beam = model.beam
    if beam is not None:
        for e in range(beam.n_elements):
            elem = beam.element(e, state.beam)
            if need_tangent:
                f, K = bf.element_internal_force_and_tangent(elem)
            else:
                f, K = bf.element_internal_force(elem), None
            scatter(system.beam_elem_dofs[e], f, K)

    # constant external loads
    R -= scale * system.f_ext_unit

    # deformation-dependent point moments on the solid
    for pm, location in system.point_moments:
        e, node_ids, f, K = analysis.point_moment_force_and_tangent(
            model.solid, state.solid, pm.point, pm.moment, pm.kind,
            pm.reference_triad, location=location)
        dofs = system.solid_elem_dofs[e]
        np.add.at(R, dofs, -scale * f)
        if need_tangent:
            r, c = np.meshgrid(dofs, dofs, indexing="ij")
            rows.append(r.ravel())
            cols.append(c.ravel())
            vals.append((-scale * K).ravel())

    # coupling terms
    params = model.coupling
    K_extra = []
    if system.C_trans is not None:
        x = _displacement_vector(system, state)
        R += system.K_trans @ x
        if need_tangent:
            K_extra.append(system.K_trans)

    if params is not None and system.pair_caches and system.rot_kinds:
        if params.mode == "BTS-FULL-GPTS":
            for cache, rdofs in zip(system.pair_caches, system.pair_rot_dofs):
                elem = beam.element(cache.beam_element, state.beam)
                triads = elem.current_triads()
                u = state.solid.displacements[cache.node_ids].ravel()
                for kind in system.rot_kinds:
                    if build_rot:
                        f_b, f_s, Kp = cp.gpts_rotational_residual_and_tangent(
                            cache, triads, u, kind, params.eps_theta)
                    else:
                        f_b, f_s = cp.gpts_rotational_residual(
                            cache, triads, u, kind, params.eps_theta)
                        Kp = None
                    scatter_rot(rdofs, np.concatenate([f_b, f_s]), Kp)
        elif params.mode == "BTS-FULL-MORTAR":
            nb = beam.n_nodes
            for kind in system.rot_kinds:
                g = np.zeros(3 * nb)
                terms = []
                for cache, rdofs in zip(system.pair_caches,
                                        system.pair_rot_dofs):
                    elem = beam.element(cache.beam_element, state.beam)
                    triads = elem.current_triads()
                    u = state.solid.displacements[cache.node_ids].ravel()
                    g6, C_b, C_s, _ = cp.mortar_rotational_terms(
                        cache, triads, u, kind)
                    i, j = beam.elements[cache.beam_element]
                    mult = np.concatenate([3 * i + np.arange(3),
                                           3 * j + np.arange(3)])
                    np.add.at(g, mult, g6)
                    terms.append((cache, rdofs, mult, triads, u, C_b, C_s))
                lam = system.W_rot @ g
                c_rows, c_cols, c_vals = [], [], []
                g_rows, g_cols, g_vals = [], [], []
                for cache, rdofs, mult, triads, u, C_b, C_s in terms:
                    C_pair = np.vstack([C_b, C_s])  # (33, 6)
                    R[rdofs] += C_pair @ lam[mult]
                    if build_rot:
                        r, c = np.meshgrid(rdofs, mult, indexing="ij")
                        c_rows.append(r.ravel())
                        c_cols.append(c.ravel())
                        c_vals.append(C_pair.ravel())
                        G, K_f = cp.mortar_rotational_linearization(
                            cache, triads, u, kind, lam[mult])
                        r, c = np.meshgrid(rdofs, rdofs, indexing="ij")
                        rot_rows.append(r.ravel())
                        rot_cols.append(c.ravel())
                        rot_vals.append(K_f.ravel())
                        r, c = np.meshgrid(mult, rdofs, indexing="ij")
                        g_rows.append(r.ravel())
                        g_cols.append(c.ravel())
                        g_vals.append(G.ravel())
                if build_rot:
                    C_g = sparse.coo_matrix(
                        (np.concatenate(c_vals),
                         (np.concatenate(c_rows), np.concatenate(c_cols))),
                        shape=(n, 3 * nb)).tocsr()
                    G_g = sparse.coo_matrix(
                        (np.concatenate(g_vals),
                         (np.concatenate(g_rows), np.concatenate(g_cols))),
                        shape=(3 * nb, n)).tocsr()
                    rot_extra.append((C_g @ system.W_rot @ G_g).tocsr())

    if system.surface_pairs:
        eps = params.eps_r
        for sp, dofs in zip(system.surface_pairs, system.surface_dofs):
            elem = beam.element(sp.beam_element, state.beam)
            triads = elem.current_triads()
            u = state.solid.displacements[sp.node_ids].ravel()
            X_solid = model.solid.nodes[sp.node_ids]
            if build_rot:
                f_b, f_s, Kp = cp.surface_pair_residual_and_tangent(
                    sp, elem.d, triads, u, X_solid, eps)
            else:
                f_b, f_s = cp.surface_pair_residual(sp, elem.d, triads, u,
                                                    X_solid, eps)
                Kp = None
            scatter_rot(dofs, np.concatenate([f_b, f_s]), Kp)

    if not need_tangent:
        return R, None
    if rows:
        K = sparse.coo_matrix(
            (np.concatenate(vals),
             (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n)).tocsr()
    else:
        K = sparse.csr_matrix((n, n))
    for extra in K_extra:
        K = K + extra
    if reuse_rot:
        K_rot = rot_cache["K_rot"]
    else:
        K_rot = sparse.csr_matrix((n, n))
        if rot_rows:
            K_rot = sparse.coo_matrix(
                (np.concatenate(rot_vals),
                 (np.concatenate(rot_rows), np.concatenate(rot_cols))),
                shape=(n, n)).tocsr()
        for extra in rot_extra:
            K_rot = K_rot + extra
        if rot_cache is not None:
            rot_cache["K_rot"] = K_rot
    if K_rot.nnz:
        K = K + K_rot
    return R, K


# ---------------------------------------------------------------------------
# Newton iteration
# ---------------------------------------------------------------------------


def _apply_lift(system: CoupledSystem, state: ModelState, scale: float):
    n_s = system.n_solid_dofs
    disp = state.solid.displacements.ravel()
    for dof, value in zip(system.dirichlet_idx, system.dirichlet_val):
        if dof < n_s:
            disp[dof] = scale * value
        else:
            local = dof - system.beam_offset
            node, comp = divmod(local, 9)
            if comp < 3:
                state.beam.pos_disp[node, comp] = scale * value
            else:
                state.beam.tan_disp[node, comp - 3] = scale * value
    state.solid.displacements = disp.reshape(-1, 3)
    # rotation values are rotation-vector offsets from the reference triad
    beam = system.model.beam
    for node, comp, value, _ in system.rot_bcs:
        state.beam.psi[node, comp] = (beam.psi_nodes_ref[node, comp]
                                      + scale * value)


def _apply_update(system: CoupledSystem, state: ModelState, dx: np.ndarray):
    n_s = system.n_solid_dofs
    state.solid.displacements = (state.solid.displacements
                                 + dx[:n_s].reshape(-1, 3))
    beam = system.model.beam
    if beam is None:
        return
    nb = beam.n_nodes
    block = dx[system.beam_offset:system.beam_offset + 9 * nb].reshape(nb, 9)
    state.beam.pos_disp += block[:, 0:3]
    state.beam.tan_disp += block[:, 3:6]
    for i in range(nb):
        spin = block[i, 6:9]
        if np.any(spin):
            state.beam.psi[i] = bf.update_rotation_vector(state.beam.psi[i],
                                                          spin)
    mid = dx[system.mid_offset:].reshape(-1, 3)
    for e in range(beam.n_elements):
        if np.any(mid[e]):
            state.beam.psi_mid[e] = bf.update_rotation_vector(
                state.beam.psi_mid[e], mid[e])


def _residual_scales(system: CoupledSystem, state: ModelState, scale: float):
    f = scale * system.f_ext_unit.copy()
    for pm, location in system.point_moments:
        _, _, fe = analysis.point_moment_element_force(
            system.model.solid, state.solid, pm.point, pm.moment, pm.kind,
            pm.reference_triad, location=location)
        e = location[0]
        np.add.at(f, system.solid_elem_dofs[e], scale * fe)
    s_f = np.max(np.abs(f[system.force_rows])) if system.force_rows.any() \
        else 0.0
    moment_rows = ~system.force_rows
    s_m = np.max(np.abs(f[moment_rows])) if moment_rows.any() else 0.0
    return (s_f if s_f > 0.0 else 1.0), (s_m if s_m > 0.0 else 1.0)


def _combined_norm(system: CoupledSystem, R: np.ndarray, scales):
    s_f, s_m = scales
    free = system.free
    force = system.force_rows[free]
    r = R[free]
    n_f = np.max(np.abs(r[force])) if force.any() else 0.0
    n_m = np.max(np.abs(r[~force])) if (~force).any() else 0.0
    return max(n_f / s_f, n_m / s_m)


def solve_step(system: CoupledSystem, state: ModelState, load_scale: float,
               settings: Optional[NewtonSettings] = None):
    """One quasi-static step; mutates state.  Returns StepInfo or Failure."""
    if settings is None:
        settings = NewtonSettings()
    _apply_lift(system, state, load_scale)
    scales = _residual_scales(system, state, load_scale)
    trace = []
    free = system.free
    rot_cache = {} if settings.rot_tangent_every > 1 else None
    it = 0
    while True:
        if rot_cache is not None and it % settings.rot_tangent_every == 0:
            rot_cache.pop("K_rot", None)
        R, K = assemble(system, state, load_scale, need_tangent=True,
                        rot_cache=rot_cache)
        norm = _combined_norm(system, R, scales)
        trace.append(norm)
        if norm < settings.tol:
            reactions = np.zeros(system.n_dofs)
            reactions[system.constrained] = R[system.constrained]
            return StepInfo(iterations=it, trace=trace, reactions=reactions,
                            scale=load_scale)
        if it >= settings.max_iter:
            return Failure("max_iter", trace,
                           f"no convergence in {settings.max_iter} iterations")
        if it > 0 and norm > settings.divergence * max(trace[0], 1.0):
            return Failure("diverged", trace, f"residual grew to {norm:.3e}")
        K_ff = K[free][:, free]
        try:
            lu = splu(K_ff.tocsc())
            dx_free = lu.solve(-R[free])
        except RuntimeError as exc:
            return Failure("singular_matrix", trace, str(exc))
        if not np.all(np.isfinite(dx_free)):
            return Failure("singular_matrix", trace, "non-finite solution")
        dx = np.zeros(system.n_dofs)
        dx[free] = dx_free
        _apply_update(system, state, dx)
        it += 1


@dataclass
class ProgramResult:
    states: list  # converged state copies, one per completed step
    infos: list
    failure: Optional[Failure] = None

    @property
    def final_state(self):
        return self.states[-1] if self.states else None


def run_program(system: CoupledSystem, program: LoadProgram,
                settings: Optional[NewtonSettings] = None,
                initial_state: Optional[ModelState] = None,
                on_step: Optional[Callable] = None) -> ProgramResult:
    """Sequential load stepping; aborts on failure, keeping partial history."""
    state = (initial_state.copy() if initial_state is not None
             else reference_state(system.model))
    states, infos = [], []
    for k, scale in enumerate(program.scales):
        result = solve_step(system, state, float(scale), settings)
        if isinstance(result, Failure):
            return ProgramResult(states, infos, failure=result)
        states.append(state.copy())
        infos.append(result)
        if on_step is not None:
            on_step(k, states[-1], result)
    return ProgramResult(states, infos)


def reaction_summary(system: CoupledSystem, info: StepInfo):
    """Total reaction force and moment components over constrained DOFs."""
    r = info.reactions
    force = np.zeros(3)
    moment = np.zeros(3)
    for dof in system.constrained:
        comp = dof % 3
        if system.force_rows[dof]:
            force[comp] += r[dof]
        else:
            moment[comp] += r[dof]
    return force, moment


# ---------------------------------------------------------------------------
# verification helpers
# ---------------------------------------------------------------------------


def _is_rotation_dof(system: CoupledSystem, dof: int):
    if dof < system.n_solid_dofs or system.model.beam is None:
        return None
    if dof >= system.mid_offset:
        e, comp = divmod(dof - system.mid_offset, 3)
        return ("mid", e, comp)
    node, comp = divmod(dof - system.beam_offset, 9)
    if comp >= 6:
        return ("node", node, comp - 6)
    return None


def _perturbed(system: CoupledSystem, state: ModelState, dof: int, h: float):
    out = state.copy()
    rot = _is_rotation_dof(system, dof)
    if rot is None:
        dx = np.zeros(system.n_dofs)
        dx[dof] = h
        _apply_update(system, out, dx)
    else:
        kind, index, comp = rot
        spin = np.zeros(3)
        spin[comp] = h
        if kind == "node":
            out.beam.psi[index] = bf.update_rotation_vector(
                out.beam.psi[index], spin)
        else:
            out.beam.psi_mid[index] = bf.update_rotation_vector(
                out.beam.psi_mid[index], spin)
    return out


def finite_difference_tangent_check(system: CoupledSystem, state: ModelState,
                                    scale: float, n_cols: int = 20,
                                    h: float = 1e-6, seed: int = 0) -> float:
    """Max relative error between tangent columns and central differences.

    Rotation DOFs are perturbed multiplicatively, matching the meaning of the
    tangent columns.
    """
    rng = np.random.default_rng(seed)
    _, K = assemble(system, state, scale, need_tangent=True)
    dofs = rng.choice(system.n_dofs, size=min(n_cols, system.n_dofs),
                      replace=False)
    worst = 0.0
    for dof in dofs:
        Rp, _ = assemble(system, _perturbed(system, state, dof, h), scale,
                         need_tangent=False)
        Rm, _ = assemble(system, _perturbed(system, state, dof, -h), scale,
                         need_tangent=False)
        fd = (Rp - Rm) / (2.0 * h)
        col = np.asarray(K[:, dof].todense()).ravel()
        denom = max(np.linalg.norm(fd), 1e-12)
        worst = max(worst, np.linalg.norm(col - fd) / denom)
    return worst


def convergence_order(trace, floor: float = 0.0) -> float:
    """Estimated order from the last three residual norms above `floor`.

    The floor screens out evaluations already at machine-precision level,
    whose ratios no longer carry convergence-rate information.
    """
    norms = [t for t in trace if t > floor]
    if len(norms) < 3:
        return float("nan")
    r0, r1, r2 = norms[-3:]
    if r1 >= r0 or r2 >= r1:
        return 0.0
    return float(np.log(r2 / r1) / np.log(r1 / r0))
