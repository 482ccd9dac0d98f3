"""L2 errors, energy split, point moments, and the in-plane angle oracle."""

import numpy as np
import pytest

from artifact import analysis as an
from artifact import beam_fem as bf
from artifact import so3
from artifact import solid_fem as sf
from artifact.solid_triads import TRIAD_KINDS

from test_coupling import box_mesh, straight_beam

RNG = np.random.default_rng(77)


def affine_state(mesh, A, b):
    return sf.SolidState(mesh.nodes @ A.T + b)


# ---------------------------------------------------------------------------
# L2 error
# ---------------------------------------------------------------------------


class TestL2Error:
    def test_identical_fields_zero(self):
        mesh = box_mesh(2, 2, 2)
        state = sf.SolidState(0.1 * RNG.standard_normal(mesh.nodes.shape))
        comp = an.FieldComparison(mesh, state, mesh, state)
        assert an.l2_displacement_error(comp, relative=False) == pytest.approx(
            0.0, abs=1e-14)

    def test_constant_offset(self):
        # affine fields are exact in both trilinear spaces: the difference is
        # exactly the constant c, so the absolute error equals |c|
        A = 0.1 * RNG.standard_normal((3, 3))
        b = np.array([0.02, -0.01, 0.03])
        c = np.array([0.004, -0.002, 0.001])
        coarse = box_mesh(2, 2, 2)
        ref = box_mesh(3, 3, 3)
        comp = an.FieldComparison(
            coarse, sf.SolidState(coarse.nodes @ A.T + b + c),
            ref, affine_state(ref, A, b))
        err = an.l2_displacement_error(comp, relative=False)
        assert err == pytest.approx(np.linalg.norm(c), rel=1e-12)

        # relative form: |c| sqrt(V) / ||u_ref||_L2 with an independent
        # quadrature for the denominator
        xg, wg = np.polynomial.legendre.leggauss(4)
        pts = 0.5 * (xg + 1.0)
        ref2 = 0.0
        for x, wx in zip(pts, wg):
            for y, wy in zip(pts, wg):
                for z, wz in zip(pts, wg):
                    u = A @ [x, y, z] + b
                    ref2 += 0.125 * wx * wy * wz * (u @ u)
        expected = np.linalg.norm(c) / np.sqrt(ref2)
        err_rel = an.l2_displacement_error(comp, relative=True)
        assert err_rel == pytest.approx(expected, rel=1e-10)

    def test_manufactured_trilinear_field(self):
        # u = (xyz, 0, 0) lies in the trilinear space; against u_ref = 0 the
        # absolute error is sqrt(int (xyz)^2) = sqrt(1/27) on the unit cube
        coarse = box_mesh(2, 2, 2)
        u = np.zeros_like(coarse.nodes)
        u[:, 0] = coarse.nodes[:, 0] * coarse.nodes[:, 1] * coarse.nodes[:, 2]
        ref = box_mesh(1, 1, 1)
        comp = an.FieldComparison(coarse, sf.SolidState(u), ref,
                                  sf.SolidState.zero(ref))
        err = an.l2_displacement_error(comp, relative=False)
        assert err == pytest.approx(np.sqrt(1.0 / 27.0), rel=1e-12)

    def test_point_not_located(self):
        coarse = box_mesh(1, 1, 1, lx=2.0)  # extends past the reference mesh
        ref = box_mesh(1, 1, 1)
        comp = an.FieldComparison(coarse, sf.SolidState.zero(coarse), ref,
                                  sf.SolidState.zero(ref))
        with pytest.raises(an.PointNotLocated):
            an.l2_displacement_error(comp)


# ---------------------------------------------------------------------------
# energy decomposition
# ---------------------------------------------------------------------------


class TestEnergyDecomposition:
    def test_reference_state_zero(self):
        beam = straight_beam([0, 0, 0], [1, 0, 0], 3)
        parts = an.beam_energy_decomposition(beam, bf.BeamState.zero(beam))
        assert parts["total"] == 0.0

    def test_pure_stretch_only_tension(self):
        beam = straight_beam([0, 0, 0], [1, 0, 0], 3)
        eps = 0.02
        state = bf.BeamState(
            pos_disp=eps * beam.nodes,
            tan_disp=eps * beam.tangents,
            psi=beam.psi_nodes_ref.copy(),
            psi_mid=beam.psi_mid_ref.copy(),
        )
        parts = an.beam_energy_decomposition(beam, state)
        assert parts["tension"] > 0.0
        for key in ("shear", "torsion", "bending"):
            assert abs(parts[key]) < 1e-14 * parts["tension"]

    def test_split_sums_to_element_energy(self):
        beam = straight_beam([0, 0, 0], [1.5, 0, 0], 4)
        state = bf.BeamState(
            pos_disp=0.05 * RNG.standard_normal((beam.n_nodes, 3)),
            tan_disp=0.05 * RNG.standard_normal((beam.n_nodes, 3)),
            psi=beam.psi_nodes_ref + 0.2 * RNG.standard_normal((beam.n_nodes, 3)),
            psi_mid=beam.psi_mid_ref + 0.2 * RNG.standard_normal(
                (beam.n_elements, 3)),
        )
        parts = an.beam_energy_decomposition(beam, state)
        total = sum(bf.element_energy(beam.element(e, state))
                    for e in range(beam.n_elements))
        assert parts["total"] == pytest.approx(total, rel=1e-12)


# ---------------------------------------------------------------------------
# point moments on the solid
# ---------------------------------------------------------------------------


class TestPointMoment:
    def test_zero_moment(self):
        mesh = box_mesh(1, 1, 1)
        f = an.apply_point_moment_to_solid(mesh, sf.SolidState.zero(mesh),
                                           [0.5, 0.5, 0.5], np.zeros(3))
        np.testing.assert_allclose(f, 0.0)

    @pytest.mark.parametrize("kind", TRIAD_KINDS[:-1])
    def test_reference_resultant_equals_moment(self, kind):
        mesh = box_mesh(2, 2, 2)
        point = np.array([0.4, 0.55, 0.5])
        m = np.array([0.3, -0.2, 0.45])
        f = an.apply_point_moment_to_solid(mesh, sf.SolidState.zero(mesh),
                                           point, m, kind=kind)
        forces = f.reshape(-1, 3)
        np.testing.assert_allclose(forces.sum(axis=0), 0.0, atol=1e-12)
        torque = np.cross(mesh.nodes - point, forces).sum(axis=0)
        np.testing.assert_allclose(torque, m, rtol=1e-10, atol=1e-12)

    def test_virtual_work_identity_deformed(self):
        # finite-difference spin of the actual triad vs force virtual work
        mesh = box_mesh(1, 1, 1)
        u = 0.08 * RNG.standard_normal((8, 3))
        state = sf.SolidState(u)
        point = np.array([0.45, 0.5, 0.55])
        m = np.array([0.1, 0.25, -0.3])
        kind = "avg"
        f_global = an.apply_point_moment_to_solid(mesh, state, point, m,
                                                  kind=kind)
        from artifact.coupling import find_containing_element, project_to_solid
        from artifact.solid_triads import solid_triad

        e = find_containing_element(mesh, point)[0]
        elem = mesh.element(e)
        im = project_to_solid(elem, point)
        delta = RNG.standard_normal((8, 3))
        h = 1e-5  # central FD: truncation ~h^2, roundoff ~1e-16/h

        def triad(scale):
            st = sf.SolidState(u + scale * delta)
            F = sf.deformation_gradient(elem, st, *im)
            return solid_triad(kind, F, np.eye(3))

        spin = (triad(h) - triad(-h)) @ triad(0.0).T / (2.0 * h)
        dtheta = so3.axial(0.5 * (spin - spin.T))
        work_left = m @ dtheta
        work_right = f_global @ delta.ravel()
        assert work_left == pytest.approx(work_right, rel=1e-8)

    def test_point_outside_raises(self):
        mesh = box_mesh(1, 1, 1)
        with pytest.raises(an.PointNotLocated):
            an.apply_point_moment_to_solid(mesh, sf.SolidState.zero(mesh),
                                           [2.0, 0.5, 0.5], [1.0, 0, 0])

    def test_tangent_matches_finite_differences(self):
        mesh = box_mesh(1, 1, 1)
        u = 0.05 * RNG.standard_normal((8, 3))
        point = [0.5, 0.4, 0.6]
        m = [0.2, -0.1, 0.15]
        e, node_ids, f, K = an.point_moment_force_and_tangent(
            mesh, sf.SolidState(u), point, m)
        h = 1e-6
        K_fd = np.empty((24, 24))
        for col in range(24):
            up, um = u.copy().ravel(), u.copy().ravel()
            up[col] += h
            um[col] -= h
            _, _, fp = an.point_moment_element_force(
                mesh, sf.SolidState(up.reshape(8, 3)), point, m)
            _, _, fm = an.point_moment_element_force(
                mesh, sf.SolidState(um.reshape(8, 3)), point, m)
            K_fd[:, col] = (fp - fm) / (2.0 * h)
        assert np.linalg.norm(K - K_fd) / np.linalg.norm(K_fd) < 1e-5


# ---------------------------------------------------------------------------
# in-plane optimality oracle
# ---------------------------------------------------------------------------


class TestAppendixOracle:
    def test_isotropic_rotation(self):
        alpha = 0.7
        R = np.array([[np.cos(alpha), -np.sin(alpha)],
                      [np.sin(alpha), np.cos(alpha)]])
        assert an.appendix_a_oracle(1.3 * R) == pytest.approx(alpha, abs=1e-10)

    def test_pure_stretch_zero_angle(self):
        assert an.appendix_a_oracle(np.diag([1.4, 0.7])) == pytest.approx(
            0.0, abs=1e-10)

    def test_matches_polar_angle_random(self):
        hits = 0
        while hits < 20:
            F = np.eye(2) + 0.6 * RNG.uniform(-1.0, 1.0, (2, 2))
            if np.linalg.det(F) < 0.2:
                continue
            hits += 1
            theta = an.appendix_a_oracle(F)
            assert theta == pytest.approx(an.polar_in_plane_angle(F), abs=1e-8)

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            an.appendix_a_oracle(np.array([[1.0, 1.0], [1.0, 1.0]]))


# ---------------------------------------------------------------------------
# CSV emitters
# ---------------------------------------------------------------------------


class TestCsv:
    def test_table_round_trip(self, tmp_path):
        path = tmp_path / "table.csv"
        an.write_table(path, ["a", "b"], [[1, 2], [3, 4]], comment="note")
        lines = path.read_text().splitlines()
        assert lines[0] == "# note"
        assert lines[1] == "a,b"
        assert lines[2:] == ["1,2", "3,4"]

    def test_convergence_table(self, tmp_path):
        path = tmp_path / "conv.csv"
        an.write_convergence_table(path, [1.0, 0.5], [0.1, 0.02])
        text = path.read_text()
        assert "h_solid" in text and "0.02" in text
