"""Solid element tests: kinematics, SVK stress, tangents, surface loads."""

import numpy as np
import pytest

from artifact import solid_fem as sf


def unit_cube_mesh(y0=0.0, z0=0.0):
    """Single hex8 spanning [0,1] x [y0,y0+1] x [z0,z0+1]."""
    nodes = np.array(
        [
            [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
            [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
        ],
        dtype=float,
    )
    nodes[:, 1] += y0
    nodes[:, 2] += z0
    return sf.SolidMesh(nodes=nodes, elements=np.arange(8).reshape(1, 8))


def distorted_patch_mesh():
    """Two hexes sharing a warped interior face; valid Jacobians throughout."""
    mid = np.array(
        [[1.1, 0.0, -0.05], [0.9, 1.05, 0.0], [1.05, 0.95, 1.1], [0.95, -0.1, 0.9]]
    )
    nodes = np.array(
        [
            [0, 0, 0], [0, 1, 0], [0, 1, 1], [0, 0, 1],
            mid[0], mid[1], mid[2], mid[3],
            [2, 0, 0], [2, 1, 0], [2, 1, 1], [2, 0, 1],
        ],
        dtype=float,
    )
    elements = np.array(
        [
            [0, 4, 5, 1, 3, 7, 6, 2],
            [4, 8, 9, 5, 7, 11, 10, 6],
        ]
    )
    mesh = sf.SolidMesh(nodes=nodes, elements=elements)
    mesh.validate()
    return mesh


class TestShapeFunctions:
    def test_center(self):
        vals, _ = sf.shape_functions(0.0, 0.0, 0.0)
        np.testing.assert_allclose(vals, np.full(8, 0.125))

    def test_corners(self):
        for i, (x, e, z) in enumerate(
            [(-1, -1, -1), (1, -1, -1), (1, 1, -1), (-1, 1, -1),
             (-1, -1, 1), (1, -1, 1), (1, 1, 1), (-1, 1, 1)]
        ):
            vals, _ = sf.shape_functions(x, e, z)
            expect = np.zeros(8)
            expect[i] = 1.0
            np.testing.assert_allclose(vals, expect, atol=1e-15)

    def test_partition_of_unity(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            p = rng.uniform(-1, 1, size=3)
            vals, grads = sf.shape_functions(*p)
            assert abs(vals.sum() - 1.0) < 1e-14
            np.testing.assert_allclose(grads.sum(axis=0), np.zeros(3), atol=1e-14)

    def test_out_of_element(self):
        with pytest.raises(sf.OutOfElement):
            sf.shape_functions(1.0 + 1e-8, 0.0, 0.0)
        # within tolerance band is fine
        sf.shape_functions(1.0 + 1e-11, 0.0, 0.0)

    def test_gradient_fd(self):
        rng = np.random.default_rng(9)
        p = rng.uniform(-0.9, 0.9, size=3)
        _, grads = sf.shape_functions(*p)
        eps = 1e-7
        for k in range(3):
            dp = np.zeros(3)
            dp[k] = eps
            vp, _ = sf.shape_functions(*(p + dp))
            vm, _ = sf.shape_functions(*(p - dp))
            np.testing.assert_allclose(grads[:, k], (vp - vm) / (2 * eps), atol=1e-7)


class TestDeformationGradient:
    def test_zero_displacement(self):
        mesh = unit_cube_mesh()
        state = sf.SolidState.zero(mesh)
        F = sf.deformation_gradient(mesh.element(0), state, 0.3, -0.2, 0.7)
        np.testing.assert_allclose(F, np.eye(3), atol=1e-14)

    def test_affine_field(self):
        # u = A X  ->  F = I + A exactly, at every parametric point
        mesh = distorted_patch_mesh()
        rng = np.random.default_rng(12)
        A = 0.1 * rng.normal(size=(3, 3))
        state = sf.SolidState(mesh.nodes @ A.T)
        for e in range(mesh.n_elements):
            elem = mesh.element(e)
            for _ in range(5):
                p = rng.uniform(-1, 1, size=3)
                F = sf.deformation_gradient(elem, state, *p)
                np.testing.assert_allclose(F, np.eye(3) + A, atol=1e-13)

    def test_simple_shear(self):
        mesh = unit_cube_mesh()
        gamma = 0.37
        u = np.zeros((8, 3))
        u[:, 1] = gamma * mesh.nodes[:, 2]
        F = sf.deformation_gradient(mesh.element(0), sf.SolidState(u), 0.1, 0.5, -0.4)
        expect = np.eye(3)
        expect[1, 2] = gamma
        np.testing.assert_allclose(F, expect, atol=1e-14)

    def test_singular_jacobian(self):
        nodes = unit_cube_mesh().nodes.copy()
        nodes[:, 2] = 0.0  # flatten the hex into a plane
        mesh = sf.SolidMesh(nodes=nodes, elements=np.arange(8).reshape(1, 8))
        with pytest.raises(sf.SingularJacobian):
            sf.deformation_gradient(
                mesh.element(0), sf.SolidState.zero(mesh), 0.0, 0.0, 0.0
            )


class TestSVK:
    def test_undeformed(self):
        mat = sf.SVKMaterial(youngs_modulus=10.0, poisson_ratio=0.3)
        E = sf.green_lagrange(np.eye(3))
        np.testing.assert_array_equal(E, np.zeros((3, 3)))
        np.testing.assert_array_equal(sf.pk2_stress(mat, E), np.zeros((3, 3)))

    def test_rigid_rotation_stress_free(self):
        from artifact import so3

        R = so3.exp_rodrigues(np.array([0.4, -1.1, 0.8]))
        np.testing.assert_allclose(sf.green_lagrange(R), np.zeros((3, 3)), atol=1e-14)

    def test_uniaxial_nu0(self):
        Em, eps = 7.0, 0.05
        mat = sf.SVKMaterial(youngs_modulus=Em, poisson_ratio=0.0)
        F = np.diag([1 + eps, 1.0, 1.0])
        S = sf.pk2_stress(mat, sf.green_lagrange(F))
        assert abs(S[0, 0] - Em * (eps + eps**2 / 2)) < 1e-14
        assert np.max(np.abs(S - np.diag([S[0, 0], 0, 0]))) < 1e-14
        # nominal stress P = F S picks up the stretch factor
        P11 = (F @ S)[0, 0]
        assert abs(P11 - Em * (eps + 1.5 * eps**2 + 0.5 * eps**3)) < 1e-14

    def test_uniaxial_nu03(self):
        mat = sf.SVKMaterial(youngs_modulus=10.0, poisson_ratio=0.3)
        lam, mu = mat.lame
        assert abs(lam - 10.0 * 0.3 / (1.3 * 0.4)) < 1e-14
        assert abs(mu - 10.0 / 2.6) < 1e-14
        e = 0.02 + 0.02**2 / 2
        S = sf.pk2_stress(mat, np.diag([e, 0.0, 0.0]))
        assert abs(S[0, 0] - (lam + 2 * mu) * e) < 1e-14
        assert abs(S[1, 1] - lam * e) < 1e-14

    def test_material_validation(self):
        with pytest.raises(ValueError):
            sf.SVKMaterial(youngs_modulus=-1.0, poisson_ratio=0.0)
        with pytest.raises(ValueError):
            sf.SVKMaterial(youngs_modulus=1.0, poisson_ratio=0.5)


class TestElementForceTangent:
    mat = sf.SVKMaterial(youngs_modulus=10.0, poisson_ratio=0.3)

    def test_zero_displacement(self):
        mesh = unit_cube_mesh()
        f, K = sf.element_internal_force_and_tangent(
            mesh.element(0), self.mat, sf.SolidState.zero(mesh)
        )
        np.testing.assert_allclose(f, np.zeros(24), atol=1e-14)
        assert K.shape == (24, 24)

    def test_rigid_translation(self):
        mesh = distorted_patch_mesh()
        state = sf.SolidState(np.tile([0.3, -0.1, 0.9], (mesh.n_nodes, 1)))
        for e in range(2):
            f, _ = sf.element_internal_force_and_tangent(mesh.element(e), self.mat, state)
            np.testing.assert_allclose(f, np.zeros(24), atol=1e-13)

    def test_rigid_rotation(self):
        from artifact import so3

        mesh = distorted_patch_mesh()
        R = so3.exp_rodrigues(np.array([0.3, 0.5, -0.2]))
        state = sf.SolidState(mesh.nodes @ R.T - mesh.nodes)
        f, _ = sf.element_internal_force_and_tangent(mesh.element(0), self.mat, state)
        np.testing.assert_allclose(f, np.zeros(24), atol=1e-12)

    def test_uniaxial_nodal_forces(self):
        # constant P = F S on the unit cube -> corner forces P . grad-int
        Em, eps = 10.0, 0.04
        mat = sf.SVKMaterial(youngs_modulus=Em, poisson_ratio=0.0)
        mesh = unit_cube_mesh()
        state = sf.SolidState(np.column_stack(
            [eps * mesh.nodes[:, 0], np.zeros(8), np.zeros(8)]
        ))
        f, _ = sf.element_internal_force_and_tangent(mesh.element(0), mat, state)
        P11 = (1 + eps) * Em * (eps + eps**2 / 2)
        fx = f.reshape(8, 3)[:, 0]
        signs = np.array([-1, 1, 1, -1, -1, 1, 1, -1], dtype=float)
        np.testing.assert_allclose(fx, signs * P11 / 4, rtol=1e-13)

    def test_tangent_vs_fd(self):
        rng = np.random.default_rng(21)
        mesh = distorted_patch_mesh()
        disp = 0.1 * rng.normal(size=(mesh.n_nodes, 3))
        state = sf.SolidState(disp)
        elem = mesh.element(0)
        f0, K = sf.element_internal_force_and_tangent(elem, self.mat, state)
        K_fd = np.zeros((24, 24))
        eps = 1e-6
        for col in range(24):
            d = np.zeros((mesh.n_nodes, 3))
            d.reshape(-1)[3 * elem.node_ids[col // 3] + col % 3] = eps
            fp, _ = sf.element_internal_force_and_tangent(
                elem, self.mat, sf.SolidState(disp + d)
            )
            fm, _ = sf.element_internal_force_and_tangent(
                elem, self.mat, sf.SolidState(disp - d)
            )
            K_fd[:, col] = (fp - fm) / (2 * eps)
        assert np.linalg.norm(K - K_fd) / np.linalg.norm(K_fd) < 1e-6

    def test_tangent_symmetry(self):
        rng = np.random.default_rng(25)
        mesh = distorted_patch_mesh()
        state = sf.SolidState(0.2 * rng.normal(size=(mesh.n_nodes, 3)))
        _, K = sf.element_internal_force_and_tangent(mesh.element(1), self.mat, state)
        assert np.linalg.norm(K - K.T) / np.linalg.norm(K) < 1e-10

    def test_frame_indifference(self):
        from artifact import so3

        rng = np.random.default_rng(29)
        mesh = distorted_patch_mesh()
        disp = 0.15 * rng.normal(size=(mesh.n_nodes, 3))
        f, _ = sf.element_internal_force_and_tangent(
            mesh.element(0), self.mat, sf.SolidState(disp)
        )
        R = so3.exp_rodrigues(rng.normal(size=3))
        disp_rot = (mesh.nodes + disp) @ R.T - mesh.nodes
        f_rot, _ = sf.element_internal_force_and_tangent(
            mesh.element(0), self.mat, sf.SolidState(disp_rot)
        )
        np.testing.assert_allclose(
            f_rot.reshape(8, 3), f.reshape(8, 3) @ R.T, atol=1e-12
        )

    def test_batch_matches_single(self):
        rng = np.random.default_rng(31)
        mesh = distorted_patch_mesh()
        state = sf.SolidState(0.1 * rng.normal(size=(mesh.n_nodes, 3)))
        fb, Kb = sf.batch_internal_force_and_tangent(mesh, self.mat, state)
        for e in range(mesh.n_elements):
            f, K = sf.element_internal_force_and_tangent(mesh.element(e), self.mat, state)
            np.testing.assert_allclose(fb[e], f, atol=1e-13)
            np.testing.assert_allclose(Kb[e], K, atol=1e-12)

    def test_patch_constant_stress(self):
        # constant-strain field reproduces the exact constant PK2 everywhere
        rng = np.random.default_rng(35)
        mesh = distorted_patch_mesh()
        A = 0.05 * rng.normal(size=(3, 3))
        state = sf.SolidState(mesh.nodes @ A.T)
        S_exact = sf.pk2_stress(self.mat, sf.green_lagrange(np.eye(3) + A))
        for e in range(mesh.n_elements):
            elem = mesh.element(e)
            for x in sf.GAUSS2:
                for y in sf.GAUSS2:
                    for z in sf.GAUSS2:
                        F = sf.deformation_gradient(elem, state, x, y, z)
                        S = sf.pk2_stress(self.mat, sf.green_lagrange(F))
                        np.testing.assert_allclose(S, S_exact, atol=1e-12)


class TestApplyNeumann:
    def test_constant_traction(self):
        mesh = unit_cube_mesh()
        mesh.neumann.append(sf.NeumannBC(element=0, face=3, traction=[0.001, 0.0, 0.0]))
        f = sf.apply_neumann(mesh).reshape(8, 3)
        assert abs(f.sum(axis=0)[0] - 0.001) < 1e-15
        for n in (1, 2, 5, 6):  # nodes of the xi=+1 face
            np.testing.assert_allclose(f[n], [0.00025, 0, 0], atol=1e-18)
        for n in (0, 3, 4, 7):
            np.testing.assert_array_equal(f[n], np.zeros(3))

    def test_zero_traction(self):
        mesh = unit_cube_mesh()
        mesh.neumann.append(sf.NeumannBC(0, 1, [0.0, 0.0, 0.0]))
        np.testing.assert_array_equal(sf.apply_neumann(mesh), np.zeros(24))

    def test_torsional_traction_torque(self):
        # tau = 0.05 (-z e2 + y e3) on the centered unit end face:
        # torque about x is 0.05 * integral(y^2 + z^2) dA = 0.05/6
        mesh = unit_cube_mesh(y0=-0.5, z0=-0.5)
        mesh.neumann.append(
            sf.NeumannBC(0, 3, lambda X: 0.05 * np.array([0.0, -X[2], X[1]]))
        )
        f = sf.apply_neumann(mesh).reshape(8, 3)
        np.testing.assert_allclose(f.sum(axis=0), np.zeros(3), atol=1e-15)
        torque = np.sum(np.cross(mesh.nodes, f), axis=0)
        np.testing.assert_allclose(torque, [0.05 / 6, 0.0, 0.0], atol=1e-15)

    def test_area_scaling_on_distorted_face(self):
        # constant traction on a slanted face integrates to traction * area
        mesh = distorted_patch_mesh()
        mesh.neumann.append(sf.NeumannBC(1, 3, [2.0, 0.0, 0.0]))  # x = 2 plane
        f = sf.apply_neumann(mesh).reshape(-1, 3)
        assert abs(f[:, 0].sum() - 2.0) < 1e-13  # flat unit face at x = 2

    def test_bad_face_reference(self):
        mesh = unit_cube_mesh()
        mesh.neumann.append(sf.NeumannBC(element=4, face=0, traction=[1, 0, 0]))
        with pytest.raises(sf.BadFaceReference):
            sf.apply_neumann(mesh)
        mesh.neumann = [sf.NeumannBC(element=0, face=6, traction=[1, 0, 0])]
        with pytest.raises(sf.BadFaceReference):
            sf.apply_neumann(mesh)
