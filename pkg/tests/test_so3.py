"""Rotation-algebra unit and property tests.

Reference values come from an independent implementation
(scipy.spatial.transform.Rotation) and from closed-form identities, so the
library routines are never checked against themselves.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from artifact import so3


def random_rotvec(rng, max_angle=np.pi):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return axis * rng.uniform(0.0, max_angle)


class TestSkew:
    def test_zero(self):
        np.testing.assert_array_equal(so3.skew(np.zeros(3)), np.zeros((3, 3)))

    def test_cross_product(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a, b = rng.normal(size=3), rng.normal(size=3)
            np.testing.assert_allclose(so3.skew(a) @ b, np.cross(a, b), atol=1e-14)
            np.testing.assert_allclose(so3.axial(so3.skew(a)), a, atol=1e-14)

    def test_e1_e2(self):
        np.testing.assert_allclose(so3.skew([1.0, 0, 0]) @ [0, 1.0, 0], [0, 0, 1.0])


class TestExpRodrigues:
    def test_identity(self):
        np.testing.assert_array_equal(so3.exp_rodrigues(np.zeros(3)), np.eye(3))

    def test_quarter_turn(self):
        L = so3.exp_rodrigues(np.array([0.0, 0.0, np.pi / 2]))
        np.testing.assert_allclose(L @ [1, 0, 0], [0, 1, 0], atol=1e-15)
        np.testing.assert_allclose(L[:, 0], [0, 1, 0], atol=1e-15)
        np.testing.assert_allclose(L[:, 1], [-1, 0, 0], atol=1e-15)
        np.testing.assert_allclose(L[:, 2], [0, 0, 1], atol=1e-15)

    def test_trace_identity(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            psi = random_rotvec(rng)
            psi *= 1.3 / np.linalg.norm(psi)
            L = so3.exp_rodrigues(psi)
            assert abs(np.trace(L) - (1.0 + 2.0 * np.cos(1.3))) < 1e-12

    def test_against_scipy(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            psi = random_rotvec(rng)
            np.testing.assert_allclose(
                so3.exp_rodrigues(psi),
                Rotation.from_rotvec(psi).as_matrix(),
                atol=1e-13,
            )

    def test_orthonormal(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            L = so3.exp_rodrigues(random_rotvec(rng))
            np.testing.assert_allclose(L.T @ L, np.eye(3), atol=1e-12)
            assert abs(np.linalg.det(L) - 1.0) < 1e-12

    def test_series_branch_continuity(self):
        # both branches must agree in the crossover region
        rng = np.random.default_rng(17)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        for angle in np.geomspace(1e-12, 1e-6, 13):
            psi = angle * axis
            S = so3.skew(psi)
            closed = (
                np.eye(3)
                + np.sin(angle) / angle * S
                + (1 - np.cos(angle)) / angle**2 * (S @ S)
            )
            assert np.max(np.abs(so3.exp_rodrigues(psi) - closed)) < 1e-10


class TestLogSpurrier:
    def test_identity(self):
        np.testing.assert_array_equal(so3.log_spurrier(np.eye(3)), np.zeros(3))

    def test_round_trip_simple(self):
        psi = np.array([0.0, 0.0, np.pi / 2])
        np.testing.assert_allclose(
            so3.log_spurrier(so3.exp_rodrigues(psi)), psi, atol=1e-14
        )

    def test_round_trip_sweep(self):
        rng = np.random.default_rng(19)
        for _ in range(1000):
            psi = random_rotvec(rng)
            err = np.linalg.norm(so3.log_spurrier(so3.exp_rodrigues(psi)) - psi)
            assert err < 1e-10

    def test_against_scipy(self):
        rng = np.random.default_rng(23)
        for _ in range(200):
            L = Rotation.random(random_state=rng.integers(1 << 30)).as_matrix()
            np.testing.assert_allclose(
                so3.log_spurrier(L),
                Rotation.from_matrix(L).as_rotvec(),
                atol=1e-10,
            )

    def test_canonical_domain(self):
        rng = np.random.default_rng(29)
        for _ in range(200):
            psi = random_rotvec(rng) * 1.9  # angles beyond pi
            out = so3.log_spurrier(so3.exp_rodrigues(psi))
            assert np.linalg.norm(out) <= np.pi + 1e-12

    def test_near_pi(self):
        rng = np.random.default_rng(31)
        for _ in range(50):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            psi = axis * (np.pi - 1e-9)
            L = so3.exp_rodrigues(psi)
            np.testing.assert_allclose(
                so3.exp_rodrigues(so3.log_spurrier(L)), L, atol=1e-10
            )

    def test_rejects_nonorthonormal(self):
        bad = np.eye(3)
        bad = bad + 1e-4
        with pytest.raises(so3.NonOrthonormalInput):
            so3.log_spurrier(bad)

    def test_rejects_reflection(self):
        with pytest.raises(so3.NonOrthonormalInput):
            so3.log_spurrier(np.diag([1.0, 1.0, -1.0]))


class TestRelativeRotation:
    def test_same_triad(self):
        L = so3.exp_rodrigues(np.array([0.4, -0.2, 0.9]))
        np.testing.assert_allclose(so3.relative_rotation(L, L), np.zeros(3), atol=1e-14)

    def test_from_identity(self):
        psi = np.array([0.3, 0.1, -0.5])
        np.testing.assert_allclose(
            so3.relative_rotation(np.eye(3), so3.exp_rodrigues(psi)), psi, atol=1e-13
        )

    def test_composition(self):
        rng = np.random.default_rng(37)
        for _ in range(20):
            L1 = so3.exp_rodrigues(random_rotvec(rng))
            L2 = so3.exp_rodrigues(random_rotvec(rng))
            psi21 = so3.relative_rotation(L1, L2)
            np.testing.assert_allclose(so3.exp_rodrigues(psi21) @ L1, L2, atol=1e-12)

    def test_objectivity(self):
        # rv(R* L R*^T) = R* rv(L)
        rng = np.random.default_rng(41)
        for _ in range(50):
            L = so3.exp_rodrigues(random_rotvec(rng))
            R = so3.exp_rodrigues(random_rotvec(rng))
            np.testing.assert_allclose(
                so3.log_spurrier(R @ L @ R.T), R @ so3.log_spurrier(L), atol=1e-10
            )


class TestTransformationMatrix:
    def test_zero(self):
        np.testing.assert_array_equal(so3.transformation_matrix(np.zeros(3)), np.eye(3))
        np.testing.assert_array_equal(
            so3.transformation_matrix_inverse(np.zeros(3)), np.eye(3)
        )

    def test_eigenvector_identity(self):
        # Remark: psi is an eigenvector of T and T^T with eigenvalue 1
        rng = np.random.default_rng(43)
        for _ in range(1000):
            psi = random_rotvec(rng)
            T = so3.transformation_matrix(psi)
            assert np.linalg.norm(T @ psi - psi) < 1e-12
            assert np.linalg.norm(T.T @ psi - psi) < 1e-12
            Tinv = so3.transformation_matrix_inverse(psi)
            assert np.linalg.norm(Tinv @ psi - psi) < 1e-12

    def test_inverse(self):
        rng = np.random.default_rng(47)
        for _ in range(100):
            psi = random_rotvec(rng)
            T = so3.transformation_matrix(psi)
            Tinv = so3.transformation_matrix_inverse(psi)
            np.testing.assert_allclose(Tinv @ T, np.eye(3), atol=1e-12)

    def test_finite_difference_identity(self):
        # (rv(exp(eps dtheta) Lambda(psi)) - psi)/eps -> T(psi) dtheta
        rng = np.random.default_rng(53)
        eps = 1e-6
        for _ in range(20):
            psi = random_rotvec(rng, max_angle=0.9 * np.pi)
            dtheta = rng.normal(size=3)
            L = so3.exp_rodrigues(psi)
            plus = so3.log_spurrier(so3.exp_rodrigues(eps * dtheta) @ L)
            minus = so3.log_spurrier(so3.exp_rodrigues(-eps * dtheta) @ L)
            fd = (plus - minus) / (2 * eps)
            exact = so3.transformation_matrix(psi) @ dtheta
            assert np.linalg.norm(fd - exact) / np.linalg.norm(exact) < 1e-5

    def test_series_branch(self):
        for angle in np.geomspace(1e-12, 1e-6, 7):
            psi = angle * np.array([1.0, 0, 0])
            S = so3.skew(psi)
            ee = np.outer(psi, psi) / angle**2
            closed = (
                ee
                - 0.5 * S
                + 0.5 * angle / np.tan(0.5 * angle) * (np.eye(3) - ee)
            )
            assert np.max(np.abs(so3.transformation_matrix(psi) - closed)) < 1e-10

    def test_angle_out_of_range(self):
        with pytest.raises(so3.AngleOutOfRange):
            so3.transformation_matrix(np.array([2.0 * np.pi, 0, 0]))
        with pytest.raises(so3.AngleOutOfRange):
            so3.transformation_matrix_inverse(np.array([0, 6.5, 0]))

    def test_pi_is_safe(self):
        T = so3.transformation_matrix(np.array([np.pi, 0, 0]))
        assert np.all(np.isfinite(T))


class TestObjectiveVariation:
    def test_zero_relative_rotation(self):
        np.testing.assert_array_equal(
            so3.objective_variation_factor(np.zeros(3)), np.eye(3)
        )

    def test_fd_consistency(self):
        # perturb only Lambda2 multiplicatively; then the objective variation
        # equals the total variation of the relative rotation vector
        rng = np.random.default_rng(59)
        eps = 1e-6
        for _ in range(20):
            L1 = so3.exp_rodrigues(random_rotvec(rng, 0.8 * np.pi))
            L2 = so3.exp_rodrigues(random_rotvec(rng, 0.8 * np.pi))
            psi21 = so3.relative_rotation(L1, L2)
            if np.linalg.norm(psi21) > 0.9 * np.pi:
                continue  # keep away from the extraction branch cut
            dtheta = rng.normal(size=3)
            plus = so3.relative_rotation(L1, so3.exp_rodrigues(eps * dtheta) @ L2)
            minus = so3.relative_rotation(L1, so3.exp_rodrigues(-eps * dtheta) @ L2)
            fd = (plus - minus) / (2 * eps)
            exact = so3.objective_variation_factor(psi21) @ dtheta
            assert np.linalg.norm(fd - exact) / max(np.linalg.norm(exact), 1e-12) < 1e-5

    def test_role_swap_antisymmetry(self):
        # psi12 = -psi21, and T(-psi) = T(psi)^T, so swapping the two triads
        # maps the variation to -T^T(psi21) (dtheta2 - dtheta1)
        rng = np.random.default_rng(61)
        for _ in range(20):
            L1 = so3.exp_rodrigues(random_rotvec(rng, 0.8 * np.pi))
            L2 = so3.exp_rodrigues(random_rotvec(rng, 0.8 * np.pi))
            psi21 = so3.relative_rotation(L1, L2)
            psi12 = so3.relative_rotation(L2, L1)
            np.testing.assert_allclose(psi12, -psi21, atol=1e-12)
            d21 = rng.normal(size=3)  # dtheta2 - dtheta1
            v12 = so3.objective_variation_factor(psi12) @ (-d21)
            expect = -so3.transformation_matrix(psi21).T @ d21
            np.testing.assert_allclose(v12, expect, atol=1e-10)


class TestComplexStep:
    """The smooth branches must support complex-step differentiation."""

    def test_exp_derivative(self):
        rng = np.random.default_rng(67)
        h = 1e-30
        for _ in range(10):
            psi = random_rotvec(rng, 0.9 * np.pi)
            d = rng.normal(size=3)
            L = so3.exp_rodrigues(psi + 1j * h * d)
            dL = L.imag / h
            # compare with the spin form: dL = S(T^{-T}? ...) -- use FD instead
            eps = 1e-6
            fd = (so3.exp_rodrigues(psi + eps * d) - so3.exp_rodrigues(psi - eps * d)) / (
                2 * eps
            )
            assert np.max(np.abs(dL - fd)) < 1e-8

    def test_log_derivative(self):
        rng = np.random.default_rng(71)
        h = 1e-30
        for _ in range(10):
            psi = random_rotvec(rng, 0.8 * np.pi)
            L = so3.exp_rodrigues(psi)
            dtheta = rng.normal(size=3)
            dL = so3.skew(dtheta) @ L
            out = so3.log_spurrier(L + 1j * h * dL)
            exact = so3.transformation_matrix(psi) @ dtheta
            np.testing.assert_allclose(out.imag / h, exact, atol=1e-12, rtol=1e-9)

    def test_log_derivative_at_identity(self):
        h = 1e-30
        dtheta = np.array([0.3, -0.7, 0.2])
        out = so3.log_spurrier(np.eye(3) + 1j * h * so3.skew(dtheta))
        np.testing.assert_allclose(out.imag / h, dtheta, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-1.0, 1.0), min_size=3, max_size=3),
    st.floats(1e-6, np.pi - 1e-6),
)
def test_round_trip_property(direction, angle):
    v = np.asarray(direction)
    n = np.linalg.norm(v)
    if n < 1e-3:
        return
    psi = v / n * angle
    back = so3.log_spurrier(so3.exp_rodrigues(psi))
    assert np.linalg.norm(back - psi) < 1e-10
