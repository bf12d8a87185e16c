import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from docvo.geometry import (
    Intrinsics,
    NonRigidTransformError,
    PoseSE3,
    compose,
    invert,
    is_rigid,
    pose_to_matrix,
    project,
    right_jacobian,
    rodrigues_exp,
    rodrigues_log,
    rotation_derivatives,
    skew,
    unproject,
)

vec3 = st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3).map(np.array)
# rotation vectors with norm below 3 rad (inside the principal branch of log)
small = st.lists(st.floats(-1.7, 1.7), min_size=3, max_size=3).map(np.array)


def rigid(r, t):
    return PoseSE3(r, t).matrix


class TestRodrigues:
    def test_zero_is_identity(self):
        assert np.array_equal(rodrigues_exp(np.zeros(3)), np.eye(3))

    def test_quarter_turn_about_z(self):
        R = rodrigues_exp([0, 0, np.pi / 2])
        np.testing.assert_allclose(R, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)

    def test_half_turn_about_x(self):
        np.testing.assert_allclose(rodrigues_exp([np.pi, 0, 0]), np.diag([1.0, -1.0, -1.0]), atol=1e-15)

    @given(vec3)
    def test_orthonormal(self, r):
        R = rodrigues_exp(r)
        np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)

    def test_small_angle_continuity(self):
        axis = np.array([0.3, -0.5, 0.8]) / np.linalg.norm([0.3, -0.5, 0.8])
        for theta in (1e-9, 1e-8 * (1 - 1e-12), 1e-8 * (1 + 1e-12), 1e-7):
            R = rodrigues_exp(theta * axis)
            np.testing.assert_allclose(R, np.eye(3) + skew(theta * axis), atol=1e-14)

    @given(small)
    def test_log_inverts_exp(self, r):
        np.testing.assert_allclose(rodrigues_log(rodrigues_exp(r)), r, atol=1e-9)

    def test_log_near_pi(self):
        r = np.array([0.0, 0.0, np.pi - 1e-7])
        np.testing.assert_allclose(rodrigues_exp(rodrigues_log(rodrigues_exp(r))), rodrigues_exp(r), atol=1e-9)

    def test_rotation_derivatives_match_finite_difference(self):
        r = np.array([0.2, -0.4, 0.7])
        dR = rotation_derivatives(r)
        h = 1e-6
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            fd = (rodrigues_exp(r + e) - rodrigues_exp(r - e)) / (2 * h)
            np.testing.assert_allclose(dR[k], fd, atol=1e-9)

    def test_right_jacobian_small_angle(self):
        np.testing.assert_allclose(right_jacobian(np.zeros(3)), np.eye(3))
        r = np.array([1e-4, 2e-4, -1e-4])
        np.testing.assert_allclose(right_jacobian(r), np.eye(3) - 0.5 * skew(r), atol=1e-8)


class TestTransforms:
    def test_pose_to_matrix_identity(self):
        assert np.array_equal(pose_to_matrix(PoseSE3.identity()), np.eye(4))

    def test_pose_to_matrix_translation(self):
        M = pose_to_matrix(PoseSE3([0, 0, 0], [1, 2, 3]))
        expected = np.eye(4)
        expected[:3, 3] = [1, 2, 3]
        assert np.array_equal(M, expected)

    def test_invert_identity_and_translation(self):
        assert np.array_equal(invert(np.eye(4)), np.eye(4))
        T = np.eye(4)
        T[:3, 3] = [1.0, -2.0, 0.5]
        np.testing.assert_array_equal(invert(T)[:3, 3], [-1.0, 2.0, -0.5])

    def test_compose_translations(self):
        A, B = np.eye(4), np.eye(4)
        A[:3, 3] = [1, 2, 3]
        B[:3, 3] = [-4, 5, 0.5]
        np.testing.assert_array_equal(compose(A, B)[:3, 3], [-3, 7, 3.5])

    @given(small, vec3)
    def test_inverse_roundtrip(self, r, t):
        T = rigid(r, t)
        np.testing.assert_allclose(compose(T, invert(T)), np.eye(4), atol=1e-12)
        np.testing.assert_allclose(invert(invert(T)), T, atol=1e-12)

    @given(small, vec3, small, vec3, small, vec3)
    @settings(max_examples=50)
    def test_compose_associative(self, r1, t1, r2, t2, r3, t3):
        A, B, C = rigid(r1, t1), rigid(r2, t2), rigid(r3, t3)
        np.testing.assert_allclose(compose(compose(A, B), C), compose(A, compose(B, C)), atol=1e-11)

    def test_non_rigid_rejected(self):
        T = np.eye(4)
        T[0, 0] = 1.1
        assert not is_rigid(T)
        with pytest.raises(NonRigidTransformError):
            invert(T)
        with pytest.raises(NonRigidTransformError):
            compose(T, np.eye(4))

    def test_pose_from_matrix_roundtrip(self):
        p = PoseSE3([0.1, -0.2, 0.3], [1, 2, 3])
        q = PoseSE3.from_matrix(p.matrix)
        np.testing.assert_allclose(q.as_vector(), p.as_vector(), atol=1e-12)

    def test_pose_is_immutable(self):
        p = PoseSE3.identity()
        with pytest.raises(ValueError):
            p.matrix[0, 0] = 2.0


class TestCamera:
    K = Intrinsics(100.0, 100.0, 50.0, 50.0, 101, 101)

    def test_project_optical_axis(self):
        assert project(self.K, [0, 0, 2])[:3] == (50.0, 50.0, 2.0)

    def test_project_hand_arithmetic(self):
        assert project(self.K, [1, 0, 2])[:3] == (100.0, 50.0, 2.0)

    def test_project_behind_camera_invalid(self):
        u, v, z, valid = project(self.K, [0, 0, -1])
        assert not valid and np.isnan(u)

    def test_unproject_examples(self):
        np.testing.assert_array_equal(unproject(self.K, 50, 50, 1), [0, 0, 1])
        np.testing.assert_array_equal(unproject(self.K, 150, 50, 2), [2, 0, 2])

    def test_unproject_rejects_nonpositive_depth(self):
        with pytest.raises(ValueError):
            unproject(self.K, 10, 10, 0.0)

    def test_roundtrip_random(self):
        rng = np.random.default_rng(0)
        u, v = rng.uniform(0, 100, 200), rng.uniform(0, 100, 200)
        d = rng.uniform(0.1, 80, 200)
        X = unproject(self.K, u, v, d)
        pu, pv, pz, ok = project(self.K, X)
        assert ok.all()
        np.testing.assert_allclose(pu, u, atol=1e-9)
        np.testing.assert_allclose(pv, v, atol=1e-9)
        np.testing.assert_allclose(pz, d, atol=1e-12)

    def test_intrinsics_validation(self):
        with pytest.raises(ValueError):
            Intrinsics(-1.0, 100.0, 50.0, 50.0, 100, 100)
        with pytest.raises(ValueError):
            Intrinsics(100.0, 100.0, 150.0, 50.0, 100, 100)

    def test_scaled(self):
        K = Intrinsics(721.5377, 721.5377, 609.5593, 172.854, 1242, 375).scaled(621, 375)
        assert K.fx == pytest.approx(721.5377 / 2) and K.cx == pytest.approx(609.5593 / 2)
        assert K.fy == 721.5377
