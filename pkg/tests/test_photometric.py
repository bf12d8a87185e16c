import numpy as np
import pytest

from docvo.geometry import PoseSE3, invert
from docvo.photometric import (
    SSIM_C1,
    DegenerateWindowError,
    EnergyConfig,
    ErrorMap,
    Frame,
    directed_error,
    energy_three_frame,
    energy_two_frame,
    occlusion_mask,
    photometric_l1,
    ssim_error,
    truncate_errors,
    truncation_threshold,
)
from docvo.synth import default_intrinsics, make_plane_scene, make_sequence, render_view
from docvo.warp import inverse_warp


def emap(values):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    return ErrorMap(values, np.ones(values.shape, dtype=bool))


class TestL1:
    def test_equal_images(self):
        A = np.random.default_rng(0).random((5, 6))
        assert not photometric_l1(A, A, np.ones((5, 6))).data.any()

    def test_constant_difference(self):
        A = np.full((4, 4, 3), 0.75)
        np.testing.assert_array_equal(photometric_l1(A, A - 0.25, np.ones((4, 4))).data, 0.25)

    def test_hand_values(self):
        E = photometric_l1([[0.1, 0.2, 0.9]], np.zeros((1, 3)), np.ones((1, 3)))
        np.testing.assert_array_equal(E.data, [[0.1, 0.2, 0.9]])

    def test_invalid_pixels_inactive(self):
        valid = np.array([[True, False]])
        E = photometric_l1([[0.5, 0.5]], [[0.0, 0.0]], valid)
        assert E.data[0, 1] == 0.0 and E.count == 1

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            photometric_l1(np.zeros((3, 3)), np.zeros((3, 4)), np.ones((3, 3)))


class TestTruncation:
    def test_hand_example(self):
        mean, std, cut = truncation_threshold(emap([1, 2, 10]))
        assert mean == pytest.approx(13 / 3) and std == pytest.approx(4.0277, abs=1e-4)
        assert cut == pytest.approx(8.3610, abs=1e-4)
        out = truncate_errors(emap([1, 2, 10]))
        np.testing.assert_array_equal(out.data, [[1, 2, 0]])
        np.testing.assert_array_equal(out.active, [[True, True, False]])

    def test_uniform_keeps_everything(self):
        out = truncate_errors(emap(np.full(10, 0.3)))
        assert out.active.all() and out.count == 10

    def test_outlier_removed(self):
        vals = np.r_[np.full(100, 0.01), 100.0]
        out = truncate_errors(emap(vals))
        assert not out.active[0, -1] and out.active[0, :-1].all()

    def test_no_active_pixels(self):
        with pytest.raises(DegenerateWindowError):
            truncate_errors(ErrorMap(np.zeros((2, 2)), np.zeros((2, 2), dtype=bool)))


class TestSSIM:
    def test_equal_images(self):
        A = np.random.default_rng(1).random((8, 8))
        np.testing.assert_allclose(ssim_error(A, A, np.ones((8, 8))).data, 0.0, atol=1e-12)

    def test_constant_images_closed_form(self):
        a, b = 0.2, 0.7
        E = ssim_error(np.full((6, 7), a), np.full((6, 7), b), np.ones((6, 7)))
        s = (2 * a * b + SSIM_C1) / (a * a + b * b + SSIM_C1)
        np.testing.assert_allclose(E.data[1:-1, 1:-1], (1 - s) / 2, rtol=1e-12)
        assert not E.active[0].any() and not E.active[:, -1].any()
        assert E.active[1:-1, 1:-1].all()


@pytest.fixture(scope="module")
def pair():
    K = default_intrinsics(64, 48, 60.0)
    scene = make_plane_scene(K, depth=5.0, tilt_deg=(15.0, 20.0), seed=4)
    seq = make_sequence(scene, [0.0, 0.005, 0.0, 0.05, 0.0, 0.2], 3)
    return K, seq


class TestOcclusionMask:
    def test_identity_no_occlusion(self, pair):
        K, seq = pair
        f = seq.frames[0]
        w = inverse_warp(f.depth, np.eye(4), f.image, K, src_depth=f.depth)
        assert occlusion_mask(f.depth, w).all()

    def test_far_field_override(self, pair):
        K, seq = pair
        f = seq.frames[0]
        far = f.depth + 10.0
        # the source depth claims everything is much nearer, yet all targets exceed d_m
        w = inverse_warp(far, np.eye(4), f.image, K, src_depth=np.full(far.shape, 1.0))
        assert occlusion_mask(far, w, d_m=5.0).all()
        assert not occlusion_mask(far, w, d_m=100.0).any()

    def test_invalid_warp_is_masked(self, pair):
        K, seq = pair
        f = seq.frames[0]
        T = PoseSE3([0, 0, 0], [2.0, 0, 0]).matrix
        w = inverse_warp(f.depth, T, f.image, K, src_depth=f.depth)
        M = occlusion_mask(f.depth, w)
        assert not M[~w.valid].any()


class TestEnergies:
    def test_identical_frames_zero(self, pair):
        K, seq = pair
        f = seq.frames[0]
        for loss in ("truncated_l1", "l1_untruncated", "ssim"):
            cfg = EnergyConfig(loss=loss)
            assert directed_error(f, f, np.eye(4), K, cfg)[0] == 0.0
            assert energy_two_frame(f, f, np.eye(4), K, cfg) == 0.0
            assert energy_three_frame(f, f, f, np.eye(4), np.eye(4), K, cfg) == 0.0

    def test_ground_truth_small(self, pair):
        K, seq = pair
        a, b, c = seq.frames
        T1, T2 = (p.matrix for p in seq.gt_relative)
        cfg = EnergyConfig()
        assert directed_error(b, a, T1, K, cfg)[0] < 1e-3
        assert energy_three_frame(a, b, c, T1, T2, K, EnergyConfig(frames=3)) < 1e-3

    def test_perturbed_larger(self, pair):
        K, seq = pair
        a, b, _ = seq.frames
        gt = seq.gt_relative[0]
        cfg = EnergyConfig()
        e_gt = energy_two_frame(a, b, gt.matrix, K, cfg)
        rng = np.random.default_rng(7)
        for _ in range(100):
            noise = np.r_[rng.normal(0, 0.01, 3), rng.normal(0, 0.05, 3)]
            T = PoseSE3.from_vector(gt.as_vector() + noise).matrix
            assert energy_two_frame(a, b, T, K, cfg) > e_gt

    def test_two_frame_symmetry(self, pair):
        K, seq = pair
        a, b, _ = seq.frames
        T = PoseSE3.from_vector(seq.gt_relative[0].as_vector() + 0.01).matrix
        cfg = EnergyConfig()
        assert energy_two_frame(b, a, invert(T), K, cfg) == pytest.approx(energy_two_frame(a, b, T, K, cfg), abs=1e-12)

    def test_alpha_one_reduces_to_two_frame(self, pair):
        K, seq = pair
        a, b, c = seq.frames
        T1, T2 = (p.matrix for p in seq.gt_relative)
        T2 = PoseSE3.from_vector(seq.gt_relative[1].as_vector() + 0.01).matrix
        e3 = energy_three_frame(a, b, c, T1, T2, K, EnergyConfig(frames=3, alpha=1.0))
        assert e3 == energy_two_frame(b, c, T2, K, EnergyConfig())

    def test_three_frame_weights(self, pair):
        K, seq = pair
        a, b, c = seq.frames
        T1 = PoseSE3.from_vector(seq.gt_relative[0].as_vector() + 0.01).matrix
        T2 = PoseSE3.from_vector(seq.gt_relative[1].as_vector() - 0.01).matrix
        cfg = EnergyConfig()
        expected = 0.7 * energy_two_frame(b, c, T2, K, cfg) + 0.3 * energy_two_frame(a, c, T1 @ T2, K, cfg)
        got = energy_three_frame(a, b, c, T1, T2, K, EnergyConfig(frames=3, alpha=0.7))
        assert got == pytest.approx(expected, rel=1e-12)

    def test_all_ones_mask_matches_unmasked(self, pair):
        K, seq = pair
        a, b, _ = seq.frames
        ones = [Frame(f.image, f.depth, np.ones(f.depth.shape)) for f in (a, b)]
        T = seq.gt_relative[0].matrix
        for loss in ("truncated_l1", "ssim"):
            m = directed_error(ones[1], ones[0], T, K, EnergyConfig(loss=loss))[1]
            u = directed_error(b, a, T, K, EnergyConfig(loss=loss, use_explainability_mask=False))[1]
            assert np.array_equal(m.data, u.data) and np.array_equal(m.active, u.active)

    def test_zero_mask_is_degenerate(self, pair):
        K, seq = pair
        a, b, _ = seq.frames
        zero = Frame(b.image, b.depth, np.zeros(b.depth.shape))
        with pytest.raises(DegenerateWindowError):
            directed_error(zero, a, np.eye(4), K, EnergyConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EnergyConfig(alpha=0.0)
        with pytest.raises(ValueError):
            EnergyConfig(loss="l2")
        with pytest.raises(ValueError):
            EnergyConfig(frames=4)
