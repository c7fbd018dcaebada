"""Cross-view metric alignment from paired depth maps.

The affine fit solves ref ~= scale * src + shift in closed form over the
mean-centered pairs; the scale-only fit is alpha = sum(src * ref) /
sum(src * src). A fitted (scale, shift) transfers a camera rig into the
reference metric frame by rescaling translations and sliding each camera
along its forward axis: t' = scale * t - shift * forward. Rotations are
untouched.
"""

from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.spatial.transform import Rotation
from sklearn.exceptions import NotFittedError

from occ4d.alignment import (
    CameraRig,
    DepthAligner,
    DepthFit,
    RigView,
    fit_affine_depth,
    fit_scale_depth,
    transfer_rig,
)
from occ4d.exceptions import DegenerateFitError, InputError
from occ4d.geometry import Intrinsics, Pose


def _intr() -> Intrinsics:
    return Intrinsics(fx=10.0, fy=10.0, cx=4.0, cy=3.0, width=8, height=6)


def _rig(poses, view_id="cam0", frame_tag="slam") -> CameraRig:
    return CameraRig(
        views=(RigView(view_id=view_id, intrinsics=_intr(), poses=tuple(poses)),),
        frame_tag=frame_tag,
    )


def _normal_equation_oracle(ref, src):
    """Least squares for ref ~= a * src + b via the stacked normal equations."""
    a = np.stack([src.ravel(), np.ones(src.size)], axis=1)
    coef, *_ = np.linalg.lstsq(a, ref.ravel(), rcond=None)
    return float(coef[0]), float(coef[1])


class TestAffineFit:
    def test_identical_maps_identity_fit(self, rng):
        d = rng.uniform(0.5, 3.0, size=(6, 8))
        fit = fit_affine_depth(d, d)
        assert_allclose(fit.scale, 1.0, atol=1e-12)
        assert_allclose(fit.shift, 0.0, atol=1e-12)
        assert fit.residual_rms < 1e-12
        assert fit.n_valid == 48

    def test_doubled_source_with_offset(self, rng):
        """src = 2 * ref + 0.5 inverts to ref = 0.5 * src - 0.25."""
        ref = rng.uniform(0.5, 3.0, size=(6, 8))
        src = 2.0 * ref + 0.5
        fit = fit_affine_depth(ref, src)
        assert_allclose(fit.scale, 0.5, atol=1e-9)
        assert_allclose(fit.shift, -0.25, atol=1e-9)
        assert fit.residual_rms < 1e-9

    def test_noisy_pair_matches_normal_equations(self, rng):
        ref = rng.uniform(0.5, 3.0, size=(10, 10))
        src = 1.7 * ref + 0.3 + rng.normal(scale=0.05, size=ref.shape)
        src = np.clip(src, 0.01, None)
        fit = fit_affine_depth(ref, src)
        scale, shift = _normal_equation_oracle(ref, src)
        assert_allclose(fit.scale, scale, atol=1e-9)
        assert_allclose(fit.shift, shift, atol=1e-9)

    def test_invalid_pixels_are_ignored(self, rng):
        ref = rng.uniform(0.5, 3.0, size=(6, 8))
        src = 0.5 * ref           # ref = 2 * src exactly on valid pairs
        src[0, :4] = 0.0   # invalid in src
        ref2 = ref.copy()
        ref2[5, :3] = 0.0  # invalid in ref
        fit = fit_affine_depth(ref2, src)
        assert fit.n_valid == 48 - 7
        assert_allclose(fit.scale, 2.0, atol=1e-9)
        assert_allclose(fit.shift, 0.0, atol=1e-9)

    def test_residual_zero_iff_exactly_affine(self, rng):
        ref = rng.uniform(0.5, 3.0, size=(6, 8))
        exact = fit_affine_depth(ref, 2.0 * ref + 0.1)
        assert exact.residual_rms <= 1e-12
        noisy = fit_affine_depth(ref + rng.normal(scale=0.1, size=ref.shape), 2.0 * ref + 0.1)
        assert noisy.residual_rms > 1e-6

    def test_constant_source_is_degenerate(self):
        ref = np.linspace(1.0, 2.0, 12).reshape(3, 4)
        with pytest.raises(DegenerateFitError):
            fit_affine_depth(ref, np.full((3, 4), 2.0))

    def test_single_valid_pixel_is_degenerate(self):
        ref = np.zeros((2, 2))
        src = np.zeros((2, 2))
        ref[0, 0] = 1.0
        src[0, 0] = 2.0
        with pytest.raises(DegenerateFitError):
            fit_affine_depth(ref, src)


class TestScaleFit:
    def test_doubled_source_halves(self, rng):
        ref = rng.uniform(0.5, 3.0, size=(5, 5))
        fit = fit_scale_depth(ref, 2.0 * ref)
        assert_allclose(fit.scale, 0.5, atol=1e-12)
        assert fit.shift == 0.0

    def test_single_pixel(self):
        fit = fit_scale_depth(np.array([[1.0]]), np.array([[4.0]]))
        assert_allclose(fit.scale, 0.25, atol=1e-15)

    def test_matches_ratio_of_sums_oracle(self, rng):
        ref = rng.uniform(0.5, 3.0, size=(7, 9))
        src = rng.uniform(0.5, 3.0, size=(7, 9))
        fit = fit_scale_depth(ref, src)
        expected = float(np.sum(src * ref) / np.sum(src * src))
        assert_allclose(fit.scale, expected, atol=1e-12)

    def test_self_fit_is_unit_scale(self, rng):
        d = rng.uniform(0.5, 3.0, size=(4, 4))
        assert_allclose(fit_scale_depth(d, d).scale, 1.0, atol=1e-12)

    def test_all_invalid_is_degenerate(self):
        with pytest.raises(DegenerateFitError):
            fit_scale_depth(np.zeros((3, 3)), np.zeros((3, 3)))

    def test_pixel_order_invariance(self, rng):
        ref = rng.uniform(0.5, 3.0, size=(6, 6))
        src = rng.uniform(0.5, 3.0, size=(6, 6))
        perm = rng.permutation(36)
        direct = fit_scale_depth(ref, src)
        shuffled = fit_scale_depth(ref.ravel()[perm].reshape(6, 6),
                                   src.ravel()[perm].reshape(6, 6))
        assert_allclose(direct.scale, shuffled.scale, rtol=1e-12)


class TestRigTransfer:
    def test_identity_fit_keeps_rig(self, rng):
        rot = Rotation.from_rotvec([0.1, 0.2, 0.3]).as_matrix()
        poses = [Pose(rot, np.array([1.0, 2.0, 3.0]))]
        out = transfer_rig(_rig(poses), DepthFit(1.0, 0.0, 0.0, 1))
        pose = out.view("cam0").poses[0]
        assert_allclose(pose.rotation, rot)
        assert_allclose(pose.translation, [1.0, 2.0, 3.0], atol=1e-15)
        assert out.frame_tag == "reference"

    def test_half_scale_halves_translation(self):
        poses = [Pose(np.eye(3), np.array([2.0, 4.0, 6.0]))]
        out = transfer_rig(_rig(poses), DepthFit(0.5, 0.0, 0.0, 1))
        assert_allclose(out.view("cam0").poses[0].translation, [1.0, 2.0, 3.0], atol=1e-15)

    def test_shift_slides_along_forward_axis(self):
        rot = Rotation.from_rotvec([0.0, 0.4, 0.0]).as_matrix()
        poses = [Pose(rot, np.array([1.0, 1.0, 1.0]))]
        out = transfer_rig(_rig(poses), DepthFit(2.0, 0.25, 0.0, 1))
        expected = 2.0 * np.array([1.0, 1.0, 1.0]) - 0.25 * rot[:, 2]
        assert_allclose(out.view("cam0").poses[0].translation, expected, atol=1e-15)

    def test_two_frame_rig_recovery(self, rng):
        """End-to-end: fit (scale, shift) from synthetic depths, then undo a
        rig recorded in the wrong metric frame.

        True translations t_i are corrupted into (t_i + shift * fwd) / scale;
        the fitted transfer must restore them to 1e-9.
        """
        scale, shift = 0.4, 0.15
        ref = rng.uniform(0.5, 3.0, size=(8, 8))
        src = (ref - shift) / scale  # so ref = scale * src + shift
        fit = fit_affine_depth(ref, src)
        assert_allclose(fit.scale, scale, atol=1e-12)
        assert_allclose(fit.shift, shift, atol=1e-12)

        rot = Rotation.from_rotvec([0.2, -0.1, 0.3]).as_matrix()
        fwd = rot[:, 2]
        true_t = [np.array([0.1, 0.2, 0.3]), np.array([-0.4, 0.5, 0.6])]
        recorded = [Pose(rot, (t + shift * fwd) / scale) for t in true_t]
        out = transfer_rig(_rig(recorded), fit)
        for pose, t in zip(out.view("cam0").poses, true_t):
            assert_allclose(pose.translation, t, atol=1e-9)
            assert_allclose(pose.rotation, rot, atol=1e-15)

    def test_transfer_preserves_rotation_orthonormality(self, rng):
        rot = Rotation.from_rotvec(rng.normal(size=3)).as_matrix()
        poses = [Pose(rot, rng.normal(size=3))]
        out = transfer_rig(_rig(poses), DepthFit(3.0, -0.7, 0.0, 4))
        r = out.view("cam0").poses[0].rotation
        assert_allclose(r @ r.T, np.eye(3), atol=1e-12)


class TestContainers:
    def test_fit_apply_and_dict_round_trip(self):
        fit = DepthFit(scale=0.5, shift=-0.25, residual_rms=0.01, n_valid=9)
        assert_allclose(fit.apply(np.array([2.0, 4.0])), [0.75, 1.75])
        assert DepthFit.from_dict(fit.to_dict()) == fit

    def test_rig_requires_equal_pose_counts(self):
        v1 = RigView("a", _intr(), (Pose.identity(),))
        v2 = RigView("b", _intr(), (Pose.identity(), Pose.identity()))
        with pytest.raises(InputError):
            CameraRig(views=(v1, v2), frame_tag="x")

    def test_unknown_view_lookup_raises(self):
        rig = _rig([Pose.identity()])
        with pytest.raises(KeyError):
            rig.view("nope")


class TestDepthAlignerEstimator:
    def test_fit_exposes_scale_attributes(self, rng):
        ref = rng.uniform(0.5, 3.0, size=(6, 6))
        src = 2.0 * ref
        # estimator convention: X is the source view, y the reference
        est = DepthAligner().fit(src, ref)
        assert_allclose(est.scale_, 0.5, atol=1e-12)
        assert est.shift_ == 0.0
        assert est.n_valid_ == 36

    def test_with_shift_uses_affine_fit(self, rng):
        ref = rng.uniform(0.5, 3.0, size=(6, 6))
        src = 2.0 * ref + 0.5
        est = DepthAligner(with_shift=True).fit(src, ref)
        assert_allclose(est.scale_, 0.5, atol=1e-9)
        assert_allclose(est.shift_, -0.25, atol=1e-9)

    def test_transform_before_fit_raises(self):
        with pytest.raises(NotFittedError):
            DepthAligner().transform(_rig([Pose.identity()]))

    def test_transform_applies_fitted_scale(self, rng):
        ref = rng.uniform(0.5, 3.0, size=(4, 4))
        est = DepthAligner().fit(2.0 * ref, ref)
        rig = _rig([Pose(np.eye(3), np.array([2.0, 4.0, 6.0]))])
        out = est.transform(rig)
        assert_allclose(out.view("cam0").poses[0].translation, [1.0, 2.0, 3.0], atol=1e-12)
