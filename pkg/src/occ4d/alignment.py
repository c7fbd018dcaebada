"""Cross-view depth alignment and camera-rig transfer.

Side-view depth estimates live in their own scale (and possibly offset)
relative to the reference view. A least-squares fit of reference depth
against source depth recovers the mapping ``d_ref ~ scale * d_src + shift``;
applying that fit to the side view's camera trajectory brings its poses into
the reference frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .exceptions import DegenerateFitError
from .geometry import DepthImage, Intrinsics, Pose
from .validation import require


@dataclass(frozen=True)
class DepthFit:
    """Result of a depth alignment fit: ``d_ref ~ scale * d_src + shift``."""

    scale: float
    shift: float
    residual_rms: float
    n_valid: int

    def __post_init__(self):
        require(np.isfinite(self.scale), "scale must be finite")
        require(np.isfinite(self.shift), "shift must be finite")
        require(
            np.isfinite(self.residual_rms) and self.residual_rms >= 0.0,
            "residual_rms must be finite and >= 0",
        )
        require(int(self.n_valid) >= 1, "n_valid must be >= 1")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "shift", float(self.shift))
        object.__setattr__(self, "residual_rms", float(self.residual_rms))
        object.__setattr__(self, "n_valid", int(self.n_valid))

    def apply(self, depth: np.ndarray) -> np.ndarray:
        """Map source depths into the reference scale."""
        return self.scale * np.asarray(depth, dtype=np.float64) + self.shift

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "shift": self.shift,
            "residual_rms": self.residual_rms,
            "n_valid": self.n_valid,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DepthFit":
        return cls(d["scale"], d["shift"], d["residual_rms"], d["n_valid"])


@dataclass(frozen=True)
class RigView:
    """One camera of a rig: intrinsics plus a per-frame pose track."""

    view_id: str
    intrinsics: Intrinsics
    poses: tuple[Pose, ...]

    def __post_init__(self):
        require(len(str(self.view_id)) > 0, "view_id must be non-empty")
        poses = tuple(self.poses)
        require(len(poses) >= 1, "a rig view needs at least one pose")
        for p in poses:
            require(isinstance(p, Pose), "poses must be Pose instances")
        object.__setattr__(self, "view_id", str(self.view_id))
        object.__setattr__(self, "poses", poses)


@dataclass(frozen=True)
class CameraRig:
    """A set of views sharing one coordinate frame, named by ``frame_tag``."""

    views: tuple[RigView, ...]
    frame_tag: str

    def __post_init__(self):
        views = tuple(self.views)
        require(len(views) >= 1, "a rig needs at least one view")
        n = len(views[0].poses)
        for v in views:
            require(isinstance(v, RigView), "views must be RigView instances")
            require(
                len(v.poses) == n,
                f"view {v.view_id!r} has {len(v.poses)} poses, expected {n}",
            )
        ids = [v.view_id for v in views]
        require(len(set(ids)) == len(ids), "view ids must be unique")
        object.__setattr__(self, "views", views)
        object.__setattr__(self, "frame_tag", str(self.frame_tag))

    @property
    def n_frames(self) -> int:
        return len(self.views[0].poses)

    def view(self, view_id: str) -> RigView:
        for v in self.views:
            if v.view_id == view_id:
                return v
        raise KeyError(f"no view {view_id!r} in rig")


def _valid_pairs(d_ref, d_src, valid):
    ref = d_ref.values if isinstance(d_ref, DepthImage) else np.asarray(d_ref, np.float64)
    src = d_src.values if isinstance(d_src, DepthImage) else np.asarray(d_src, np.float64)
    require(ref.shape == src.shape, f"depth shapes differ: {ref.shape} vs {src.shape}")
    ok = (ref > 0) & (src > 0) & np.isfinite(ref) & np.isfinite(src)
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        require(valid.shape == ref.shape, "valid mask shape must match depth shape")
        ok &= valid
    return ref[ok].astype(np.float64), src[ok].astype(np.float64)


def fit_affine_depth(d_ref, d_src, valid=None) -> DepthFit:
    """Least-squares affine fit ``min_(a, b) sum (a * d_src + b - d_ref)^2``.

    Only pixels where both depths are positive (and *valid*, if given)
    participate. Requires at least two valid pixels and non-constant source
    depths; otherwise :class:`DegenerateFitError` is raised.
    """
    ref, src = _valid_pairs(d_ref, d_src, valid)
    n = ref.size
    if n < 2:
        raise DegenerateFitError(f"affine fit needs >= 2 valid pixels, got {n}")
    src_mean = src.mean()
    ref_mean = ref.mean()
    src_c = src - src_mean
    denom = float(src_c @ src_c)
    if denom <= 0.0:
        raise DegenerateFitError("affine fit needs non-constant source depths")
    scale = float(src_c @ (ref - ref_mean)) / denom
    shift = ref_mean - scale * src_mean
    resid = scale * src + shift - ref
    return DepthFit(
        scale=scale,
        shift=float(shift),
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        n_valid=n,
    )


def fit_scale_depth(d_ref, d_src, valid=None) -> DepthFit:
    """Least-squares scale-only fit ``min_a sum (a * d_src - d_ref)^2``.

    The closed form is ``a = sum(d_src * d_ref) / sum(d_src^2)``. Shift is
    fixed at 0. Requires at least one valid pixel with positive source depth.
    """
    ref, src = _valid_pairs(d_ref, d_src, valid)
    n = ref.size
    if n < 1:
        raise DegenerateFitError("scale fit needs >= 1 valid pixel")
    denom = float(src @ src)
    if denom <= 0.0:
        raise DegenerateFitError("scale fit needs a nonzero source depth")
    scale = float(src @ ref) / denom
    resid = scale * src - ref
    return DepthFit(
        scale=scale,
        shift=0.0,
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        n_valid=n,
    )


def transfer_rig(rig: CameraRig, fit: DepthFit, frame_tag: str = "reference") -> CameraRig:
    """Re-express a rig in the reference frame recovered by a depth fit.

    Rotations are untouched. Translations are scaled by ``fit.scale``; a
    nonzero shift retreats each camera along its own forward (+Z) axis so
    that on-axis distances grow by ``fit.shift``.
    """
    require(isinstance(rig, CameraRig), "rig must be a CameraRig")
    require(isinstance(fit, DepthFit), "fit must be a DepthFit")
    views = []
    for v in rig.views:
        poses = tuple(
            Pose(
                p.rotation,
                fit.scale * p.translation - fit.shift * p.forward_axis(),
            )
            for p in v.poses
        )
        views.append(RigView(v.view_id, v.intrinsics, poses))
    return CameraRig(tuple(views), frame_tag)


class DepthAligner(BaseEstimator):
    """Estimator for cross-view depth alignment.

    Parameters
    ----------
    with_shift : bool
        False (default) fits scale only, the usual monocular-depth case;
        True fits the full affine map.

    Attributes
    ----------
    fit_ : DepthFit
        The recovered mapping after :meth:`fit`.
    scale_, shift_, residual_rms_, n_valid_ : float / int
        Convenience copies of the fit fields.
    """

    def __init__(self, with_shift: bool = False):
        self.with_shift = with_shift

    def fit(self, d_src, d_ref, valid=None):
        """Fit the mapping from source depths (X) to reference depths (y)."""
        if self.with_shift:
            result = fit_affine_depth(d_ref, d_src, valid=valid)
        else:
            result = fit_scale_depth(d_ref, d_src, valid=valid)
        self.fit_ = result
        self.scale_ = result.scale
        self.shift_ = result.shift
        self.residual_rms_ = result.residual_rms
        self.n_valid_ = result.n_valid
        return self

    def transform(self, rig: CameraRig, frame_tag: str = "reference") -> CameraRig:
        """Transfer a camera rig into the fitted reference frame."""
        if not hasattr(self, "fit_"):
            raise NotFittedError("DepthAligner must be fitted before transform")
        return transfer_rig(rig, self.fit_, frame_tag)
