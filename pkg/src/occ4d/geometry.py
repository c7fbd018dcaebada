"""Pinhole camera geometry: depth backprojection and point projection.

Conventions used throughout the package:

* camera frame: +X right, +Y down, +Z forward (depth axis);
* pixel ``(u, v)`` samples the ray through ``((u - cx) / fx, (v - cy) / fy, 1)``;
* poses are camera-to-world rigid transforms;
* a depth value of 0 marks an invalid pixel and never produces a point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .exceptions import InputError
from .validation import as_float_array, check_positive, require

# Orthonormality slack for rotation matrices. Composition of valid rotations
# drifts by a few ulps only, so this stays tight.
_ROTATION_ATOL = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics plus the raster size they refer to."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        check_positive(self.fx, "fx")
        check_positive(self.fy, "fy")
        require(np.isfinite(self.cx) and np.isfinite(self.cy), "cx/cy must be finite")
        require(int(self.width) > 0 and int(self.height) > 0, "raster size must be positive")
        object.__setattr__(self, "fx", float(self.fx))
        object.__setattr__(self, "fy", float(self.fy))
        object.__setattr__(self, "cx", float(self.cx))
        object.__setattr__(self, "cy", float(self.cy))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    def matrix(self) -> np.ndarray:
        """Return the 3x3 calibration matrix."""
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        try:
            return cls(d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"])
        except KeyError as exc:
            raise InputError(f"intrinsics dict missing key {exc}") from None


@dataclass(frozen=True)
class Pose:
    """Camera-to-world rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = as_float_array(self.rotation, "rotation", shape=(3, 3))
        t = as_float_array(self.translation, "translation", shape=(3,))
        err = np.abs(rot @ rot.T - np.eye(3)).max()
        require(err <= _ROTATION_ATOL, f"rotation is not orthonormal (error {err:.3e})")
        require(
            abs(np.linalg.det(rot) - 1.0) <= _ROTATION_ATOL,
            "rotation must have determinant +1",
        )
        rot.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = as_float_array(m, "pose matrix", shape=(4, 4))
        require(
            np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=1e-12),
            "pose matrix bottom row must be [0, 0, 0, 1]",
        )
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Pose") -> "Pose":
        """Return ``self @ other`` (apply *other* first, then *self*)."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        rot_inv = self.rotation.T
        return Pose(rot_inv, -rot_inv @ self.translation)

    def apply(self, points) -> np.ndarray:
        """Transform camera-frame points (N, 3) into the world frame."""
        pts = as_float_array(points, "points", ndim=2)
        require(pts.shape[1] == 3, "points must have shape (N, 3)")
        return pts @ self.rotation.T + self.translation

    def apply_inverse(self, points) -> np.ndarray:
        """Transform world-frame points (N, 3) into the camera frame."""
        pts = as_float_array(points, "points", ndim=2)
        require(pts.shape[1] == 3, "points must have shape (N, 3)")
        return (pts - self.translation) @ self.rotation

    def forward_axis(self) -> np.ndarray:
        """World-frame direction of the camera +Z axis."""
        return self.rotation[:, 2].copy()


@dataclass(frozen=True)
class DepthImage:
    """Per-pixel metric depth along the camera +Z axis; 0 marks invalid pixels."""

    values: np.ndarray

    def __post_init__(self):
        arr = as_float_array(self.values, "depth values", ndim=2, allow_empty=False)
        require(bool(np.all(arr >= 0.0)), "depth values must be non-negative")
        arr = arr.astype(np.float32)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def valid(self) -> np.ndarray:
        """Boolean mask of pixels carrying a real measurement."""
        return self.values > 0.0


@dataclass(frozen=True)
class LabeledPointSet:
    """World-frame points with per-point semantic labels and source pixels."""

    positions: np.ndarray
    labels: np.ndarray
    source_pixels: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        pos = as_float_array(self.positions, "positions", ndim=2)
        require(pos.shape[1] == 3, "positions must have shape (N, 3)")
        labels = np.asarray(self.labels)
        require(
            labels.ndim == 1 and labels.shape[0] == pos.shape[0],
            "labels must have shape (N,) matching positions",
        )
        require(labels.dtype.kind in "iu", "labels must be integers")
        require(
            labels.size == 0 or (labels.min() >= 0 and labels.max() <= 0xFFFF),
            "labels must fit in uint16",
        )
        labels = labels.astype(np.uint16)
        if self.source_pixels is None:
            px = np.zeros((pos.shape[0], 2), dtype=np.int32)
        else:
            px = np.asarray(self.source_pixels)
            require(
                px.ndim == 2 and px.shape == (pos.shape[0], 2),
                "source_pixels must have shape (N, 2)",
            )
            px = px.astype(np.int32)
        for arr in (pos, labels, px):
            arr.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "source_pixels", px)

    def __len__(self) -> int:
        return self.positions.shape[0]


class ProjectedPoints(NamedTuple):
    """Per-point projection results; ``in_bounds`` requires positive depth and
    pixel coordinates inside ``[0, width) x [0, height)``."""

    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    in_bounds: np.ndarray


def backproject_depth(
    depth: DepthImage,
    mask: np.ndarray,
    intrinsics: Intrinsics,
    pose: Pose,
) -> LabeledPointSet:
    """Lift a masked depth image to a labeled world-frame point set.

    Parameters
    ----------
    depth : DepthImage
        Metric depth raster; pixels with depth 0 are skipped.
    mask : array-like of int
        Per-pixel semantic labels, same shape as the depth raster. Label 0 is
        background; it is preserved on the emitted points.
    intrinsics : Intrinsics
        Pinhole model for the raster.
    pose : Pose
        Camera-to-world transform applied to every point.

    Returns
    -------
    LabeledPointSet
        One point per valid depth pixel, in row-major pixel order, carrying
        the pixel's mask label and its ``(u, v)`` source coordinates.
    """
    if not isinstance(depth, DepthImage):
        depth = DepthImage(np.asarray(depth))
    labels = np.asarray(mask)
    require(
        labels.shape == depth.values.shape,
        f"mask shape {labels.shape} does not match depth shape {depth.values.shape}",
    )
    require(labels.dtype.kind in "iu", "mask must hold integer labels")
    require(
        depth.height == intrinsics.height and depth.width == intrinsics.width,
        "depth raster size does not match intrinsics",
    )

    valid = depth.valid
    v_idx, u_idx = np.nonzero(valid)
    d = depth.values[valid].astype(np.float64)

    x = (u_idx - intrinsics.cx) * d / intrinsics.fx
    y = (v_idx - intrinsics.cy) * d / intrinsics.fy
    cam = np.stack([x, y, d], axis=1)
    world = pose.apply(cam) if len(cam) else cam

    return LabeledPointSet(
        positions=world,
        labels=labels[valid].astype(np.uint16),
        source_pixels=np.stack([u_idx, v_idx], axis=1).astype(np.int32),
    )


def project_xyz(
    points: np.ndarray, intrinsics: Intrinsics, pose: Pose
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project world points; returns ``(u, v, z)`` without bounds filtering.

    ``u``/``v`` are NaN where the camera-frame depth ``z`` is not positive.
    """
    cam = pose.apply_inverse(points)
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(z > 0, intrinsics.fx * cam[:, 0] / z + intrinsics.cx, np.nan)
        v = np.where(z > 0, intrinsics.fy * cam[:, 1] / z + intrinsics.cy, np.nan)
    return u, v, z


def project_points(
    points: LabeledPointSet, intrinsics: Intrinsics, pose: Pose
) -> ProjectedPoints:
    """Project a point set into a camera.

    Returns
    -------
    ProjectedPoints
        Arrays of length N. ``in_bounds`` is True where the point lies in
        front of the camera (z > 0) and its pixel coordinates fall inside
        ``[0, width) x [0, height)``.
    """
    if isinstance(points, LabeledPointSet):
        pos = points.positions
    else:
        pos = as_float_array(points, "points", ndim=2)
        require(pos.shape[1] == 3, "points must have shape (N, 3)")
    u, v, z = project_xyz(pos, intrinsics, pose)
    in_bounds = (
        (z > 0)
        & (u >= 0.0)
        & (u < intrinsics.width)
        & (v >= 0.0)
        & (v < intrinsics.height)
    )
    return ProjectedPoints(u=u, v=v, depth=z, in_bounds=in_bounds)
