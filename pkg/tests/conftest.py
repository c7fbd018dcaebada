"""Shared fixtures: RNG, a synthetic plane-plus-box scene, and an episode
directory writer for pipeline and CLI tests.

The plane-plus-box scene is the workhorse for end-to-end checks: a tilted
plane fills the frame behind an axis-aligned box, both with analytically
known per-pixel depth, so the backproject -> voxelize -> splat round trip
can be scored against exact ground truth.
"""

from __future__ import annotations

import json

import numpy as np
import pytest

from occ4d.config import PipelineConfig, SequenceSpec
from occ4d.fileio import save_camera_track, write_raster
from occ4d.geometry import Intrinsics, Pose
from occ4d.occupancy import GridSpec
from occ4d.rendering import GaussianScaleParams


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def _slab_interval(d, lo, hi):
    """Per-pixel t interval where lo <= d * t <= hi (ray-slab test)."""
    d = np.asarray(d, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = lo / d
        t1 = hi / d
    tmin = np.minimum(t0, t1)
    tmax = np.maximum(t0, t1)
    # d == 0: the coordinate is stuck at 0, inside iff lo <= 0 <= hi.
    zero = d == 0.0
    stuck_inside = zero & (lo <= 0.0) & (0.0 <= hi)
    tmin = np.where(zero, np.where(stuck_inside, -np.inf, np.inf), tmin)
    tmax = np.where(zero, np.where(stuck_inside, np.inf, -np.inf), tmax)
    return tmin, tmax


def plane_box_scene(
    intrinsics: Intrinsics,
    plane_z0: float = 0.32,
    plane_slope: tuple[float, float] = (0.05, 0.05),
    box_x: tuple[float, float] = (-0.05, 0.05),
    box_y: tuple[float, float] = (-0.05, 0.05),
    box_z: tuple[float, float] = (0.22, 0.30),
):
    """Analytic depth and label rasters seen from the identity pose.

    The plane satisfies z * (1 - ax*dx - ay*dy) = z0 along the pixel ray
    direction (dx, dy, 1), so its depth is z0 / (1 - ax*dx - ay*dy). The
    box is axis-aligned; a ray hits it where all three slab intervals
    overlap, and the entry parameter is the depth (dir_z = 1 makes t = z).
    Labels: plane = 1, box = 2.
    """
    uu, vv = np.meshgrid(
        np.arange(intrinsics.width, dtype=np.float64),
        np.arange(intrinsics.height, dtype=np.float64),
    )
    dx = (uu - intrinsics.cx) / intrinsics.fx
    dy = (vv - intrinsics.cy) / intrinsics.fy

    ax, ay = plane_slope
    plane = plane_z0 / (1.0 - ax * dx - ay * dy)

    tx0, tx1 = _slab_interval(dx, *box_x)
    ty0, ty1 = _slab_interval(dy, *box_y)
    t_in = np.maximum(np.maximum(tx0, ty0), box_z[0])
    t_out = np.minimum(np.minimum(tx1, ty1), box_z[1])
    box_hit = (t_in <= t_out) & (t_in < plane)

    depth = np.where(box_hit, t_in, plane).astype(np.float32)
    labels = np.where(box_hit, 2, 1).astype(np.uint16)
    return depth, labels


def write_episode(
    input_root,
    name: str,
    n_frames: int = 2,
    depth_value: float = 0.2,
    with_side: bool = True,
    with_mask: bool = True,
    with_actions: bool = True,
    d_action: int = 7,
):
    """Lay out one episode directory the pipeline can consume.

    The reference view sees a constant-depth plane; the optional side view
    lives in a foreign coordinate frame at double scale, recorded via its
    align_depth raster (2x the reference depth) so the scale fit recovers
    0.5 and its pose translation (0.04, 0, 0) transfers to (0.02, 0, 0).
    """
    episode = input_root / name
    ref_dir = episode / "ref"
    ref_dir.mkdir(parents=True)
    intr = Intrinsics(fx=20.0, fy=20.0, cx=8.0, cy=6.0, width=16, height=12)
    poses = tuple(
        Pose(np.eye(3), np.array([0.0, 0.0, -0.001 * i])) for i in range(n_frames)
    )
    save_camera_track(ref_dir / "cameras.json", intr, poses, "reference")

    depth = np.full((intr.height, intr.width), depth_value, dtype=np.float32)
    labels = np.ones((intr.height, intr.width), dtype=np.uint16)
    for fi in range(n_frames):
        write_raster(ref_dir / f"{fi:06d}_depth.bin", depth)
        if with_mask:
            write_raster(ref_dir / f"{fi:06d}_mask.bin", labels)

    if with_side:
        side_dir = episode / "side"
        side_dir.mkdir()
        side_poses = tuple(
            Pose(np.eye(3), np.array([0.04, 0.0, 0.0])) for _ in range(n_frames)
        )
        save_camera_track(side_dir / "cameras.json", intr, side_poses, "side_slam")
        write_raster(side_dir / "align_depth.bin", 2.0 * depth)

    if with_actions:
        lines = [
            json.dumps({"frame": fi, "action": [float(fi)] + [0.5] * (d_action - 1)})
            for fi in range(n_frames)
        ]
        (episode / "actions.jsonl").write_text("\n".join(lines) + "\n")
    return episode


def make_config(input_root, output_root, **overrides) -> PipelineConfig:
    """Small, fast pipeline config matching write_episode's geometry."""
    kwargs = dict(
        dataset="fixture",
        grid=GridSpec(origin=(-0.1, -0.1, 0.0), extent=(0.2, 0.2, 0.4), voxel_size=0.01),
        render=GaussianScaleParams(k=0.01, alpha=1.0, near=0.05, far=0.4),
        sequence=SequenceSpec(frames=2),
        input_root=str(input_root),
        output_root=str(output_root),
        reference_view="ref",
    )
    kwargs.update(overrides)
    return PipelineConfig(**kwargs)
