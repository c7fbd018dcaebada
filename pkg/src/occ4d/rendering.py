"""Depth-adaptive Gaussian splatting of occupancy frames into condition maps.

Each occupied cell becomes an isotropic world-space Gaussian whose scale
grows with normalized scene depth, so near geometry stays crisp while far
geometry stays hole-free. Splats are composited front to back with standard
alpha transmittance; the depth output is the transmittance-weighted expected
depth, normalized by accumulated alpha.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .geometry import Intrinsics, Pose
from .labels import LabelSpace
from .occupancy import OccupancyFrame
from .validation import check_positive, require

# A pixel counts as covered once its accumulated alpha reaches this cutoff.
ALPHA_CUTOFF = 0.01
# Gaussians are truncated at this many screen-space sigmas.
TRUNCATION_SIGMAS = 3.0
# Lower clamp of the normalized depth, keeping the scale law away from 0.
D_HAT_EPS = 1e-6

_DEFAULT_OPACITY = 0.99


@dataclass(frozen=True)
class GaussianScaleParams:
    """Depth-adaptive scale law ``sigma = k * d_hat ** alpha``.

    ``d_hat`` is camera depth normalized to (0, 1] over [near, far]; when
    ``near``/``far`` are None the per-frame z range of the occupied cells is
    used, and a degenerate range maps everything to ``d_hat = 1``.
    """

    k: float
    alpha: float
    opacity: float = _DEFAULT_OPACITY
    near: float | None = None
    far: float | None = None

    def __post_init__(self):
        check_positive(self.k, "k")
        require(
            np.isfinite(self.alpha) and self.alpha >= 0.0,
            f"alpha must be finite and >= 0, got {self.alpha}",
        )
        require(
            np.isfinite(self.opacity) and 0.0 < self.opacity <= 1.0,
            f"opacity must lie in (0, 1], got {self.opacity}",
        )
        require(
            (self.near is None) == (self.far is None),
            "near and far must be given together",
        )
        if self.near is not None:
            check_positive(self.near, "near")
            require(self.far > self.near, f"far must exceed near, got [{self.near}, {self.far}]")
        object.__setattr__(self, "k", float(self.k))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "opacity", float(self.opacity))

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "alpha": self.alpha,
            "opacity": self.opacity,
            "near": self.near,
            "far": self.far,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianScaleParams":
        return cls(
            d["k"],
            d["alpha"],
            d.get("opacity", _DEFAULT_OPACITY),
            d.get("near"),
            d.get("far"),
        )


def splat_scale(d_hat, params: GaussianScaleParams):
    """World-space Gaussian sigma for normalized depth ``d_hat`` in (0, 1].

    Accepts a scalar or an array; returns the matching type. ``d_hat`` must
    already be clamped into (0, 1].
    """
    d = np.asarray(d_hat, dtype=np.float64)
    require(d.size > 0, "d_hat must not be empty")
    require(
        bool(np.all(np.isfinite(d)) and np.all(d > 0.0) and np.all(d <= 1.0)),
        "d_hat must lie in (0, 1]",
    )
    sigma = params.k * d**params.alpha
    if np.isscalar(d_hat) or np.ndim(d_hat) == 0:
        return float(sigma)
    return sigma


@dataclass(frozen=True)
class ConditionMap:
    """One rendered control signal: a depth raster or a semantic raster.

    Depth maps carry float32 depth with 0 marking uncovered pixels.
    Semantic maps carry uint16 labels (0 = background or uncovered) plus
    their palette RGB preview.
    """

    kind: str
    depth: np.ndarray | None = None
    labels: np.ndarray | None = None
    rgb: np.ndarray | None = None

    def __post_init__(self):
        require(self.kind in ("depth", "semantic"), f"unknown kind {self.kind!r}")
        if self.kind == "depth":
            require(self.depth is not None, "depth map requires depth values")
            d = np.asarray(self.depth, dtype=np.float32)
            require(d.ndim == 2, "depth must be 2-D")
            require(bool(np.all(np.isfinite(d)) and np.all(d >= 0)), "depth must be finite and >= 0")
            d.setflags(write=False)
            object.__setattr__(self, "depth", d)
        else:
            require(self.labels is not None and self.rgb is not None,
                    "semantic map requires labels and rgb")
            lab = np.asarray(self.labels)
            require(lab.ndim == 2 and lab.dtype.kind in "iu", "labels must be a 2-D integer raster")
            lab = lab.astype(np.uint16)
            rgb = np.asarray(self.rgb)
            require(
                rgb.shape == lab.shape + (3,) and rgb.dtype == np.uint8,
                "rgb must be (H, W, 3) uint8 matching labels",
            )
            lab.setflags(write=False)
            rgb = rgb.copy()
            rgb.setflags(write=False)
            object.__setattr__(self, "labels", lab)
            object.__setattr__(self, "rgb", rgb)

    @property
    def height(self) -> int:
        base = self.depth if self.kind == "depth" else self.labels
        return base.shape[0]

    @property
    def width(self) -> int:
        base = self.depth if self.kind == "depth" else self.labels
        return base.shape[1]


def _normalized_depth(z: np.ndarray, params: GaussianScaleParams) -> np.ndarray:
    if params.near is not None:
        near, far = params.near, params.far
    else:
        near, far = float(z.min()), float(z.max())
    span = far - near
    if span <= 1e-12:
        return np.ones_like(z)
    return np.clip((z - near) / span, D_HAT_EPS, 1.0)


def _composite(
    frame: OccupancyFrame,
    intrinsics: Intrinsics,
    pose: Pose,
    params: GaussianScaleParams,
    want_labels: bool,
):
    """Shared splat pass. Returns (alpha, depth, labels or None) rasters."""
    h, w = intrinsics.height, intrinsics.width
    alpha_map = np.zeros((h, w), dtype=np.float64)
    depth_map = np.zeros((h, w), dtype=np.float64)
    label_map = np.zeros((h, w), dtype=np.uint16) if want_labels else None
    if len(frame) == 0:
        return alpha_map, depth_map, label_map

    centers = frame.spec.cell_centers(frame.indices)
    cam = pose.apply_inverse(centers)
    z = cam[:, 2]
    front = z > 0
    if not front.any():
        return alpha_map, depth_map, label_map
    cam = cam[front]
    z = z[front]
    labels = frame.labels[front] if want_labels else None

    u = intrinsics.fx * cam[:, 0] / z + intrinsics.cx
    v = intrinsics.fy * cam[:, 1] / z + intrinsics.cy

    sigma = splat_scale(_normalized_depth(z, params), params)
    r_px = intrinsics.fx * sigma / z
    trunc = TRUNCATION_SIGMAS * r_px

    lo_u = np.maximum(np.ceil(u - trunc), 0).astype(np.int64)
    hi_u = np.minimum(np.floor(u + trunc), w - 1).astype(np.int64)
    lo_v = np.maximum(np.ceil(v - trunc), 0).astype(np.int64)
    hi_v = np.minimum(np.floor(v + trunc), h - 1).astype(np.int64)
    span_u = hi_u - lo_u + 1
    span_v = hi_v - lo_v + 1
    live = (span_u > 0) & (span_v > 0) & np.isfinite(u) & np.isfinite(v)
    if not live.any():
        return alpha_map, depth_map, label_map
    u, v, z, r_px = u[live], v[live], z[live], r_px[live]
    lo_u, lo_v = lo_u[live], lo_v[live]
    span_u, span_v = span_u[live], span_v[live]
    if want_labels:
        labels = labels[live]

    # Expand each splat's pixel box into fragments.
    n_frag = span_u * span_v
    total = int(n_frag.sum())
    sid = np.repeat(np.arange(len(u)), n_frag)
    frag_base = np.cumsum(n_frag) - n_frag
    local = np.arange(total) - np.repeat(frag_base, n_frag)
    px_u = lo_u[sid] + local % span_u[sid]
    px_v = lo_v[sid] + local // span_u[sid]

    rho2 = (px_u - u[sid]) ** 2 + (px_v - v[sid]) ** 2
    r2 = np.maximum(r_px[sid] ** 2, 1e-300)
    inside = rho2 <= (TRUNCATION_SIGMAS**2) * r2
    if not inside.any():
        return alpha_map, depth_map, label_map
    sid = sid[inside]
    key = px_v[inside] * np.int64(w) + px_u[inside]
    weight = params.opacity * np.exp(-rho2[inside] / (2.0 * r2[inside]))
    zf = z[sid]

    # Front-to-back order inside each pixel; frame order breaks exact z ties
    # deterministically because lexsort is stable and frames are canonical.
    order = np.lexsort((zf, key))
    key = key[order]
    zf = zf[order]
    weight = weight[order]

    # Grouped exclusive prefix of log(1 - alpha) gives the transmittance.
    capped = np.minimum(weight, 1.0 - 1e-12)
    lg = np.log1p(-capped)
    cs = np.cumsum(lg)
    excl = cs - lg
    group_first = np.empty(len(key), dtype=bool)
    group_first[0] = True
    group_first[1:] = key[1:] != key[:-1]
    gid = np.cumsum(group_first) - 1
    logt = excl - excl[group_first][gid]
    contrib = np.exp(logt) * weight

    n_px = h * w
    alpha_flat = np.bincount(key, weights=contrib, minlength=n_px)
    depth_num = np.bincount(key, weights=contrib * zf, minlength=n_px)
    covered = alpha_flat >= ALPHA_CUTOFF
    depth_flat = np.zeros(n_px)
    depth_flat[covered] = depth_num[covered] / alpha_flat[covered]
    alpha_map = alpha_flat.reshape(h, w)
    depth_map = depth_flat.reshape(h, w)

    if want_labels:
        lab = labels[sid][order].astype(np.int64)
        n_lab = int(lab.max()) + 1
        pair = key * np.int64(n_lab) + lab
        po = np.argsort(pair, kind="stable")
        ps = pair[po]
        pw = contrib[po]
        starts = np.empty(len(ps), dtype=bool)
        starts[0] = True
        starts[1:] = ps[1:] != ps[:-1]
        start_idx = np.flatnonzero(starts)
        group_sum = np.add.reduceat(pw, start_idx)
        gkey = ps[start_idx]
        gpix = gkey // n_lab
        glab = gkey % n_lab
        # Strongest summed contribution wins; exact ties go to the lower label.
        wo = np.lexsort((glab, -group_sum, gpix))
        gpix, glab = gpix[wo], glab[wo]
        win_first = np.empty(len(gpix), dtype=bool)
        win_first[0] = True
        win_first[1:] = gpix[1:] != gpix[:-1]
        label_flat = np.zeros(n_px, dtype=np.uint16)
        pix_sel = gpix[win_first]
        label_flat[pix_sel] = glab[win_first].astype(np.uint16)
        label_flat[~covered] = 0
        label_map = label_flat.reshape(h, w)

    return alpha_map, depth_map, label_map


def _resolve_palette(palette) -> np.ndarray:
    if isinstance(palette, LabelSpace):
        return palette.palette
    pal = np.asarray(palette)
    require(
        pal.ndim == 2 and pal.shape[1] == 3 and pal.dtype.kind in "iu",
        "palette must be (k, 3) integer RGB",
    )
    return pal.astype(np.uint8)


def labels_to_rgb(label_map: np.ndarray, palette) -> np.ndarray:
    """Map a label raster to RGB; label 0 renders black."""
    pal = _resolve_palette(palette)
    labels = np.asarray(label_map)
    require(labels.dtype.kind in "iu", "label map must be integer")
    max_label = int(labels.max()) if labels.size else 0
    require(
        max_label <= pal.shape[0],
        f"label {max_label} has no palette entry (palette has {pal.shape[0]} rows)",
    )
    lut = np.zeros((pal.shape[0] + 1, 3), dtype=np.uint8)
    lut[1:] = pal
    return lut[labels]


def render_depth(
    frame: OccupancyFrame,
    intrinsics: Intrinsics,
    pose: Pose,
    params: GaussianScaleParams,
) -> ConditionMap:
    """Render the expected-depth condition map of one occupancy frame.

    Covered pixels (accumulated alpha >= 0.01) carry the alpha-normalized
    expected depth; uncovered pixels are 0.
    """
    _, depth, _ = _composite(frame, intrinsics, pose, params, want_labels=False)
    return ConditionMap(kind="depth", depth=depth.astype(np.float32))


def render_semantics(
    frame: OccupancyFrame,
    intrinsics: Intrinsics,
    pose: Pose,
    params: GaussianScaleParams,
    palette,
) -> ConditionMap:
    """Render the semantic-label condition map of one occupancy frame."""
    _, _, label_map = _composite(frame, intrinsics, pose, params, want_labels=True)
    return ConditionMap(
        kind="semantic", labels=label_map, rgb=labels_to_rgb(label_map, palette)
    )


def render_condition_maps(
    frame: OccupancyFrame,
    intrinsics: Intrinsics,
    pose: Pose,
    params: GaussianScaleParams,
    palette,
) -> tuple[ConditionMap, ConditionMap]:
    """Render depth and semantics from a single composite pass."""
    _, depth, label_map = _composite(frame, intrinsics, pose, params, want_labels=True)
    return (
        ConditionMap(kind="depth", depth=depth.astype(np.float32)),
        ConditionMap(kind="semantic", labels=label_map, rgb=labels_to_rgb(label_map, palette)),
    )


class OccupancySplatRenderer(BaseEstimator):
    """Estimator-style wrapper bundling scale params with a palette.

    Parameters
    ----------
    params : GaussianScaleParams
        Depth-adaptive scale law and opacity.
    palette : ndarray or LabelSpace, optional
        Needed only for semantic rendering.
    """

    def __init__(self, params: GaussianScaleParams = None, palette=None):
        self.params = params
        self.palette = palette

    def fit(self, X=None, y=None):
        require(isinstance(self.params, GaussianScaleParams), "params must be GaussianScaleParams")
        return self

    def transform(
        self, frame: OccupancyFrame, intrinsics: Intrinsics, pose: Pose
    ) -> tuple[ConditionMap, ConditionMap | None]:
        """Render (depth map, semantic map or None) for one frame."""
        self.fit()
        if self.palette is None:
            return render_depth(frame, intrinsics, pose, self.params), None
        return render_condition_maps(frame, intrinsics, pose, self.params, self.palette)
