"""Sparse semantic occupancy grids.

A grid lives in one shared canonical frame per episode. Frames store only
occupied cells as ``(ix, iy, iz, label)`` rows in canonical ``(iz, iy, ix)``
order, so equality and serialization are deterministic regardless of the
order in which cells were produced.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import InputError
from .geometry import LabeledPointSet
from .validation import as_float_array, check_positive, require

# Cells are addressed with uint16 indices, both in memory and on disk.
MAX_DIM = 0xFFFF
# |dims * voxel_size - extent| tolerance per axis.
_EXTENT_ATOL = 1e-9

_U32_MAX = 0xFFFFFFFF


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a voxel grid: world origin, physical extent, cell size.

    ``dims`` is derived: each extent must be an integer multiple of
    ``voxel_size`` to within 1e-9, with 1 to 65535 cells per axis.
    """

    origin: tuple[float, float, float]
    extent: tuple[float, float, float]
    voxel_size: float
    dims: tuple[int, int, int] = field(init=False)

    def __post_init__(self):
        origin = tuple(float(c) for c in as_float_array(self.origin, "origin", shape=(3,)))
        extent = tuple(float(c) for c in as_float_array(self.extent, "extent", shape=(3,)))
        voxel = check_positive(self.voxel_size, "voxel_size")
        dims = []
        for axis, e in zip("xyz", extent):
            n = int(round(e / voxel))
            if not 1 <= n <= MAX_DIM:
                raise InputError(
                    f"extent_{axis}={e} / voxel_size={voxel} gives {n} cells, "
                    f"outside [1, {MAX_DIM}]"
                )
            if abs(n * voxel - e) > _EXTENT_ATOL:
                raise InputError(
                    f"extent_{axis}={e} is not an integer multiple of voxel_size={voxel}"
                )
            dims.append(n)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "voxel_size", voxel)
        object.__setattr__(self, "dims", tuple(dims))

    @classmethod
    def from_dims(
        cls, origin, voxel_size: float, dims: Sequence[int]
    ) -> "GridSpec":
        """Build a spec from cell counts; extent becomes ``dims * voxel_size``."""
        voxel = check_positive(voxel_size, "voxel_size")
        dims = tuple(int(d) for d in dims)
        require(len(dims) == 3, "dims must have three entries")
        for d in dims:
            require(1 <= d <= MAX_DIM, f"dims entries must lie in [1, {MAX_DIM}], got {d}")
        extent = tuple(d * voxel for d in dims)
        return cls(tuple(float(c) for c in np.asarray(origin, dtype=np.float64)), extent, voxel)

    @property
    def n_cells(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def origin_array(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=np.float64)

    def cell_centers(self, indices: np.ndarray) -> np.ndarray:
        """World coordinates of cell centers for (N, 3) integer indices."""
        idx = np.asarray(indices, dtype=np.float64)
        return self.origin_array() + (idx + 0.5) * self.voxel_size

    def to_dict(self) -> dict:
        return {
            "origin": list(self.origin),
            "extent": list(self.extent),
            "voxel_size": self.voxel_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        try:
            return cls(tuple(d["origin"]), tuple(d["extent"]), d["voxel_size"])
        except KeyError as exc:
            raise InputError(f"grid spec dict missing key {exc}") from None


def _canonical_order(ix: np.ndarray, iy: np.ndarray, iz: np.ndarray) -> np.ndarray:
    # (iz, iy, ix) ascending; iz is the primary key.
    return np.lexsort((ix, iy, iz))


@dataclass(frozen=True)
class OccupancyFrame:
    """Occupied cells of one time step, canonically sorted by (iz, iy, ix).

    ``voxels`` holds uint16 rows ``(ix, iy, iz, label)``. Construction sorts
    rows into canonical order and rejects duplicate cells and out-of-bounds
    indices. Label 0 marks occupied-but-background cells.
    """

    spec: GridSpec
    voxels: np.ndarray

    def __post_init__(self):
        vox = np.asarray(self.voxels)
        if vox.size == 0:
            vox = np.zeros((0, 4), dtype=np.uint16)
        require(
            vox.ndim == 2 and vox.shape[1] == 4,
            f"voxels must have shape (N, 4), got {vox.shape}",
        )
        require(vox.dtype.kind in "iu", "voxels must be integers")
        if vox.size:
            require(int(vox.min()) >= 0 and int(vox.max()) <= MAX_DIM, "voxels must fit in uint16")
        vox = vox.astype(np.uint16)
        dims = self.spec.dims
        for axis in range(3):
            if vox.size and int(vox[:, axis].max()) >= dims[axis]:
                raise InputError(
                    f"voxel index along axis {axis} exceeds grid dims {dims}"
                )
        order = _canonical_order(vox[:, 0], vox[:, 1], vox[:, 2])
        vox = np.ascontiguousarray(vox[order])
        if len(vox) > 1:
            same = np.all(vox[1:, :3] == vox[:-1, :3], axis=1)
            if same.any():
                dup = vox[1:][same][0, :3]
                raise InputError(f"duplicate cell {tuple(int(c) for c in dup)} in frame")
        vox.setflags(write=False)
        object.__setattr__(self, "voxels", vox)

    def __len__(self) -> int:
        return self.voxels.shape[0]

    @property
    def indices(self) -> np.ndarray:
        """(N, 3) cell indices as int64, canonical order."""
        return self.voxels[:, :3].astype(np.int64)

    @property
    def labels(self) -> np.ndarray:
        """(N,) labels, canonical order."""
        return self.voxels[:, 3].copy()


@dataclass(frozen=True)
class OccupancyGrid4D:
    """A time series of occupancy frames over one shared grid."""

    spec: GridSpec
    frames: tuple[OccupancyFrame, ...]
    timestamps: tuple[int, ...]

    def __post_init__(self):
        frames = tuple(self.frames)
        timestamps = tuple(int(t) for t in self.timestamps)
        require(
            len(frames) == len(timestamps),
            f"{len(frames)} frames but {len(timestamps)} timestamps",
        )
        for f in frames:
            require(isinstance(f, OccupancyFrame), "frames must be OccupancyFrame")
            require(f.spec == self.spec, "all frames must share the grid spec")
        for t in timestamps:
            require(0 <= t <= _U32_MAX, f"timestamp {t} does not fit in u32")
        require(
            all(b > a for a, b in zip(timestamps, timestamps[1:])),
            "timestamps must be strictly increasing",
        )
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "timestamps", timestamps)

    def __len__(self) -> int:
        return len(self.frames)


class VoxelizeResult(NamedTuple):
    frame: OccupancyFrame
    n_dropped: int


def vote_semantics(labels: Iterable[int]) -> int:
    """Resolve one cell's label from the labels of the points inside it.

    Background (label 0) wins only when it holds a strict majority of all
    votes; otherwise the most frequent non-background label wins, with ties
    broken toward the lower label id.
    """
    counts = Counter(int(l) for l in labels)
    require(len(counts) > 0, "vote_semantics needs at least one vote")
    for label in counts:
        require(0 <= label <= MAX_DIM, f"label {label} does not fit in uint16")
    total = sum(counts.values())
    zero = counts.get(0, 0)
    if 2 * zero > total:
        return 0
    best = 0
    best_count = -1
    for label, count in counts.items():
        if label == 0:
            continue
        if count > best_count or (count == best_count and label < best):
            best, best_count = label, count
    return best if best_count > 0 else 0


def _vote_grouped(flat: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Majority vote per group. Returns (unique flat ids, winning labels).

    Vectorized equivalent of applying :func:`vote_semantics` to each group of
    ``labels`` sharing a ``flat`` cell id.
    """
    order = np.lexsort((labels, flat))
    f = flat[order]
    l = labels[order].astype(np.int64)

    pair_new = np.empty(len(f), dtype=bool)
    pair_new[0] = True
    pair_new[1:] = (f[1:] != f[:-1]) | (l[1:] != l[:-1])
    starts = np.flatnonzero(pair_new)
    counts = np.diff(np.append(starts, len(f)))
    pf = f[starts]
    pl = l[starts]

    cell_new = np.empty(len(pf), dtype=bool)
    cell_new[0] = True
    cell_new[1:] = pf[1:] != pf[:-1]
    cell_starts = np.flatnonzero(cell_new)
    cells = pf[cell_starts]
    totals = np.add.reduceat(counts, cell_starts)
    # Labels are ascending within a cell, so a zero-label entry is first.
    zero_votes = np.where(pl[cell_starts] == 0, counts[cell_starts], 0)

    winners = np.zeros(len(cells), dtype=np.int64)
    real = pl > 0
    if real.any():
        rf, rl, rc = pf[real], pl[real], counts[real]
        # Highest count first, lower label on ties, then take the first per cell.
        ro = np.lexsort((rl, -rc, rf))
        rf, rl = rf[ro], rl[ro]
        first = np.empty(len(rf), dtype=bool)
        first[0] = True
        first[1:] = rf[1:] != rf[:-1]
        pos = np.searchsorted(cells, rf[first])
        winners[pos] = rl[first]
    winners[2 * zero_votes > totals] = 0
    return cells, winners.astype(np.uint16)


def voxelize_points(points: LabeledPointSet, spec: GridSpec) -> VoxelizeResult:
    """Quantize a labeled point set into one occupancy frame.

    Points map to cells by flooring ``(p - origin) / voxel_size`` per axis;
    points outside ``[0, dims)`` are dropped and counted. Each occupied
    cell's label is the majority vote of its points (see
    :func:`vote_semantics`).
    """
    require(isinstance(points, LabeledPointSet), "points must be a LabeledPointSet")
    rel = (points.positions - spec.origin_array()) / spec.voxel_size
    idx = np.floor(rel).astype(np.int64)
    dims = np.asarray(spec.dims, dtype=np.int64)
    inside = np.all((idx >= 0) & (idx < dims), axis=1)
    n_dropped = int(len(points) - inside.sum())
    idx = idx[inside]
    labels = points.labels[inside].astype(np.int64)

    if len(idx) == 0:
        return VoxelizeResult(OccupancyFrame(spec, np.zeros((0, 4), np.uint16)), n_dropped)

    flat = (idx[:, 2] * dims[1] + idx[:, 1]) * dims[0] + idx[:, 0]
    cells, winners = _vote_grouped(flat, labels)

    iz, rem = np.divmod(cells, dims[0] * dims[1])
    iy, ix = np.divmod(rem, dims[0])
    vox = np.stack(
        [ix.astype(np.uint16), iy.astype(np.uint16), iz.astype(np.uint16), winners],
        axis=1,
    )
    return VoxelizeResult(OccupancyFrame(spec, vox), n_dropped)


def _triangle_box_overlap(
    verts: np.ndarray, centers: np.ndarray, half: np.ndarray
) -> np.ndarray:
    """Closed separating-axis overlap test: one triangle vs many boxes."""
    v = verts[None, :, :] - centers[:, None, :]  # (C, 3, 3)
    edges = verts[[1, 2, 0]] - verts  # (3, 3)
    ok = np.ones(len(centers), dtype=bool)

    # Box face normals.
    ok &= np.all(v.max(axis=1) >= -half, axis=1)
    ok &= np.all(v.min(axis=1) <= half, axis=1)

    # Triangle plane.
    n = np.cross(edges[0], edges[1])
    r = np.abs(n) @ half
    ok &= np.abs(v[:, 0, :] @ n) <= r

    # Cross products of edges with box axes.
    for i in range(3):
        for j in range(3):
            axis = np.zeros(3)
            axis[j] = 1.0
            a = np.cross(edges[i], axis)
            r = np.abs(a) @ half
            p = v @ a  # (C, 3)
            ok &= (p.min(axis=1) <= r) & (p.max(axis=1) >= -r)
    return ok


def voxelize_mesh(triangles, spec: GridSpec, label: int) -> OccupancyFrame:
    """Mark every cell whose closed box touches any triangle.

    Parameters
    ----------
    triangles : array-like, shape (M, 3, 3)
        Triangle vertices in world coordinates.
    spec : GridSpec
        Target grid.
    label : int
        Label written to every produced cell.

    Returns
    -------
    OccupancyFrame
        Union of touched cells across all triangles.
    """
    tris = as_float_array(triangles, "triangles")
    if tris.size == 0:
        return OccupancyFrame(spec, np.zeros((0, 4), np.uint16))
    require(
        tris.ndim == 3 and tris.shape[1:] == (3, 3),
        f"triangles must have shape (M, 3, 3), got {tris.shape}",
    )
    label = int(label)
    require(0 <= label <= MAX_DIM, "label must fit in uint16")

    origin = spec.origin_array()
    voxel = spec.voxel_size
    dims = np.asarray(spec.dims, dtype=np.int64)
    half = np.full(3, voxel / 2.0)

    hit: list[np.ndarray] = []
    for tri in tris:
        # One cell of slack on both sides covers exact-boundary touching.
        lo = np.floor((tri.min(axis=0) - origin) / voxel).astype(np.int64) - 1
        hi = np.floor((tri.max(axis=0) - origin) / voxel).astype(np.int64) + 1
        lo = np.maximum(lo, 0)
        hi = np.minimum(hi, dims - 1)
        if np.any(hi < lo):
            continue
        rng = [np.arange(lo[a], hi[a] + 1) for a in range(3)]
        gx, gy, gz = np.meshgrid(*rng, indexing="ij")
        cand = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        # Cap the working set so a grid-spanning triangle cannot blow memory.
        step = 1 << 18
        for start in range(0, len(cand), step):
            block = cand[start : start + step]
            centers = origin + (block + 0.5) * voxel
            keep = _triangle_box_overlap(tri, centers, half)
            if keep.any():
                hit.append(block[keep])

    if not hit:
        return OccupancyFrame(spec, np.zeros((0, 4), np.uint16))
    cells = np.unique(np.concatenate(hit, axis=0), axis=0)
    vox = np.concatenate(
        [cells.astype(np.uint16), np.full((len(cells), 1), label, np.uint16)], axis=1
    )
    return OccupancyFrame(spec, vox)


class PointVoxelizer(TransformerMixin, BaseEstimator):
    """Transformer wrapping :func:`voxelize_points` for one grid spec.

    Parameters
    ----------
    spec : GridSpec
        Grid every transformed point set is quantized into.
    """

    def __init__(self, spec: GridSpec = None):
        self.spec = spec

    def fit(self, X=None, y=None):
        require(isinstance(self.spec, GridSpec), "spec must be a GridSpec")
        return self

    def transform(self, X: LabeledPointSet) -> OccupancyFrame:
        self.fit()
        result = voxelize_points(X, self.spec)
        return result.frame
