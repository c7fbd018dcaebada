"""OCC4: the sparse 4D occupancy interchange format.

Little-endian layout::

    offset 0   magic   b"OCC4"
    offset 4   u32     version (currently 1)
    offset 8   f32     voxel_size
    offset 12  3*f32   grid origin (x, y, z)
    offset 24  3*u32   grid dims (nx, ny, nz)
    offset 36  u32     frame_count
    then per frame:
               u32     timestamp
               u64     voxel_count
               count * (u16 ix, u16 iy, u16 iz, u16 label), sorted by (iz, iy, ix)

Decoding is strict: truncation, bad magic, out-of-range indices, duplicate
or unsorted cells, and trailing bytes all raise :class:`FormatError` carrying
the byte offset of the defect.
"""

from __future__ import annotations

import struct

import numpy as np

from .exceptions import FormatError
from .occupancy import MAX_DIM, GridSpec, OccupancyFrame, OccupancyGrid4D

MAGIC = b"OCC4"
VERSION = 1
_HEADER = struct.Struct("<4sIf3f3II")  # 40 bytes
_FRAME_HEAD = struct.Struct("<IQ")  # 12 bytes
_VOXEL_BYTES = 8


def encode_occ4(grid: OccupancyGrid4D) -> bytes:
    """Serialize a 4D occupancy grid to OCC4 bytes."""
    spec = grid.spec
    parts = [
        _HEADER.pack(
            MAGIC,
            VERSION,
            np.float32(spec.voxel_size),
            *(np.float32(c) for c in spec.origin),
            *spec.dims,
            len(grid.frames),
        )
    ]
    for ts, frame in zip(grid.timestamps, grid.frames):
        parts.append(_FRAME_HEAD.pack(ts, len(frame)))
        parts.append(frame.voxels.astype("<u2", copy=False).tobytes())
    return b"".join(parts)


def _need(data: bytes, offset: int, n: int, what: str) -> None:
    if offset + n > len(data):
        raise FormatError(
            f"truncated input: need {n} bytes for {what}, have {len(data) - offset}",
            offset,
        )


def decode_occ4(data: bytes) -> OccupancyGrid4D:
    """Parse OCC4 bytes into an :class:`OccupancyGrid4D`.

    Raises
    ------
    FormatError
        On any structural defect; ``.offset`` points at the defective bytes.
    """
    data = bytes(data)
    _need(data, 0, 4, "magic")
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}", 0)
    _need(data, 0, _HEADER.size, "header")
    (_, version, voxel_size, ox, oy, oz, nx, ny, nz, frame_count) = _HEADER.unpack_from(
        data, 0
    )
    if version != VERSION:
        raise FormatError(f"unsupported version {version}, expected {VERSION}", 4)
    if not np.isfinite(voxel_size) or voxel_size <= 0.0:
        raise FormatError(f"voxel_size must be positive and finite, got {voxel_size}", 8)
    for i, (axis, n) in enumerate(zip("xyz", (nx, ny, nz))):
        if not 1 <= n <= MAX_DIM:
            raise FormatError(f"dims_{axis}={n} outside [1, {MAX_DIM}]", 24 + 4 * i)
    if not all(np.isfinite(c) for c in (ox, oy, oz)):
        raise FormatError("origin components must be finite", 12)

    spec = GridSpec.from_dims(
        (float(ox), float(oy), float(oz)), float(voxel_size), (nx, ny, nz)
    )

    offset = _HEADER.size
    frames: list[OccupancyFrame] = []
    timestamps: list[int] = []
    for fi in range(frame_count):
        _need(data, offset, _FRAME_HEAD.size, f"frame {fi} header")
        ts, count = _FRAME_HEAD.unpack_from(data, offset)
        if timestamps and ts <= timestamps[-1]:
            raise FormatError(
                f"frame {fi} timestamp {ts} not greater than previous {timestamps[-1]}",
                offset,
            )
        vox_start = offset + _FRAME_HEAD.size
        _need(data, vox_start, count * _VOXEL_BYTES, f"frame {fi} voxels")
        vox = (
            np.frombuffer(data, dtype="<u2", count=4 * count, offset=vox_start)
            .reshape(count, 4)
            .astype(np.uint16)
        )
        dims = (nx, ny, nz)
        for axis in range(3):
            bad = np.flatnonzero(vox[:, axis] >= dims[axis])
            if bad.size:
                raise FormatError(
                    f"frame {fi} cell index out of bounds on axis {axis}",
                    vox_start + _VOXEL_BYTES * int(bad[0]),
                )
        if count > 1:
            flat = (
                vox[:, 2].astype(np.int64) * dims[1] + vox[:, 1]
            ) * dims[0] + vox[:, 0]
            bad = np.flatnonzero(np.diff(flat) <= 0)
            if bad.size:
                row = int(bad[0]) + 1
                raise FormatError(
                    f"frame {fi} cells not strictly sorted by (iz, iy, ix) at row {row}",
                    vox_start + _VOXEL_BYTES * row,
                )
        frames.append(OccupancyFrame(spec, vox))
        timestamps.append(ts)
        offset = vox_start + count * _VOXEL_BYTES

    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes after last frame", offset)
    return OccupancyGrid4D(spec, tuple(frames), tuple(timestamps))
