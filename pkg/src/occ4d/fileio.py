"""On-disk formats: raw rasters with JSON sidecars, PPM previews, camera
JSON, JSON-lines inputs, action tensors, and the tensor weight archive.

All binary payloads are little-endian. Every writer is deterministic:
JSON is dumped with sorted keys and a trailing newline, arrays are written
row-major, and nothing embeds timestamps.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .actions import ActionTrack, ChunkedActions
from .exceptions import FormatError, InputError
from .geometry import DepthImage, Intrinsics, Pose
from .validation import require

RASTER_DTYPES = {"f32le": "<f4", "u16le": "<u2"}


def dump_json(path, obj) -> None:
    """Write canonical JSON: sorted keys, 2-space indent, trailing newline."""
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def load_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}", exc.pos) from None
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from None


def sidecar_path(path) -> Path:
    """The JSON sidecar belonging to a binary raster/tensor file."""
    return Path(path).with_suffix(".json")


def write_raster(path, values) -> None:
    """Write a 2-D raster as raw bytes plus a {width, height, dtype} sidecar.

    Float inputs are stored as ``f32le``; unsigned/integer inputs (labels,
    masks) as ``u16le``.
    """
    arr = np.asarray(values)
    require(arr.ndim == 2, f"raster must be 2-D, got shape {arr.shape}")
    if arr.dtype.kind == "f":
        name = "f32le"
    elif arr.dtype.kind in "iu":
        require(
            arr.size == 0 or (int(arr.min()) >= 0 and int(arr.max()) <= 0xFFFF),
            "integer raster values must fit in uint16",
        )
        name = "u16le"
    else:
        raise InputError(f"unsupported raster dtype {arr.dtype}")
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(arr.astype(RASTER_DTYPES[name])).tobytes())
    dump_json(
        sidecar_path(path),
        {"width": int(arr.shape[1]), "height": int(arr.shape[0]), "dtype": name},
    )


def read_raster(path) -> np.ndarray:
    """Read a raw raster using its JSON sidecar; validates exact byte size."""
    path = Path(path)
    side = sidecar_path(path)
    if not side.exists():
        raise FormatError(f"missing sidecar {side}")
    meta = load_json(side)
    try:
        width, height, dtype_name = int(meta["width"]), int(meta["height"]), meta["dtype"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{side}: sidecar missing field {exc}") from None
    if dtype_name not in RASTER_DTYPES:
        raise FormatError(f"{side}: unknown raster dtype {dtype_name!r}")
    if width < 1 or height < 1:
        raise FormatError(f"{side}: raster size must be positive, got {width}x{height}")
    dtype = np.dtype(RASTER_DTYPES[dtype_name])
    data = path.read_bytes()
    expected = width * height * dtype.itemsize
    if len(data) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for {width}x{height} {dtype_name}, "
            f"got {len(data)}",
            min(expected, len(data)),
        )
    return np.frombuffer(data, dtype=dtype).reshape(height, width).copy()


def read_depth(path) -> DepthImage:
    arr = read_raster(path)
    if arr.dtype != np.float32:
        raise FormatError(f"{path}: depth raster must be f32le, got {arr.dtype}")
    return DepthImage(arr)


def read_mask(path) -> np.ndarray:
    arr = read_raster(path)
    if arr.dtype != np.uint16:
        raise FormatError(f"{path}: mask raster must be u16le, got {arr.dtype}")
    return arr


def write_ppm(path, rgb) -> None:
    """Write an (H, W, 3) uint8 image as binary PPM (P6)."""
    arr = np.asarray(rgb)
    require(
        arr.ndim == 3 and arr.shape[2] == 3 and arr.dtype == np.uint8,
        f"PPM needs (H, W, 3) uint8, got {arr.shape} {arr.dtype}",
    )
    header = f"P6\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(arr).tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM (P6) image into (H, W, 3) uint8."""
    data = Path(path).read_bytes()
    if data[:2] != b"P6":
        raise FormatError(f"{path}: bad PPM magic {data[:2]!r}", 0)

    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise FormatError(f"{path}: bad PPM header token {token!r}", start)
        fields.append(int(token))
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 supported, got {maxval}", 0)
    pos += 1  # single whitespace after maxval
    expected = width * height * 3
    if len(data) - pos != expected:
        raise FormatError(
            f"{path}: expected {expected} pixel bytes, got {len(data) - pos}", pos
        )
    return np.frombuffer(data, dtype=np.uint8, offset=pos).reshape(height, width, 3).copy()


def save_camera_track(path, intrinsics: Intrinsics, poses, frame_tag: str) -> None:
    """Persist one view's intrinsics and per-frame camera-to-world poses."""
    poses = tuple(poses)
    require(len(poses) >= 1, "need at least one pose")
    dump_json(
        path,
        {
            "frame_tag": str(frame_tag),
            "intrinsics": intrinsics.to_dict(),
            "poses": [[[float(v) for v in row] for row in p.matrix()] for p in poses],
        },
    )


def load_camera_track(path) -> tuple[Intrinsics, tuple[Pose, ...], str]:
    d = load_json(path)
    try:
        intr = Intrinsics.from_dict(d["intrinsics"])
        mats = d["poses"]
        tag = str(d.get("frame_tag", "reference"))
    except KeyError as exc:
        raise FormatError(f"{path}: camera file missing key {exc}") from None
    if not mats:
        raise FormatError(f"{path}: camera file lists no poses")
    try:
        poses = tuple(Pose.from_matrix(np.asarray(m, dtype=np.float64)) for m in mats)
    except InputError as exc:
        raise FormatError(f"{path}: bad pose matrix: {exc}") from None
    return intr, poses, tag


def load_embeddings_jsonl(path) -> tuple[list[str], np.ndarray]:
    """Read caption/embedding records; returns (captions, (N, E) array)."""
    path = Path(path)
    captions: list[str] = []
    rows: list[list[float]] = []
    dim = None
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            caption = str(rec["caption"])
            emb = [float(v) for v in rec["embedding"]]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: bad embedding record: {exc}") from None
        if dim is None:
            dim = len(emb)
        elif len(emb) != dim:
            raise FormatError(
                f"{path}:{lineno}: embedding dim {len(emb)} differs from first record's {dim}"
            )
        captions.append(caption)
        rows.append(emb)
    if not rows:
        raise FormatError(f"{path}: no embedding records")
    return captions, np.asarray(rows, dtype=np.float64)


def load_actions_jsonl(path) -> ActionTrack:
    """Read per-frame action records; frames must be 0..T-1 (any order)."""
    path = Path(path)
    records: dict[int, list[float]] = {}
    dim = None
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            frame = int(rec["frame"])
            action = [float(v) for v in rec["action"]]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: bad action record: {exc}") from None
        if dim is None:
            dim = len(action)
        elif len(action) != dim:
            raise FormatError(
                f"{path}:{lineno}: action dim {len(action)} differs from first record's {dim}"
            )
        if frame in records:
            raise FormatError(f"{path}:{lineno}: duplicate frame {frame}")
        records[frame] = action
    if not records:
        raise FormatError(f"{path}: no action records")
    frames = sorted(records)
    if frames != list(range(len(frames))):
        raise FormatError(f"{path}: frames must cover 0..{len(frames) - 1} exactly")
    return ActionTrack(np.asarray([records[f] for f in frames], dtype=np.float64))


def write_action_tensor(path, chunked: ChunkedActions) -> None:
    """Write chunked actions as a raw f32le tensor plus {C, r, D_action}."""
    require(isinstance(chunked, ChunkedActions), "expected ChunkedActions")
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(chunked.chunks.astype("<f4")).tobytes())
    dump_json(
        sidecar_path(path),
        {"C": chunked.n_chunks, "r": chunked.rate, "D_action": chunked.d_action},
    )


def read_action_tensor(path) -> ChunkedActions:
    path = Path(path)
    side = sidecar_path(path)
    if not side.exists():
        raise FormatError(f"missing sidecar {side}")
    meta = load_json(side)
    try:
        c, r, d = int(meta["C"]), int(meta["r"]), int(meta["D_action"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{side}: sidecar missing field {exc}") from None
    data = Path(path).read_bytes()
    expected = c * r * d * 4
    if len(data) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for {c}x({r}*{d}) f32le, got {len(data)}",
            min(expected, len(data)),
        )
    chunks = np.frombuffer(data, dtype="<f4").reshape(c, r * d).astype(np.float64)
    return ChunkedActions(rate=r, d_action=d, chunks=chunks)


_NAME_OK = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_.-")


def save_tensor_archive(directory, tensors: dict, seed: int | None = None) -> None:
    """Write named f32le tensors plus a manifest mapping name -> shape.

    ``seed`` documents a seeded initialization in the manifest so archives
    created from a generator remain reproducible.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    shapes = {}
    for name, arr in tensors.items():
        require(
            bool(name) and set(name) <= _NAME_OK,
            f"tensor name {name!r} is not filesystem-safe",
        )
        arr = np.asarray(arr, dtype=np.float64)
        (directory / f"{name}.bin").write_bytes(
            np.ascontiguousarray(arr.astype("<f4")).tobytes()
        )
        shapes[name] = list(arr.shape)
    dump_json(directory / "manifest.json", {"tensors": shapes, "seed": seed})


def load_tensor_archive(directory) -> tuple[dict, int | None]:
    """Read a tensor archive back into {name: float64 array} plus its seed."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"missing manifest {manifest_path}")
    meta = load_json(manifest_path)
    try:
        shapes = meta["tensors"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{manifest_path}: missing field {exc}") from None
    tensors = {}
    for name, shape in shapes.items():
        shape = tuple(int(s) for s in shape)
        bin_path = directory / f"{name}.bin"
        if not bin_path.exists():
            raise FormatError(f"archive tensor file missing: {bin_path}")
        data = bin_path.read_bytes()
        expected = int(np.prod(shape)) * 4 if shape else 4
        if len(data) != expected:
            raise FormatError(
                f"{bin_path}: expected {expected} bytes for shape {shape}, got {len(data)}",
                min(expected, len(data)),
            )
        tensors[name] = np.frombuffer(data, dtype="<f4").reshape(shape).astype(np.float64)
    return tensors, meta.get("seed")
