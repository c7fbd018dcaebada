"""Batch pipeline: episodes in, occupancy + condition maps + actions out.

Episode input layout (under ``config.input_root``)::

    <episode>/
        actions.jsonl              per-frame {"frame", "action"} records
        <view>/cameras.json        frame_tag, intrinsics, per-frame c2w poses
        <view>/NNNNNN_depth.bin    f32le raster + .json sidecar
        <view>/NNNNNN_mask.bin     u16le labels + sidecar (optional)
        <view>/align_depth.bin     side views in a foreign frame_tag only:
                                   that view's estimate of the reference
                                   view's frame-0 depth, for metric fitting

Outputs (under ``config.output_root``)::

    <episode>/manifest.json
    <episode>/occupancy.occ4
    <episode>/actions.bin (+ .json)
    <episode>/<view>/NNNNNN_depth.bin (+ .json)
    <episode>/<view>/NNNNNN_sem.bin  (+ .json)
    <episode>/<view>/NNNNNN_sem.ppm

Everything is deterministic for fixed config + inputs + seed: manifests
carry no timestamps, JSON keys are sorted, file lists are sorted, and
manifest paths are output-root relative.
"""

from __future__ import annotations

import fnmatch
import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._version import __version__
from .actions import chunk_actions, pad_track, token_count, validate_length
from .alignment import CameraRig, RigView, fit_affine_depth, fit_scale_depth, transfer_rig
from .config import PipelineConfig, enumerate_clips
from .exceptions import FormatError, InputError
from .fileio import (
    dump_json,
    load_actions_jsonl,
    load_camera_track,
    load_json,
    read_action_tensor,
    read_depth,
    read_mask,
    sidecar_path,
    write_action_tensor,
    write_ppm,
    write_raster,
)
from .geometry import backproject_depth
from .labels import LabelSpace, build_palette
from .occ4 import decode_occ4, encode_occ4
from .occupancy import OccupancyGrid4D, voxelize_points
from .rendering import render_condition_maps
from .validation import require

log = logging.getLogger("occ4d.pipeline")

ALL_STAGES = frozenset({"occ", "align", "render", "actions"})

TOOL_INFO = {"name": "occ4d", "version": __version__}


@dataclass
class EpisodeResult:
    """Outcome of processing one episode."""

    episode: str
    status: str  # ok | skipped | error | failed
    manifest: dict | None = None
    error: str | None = None
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "episode": self.episode,
            "status": self.status,
            "error": self.error,
            "warnings": list(self.warnings),
        }


@dataclass
class RunReport:
    """All per-episode outcomes of one pipeline invocation."""

    results: list
    strict: bool = False

    @property
    def n_errors(self) -> int:
        return sum(1 for r in self.results if r.status in ("error", "failed"))

    def exit_code(self) -> int:
        # Lenient mode reports errors in the payload but exits cleanly.
        if self.strict and self.n_errors:
            return 2
        return 0

    def to_dict(self) -> dict:
        return {
            "episodes": [r.to_dict() for r in self.results],
            "errors": self.n_errors,
            "strict": self.strict,
        }


def discover_episodes(input_root, pattern: str | None = None) -> list[str]:
    """Sorted episode directory names under the input root."""
    root = Path(input_root)
    if not root.is_dir():
        raise InputError(f"input root {root} is not a directory")
    names = [p.name for p in sorted(root.iterdir()) if p.is_dir()]
    if pattern:
        names = [n for n in names if fnmatch.fnmatch(n, pattern)]
    return names


def episode_input_hash(config: PipelineConfig, episode_dir: Path) -> str:
    """64-bit content hash over the episode's input files + config subset."""
    h = hashlib.blake2b(digest_size=8)
    h.update(json.dumps(config.hash_subset(), sort_keys=True).encode())
    for f in sorted(p for p in episode_dir.rglob("*") if p.is_file()):
        h.update(f.relative_to(episode_dir).as_posix().encode())
        h.update(b"\x00")
        h.update(f.read_bytes())
    return h.hexdigest()


def _manifest_output_paths(manifest: dict) -> list[str]:
    """Relative output paths a manifest claims to have produced."""
    paths = []
    if manifest.get("occupancy"):
        paths.append(manifest["occupancy"])
    actions = manifest.get("actions") or {}
    if actions.get("tensor"):
        paths.append(actions["tensor"])
        paths.append(sidecar_path(actions["tensor"]).as_posix())
    for view in (manifest.get("views") or {}).values():
        cond = view.get("conditions") or {}
        for key in ("depth", "sem", "sem_preview"):
            for rel in cond.get(key, ()):
                paths.append(rel)
                if rel.endswith(".bin"):
                    paths.append(sidecar_path(rel).as_posix())
    return paths


@dataclass
class _View:
    name: str
    directory: Path
    intrinsics: object
    poses: tuple
    frame_tag: str


def _load_views(episode_dir: Path) -> dict[str, _View]:
    views = {}
    for child in sorted(episode_dir.iterdir()):
        cam = child / "cameras.json"
        if child.is_dir() and cam.exists():
            intr, poses, tag = load_camera_track(cam)
            views[child.name] = _View(child.name, child, intr, poses, tag)
    if not views:
        raise InputError(f"episode {episode_dir.name!r} has no views with cameras.json")
    return views


def _frame_ids(view_dir: Path) -> list[int]:
    ids = sorted(
        int(p.name[:6]) for p in view_dir.glob("*_depth.bin") if p.name[:6].isdigit()
    )
    if not ids:
        raise InputError(f"no depth frames in {view_dir}")
    if ids != list(range(len(ids))):
        raise InputError(f"{view_dir}: frame ids must be contiguous from 0, got {ids}")
    return ids


def _read_frame(view: _View, frame: int, warned_views: set, warnings: list):
    depth = read_depth(view.directory / f"{frame:06d}_depth.bin")
    if (depth.height, depth.width) != (view.intrinsics.height, view.intrinsics.width):
        raise InputError(
            f"{view.name} frame {frame}: raster {depth.width}x{depth.height} does not "
            f"match intrinsics {view.intrinsics.width}x{view.intrinsics.height}"
        )
    mask_path = view.directory / f"{frame:06d}_mask.bin"
    if mask_path.exists():
        mask = read_mask(mask_path)
        require(mask.shape == depth.values.shape, f"mask shape mismatch on frame {frame}")
    else:
        mask = np.zeros_like(depth.values, dtype=np.uint16)
        if view.name not in warned_views:
            warnings.append(f"view {view.name}: no mask rasters, labels default to 0")
            warned_views.add(view.name)
    return depth, mask


def _build_occupancy(config, ref: _View, frame_ids, warnings):
    frames = []
    total_points = 0
    total_dropped = 0
    warned = set()
    for fi in frame_ids:
        depth, mask = _read_frame(ref, fi, warned, warnings)
        points = backproject_depth(depth, mask, ref.intrinsics, ref.poses[fi])
        result = voxelize_points(points, config.grid)
        frames.append(result.frame)
        total_points += len(points)
        total_dropped += result.n_dropped
    grid = OccupancyGrid4D(config.grid, tuple(frames), tuple(frame_ids))
    return grid, total_points, total_dropped


def _fit_side_views(config, views, ref: _View, warnings):
    """Metric fits for views whose poses live in a foreign coordinate frame."""
    fits = {}
    foreign = {
        n: v for n, v in views.items() if n != ref.name and v.frame_tag != ref.frame_tag
    }
    if not foreign:
        return fits
    ref_depth = read_depth(ref.directory / "000000_depth.bin")
    fit_fn = fit_scale_depth if config.align_mode == "scale" else fit_affine_depth
    for name, view in sorted(foreign.items()):
        align_path = view.directory / "align_depth.bin"
        if not align_path.exists():
            warnings.append(
                f"view {name}: frame tag {view.frame_tag!r} differs from reference "
                f"{ref.frame_tag!r} and no align_depth.bin exists; view skipped"
            )
            continue
        fits[name] = fit_fn(ref_depth, read_depth(align_path))
    return fits


def _render_views(config, grid, views, ref, fits, out_dir: Path, palette):
    per_view = {}
    episode = out_dir.name
    for name, view in sorted(views.items()):
        if name != ref.name and view.frame_tag != ref.frame_tag and name not in fits:
            continue  # foreign frame with no fit; warned during alignment
        require(
            len(view.poses) >= len(grid.frames),
            f"view {name} has {len(view.poses)} poses for {len(grid.frames)} frames",
        )
        poses = view.poses
        if name in fits:
            rig = CameraRig((RigView(name, view.intrinsics, view.poses),), view.frame_tag)
            poses = transfer_rig(rig, fits[name], ref.frame_tag).views[0].poses
        view_out = out_dir / name
        view_out.mkdir(parents=True, exist_ok=True)

        def render_one(fi_frame, _view=view, _poses=poses, _out=view_out, _name=name):
            fi, frame = fi_frame
            depth_map, sem_map = render_condition_maps(
                frame, _view.intrinsics, _poses[fi], config.render, palette
            )
            write_raster(_out / f"{fi:06d}_depth.bin", depth_map.depth)
            write_raster(_out / f"{fi:06d}_sem.bin", sem_map.labels)
            write_ppm(_out / f"{fi:06d}_sem.ppm", sem_map.rgb)
            return (
                f"{episode}/{_name}/{fi:06d}_depth.bin",
                f"{episode}/{_name}/{fi:06d}_sem.bin",
                f"{episode}/{_name}/{fi:06d}_sem.ppm",
            )

        jobs = [(int(fi), frame) for fi, frame in zip(grid.timestamps, grid.frames)]
        if config.workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                rels = list(pool.map(render_one, jobs))
        else:
            rels = [render_one(j) for j in jobs]

        per_view[name] = {
            "frame_tag": view.frame_tag,
            "raster": {"width": view.intrinsics.width, "height": view.intrinsics.height},
            "conditions": {
                "depth": [r[0] for r in rels],
                "sem": [r[1] for r in rels],
                "sem_preview": [r[2] for r in rels],
            },
        }
    return per_view


def _input_listing(episode: str, views: dict, ref: _View, frame_ids) -> dict:
    """Input files per view, relative to the input root."""
    listing = {}
    for name, view in sorted(views.items()):
        entry = {"cameras": f"{episode}/{name}/cameras.json", "depth": [], "mask": []}
        if name == ref.name:
            entry["depth"] = [f"{episode}/{name}/{fi:06d}_depth.bin" for fi in frame_ids]
            entry["mask"] = [
                f"{episode}/{name}/{fi:06d}_mask.bin"
                for fi in frame_ids
                if (view.directory / f"{fi:06d}_mask.bin").exists()
            ]
        elif (view.directory / "align_depth.bin").exists():
            entry["align_depth"] = f"{episode}/{name}/align_depth.bin"
        listing[name] = entry
    return listing


def _prep_actions(config, episode_dir: Path, out_dir: Path, n_frames: int, warnings):
    actions_path = episode_dir / "actions.jsonl"
    if not actions_path.exists():
        warnings.append("no actions.jsonl; action stage skipped")
        return None
    track = load_actions_jsonl(actions_path)
    if track.dim != config.d_action:
        raise InputError(f"actions have dim {track.dim}, config expects {config.d_action}")
    if track.n_frames != n_frames:
        warnings.append(f"action rows ({track.n_frames}) != depth frames ({n_frames})")
    padded = pad_track(track, config.rate)
    chunked = chunk_actions(padded, config.rate, config.d_action)
    write_action_tensor(out_dir / "actions.bin", chunked)
    check = validate_length(n_frames + 1)
    if not check.ok:
        warnings.append(f"clip length check: {check.reason}")
    return {
        "tensor": f"{out_dir.name}/actions.bin",
        "rows": track.n_frames,
        "chunks": chunked.n_chunks,
        "pad_rows": chunked.padded_length - track.n_frames,
        "rate": config.rate,
        "d_action": config.d_action,
        "length_check": {
            "frames": n_frames + 1,
            "ok": check.ok,
            "n": check.n,
            "reason": check.reason,
        },
    }


def _load_palette(config, grid):
    if config.labelspace_path:
        return LabelSpace.load(config.labelspace_path).palette
    max_label = 0
    for frame in grid.frames:
        if len(frame):
            max_label = max(max_label, int(frame.voxels[:, 3].max()))
    return build_palette(max(max_label, 1))


def _process_episode(config: PipelineConfig, name: str, stages: frozenset) -> EpisodeResult:
    episode_dir = Path(config.input_root) / name
    out_dir = Path(config.output_root) / name
    warnings: list[str] = []
    try:
        views = _load_views(episode_dir)
        if config.reference_view in views:
            ref = views[config.reference_view]
        else:
            ref = views[sorted(views)[0]]
            warnings.append(
                f"reference view {config.reference_view!r} missing; using {ref.name!r}"
            )
        frame_ids = _frame_ids(ref.directory)
        require(
            len(ref.poses) >= len(frame_ids),
            f"reference view has {len(ref.poses)} poses for {len(frame_ids)} frames",
        )

        input_hash = episode_input_hash(config, episode_dir)
        manifest_path = out_dir / "manifest.json"
        if stages == ALL_STAGES and manifest_path.exists():
            try:
                existing = load_json(manifest_path)
            except FormatError:
                existing = None
            if existing and existing.get("input_hash") == input_hash:
                out_root = Path(config.output_root)
                if all((out_root / rel).exists() for rel in _manifest_output_paths(existing)):
                    log.info("episode %s: up to date, skipping", name)
                    return EpisodeResult(name, "skipped", manifest=existing)

        out_dir.mkdir(parents=True, exist_ok=True)
        manifest = {}
        if manifest_path.exists():
            # Partial-stage runs extend whatever an earlier run recorded.
            try:
                manifest = load_json(manifest_path)
            except FormatError:
                manifest = {}

        grid = None
        if "occ" in stages:
            log.info("episode %s: building occupancy (%d frames)", name, len(frame_ids))
            grid, n_points, n_dropped = _build_occupancy(config, ref, frame_ids, warnings)
            (out_dir / "occupancy.occ4").write_bytes(encode_occ4(grid))
            manifest["occupancy"] = f"{name}/occupancy.occ4"
            manifest["counters"] = {
                "frames": len(frame_ids),
                "points": n_points,
                "points_dropped": n_dropped,
                "voxels_per_frame": [len(f) for f in grid.frames],
            }
        elif "render" in stages:
            occ_path = out_dir / "occupancy.occ4"
            if not occ_path.exists():
                raise InputError(f"{occ_path} missing; run build-occ first")
            grid = decode_occ4(occ_path.read_bytes())

        fits = {}
        if "align" in stages or "render" in stages:
            fits = _fit_side_views(config, views, ref, warnings)
            manifest["camera_fits"] = {v: f.to_dict() for v, f in sorted(fits.items())}

        if "render" in stages:
            log.info("episode %s: rendering %d views", name, len(views))
            palette = _load_palette(config, grid)
            view_entries = _render_views(config, grid, views, ref, fits, out_dir, palette)
            inputs = _input_listing(name, views, ref, frame_ids)
            for vname, entry in view_entries.items():
                entry["inputs"] = inputs[vname]
            manifest["views"] = view_entries

        if "actions" in stages:
            entry = _prep_actions(config, episode_dir, out_dir, len(frame_ids), warnings)
            if entry is not None:
                manifest["actions"] = entry

        manifest["episode"] = name
        manifest["input_hash"] = input_hash
        manifest["tool"] = dict(TOOL_INFO)
        manifest["grid"] = config.grid.to_dict()
        manifest["clips"] = enumerate_clips(len(frame_ids), config.sequence)
        if config.latent_h and config.latent_w:
            manifest["tokens"] = token_count(
                config.sequence.frames, config.latent_h, config.latent_w,
                config.patch, config.rate,
            )
        manifest["warnings"] = sorted(warnings)
        dump_json(manifest_path, manifest)

        for w in warnings:
            log.warning("episode %s: %s", name, w)
        status = "failed" if (config.strict and warnings) else "ok"
        return EpisodeResult(name, status, manifest=manifest, warnings=warnings)
    except Exception as exc:  # per-episode isolation: one bad episode cannot stop a run
        log.error("episode %s failed: %s", name, exc)
        return EpisodeResult(name, "error", error=str(exc), warnings=warnings)


def run_pipeline(
    config: PipelineConfig,
    episodes=None,
    stages: frozenset = ALL_STAGES,
) -> RunReport:
    """Process episodes through the selected stages.

    ``episodes`` may be None (all episodes under the input root), a glob
    pattern, or an explicit list of names. Stage subsets implement the
    narrower CLI subcommands; ``run`` uses all stages. Full runs skip
    episodes whose inputs and config hash to an existing manifest.
    """
    stages = frozenset(stages)
    require(
        bool(stages) and stages <= ALL_STAGES,
        f"stages must be a non-empty subset of {sorted(ALL_STAGES)}",
    )
    if episodes is None or isinstance(episodes, str):
        names = discover_episodes(config.input_root, episodes)
    else:
        names = list(episodes)
    Path(config.output_root).mkdir(parents=True, exist_ok=True)

    if config.workers > 1 and len(names) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(lambda n: _process_episode(config, n, stages), names))
    else:
        results = [_process_episode(config, n, stages) for n in names]
    return RunReport(results=results, strict=config.strict)


@dataclass
class EpisodeCheck:
    episode: str
    ok: bool
    reasons: list

    def to_dict(self) -> dict:
        return {"episode": self.episode, "ok": self.ok, "reasons": list(self.reasons)}


@dataclass
class DatasetReport:
    checks: list

    @property
    def all_ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def to_dict(self) -> dict:
        return {"episodes": [c.to_dict() for c in self.checks], "ok": self.all_ok}


def _check_episode_manifest(root: Path, manifest_path: Path) -> EpisodeCheck:
    episode = manifest_path.parent.name
    reasons: list[str] = []
    try:
        manifest = load_json(manifest_path)
    except FormatError as exc:
        return EpisodeCheck(episode, False, [f"manifest unreadable: {exc}"])

    for rel in _manifest_output_paths(manifest):
        if not (root / rel).exists():
            reasons.append(f"missing file: {rel}")

    grid = None
    occ_rel = manifest.get("occupancy")
    if occ_rel and (root / occ_rel).exists():
        try:
            grid = decode_occ4((root / occ_rel).read_bytes())
        except FormatError as exc:
            reasons.append(f"occupancy undecodable: {exc}")
    if grid is not None:
        counters = manifest.get("counters") or {}
        if counters.get("frames") is not None and counters["frames"] != len(grid.frames):
            reasons.append(
                f"occupancy has {len(grid.frames)} frames, manifest says {counters['frames']}"
            )

    actions = manifest.get("actions") or {}
    if actions.get("tensor") and (root / actions["tensor"]).exists():
        try:
            chunked = read_action_tensor(root / actions["tensor"])
            rows = int(actions.get("rows", 0))
            expected = math.ceil((rows + 1) / chunked.rate)
            if chunked.n_chunks != expected:
                reasons.append(
                    f"action tensor has {chunked.n_chunks} chunks, "
                    f"expected ceil((T+1)/r) = {expected} for T = {rows}"
                )
        except FormatError as exc:
            reasons.append(f"action tensor unreadable: {exc}")

    for vname, view in sorted((manifest.get("views") or {}).items()):
        raster = view.get("raster") or {}
        want = (raster.get("height"), raster.get("width"))
        for rel in (view.get("conditions") or {}).get("depth", ()):
            side = root / sidecar_path(rel)
            if not side.exists():
                continue  # already reported as a missing file above
            try:
                meta = load_json(side)
            except FormatError as exc:
                reasons.append(f"bad sidecar {rel}: {exc}")
                continue
            got = (meta.get("height"), meta.get("width"))
            if None not in want and got != want:
                reasons.append(
                    f"view {vname}: condition raster {rel} is {got[1]}x{got[0]}, "
                    f"camera raster is {want[1]}x{want[0]}"
                )
    return EpisodeCheck(episode, not reasons, reasons)


def validate_dataset(root) -> DatasetReport:
    """Consistency-check a generated dataset tree; findings, not exceptions."""
    root = Path(root)
    if not root.is_dir():
        raise InputError(f"dataset root {root} is not a directory")
    manifests = sorted(root.glob("*/manifest.json"))
    return DatasetReport(checks=[_check_episode_manifest(root, m) for m in manifests])
