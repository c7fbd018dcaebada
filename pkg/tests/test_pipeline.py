"""End-to-end pipeline runs over synthetic episode directories.

Every episode yields one occupancy container, per-view condition rasters,
and an action tensor, all listed in a per-episode manifest keyed by an
input hash. Reruns with unchanged inputs are skipped without touching the
output tree; per-episode failures never abort sibling episodes; strict
mode escalates warnings to failures and flips the exit code to 2.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

from occ4d.exceptions import InputError
from occ4d.fileio import write_raster
from occ4d.occ4 import decode_occ4
from occ4d.pipeline import discover_episodes, run_pipeline, validate_dataset

from conftest import make_config, write_episode


def _tree_state(root: Path) -> dict:
    return {
        str(p.relative_to(root)): (p.stat().st_mtime_ns, p.stat().st_size)
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def _tree_bytes(root: Path) -> dict:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def _manifest(output_root: Path, name: str) -> dict:
    return json.loads((output_root / name / "manifest.json").read_text())


class TestFullRun:
    def test_two_frame_episode_outputs(self, tmp_path):
        inp, out = tmp_path / "in", tmp_path / "out"
        write_episode(inp, "ep000")
        report = run_pipeline(make_config(inp, out))
        assert [r.status for r in report.results] == ["ok"]
        assert report.exit_code() == 0

        manifest = _manifest(out, "ep000")
        assert manifest["occupancy"] == "ep000/occupancy.occ4"
        assert set(manifest["views"]) == {"ref", "side"}
        for view in ("ref", "side"):
            conditions = manifest["views"][view]["conditions"]
            assert len(conditions["depth"]) == 2
            assert len(conditions["sem"]) == 2
            assert len(conditions["sem_preview"]) == 2
        assert manifest["actions"]["rows"] == 2
        assert manifest["actions"]["chunks"] == 2
        for rel in (
            manifest["occupancy"],
            manifest["actions"]["tensor"],
            *manifest["views"]["ref"]["conditions"]["depth"],
            *manifest["views"]["side"]["conditions"]["sem_preview"],
        ):
            assert (out / rel).is_file(), rel

    def test_occupancy_content(self, tmp_path):
        inp, out = tmp_path / "in", tmp_path / "out"
        write_episode(inp, "ep000", with_side=False)
        config = make_config(inp, out)
        run_pipeline(config)
        grid = decode_occ4((out / "ep000" / "occupancy.occ4").read_bytes())
        assert len(grid.frames) == 2
        assert grid.timestamps == (0, 1)
        # a 16 x 12 constant-depth plane at z = 0.2 with 0.01 voxels covers
        # exactly one z layer of 16 x 12 cells
        frame = grid.frames[0]
        assert len(frame.voxels) > 0
        assert set(frame.indices[:, 2].tolist()) == {20}
        assert set(frame.labels.tolist()) == {1}

    def test_side_view_fit_recovers_half_scale(self, tmp_path):
        inp, out = tmp_path / "in", tmp_path / "out"
        write_episode(inp, "ep000")
        run_pipeline(make_config(inp, out))
        fits = _manifest(out, "ep000")["camera_fits"]
        assert_allclose(fits["side"]["scale"], 0.5, atol=1e-9)
        assert fits["side"]["shift"] == 0.0

    def test_reference_depth_round_trips_through_render(self, tmp_path):
        """The rendered reference depth must sit within one voxel of the
        input plane wherever it is covered."""
        inp, out = tmp_path / "in", tmp_path / "out"
        write_episode(inp, "ep000", with_side=False)
        config = make_config(inp, out)
        run_pipeline(config)
        from occ4d.fileio import read_depth

        depth = read_depth(out / "ep000" / "ref" / "000000_depth.bin").values
        covered = depth > 0
        assert covered.mean() > 0.5
        assert np.abs(depth[covered] - 0.2).max() < 2 * config.grid.voxel_size

    def test_missing_actions_file_is_soft(self, tmp_path):
        inp, out = tmp_path / "in", tmp_path / "out"
        write_episode(inp, "ep000", with_actions=False)
        report = run_pipeline(make_config(inp, out))
        result = report.results[0]
        assert result.status == "ok"
        assert any("actions.jsonl" in w for w in result.warnings)
        assert "actions" not in _manifest(out, "ep000")

    def test_missing_masks_warn_once_per_view(self, tmp_path):
        inp, out = tmp_path / "in", tmp_path / "out"
        write_episode(inp, "ep000", with_side=False, with_mask=False)
        report = run_pipeline(make_config(inp, out))
        result = report.results[0]
        assert result.status == "ok"
        mask_warnings = [w for w in result.warnings if "mask" in w]
        assert len(mask_warnings) == 1

    def test_tokens_recorded_when_latent_shape_known(self, tmp_path):
        inp, out = tmp_path / "in", tmp_path / "out"
        write_episode(inp, "ep000", with_side=False)
        config = make_config(inp, out, latent_h=40, latent_w=60)
        run_pipeline(config)
        manifest = _manifest(out, "ep000")
        assert manifest["tokens"] == 600  # ceil((2 + 1) / 4) * 20 * 30


class TestSkipLogic:
    def test_rerun_is_skipped_and_touches_nothing(self, tmp_path):
        inp, out = tmp_path / "in", tmp_path / "out"
        write_episode(inp, "ep000")
        config = make_config(inp, out)
        run_pipeline(config)
        before = _tree_state(out)
        report = run_pipeline(config)
        assert [r.status for r in report.results] == ["skipped"]
        assert _tree_state(out) == before

    def test_changed_input_invalidates_skip(self, tmp_path):
        inp, out = tmp_path / "in", tmp_path / "out"
        episode = write_episode(inp, "ep000")
        config = make_config(inp, out)
        run_pipeline(config)
        depth = np.full((12, 16), 0.21, dtype=np.float32)
        write_raster(episode / "ref" / "000001_depth.bin", depth)
        report = run_pipeline(config)
        assert [r.status for r in report.results] == ["ok"]

    def test_changed_processing_config_invalidates_skip(self, tmp_path):
        inp, out = tmp_path / "in", tmp_path / "out"
        write_episode(inp, "ep000")
        run_pipeline(make_config(inp, out))
        report = run_pipeline(make_config(inp, out, seed=9))
        assert [r.status for r in report.results] == ["ok"]

    def test_partial_stage_runs_never_skip(self, tmp_path):
        inp, out = tmp_path / "in", tmp_path / "out"
        write_episode(inp, "ep000")
        config = make_config(inp, out)
        run_pipeline(config, stages=frozenset({"occ"}))
        report = run_pipeline(config, stages=frozenset({"occ"}))
        assert [r.status for r in report.results] == ["ok"]


class TestStageSelection:
    def test_render_requires_occupancy_first(self, tmp_path):
        inp, out = tmp_path / "in", tmp_path / "out"
        write_episode(inp, "ep000")
        config = make_config(inp, out)
        report = run_pipeline(config, stages=frozenset({"render"}))
        result = report.results[0]
        assert result.status == "error"
        assert "build-occ" in result.error

    def test_staged_runs_accumulate_manifest(self, tmp_path):
        inp, out = tmp_path / "in", tmp_path / "out"
        write_episode(inp, "ep000")
        config = make_config(inp, out)
        run_pipeline(config, stages=frozenset({"occ"}))
        manifest = _manifest(out, "ep000")
        assert "occupancy" in manifest and "views" not in manifest
        run_pipeline(config, stages=frozenset({"align", "render"}))
        run_pipeline(config, stages=frozenset({"actions"}))
        manifest = _manifest(out, "ep000")
        assert {"occupancy", "views", "camera_fits", "actions"} <= set(manifest)

    def test_empty_stage_set_rejected(self, tmp_path):
        inp, out = tmp_path / "in", tmp_path / "out"
        write_episode(inp, "ep000")
        with pytest.raises(InputError):
            run_pipeline(make_config(inp, out), stages=frozenset())


class TestErrorIsolation:
    def test_empty_episode_dir_is_isolated(self, tmp_path):
        inp, out = tmp_path / "in", tmp_path / "out"
        write_episode(inp, "ep000")
        (inp / "ep001").mkdir()
        report = run_pipeline(make_config(inp, out))
        by_name = {r.episode: r for r in report.results}
        assert by_name["ep000"].status == "ok"
        assert by_name["ep001"].status == "error"
        assert "cameras.json" in by_name["ep001"].error
        assert report.exit_code() == 0

    def test_strict_escalates_warnings_to_failure(self, tmp_path):
        inp, out = tmp_path / "in", tmp_path / "out"
        # 2 frames: the clip-length warning (3 is not 8N + 1) always fires
        write_episode(inp, "ep000")
        report = run_pipeline(make_config(inp, out, strict=True))
        assert report.results[0].status == "failed"
        assert report.exit_code() == 2

    def test_missing_input_root(self, tmp_path):
        with pytest.raises(InputError):
            discover_episodes(tmp_path / "nope")

    def test_episode_pattern_filter(self, tmp_path):
        inp = tmp_path / "in"
        for name in ("ep000", "ep001", "extra"):
            write_episode(inp, name)
        assert discover_episodes(inp) == ["ep000", "ep001", "extra"]
        assert discover_episodes(inp, "ep*") == ["ep000", "ep001"]


class TestDeterminism:
    def test_same_inputs_same_bytes_across_roots(self, tmp_path):
        inp = tmp_path / "in"
        write_episode(inp, "ep000")
        write_episode(inp, "ep001", n_frames=3)
        out_a, out_b = tmp_path / "out_a", tmp_path / "out_b"
        run_pipeline(make_config(inp, out_a))
        run_pipeline(make_config(inp, out_b))
        assert _tree_bytes(out_a) == _tree_bytes(out_b)

    def test_parallel_run_matches_serial(self, tmp_path):
        inp = tmp_path / "in"
        for i in range(3):
            write_episode(inp, f"ep{i:03d}", n_frames=2 + i)
        out_serial, out_parallel = tmp_path / "serial", tmp_path / "parallel"
        run_pipeline(make_config(inp, out_serial, workers=1))
        run_pipeline(make_config(inp, out_parallel, workers=3))
        assert _tree_bytes(out_serial) == _tree_bytes(out_parallel)


class TestValidateDataset:
    def _built_tree(self, tmp_path, n_frames=4):
        inp, out = tmp_path / "in", tmp_path / "out"
        # 4 frames: the action tensor chunk count equals ceil((4 + 1) / 4)
        write_episode(inp, "ep000", n_frames=n_frames)
        run_pipeline(make_config(inp, out))
        return out

    def test_fresh_tree_passes(self, tmp_path):
        report = validate_dataset(self._built_tree(tmp_path))
        assert report.all_ok
        assert report.to_dict()["ok"] is True

    def test_truncated_occupancy_flagged(self, tmp_path):
        out = self._built_tree(tmp_path)
        occ = out / "ep000" / "occupancy.occ4"
        occ.write_bytes(occ.read_bytes()[:-1])
        report = validate_dataset(out)
        assert not report.all_ok
        reasons = report.checks[0].reasons
        assert any("undecodable" in r for r in reasons)

    def test_wrong_chunk_count_flagged(self, tmp_path):
        out = self._built_tree(tmp_path)
        from occ4d.actions import chunk_actions
        from occ4d.fileio import write_action_tensor

        bad = chunk_actions(np.zeros((12, 7)), 4, 7)  # 3 chunks, expected 2
        write_action_tensor(out / "ep000" / "actions.bin", bad)
        report = validate_dataset(out)
        assert not report.all_ok
        assert any("chunk" in r for r in report.checks[0].reasons)

    def test_missing_file_flagged(self, tmp_path):
        out = self._built_tree(tmp_path)
        (out / "ep000" / "ref" / "000000_sem.ppm").unlink()
        report = validate_dataset(out)
        assert not report.all_ok
        assert any("missing file" in r for r in report.checks[0].reasons)

    def test_nonexistent_root_rejected(self, tmp_path):
        with pytest.raises(InputError):
            validate_dataset(tmp_path / "missing")
