"""Command-line front end.

Subcommands mirror the pipeline stages (``run`` = all of them) plus the
standalone utilities: ``fit-labels`` clusters caption embeddings into a
label space, ``metrics`` scores generated frames against references, and
``validate`` consistency-checks a produced dataset tree.

Exit codes: 0 success (lenient runs always succeed), 1 usage or input
error, 2 strict-mode failure. ``OCC4D_LOG`` sets log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ._version import __version__
from .config import PipelineConfig, preset, PRESETS
from .exceptions import FormatError, InputError
from .fileio import load_embeddings_jsonl, load_json, read_ppm, read_raster
from .labels import SemanticLabelSpace
from .metrics import psnr, ssim
from .pipeline import ALL_STAGES, run_pipeline, validate_dataset


class _Parser(argparse.ArgumentParser):
    # usage errors exit 1; argparse's default of 2 is reserved for strict failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _setup_logging() -> None:
    name = os.environ.get("OCC4D_LOG", "WARNING").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        try:
            level = int(name)
        except ValueError:
            level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _add_pipeline_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", metavar="PATH", help="pipeline config JSON")
    sub.add_argument(
        "--preset", choices=sorted(PRESETS), help="dataset preset the config starts from"
    )
    sub.add_argument("--episodes", metavar="GLOB", help="episode name filter")
    sub.add_argument("--input-root", metavar="DIR", help="override the config input root")
    sub.add_argument("--output-root", metavar="DIR", help="override the config output root")
    sub.add_argument("--workers", type=int, metavar="N", help="concurrent episodes")
    sub.add_argument("--strict", action="store_true", help="escalate warnings to failures")
    sub.add_argument("--seed", type=int, metavar="N", help="override the config seed")


def _resolve_config(args) -> PipelineConfig:
    if args.config and args.preset:
        body = load_json(args.config)
        if not isinstance(body, dict):
            raise InputError(f"config {args.config} must hold a JSON object")
        body["preset"] = args.preset
        cfg = PipelineConfig.from_dict(body)
    elif args.config:
        cfg = PipelineConfig.from_json(args.config)
    elif args.preset:
        cfg = preset(args.preset)
    else:
        raise InputError("one of --config or --preset is required")

    overrides = {}
    if args.input_root is not None:
        overrides["input_root"] = args.input_root
    if args.output_root is not None:
        overrides["output_root"] = args.output_root
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.strict:
        overrides["strict"] = True
    if args.seed is not None:
        overrides["seed"] = args.seed
    return replace(cfg, **overrides) if overrides else cfg


def _run_stages(args, stages: frozenset) -> int:
    config = _resolve_config(args)
    report = run_pipeline(config, episodes=args.episodes, stages=stages)
    json.dump(report.to_dict(), sys.stdout, indent=2, sort_keys=True)
    print()
    return report.exit_code()


def _cmd_run(args) -> int:
    return _run_stages(args, ALL_STAGES)


def _cmd_build_occ(args) -> int:
    return _run_stages(args, frozenset({"occ"}))


def _cmd_render_cond(args) -> int:
    return _run_stages(args, frozenset({"render"}))


def _cmd_align_cams(args) -> int:
    return _run_stages(args, frozenset({"align"}))


def _cmd_prep_actions(args) -> int:
    return _run_stages(args, frozenset({"actions"}))


def _cmd_fit_labels(args) -> int:
    captions, embeddings = load_embeddings_jsonl(args.embeddings)
    model = SemanticLabelSpace(k=args.k, seed=args.seed)
    model.fit(embeddings, captions=captions)
    model.label_space_.save(args.out)
    json.dump(
        {
            "k": args.k,
            "dim": int(embeddings.shape[1]),
            "n_embeddings": int(embeddings.shape[0]),
            "inertia": model.inertia_,
            "n_iter": model.n_iter_,
            "out": str(args.out),
        },
        sys.stdout,
        indent=2,
        sort_keys=True,
    )
    print()
    return 0


def _load_image(path: Path) -> np.ndarray:
    if path.suffix == ".ppm":
        return read_ppm(path).astype(np.float64) / 255.0
    values = read_raster(path)
    if values.dtype.kind != "f":
        raise InputError(f"{path}: metrics expect float rasters or .ppm images")
    return values.astype(np.float64)


def _metric_pairs(ref: Path, gen: Path) -> list[tuple[Path, Path]]:
    if ref.is_dir() != gen.is_dir():
        raise InputError("--ref and --gen must both be files or both be directories")
    if not ref.is_dir():
        return [(ref, gen)]
    names = sorted(
        {p.name for p in ref.iterdir() if p.suffix in (".ppm", ".bin")}
        & {p.name for p in gen.iterdir() if p.suffix in (".ppm", ".bin")}
    )
    if not names:
        raise InputError(f"no common .ppm/.bin names between {ref} and {gen}")
    return [(ref / n, gen / n) for n in names]


def _cmd_metrics(args) -> int:
    pairs = _metric_pairs(Path(args.ref), Path(args.gen))
    rows = []
    for ref_path, gen_path in pairs:
        a = _load_image(ref_path)
        b = _load_image(gen_path)
        rows.append(
            {"name": gen_path.name, "psnr": psnr(a, b), "ssim": ssim(a, b)}
        )
    out = {
        "pairs": rows,
        "mean_psnr": sum(r["psnr"] for r in rows) / len(rows),
        "mean_ssim": sum(r["ssim"] for r in rows) / len(rows),
    }
    json.dump(out, sys.stdout, indent=2, sort_keys=True)
    print()
    return 0


def _cmd_validate(args) -> int:
    report = validate_dataset(args.root)
    json.dump(report.to_dict(), sys.stdout, indent=2, sort_keys=True)
    print()
    if args.strict and not report.all_ok:
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="occ4d", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    for name, func, desc in (
        ("run", _cmd_run, "full pipeline: occupancy, alignment, renders, actions"),
        ("build-occ", _cmd_build_occ, "backproject + voxelize episodes to OCC4 files"),
        ("render-cond", _cmd_render_cond, "render depth/semantic condition maps"),
        ("align-cams", _cmd_align_cams, "fit side-view depth scales and record them"),
        ("prep-actions", _cmd_prep_actions, "pad and chunk action tracks"),
    ):
        sub = subs.add_parser(name, help=desc, description=desc)
        _add_pipeline_args(sub)
        sub.set_defaults(func=func)

    fit = subs.add_parser(
        "fit-labels",
        help="cluster caption embeddings into a semantic label space",
        description="Cluster caption embeddings (JSONL) into a saved label space.",
    )
    fit.add_argument("--embeddings", required=True, metavar="PATH", help="JSONL embeddings")
    fit.add_argument("--out", required=True, metavar="PATH", help="label space JSON output")
    fit.add_argument("--k", type=int, default=50, help="number of labels (default 50)")
    fit.add_argument("--seed", type=int, default=0, help="clustering seed")
    fit.set_defaults(func=_cmd_fit_labels)

    met = subs.add_parser(
        "metrics",
        help="PSNR/SSIM between generated and reference frames",
        description="Score .ppm/.bin frame pairs; directories are matched by file name.",
    )
    met.add_argument("--ref", required=True, metavar="PATH", help="reference file or dir")
    met.add_argument("--gen", required=True, metavar="PATH", help="generated file or dir")
    met.set_defaults(func=_cmd_metrics)

    val = subs.add_parser(
        "validate",
        help="consistency-check a generated dataset tree",
        description="Check manifests, file existence, OCC4 decodability, and shapes.",
    )
    val.add_argument("root", help="dataset output root")
    val.add_argument("--strict", action="store_true", help="exit 2 on any failure")
    val.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
