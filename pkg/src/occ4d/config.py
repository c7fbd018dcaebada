"""Pipeline configuration and per-dataset presets.

Presets carry the per-dataset processing constants (grid geometry, splat
scale law, sequence layout, action chunking) so a run needs only input and
output roots on top of a preset name.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .exceptions import InputError
from .fileio import load_json
from .occupancy import GridSpec
from .rendering import GaussianScaleParams
from .validation import require


@dataclass(frozen=True)
class SequenceSpec:
    """Training-clip layout: frames per clip, frame step, sampling strides."""

    frames: int
    step: int = 1
    sample_intervals: tuple[int, ...] = (1,)

    def __post_init__(self):
        frames = int(self.frames)
        step = int(self.step)
        require(frames >= 1, f"frames must be >= 1, got {frames}")
        require(step >= 1, f"step must be >= 1, got {step}")
        intervals = tuple(int(i) for i in self.sample_intervals)
        require(len(intervals) >= 1, "need at least one sample interval")
        for i in intervals:
            require(i >= 1, f"sample intervals must be >= 1, got {i}")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "step", step)
        object.__setattr__(self, "sample_intervals", intervals)

    @property
    def span(self) -> int:
        """Source frames covered by one clip."""
        return (self.frames - 1) * self.step + 1

    def to_dict(self) -> dict:
        return {
            "frames": self.frames,
            "step": self.step,
            "sample_intervals": list(self.sample_intervals),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SequenceSpec":
        return cls(
            d["frames"], d.get("step", 1), tuple(d.get("sample_intervals", (1,)))
        )


def enumerate_clips(n_frames: int, seq: SequenceSpec) -> list[dict]:
    """All clip start offsets available in an episode, per sample interval.

    A clip starting at ``s`` uses source frames ``s, s+step, ...`` for
    ``seq.frames`` frames. Which clips a training run actually consumes is
    a downstream choice; this only enumerates the legal starts.
    """
    n_frames = int(n_frames)
    out = []
    for interval in seq.sample_intervals:
        starts = list(range(0, max(n_frames - seq.span + 1, 0), interval))
        if not starts and n_frames >= seq.span:
            starts = [0]
        out.append({"interval": interval, "starts": starts})
    return out


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a pipeline run needs besides the episode data itself."""

    dataset: str
    grid: GridSpec
    render: GaussianScaleParams
    sequence: SequenceSpec
    rate: int = 4
    d_action: int = 7
    input_root: str = "."
    output_root: str = "out"
    strict: bool = False
    workers: int = 1
    seed: int = 0
    reference_view: str = "ref"
    align_mode: str = "scale"
    labelspace_path: str | None = None
    latent_h: int | None = None
    latent_w: int | None = None
    patch: int = 2

    def __post_init__(self):
        require(isinstance(self.grid, GridSpec), "grid must be a GridSpec")
        require(
            isinstance(self.render, GaussianScaleParams),
            "render must be GaussianScaleParams",
        )
        require(isinstance(self.sequence, SequenceSpec), "sequence must be a SequenceSpec")
        require(int(self.rate) >= 1, "rate must be >= 1")
        require(int(self.d_action) >= 1, "d_action must be >= 1")
        require(int(self.workers) >= 1, "workers must be >= 1")
        require(self.align_mode in ("scale", "affine"), "align_mode must be scale or affine")
        object.__setattr__(self, "rate", int(self.rate))
        object.__setattr__(self, "d_action", int(self.d_action))
        object.__setattr__(self, "workers", int(self.workers))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "patch", int(self.patch))

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "grid": self.grid.to_dict(),
            "render": self.render.to_dict(),
            "sequence": self.sequence.to_dict(),
            "rate": self.rate,
            "d_action": self.d_action,
            "input_root": str(self.input_root),
            "output_root": str(self.output_root),
            "strict": self.strict,
            "workers": self.workers,
            "seed": self.seed,
            "reference_view": self.reference_view,
            "align_mode": self.align_mode,
            "labelspace_path": self.labelspace_path,
            "latent_h": self.latent_h,
            "latent_w": self.latent_w,
            "patch": self.patch,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        base: "PipelineConfig | None" = None
        d = dict(d)
        preset_name = d.pop("preset", None)
        if preset_name is not None:
            base = preset(preset_name)
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise InputError(f"bad config field: {key!r}")
        try:
            if base is not None:
                kwargs = {}
                for key, value in d.items():
                    if key == "grid":
                        value = GridSpec.from_dict(value)
                    elif key == "render":
                        value = GaussianScaleParams.from_dict(value)
                    elif key == "sequence":
                        value = SequenceSpec.from_dict(value)
                    kwargs[key] = value
                return replace(base, **kwargs)
            return cls(
                dataset=d["dataset"],
                grid=GridSpec.from_dict(d["grid"]),
                render=GaussianScaleParams.from_dict(d["render"]),
                sequence=SequenceSpec.from_dict(d["sequence"]),
                **{
                    k: d[k]
                    for k in (
                        "rate", "d_action", "input_root", "output_root", "strict",
                        "workers", "seed", "reference_view", "align_mode",
                        "labelspace_path", "latent_h", "latent_w", "patch",
                    )
                    if k in d
                },
            )
        except KeyError as exc:
            raise InputError(f"config missing key {exc}") from None
        except TypeError as exc:
            raise InputError(f"bad config field: {exc}") from None

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        return cls.from_dict(load_json(path))

    def hash_subset(self) -> dict:
        """The processing-relevant fields that participate in content hashes.

        Paths, worker counts, and strictness do not change outputs, so they
        are excluded; re-running into a different root skips identically.
        """
        return {
            "dataset": self.dataset,
            "grid": self.grid.to_dict(),
            "render": self.render.to_dict(),
            "sequence": self.sequence.to_dict(),
            "rate": self.rate,
            "d_action": self.d_action,
            "seed": self.seed,
            "reference_view": self.reference_view,
            "align_mode": self.align_mode,
            "latent_h": self.latent_h,
            "latent_w": self.latent_w,
            "patch": self.patch,
        }


def _preset_grid(extent_z: float) -> GridSpec:
    # The canonical frame anchors the reference camera at the origin looking
    # +Z, so the grid sits centered in x/y and ahead of the camera in z.
    return GridSpec(origin=(-0.2, -0.2, 0.0), extent=(0.4, 0.4, extent_z), voxel_size=0.001)


PRESETS: dict[str, PipelineConfig] = {
    "bridge": PipelineConfig(
        dataset="bridge",
        grid=_preset_grid(0.4),
        render=GaussianScaleParams(k=0.00023, alpha=3.7),
        sequence=SequenceSpec(frames=16, step=1, sample_intervals=(4, 16)),
        latent_h=40,
        latent_w=60,
    ),
    "droid": PipelineConfig(
        dataset="droid",
        grid=_preset_grid(0.6),
        render=GaussianScaleParams(k=0.00047, alpha=3.2),
        sequence=SequenceSpec(frames=24, step=3, sample_intervals=(16, 72)),
        latent_h=32,
        latent_w=40,
    ),
    "rt1": PipelineConfig(
        dataset="rt1",
        grid=_preset_grid(0.6),
        render=GaussianScaleParams(k=0.00047, alpha=3.2),
        sequence=SequenceSpec(frames=16, step=2, sample_intervals=(6, 16)),
        latent_h=40,
        latent_w=60,
    ),
}


def preset(name: str) -> PipelineConfig:
    """Look up a dataset preset by name."""
    try:
        return PRESETS[name]
    except KeyError:
        raise InputError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}"
        ) from None
