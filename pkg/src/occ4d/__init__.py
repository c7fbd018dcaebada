"""Occupancy-centric curation of robot manipulation video datasets.

Builds sparse 4D semantic occupancy from posed depth video, splats it back
into per-frame depth/semantic condition maps, aligns multi-view camera rigs
through depth fits, and packs action tracks for temporally compressed video
models. A batch pipeline plus CLI ties the stages together per episode.
"""

from ._version import __version__
from .actions import (
    ActionChunker,
    ActionTrack,
    ChunkedActions,
    LengthCheck,
    TokenBudget,
    chunk_actions,
    pad_track,
    token_count,
    validate_length,
)
from .alignment import (
    CameraRig,
    DepthAligner,
    DepthFit,
    RigView,
    fit_affine_depth,
    fit_scale_depth,
    transfer_rig,
)
from .conditioning import (
    AdaLNResult,
    AdaLNWeights,
    FusionWeights,
    MlpWeights,
    TokenLayout,
    action_embed,
    adaln_modulate,
    fuse_conditions,
    layer_norm,
    silu,
    sincos_pe,
)
from .config import PRESETS, PipelineConfig, SequenceSpec, enumerate_clips, preset
from .exceptions import DegenerateFitError, FormatError, InputError
from .geometry import (
    DepthImage,
    Intrinsics,
    LabeledPointSet,
    Pose,
    ProjectedPoints,
    backproject_depth,
    project_points,
)
from .labels import (
    KMeansResult,
    LabelSpace,
    SemanticLabelSpace,
    assign_label,
    build_palette,
    kmeans,
    kmeans_fit,
)
from .metrics import psnr, ssim
from .occ4 import decode_occ4, encode_occ4
from .occupancy import (
    GridSpec,
    OccupancyFrame,
    OccupancyGrid4D,
    PointVoxelizer,
    VoxelizeResult,
    vote_semantics,
    voxelize_mesh,
    voxelize_points,
)
from .pipeline import (
    DatasetReport,
    EpisodeResult,
    RunReport,
    discover_episodes,
    run_pipeline,
    validate_dataset,
)
from .rendering import (
    ConditionMap,
    GaussianScaleParams,
    OccupancySplatRenderer,
    labels_to_rgb,
    render_condition_maps,
    render_depth,
    render_semantics,
    splat_scale,
)

__all__ = [
    "__version__",
    "ActionChunker",
    "ActionTrack",
    "AdaLNResult",
    "AdaLNWeights",
    "CameraRig",
    "ChunkedActions",
    "ConditionMap",
    "DatasetReport",
    "DegenerateFitError",
    "DepthAligner",
    "DepthFit",
    "DepthImage",
    "EpisodeResult",
    "FormatError",
    "FusionWeights",
    "GaussianScaleParams",
    "GridSpec",
    "InputError",
    "Intrinsics",
    "KMeansResult",
    "LabelSpace",
    "LabeledPointSet",
    "LengthCheck",
    "MlpWeights",
    "OccupancyFrame",
    "OccupancyGrid4D",
    "OccupancySplatRenderer",
    "PRESETS",
    "PipelineConfig",
    "PointVoxelizer",
    "Pose",
    "ProjectedPoints",
    "RigView",
    "RunReport",
    "SemanticLabelSpace",
    "SequenceSpec",
    "TokenBudget",
    "TokenLayout",
    "VoxelizeResult",
    "action_embed",
    "adaln_modulate",
    "assign_label",
    "backproject_depth",
    "build_palette",
    "chunk_actions",
    "decode_occ4",
    "discover_episodes",
    "encode_occ4",
    "enumerate_clips",
    "fit_affine_depth",
    "fit_scale_depth",
    "fuse_conditions",
    "kmeans",
    "kmeans_fit",
    "labels_to_rgb",
    "layer_norm",
    "pad_track",
    "preset",
    "project_points",
    "psnr",
    "render_condition_maps",
    "render_depth",
    "render_semantics",
    "run_pipeline",
    "silu",
    "sincos_pe",
    "splat_scale",
    "ssim",
    "token_count",
    "transfer_rig",
    "validate_dataset",
    "validate_length",
    "vote_semantics",
    "voxelize_mesh",
    "voxelize_points",
]
