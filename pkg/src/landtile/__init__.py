"""Tile-based semantic mapping for large multi-band rasters.

The pieces compose in pipeline order: raster I/O, tile planning,
channel stacks, a classifier backend, center-crop stitching, and
confusion-matrix scoring. `infer_map` runs the whole chain.
"""

from .backends import (
    Backend,
    make_edge_degraded,
    make_external_backend,
    make_linear_backend,
    make_oracle_backend,
)
from .errors import (
    BackendError,
    ConfigError,
    LandtileError,
    ProtocolError,
    RasterIOError,
    ValidationError,
)
from .evaluate import (
    ConfusionMatrix,
    boundary_accuracy,
    confusion,
    confusion_streamed,
    overall_accuracy,
    report,
)
from .kernels import IGNORE
from .model import LinearModel, TrainConfig, load_model, save_model, train_linear
from .pipeline import InferenceJob, infer_map, stitch
from .raster import (
    DEFAULT_SCHEME,
    ClassMap,
    ClassScheme,
    RasterGrid,
    RasterReader,
    RasterWriter,
    Window,
    export_class_png,
    read_class_map,
    read_raster,
    write_class_map,
    write_raster,
)
from .spectral import (
    MODES,
    ChannelStack,
    NormStats,
    build_channel_stack,
    compute_norm_stats,
    normalized_difference,
)
from .synth import SceneSpec, generate_corpus, generate_scene, load_manifest
from .tiling import TilePlan, TileSpec, plan_tiles

__version__ = "0.1.0"

__all__ = [
    "Backend",
    "BackendError",
    "ChannelStack",
    "ClassMap",
    "ClassScheme",
    "ConfigError",
    "ConfusionMatrix",
    "DEFAULT_SCHEME",
    "IGNORE",
    "InferenceJob",
    "LandtileError",
    "LinearModel",
    "MODES",
    "NormStats",
    "ProtocolError",
    "RasterGrid",
    "RasterIOError",
    "RasterReader",
    "RasterWriter",
    "SceneSpec",
    "TilePlan",
    "TileSpec",
    "TrainConfig",
    "ValidationError",
    "Window",
    "boundary_accuracy",
    "build_channel_stack",
    "compute_norm_stats",
    "confusion",
    "confusion_streamed",
    "export_class_png",
    "generate_corpus",
    "generate_scene",
    "infer_map",
    "load_manifest",
    "load_model",
    "make_edge_degraded",
    "make_external_backend",
    "make_linear_backend",
    "make_oracle_backend",
    "normalized_difference",
    "overall_accuracy",
    "plan_tiles",
    "read_class_map",
    "read_raster",
    "report",
    "save_model",
    "stitch",
    "train_linear",
    "write_class_map",
    "write_raster",
]
