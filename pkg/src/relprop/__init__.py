"""Class-discriminative relevance propagation for small CNNs."""

from .errors import (
    BlobError,
    ChainError,
    DataError,
    ImageFormatError,
    ManifestError,
    RelpropError,
    ShapeError,
    UnknownLayerError,
)
from .evaluate import (
    BoundingBox,
    MaskingResult,
    MaskSample,
    PointingResult,
    PointingRow,
    PointSample,
    NoPositiveRelevanceError,
    energy_threshold,
    mask_patch,
    maximal_point,
    patch_masking_eval,
    pointing_game,
    random_relevance_map,
    run_masking,
    run_pointing,
)
from .imaging import RgbImage, preprocess, read_pgm, read_ppm, render_heatmap, write_pgm, write_ppm
from .model import (
    ForwardTrace,
    LayerParams,
    LayerSpec,
    NetworkModel,
    Preprocessing,
    forward,
    load_model,
    predict_topk,
    save_model,
)
from .relevance import (
    InputBounds,
    RelevanceMap,
    Seed,
    explain,
    seed_clrp,
    seed_lrp,
    seed_sglrp,
)

__all__ = [
    "BlobError",
    "BoundingBox",
    "ChainError",
    "DataError",
    "ForwardTrace",
    "ImageFormatError",
    "InputBounds",
    "LayerParams",
    "LayerSpec",
    "ManifestError",
    "MaskSample",
    "MaskingResult",
    "NetworkModel",
    "NoPositiveRelevanceError",
    "PointSample",
    "PointingResult",
    "PointingRow",
    "Preprocessing",
    "RelevanceMap",
    "RelpropError",
    "RgbImage",
    "Seed",
    "ShapeError",
    "UnknownLayerError",
    "energy_threshold",
    "explain",
    "forward",
    "load_model",
    "mask_patch",
    "maximal_point",
    "patch_masking_eval",
    "pointing_game",
    "predict_topk",
    "preprocess",
    "random_relevance_map",
    "read_pgm",
    "read_ppm",
    "render_heatmap",
    "run_masking",
    "run_pointing",
    "save_model",
    "seed_clrp",
    "seed_lrp",
    "seed_sglrp",
    "write_pgm",
    "write_ppm",
]

__version__ = "0.1.0"
