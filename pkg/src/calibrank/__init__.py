"""Training-free dominant-token calibration and two-stage re-ranking for
pre-extracted vision-language retrieval features."""

from .bundles import (
    AuditTensors,
    GalleryIndex,
    TextBundle,
    VisualBundle,
    validate_bundle,
    validate_cls_aggregation,
)
from .errors import CalibrankError
from .estimators import CalibratedRetriever, TextCalibrator, VisualCalibrator
from .io import load_bundle, load_gallery_index, save_gallery_index, write_bundle
from .rerank import FusionConfig, RankingResult, evaluate, fuse_and_rank
from .textual import CalibratedQuery, calibrate_query
from .visual import RectifierConfig, calibrate_image

__all__ = [
    "AuditTensors",
    "CalibratedQuery",
    "CalibratedRetriever",
    "CalibrankError",
    "FusionConfig",
    "GalleryIndex",
    "RankingResult",
    "RectifierConfig",
    "TextBundle",
    "TextCalibrator",
    "VisualBundle",
    "VisualCalibrator",
    "calibrate_image",
    "calibrate_query",
    "evaluate",
    "fuse_and_rank",
    "load_bundle",
    "load_gallery_index",
    "save_gallery_index",
    "validate_bundle",
    "validate_cls_aggregation",
    "write_bundle",
]

__version__ = "0.1.0"
