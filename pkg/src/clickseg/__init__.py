"""Click-based interactive image segmentation with feedback correction and fusion."""

from .core import (
    BACKGROUND,
    DEFAULT_CLICK_RADIUS,
    FOREGROUND,
    Click,
    ClickSet,
    Sample,
    ValidationError,
    encode_clicks,
    make_box_mask,
    zero_feedback,
)
from .correction import Similarity, blend_feedback, feature_affinity, focused_correction
from .data import (
    AugmentConfig,
    DatasetSpec,
    augment,
    generate_synthetic,
    load_checkpoint,
    load_directory,
    save_checkpoint,
    save_dataset,
)
from .engine import InteractiveSession, forward_interactive, replay_clicks, run_round
from .fusion import FusionBlocks, feature_pathway, feedback_pathway, gate_for_round
from .loss import full_loss, normalized_focal_loss
from .metrics import assd, boundary_iou, iou
from .net import ModelConfig, SegmentationModel
from .clicking import ErrorRegion, build_error_region, sample_training_clicks, select_next_click
from .protocol import EvalReport, run_protocol, write_report
from .training import TrainConfig, TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "BACKGROUND",
    "DEFAULT_CLICK_RADIUS",
    "FOREGROUND",
    "AugmentConfig",
    "Click",
    "ClickSet",
    "DatasetSpec",
    "ErrorRegion",
    "EvalReport",
    "FusionBlocks",
    "InteractiveSession",
    "ModelConfig",
    "Sample",
    "SegmentationModel",
    "Similarity",
    "TrainConfig",
    "TrainResult",
    "ValidationError",
    "assd",
    "augment",
    "blend_feedback",
    "boundary_iou",
    "build_error_region",
    "encode_clicks",
    "feature_affinity",
    "feature_pathway",
    "feedback_pathway",
    "focused_correction",
    "forward_interactive",
    "full_loss",
    "gate_for_round",
    "generate_synthetic",
    "iou",
    "load_checkpoint",
    "load_directory",
    "make_box_mask",
    "normalized_focal_loss",
    "replay_clicks",
    "run_protocol",
    "run_round",
    "sample_training_clicks",
    "save_checkpoint",
    "save_dataset",
    "select_next_click",
    "train",
    "write_report",
    "zero_feedback",
]
