"""Dual-view isolated sign language recognition with a CNN-transformer."""

from .dataset import (
    FrameClip,
    GlossVocabulary,
    Manifest,
    SampleRecord,
    SubsetSpec,
    ValidationReport,
    build_manifest,
    build_subset,
    filter_manifest,
    load_clip,
    load_manifest,
    preprocess_frame,
    sample_frame_indices,
    save_manifest,
    validate_manifest,
)
from .fusion import DualViewModel, build_dual_view_model, early_fuse, late_fuse, plus_fuse
from .metrics import MetricsRow, PredictionSet, fuse_and_evaluate, render_report, top_k_accuracy
from .model import EncoderConfig, ModelConfig, SingleViewModel, SpatialBackboneConfig
from .synthetic import SynthConfig, generate_synthetic_dataset
from .training import TrainConfig, TrainHistory, early_stop_decision, evaluate, train

__version__ = "0.1.0"
