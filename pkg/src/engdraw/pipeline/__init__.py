"""Three-stage drawing interpretation: regions, annotations, text.

Model inference sits behind the port protocols in
:mod:`engdraw.pipeline.ports`; :mod:`engdraw.pipeline.replay` provides a
deterministic manifest-driven implementation of all of them.
"""

from engdraw.pipeline.config import ConfigError, PipelineConfig
from engdraw.pipeline.ports import (
    AnnotationDetection,
    AnnotationDetectorPort,
    CropRef,
    DrawingRef,
    PatchRef,
    Ports,
    ReaderRole,
    RegionDetection,
    RegionDetectorPort,
    TextReaderPort,
)
from engdraw.pipeline.replay import (
    DrawingReplay,
    ManifestError,
    ReaderFailure,
    ReplayBackend,
    ReplayManifest,
    ReplayReader,
    TextFailure,
    replay_ports,
)
from engdraw.pipeline.stages import (
    BatchItem,
    CropError,
    StageError,
    crop_region,
    detect_in_view,
    run_batch,
    run_pipeline,
    run_stage1,
    run_stage2,
    run_stage3,
)
from engdraw.pipeline.titleblock import parse_title_block

__all__ = [
    "AnnotationDetection",
    "AnnotationDetectorPort",
    "BatchItem",
    "ConfigError",
    "CropError",
    "CropRef",
    "DrawingRef",
    "DrawingReplay",
    "ManifestError",
    "PatchRef",
    "PipelineConfig",
    "Ports",
    "ReaderFailure",
    "ReaderRole",
    "RegionDetection",
    "RegionDetectorPort",
    "ReplayBackend",
    "ReplayManifest",
    "ReplayReader",
    "StageError",
    "TextFailure",
    "TextReaderPort",
    "crop_region",
    "detect_in_view",
    "parse_title_block",
    "replay_ports",
    "run_batch",
    "run_pipeline",
    "run_stage1",
    "run_stage2",
    "run_stage3",
]
