"""Per-second rodent behavior annotation through a vision-language model endpoint."""

from .core import (
    AnnotationVector,
    BehaviorLabel,
    Decoding,
    GoldAnnotations,
    IclExample,
    InputMode,
    PipelineConfig,
    PromptStyle,
    SegmentManifest,
    SegmentRef,
    VideoMeta,
    config_digest,
    read_gold_csv,
    validate_manifest,
    write_gold_csv,
)
from .labelparser import ParseOutcome, normalize_label, parse_label_vector

__version__ = "0.1.0"

__all__ = [
    "AnnotationVector",
    "BehaviorLabel",
    "Decoding",
    "GoldAnnotations",
    "IclExample",
    "InputMode",
    "ParseOutcome",
    "PipelineConfig",
    "PromptStyle",
    "SegmentManifest",
    "SegmentRef",
    "VideoMeta",
    "config_digest",
    "normalize_label",
    "parse_label_vector",
    "read_gold_csv",
    "validate_manifest",
    "write_gold_csv",
]
