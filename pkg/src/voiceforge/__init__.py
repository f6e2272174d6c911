"""voiceforge: corpus curation engine for instruction-driven TTS data."""

from .corpus import (
    AudioClip,
    Caption,
    CaptionVocabulary,
    DatasetRecord,
    EmbeddingVector,
    Language,
    QualityReport,
    SpeakerSegment,
    StageState,
    TimbreInstruction,
    Transcript,
    normalize_text,
)
from .backends import BackendEndpoint, BackendKind, StubBackend, StubConfig
from .config import RunConfig, validate_config
from .delaypattern import CodeGrid, DelaySequence, apply_delay, invert_delay
from .mining import EmbeddingIndex, MiningAssignment, build_index, mine, rewrite_instructions
from .pipeline import RecordEnvelope, StageReport, run_pipeline, resume_pipeline
from .profiler import ContaminationReport, CorpusProfile, contamination_check, profile

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "BackendEndpoint",
    "BackendKind",
    "Caption",
    "CaptionVocabulary",
    "CodeGrid",
    "ContaminationReport",
    "CorpusProfile",
    "DatasetRecord",
    "DelaySequence",
    "EmbeddingIndex",
    "EmbeddingVector",
    "Language",
    "MiningAssignment",
    "QualityReport",
    "RecordEnvelope",
    "RunConfig",
    "SpeakerSegment",
    "StageReport",
    "StageState",
    "StubBackend",
    "StubConfig",
    "TimbreInstruction",
    "Transcript",
    "apply_delay",
    "build_index",
    "contamination_check",
    "invert_delay",
    "mine",
    "normalize_text",
    "profile",
    "resume_pipeline",
    "rewrite_instructions",
    "run_pipeline",
    "validate_config",
]
