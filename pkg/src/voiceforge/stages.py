"""Per-record stage transforms with explicit keep/drop/transform outcomes.

Each function here is pure: backend responses arrive as plain data, so
replaying recorded responses reproduces outcomes exactly. The pipeline
module owns the backend calls and the accounting.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from enum import Enum
from typing import Any, Sequence

from .corpus import (
    AudioClip,
    Caption,
    CaptionVocabulary,
    SpeakerSegment,
    StageState,
    TimbreInstruction,
    Transcript,
    CORPUS_LANGUAGES,
)


class Verdict(str, Enum):
    KEEP = "keep"
    DROP = "drop"
    TRANSFORMED = "transformed"


class DropReason(str, Enum):
    LOW_QUALITY = "low_quality"
    MULTI_SPEAKER = "multi_speaker"
    EMPTY_TRANSCRIPT = "empty_transcript"
    DUPLICATE_TRANSCRIPT = "duplicate_transcript"
    UNSUPPORTED_LANGUAGE = "unsupported_language"
    BACKEND_DEAD_LETTER = "backend_dead_letter"


@dataclass(frozen=True)
class StageOutcome:
    """Result of applying one stage to one record.

    Dead letters are drops with reason backend_dead_letter plus an error;
    reports count them separately from content drops.
    """

    verdict: Verdict
    drop_reason: DropReason | None = None
    payload: Any = None
    error: str | None = None

    def __post_init__(self) -> None:
        if (self.verdict == Verdict.DROP) != (self.drop_reason is not None):
            raise ValueError("verdict == drop exactly when drop_reason is present")
        if self.drop_reason == DropReason.BACKEND_DEAD_LETTER and not self.error:
            raise ValueError("dead-letter outcomes must carry an error")

    @property
    def is_dead_letter(self) -> bool:
        return self.drop_reason == DropReason.BACKEND_DEAD_LETTER

    @classmethod
    def keep(cls, payload: Any) -> "StageOutcome":
        return cls(Verdict.KEEP, payload=payload)

    @classmethod
    def transformed(cls, payload: Any) -> "StageOutcome":
        return cls(Verdict.TRANSFORMED, payload=payload)

    @classmethod
    def drop(cls, reason: DropReason, payload: Any = None) -> "StageOutcome":
        return cls(Verdict.DROP, drop_reason=reason, payload=payload)

    @classmethod
    def dead_letter(cls, error: str, payload: Any = None) -> "StageOutcome":
        return cls(Verdict.DROP, drop_reason=DropReason.BACKEND_DEAD_LETTER, payload=payload, error=error)


class DedupIndex:
    """Thread-safe check-and-insert set over normalized transcripts.

    Under concurrent use, which of two duplicates survives depends only on
    arrival order at this index; the pipeline feeds records in clip_id
    order, so first-by-record-id wins.
    """

    def __init__(self, seen: Sequence[str] = ()):
        self._seen = set(seen)
        self._lock = threading.Lock()

    def add_if_new(self, normalized: str) -> bool:
        with self._lock:
            if normalized in self._seen:
                return False
            self._seen.add(normalized)
            return True

    def __contains__(self, normalized: str) -> bool:
        return normalized in self._seen

    def __len__(self) -> int:
        return len(self._seen)

    def snapshot(self) -> list[str]:
        with self._lock:
            return sorted(self._seen)


class SegmentGeometryError(ValueError):
    """Diarizer output that no valid segmentation of the clip explains."""


def stage_diarize(clip: AudioClip, segments: Sequence[SpeakerSegment]) -> list[AudioClip]:
    """Split a clip into one child per speaker segment.

    Child ids are the parent id plus the segment ordinal; child durations
    equal the segment spans. Segments must be non-overlapping and lie
    within the parent clip.
    """
    ordered = sorted(segments, key=lambda s: (s.start_s, s.end_s))
    prev_end = 0.0
    for seg in ordered:
        if seg.end_s > clip.duration_s + 1e-9:
            raise SegmentGeometryError(
                f"{clip.clip_id}: segment [{seg.start_s}, {seg.end_s}] exceeds clip duration {clip.duration_s}"
            )
        if seg.start_s < prev_end - 1e-9:
            raise SegmentGeometryError(f"{clip.clip_id}: overlapping segments after diarization")
        prev_end = seg.end_s
    children = []
    for i, seg in enumerate(ordered):
        children.append(
            AudioClip(
                clip_id=f"{clip.clip_id}/{i:02d}",
                source_id=clip.source_id,
                payload_ref=clip.payload_ref,
                duration_s=seg.duration_s,
                sample_rate_hz=clip.sample_rate_hz,
                language=clip.language,
                stage_state=StageState.DIARIZED,
            )
        )
    return children


def stage_segment_filter(clip: AudioClip, min_segment_s: float) -> StageOutcome:
    """Drop child segments too short to carry a transcript."""
    if clip.duration_s < min_segment_s:
        return StageOutcome.drop(DropReason.LOW_QUALITY, clip)
    return StageOutcome.keep(clip.advanced(StageState.SEGMENT_FILTERED))


def stage_quality_gate(clip: AudioClip, report, threshold: float = 3.0) -> StageOutcome:
    """Keep exactly when dnsmos >= threshold; the boundary is inclusive."""
    if report.clip_id != clip.clip_id:
        raise ValueError(f"quality report for {report.clip_id} applied to {clip.clip_id}")
    if report.dnsmos >= threshold:
        return StageOutcome.keep(clip.advanced(StageState.QUALITY_GATED))
    return StageOutcome.drop(DropReason.LOW_QUALITY, clip)


def stage_single_speaker(
    clip: AudioClip, per_speaker_transcription: Sequence[tuple[str, str]]
) -> StageOutcome:
    """Keep exactly when one distinct speaker has non-empty text.

    Speakers whose transcription is empty do not count, so a faint second
    voice with no words does not fail the gate.
    """
    speaking = {label for label, text in per_speaker_transcription if text.strip()}
    if len(speaking) == 1:
        return StageOutcome.keep(clip.advanced(StageState.SINGLE_SPEAKER))
    if len(speaking) == 0:
        return StageOutcome.drop(DropReason.EMPTY_TRANSCRIPT, clip)
    return StageOutcome.drop(DropReason.MULTI_SPEAKER, clip)


def stage_rule_filter(t: Transcript, seen_normalized: DedupIndex) -> StageOutcome:
    """Drop empty transcripts, then duplicates by normalized text."""
    if not t.normalized_text:
        return StageOutcome.drop(DropReason.EMPTY_TRANSCRIPT, t)
    if not seen_normalized.add_if_new(t.normalized_text):
        return StageOutcome.drop(DropReason.DUPLICATE_TRANSCRIPT, t)
    return StageOutcome.keep(t)


def stage_language_filter(t: Transcript) -> StageOutcome:
    """Keep exactly the Chinese and English transcripts."""
    if t.detected_language in CORPUS_LANGUAGES:
        return StageOutcome.keep(t)
    return StageOutcome.drop(DropReason.UNSUPPORTED_LANGUAGE, t)


def stage_caption_and_instruct(
    clip: AudioClip,
    caption_fields: dict[str, Any],
    instruction_text: str,
    vocab: CaptionVocabulary | None = None,
) -> tuple[Caption, TimbreInstruction]:
    """Build the validated annotation pair from backend responses.

    Raises ValueError on out-of-vocabulary caption fields, which the
    pipeline treats as a permanent (dead-letter) failure.
    """
    caption = Caption(
        clip_id=clip.clip_id,
        gender=caption_fields["gender"],
        age_bracket=caption_fields["age_bracket"],
        emotion_tone=caption_fields["emotion_tone"],
        voice_texture=caption_fields["voice_texture"],
        free_text=caption_fields.get("free_text", ""),
        vocab=vocab,
    )
    instruction = TimbreInstruction(clip.clip_id, instruction_text, variant_index=0)
    return caption, instruction
