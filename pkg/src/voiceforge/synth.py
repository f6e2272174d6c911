"""Synthetic corpus builders for simulation runs and tests.

Clips are generated from the seed alone, so a corpus of a given size is
the same corpus everywhere.
"""

from __future__ import annotations

from .corpus import AudioClip, DatasetRecord, Language, TimbreInstruction, Transcript
from .detrand import choice, hash64, unit_float

_FAILURE_KINDS = ("caption", "quality", "transcribe", "diarize")

_INSTRUCTION_STEMS = (
    "A warm elderly storyteller voice, slow and kind",
    "An excited young commentator, fast and bright",
    "A calm middle aged narrator with a deep texture",
    "A playful child voice, light and quick",
    "A serious anchor voice, crisp and steady",
    "A tender soft voice with a breathy texture",
    "An angry gravelly voice, loud and rough",
    "A cheerful young adult voice with a clear tone",
)

_TRANSCRIPT_WORDS = (
    "the", "quick", "garden", "river", "holds", "a", "quiet", "light",
    "over", "winter", "fields", "we", "walk", "toward", "morning", "slowly",
    "every", "signal", "carries", "its", "own", "echo", "through", "stone",
)


def synthetic_clips(
    n: int,
    seed: int,
    min_duration_s: float = 2.0,
    max_duration_s: float = 15.0,
    n_sources: int = 8,
    dead_letter_rate: float = 0.0,
    empty_rate: float = 0.0,
) -> list[AudioClip]:
    """Deterministic raw clips; optional failure markers drive stub errors."""
    clips = []
    for i in range(n):
        clip_id = f"clip{i:06d}"
        duration = min_duration_s + unit_float(seed, "dur", clip_id) * (max_duration_s - min_duration_s)
        source = f"film{hash64(seed, 'src', clip_id) % n_sources:03d}"
        ref = f"store://{source}/{clip_id}.wav"
        if dead_letter_rate > 0 and unit_float(seed, "deadmark", clip_id) < dead_letter_rate:
            ref += f"#dead={choice(seed, _FAILURE_KINDS, 'deadkind', clip_id)}"
        elif empty_rate > 0 and unit_float(seed, "emptymark", clip_id) < empty_rate:
            ref += "#empty"
        clips.append(
            AudioClip(
                clip_id=clip_id,
                source_id=source,
                payload_ref=ref,
                duration_s=duration,
                sample_rate_hz=48_000,
            )
        )
    return clips


def synthetic_english_records(n: int, seed: int) -> list[DatasetRecord]:
    """English dataset records with unique transcripts and instructions."""
    records = []
    for i in range(n):
        clip_id = f"en{i:06d}"
        words = [choice(seed, _TRANSCRIPT_WORDS, "tw", clip_id, j) for j in range(6)]
        text = (" ".join(words) + f" take {i}").capitalize()
        stem = choice(seed, _INSTRUCTION_STEMS, "stem", clip_id)
        records.append(
            DatasetRecord(
                clip_id=clip_id,
                instruction=TimbreInstruction(clip_id, f"{stem}, variant seed {i}.", 0),
                transcript=Transcript(clip_id, text, Language.EN),
                codes_ref=f"codes://{clip_id}",
                language=Language.EN,
            )
        )
    return records
