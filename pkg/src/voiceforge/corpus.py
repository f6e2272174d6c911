"""Domain types shared across the curation engine.

All types are immutable value objects: construction validates invariants,
and every "mutation" returns a fresh instance. Everything serializes to
plain JSON objects with snake_case keys; manifests are JSON Lines.
"""

from __future__ import annotations

import json
import math
import string
from dataclasses import InitVar, dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator


class Language(str, Enum):
    ZH = "zh"
    EN = "en"
    OTHER = "other"
    UNKNOWN = "unknown"


#: Languages a Transcript may carry (no "unknown": detection always resolves).
DETECTED_LANGUAGES = (Language.ZH, Language.EN, Language.OTHER)

#: Languages allowed in a final DatasetRecord.
CORPUS_LANGUAGES = (Language.ZH, Language.EN)


class StageState(str, Enum):
    """Last completed processing stage; declaration order is pipeline order."""

    RAW = "raw"
    DIARIZED = "diarized"
    SEGMENT_FILTERED = "segment_filtered"
    DENOISED = "denoised"
    QUALITY_GATED = "quality_gated"
    SINGLE_SPEAKER = "single_speaker"
    TRANSCRIBED = "transcribed"
    RULE_FILTERED = "rule_filtered"
    LANGUAGE_FILTERED = "language_filtered"
    ANNOTATED = "annotated"

    @property
    def order(self) -> int:
        return _STAGE_ORDER[self]


_STAGE_ORDER = {s: i for i, s in enumerate(StageState)}


# Text normalization strips ASCII punctuation plus the common CJK
# full-width marks: the corpus is Chinese/English only.
_CJK_PUNCTUATION = (
    "，。！？；：、·…—－～‘’“”〝〞（）【】〔〕《》〈〉「」『』〖〗"
    "｡､｢｣！＂＃＄％＆＇（）＊＋，－．／：；＜＝＞？＠［＼］＾＿｀｛｜｝～￥・"
)
DEFAULT_PUNCTUATION = frozenset(string.punctuation) | frozenset(_CJK_PUNCTUATION)


def normalize_text(text: str, punctuation: frozenset[str] = DEFAULT_PUNCTUATION) -> str:
    """Lowercase, replace punctuation with spaces, collapse whitespace, trim.

    Idempotent: normalize_text(normalize_text(x)) == normalize_text(x).
    """
    lowered = text.lower()
    cleaned = "".join(" " if ch in punctuation else ch for ch in lowered)
    return " ".join(cleaned.split())


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ValueError(message)


@dataclass(frozen=True)
class AudioClip:
    """One unit of audio with provenance and processing state.

    payload_ref is an opaque locator; the engine never touches audio bytes.
    """

    clip_id: str
    source_id: str
    payload_ref: str
    duration_s: float
    sample_rate_hz: int
    language: Language = Language.UNKNOWN
    stage_state: StageState = StageState.RAW

    def __post_init__(self) -> None:
        _require(bool(self.clip_id), "clip_id must be non-empty")
        _require(self.duration_s > 0, f"duration_s must be > 0, got {self.duration_s}")
        _require(
            isinstance(self.sample_rate_hz, int) and self.sample_rate_hz > 0,
            f"sample_rate_hz must be a positive integer, got {self.sample_rate_hz}",
        )
        _require(isinstance(self.language, Language), "language must be a Language")
        _require(isinstance(self.stage_state, StageState), "stage_state must be a StageState")

    def advanced(self, state: StageState) -> "AudioClip":
        """Return a copy with stage_state moved forward; never backwards."""
        _require(
            state.order > self.stage_state.order,
            f"stage_state may only advance: {self.stage_state.value} -> {state.value}",
        )
        return replace(self, stage_state=state)

    def with_language(self, language: Language) -> "AudioClip":
        """Set a concrete language; only the unknown -> concrete transition is legal."""
        if language == self.language:
            return self
        _require(language != Language.UNKNOWN, "language cannot transition back to unknown")
        _require(
            self.language == Language.UNKNOWN,
            f"language already fixed to {self.language.value}",
        )
        return replace(self, language=language)

    def with_payload(self, payload_ref: str) -> "AudioClip":
        return replace(self, payload_ref=payload_ref)

    def to_dict(self) -> dict[str, Any]:
        return {
            "clip_id": self.clip_id,
            "source_id": self.source_id,
            "payload_ref": self.payload_ref,
            "duration_s": self.duration_s,
            "sample_rate_hz": self.sample_rate_hz,
            "language": self.language.value,
            "stage_state": self.stage_state.value,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AudioClip":
        return cls(
            clip_id=d["clip_id"],
            source_id=d["source_id"],
            payload_ref=d["payload_ref"],
            duration_s=float(d["duration_s"]),
            sample_rate_hz=int(d["sample_rate_hz"]),
            language=Language(d.get("language", "unknown")),
            stage_state=StageState(d.get("stage_state", "raw")),
        )


@dataclass(frozen=True)
class SpeakerSegment:
    """A diarized span of a parent clip."""

    clip_id: str
    start_s: float
    end_s: float
    speaker_label: str

    def __post_init__(self) -> None:
        _require(
            0 <= self.start_s < self.end_s,
            f"segment must satisfy 0 <= start < end, got [{self.start_s}, {self.end_s}]",
        )

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s

    def to_dict(self) -> dict[str, Any]:
        return {
            "clip_id": self.clip_id,
            "start_s": self.start_s,
            "end_s": self.end_s,
            "speaker_label": self.speaker_label,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SpeakerSegment":
        return cls(d["clip_id"], float(d["start_s"]), float(d["end_s"]), d["speaker_label"])


@dataclass(frozen=True)
class QualityReport:
    """No-reference perceptual quality score used as a keep/drop gate."""

    clip_id: str
    dnsmos: float
    denoised: bool

    def __post_init__(self) -> None:
        _require(
            1.0 <= self.dnsmos <= 5.0,
            f"dnsmos must lie in [1.0, 5.0], got {self.dnsmos}",
        )

    def to_dict(self) -> dict[str, Any]:
        return {"clip_id": self.clip_id, "dnsmos": self.dnsmos, "denoised": self.denoised}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "QualityReport":
        return cls(d["clip_id"], float(d["dnsmos"]), bool(d["denoised"]))


@dataclass(frozen=True)
class Transcript:
    """ASR output plus its canonical normalized form.

    normalized_text is derived, never supplied: it is a pure function of
    text, which keeps deduplication and fuzzy matching idempotent.
    """

    clip_id: str
    text: str
    detected_language: Language
    normalized_text: str = field(init=False, repr=False)

    def __post_init__(self) -> None:
        _require(
            self.detected_language in DETECTED_LANGUAGES,
            f"detected_language must be one of zh/en/other, got {self.detected_language.value}",
        )
        object.__setattr__(self, "normalized_text", normalize_text(self.text))

    def to_dict(self) -> dict[str, Any]:
        return {
            "clip_id": self.clip_id,
            "text": self.text,
            "detected_language": self.detected_language.value,
            "normalized_text": self.normalized_text,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Transcript":
        return cls(d["clip_id"], d["text"], Language(d["detected_language"]))


@dataclass(frozen=True)
class CaptionVocabulary:
    """Closed category lists for perceptual annotation; editable via config."""

    gender: tuple[str, ...] = ("female", "male")
    age_bracket: tuple[str, ...] = ("child", "young_adult", "middle_aged", "elderly")
    emotion_tone: tuple[str, ...] = (
        "neutral",
        "calm",
        "happy",
        "excited",
        "playful",
        "angry",
        "sad",
        "fearful",
        "anxious",
        "surprised",
        "serious",
        "tender",
    )
    voice_texture: tuple[str, ...] = (
        "clear",
        "warm",
        "bright",
        "deep",
        "soft",
        "raspy",
        "breathy",
        "husky",
        "nasal",
        "gravelly",
        "mellow",
        "crisp",
    )

    def __post_init__(self) -> None:
        for name in ("gender", "age_bracket", "emotion_tone", "voice_texture"):
            values = getattr(self, name)
            _require(len(values) > 0, f"vocabulary {name} must be non-empty")
            _require(len(set(values)) == len(values), f"vocabulary {name} has duplicates")

    def check(self, field_name: str, value: str) -> None:
        allowed = getattr(self, field_name)
        if value not in allowed:
            raise ValueError(
                f"caption {field_name} {value!r} not in configured vocabulary {sorted(allowed)}"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "gender": list(self.gender),
            "age_bracket": list(self.age_bracket),
            "emotion_tone": list(self.emotion_tone),
            "voice_texture": list(self.voice_texture),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CaptionVocabulary":
        kwargs = {k: tuple(v) for k, v in d.items()}
        return cls(**kwargs)


DEFAULT_VOCABULARY = CaptionVocabulary()


@dataclass(frozen=True)
class Caption:
    """Structured perceptual annotation for one clip.

    Categorical fields are validated against a closed vocabulary at
    construction; out-of-vocabulary values raise ValueError.
    """

    clip_id: str
    gender: str
    age_bracket: str
    emotion_tone: str
    voice_texture: str
    free_text: str = ""
    vocab: InitVar["CaptionVocabulary | None"] = None

    def __post_init__(self, vocab: CaptionVocabulary | None) -> None:
        v = vocab if vocab is not None else DEFAULT_VOCABULARY
        for name in ("gender", "age_bracket", "emotion_tone", "voice_texture"):
            v.check(name, getattr(self, name))

    def to_dict(self) -> dict[str, Any]:
        return {
            "clip_id": self.clip_id,
            "gender": self.gender,
            "age_bracket": self.age_bracket,
            "emotion_tone": self.emotion_tone,
            "voice_texture": self.voice_texture,
            "free_text": self.free_text,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any], vocab: CaptionVocabulary | None = None) -> "Caption":
        return cls(
            clip_id=d["clip_id"],
            gender=d["gender"],
            age_bracket=d["age_bracket"],
            emotion_tone=d["emotion_tone"],
            voice_texture=d["voice_texture"],
            free_text=d.get("free_text", ""),
            vocab=vocab,
        )


@dataclass(frozen=True)
class TimbreInstruction:
    """Natural-language voice description; variant 0 is the original."""

    clip_id: str
    instruction_text: str
    variant_index: int = 0

    def __post_init__(self) -> None:
        _require(bool(self.instruction_text.strip()), "instruction_text must be non-empty")
        _require(self.variant_index >= 0, "variant_index must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "clip_id": self.clip_id,
            "instruction_text": self.instruction_text,
            "variant_index": self.variant_index,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TimbreInstruction":
        return cls(d["clip_id"], d["instruction_text"], int(d.get("variant_index", 0)))


@dataclass(frozen=True)
class DatasetRecord:
    """One training example: instruction, transcript, and a code-grid locator."""

    clip_id: str
    instruction: TimbreInstruction
    transcript: Transcript
    codes_ref: str
    language: Language

    def __post_init__(self) -> None:
        _require(
            self.language in CORPUS_LANGUAGES,
            f"dataset language must be zh or en, got {self.language.value}",
        )
        _require(
            self.language == self.transcript.detected_language,
            "record language must equal transcript.detected_language",
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "clip_id": self.clip_id,
            "instruction": self.instruction.to_dict(),
            "transcript": self.transcript.to_dict(),
            "codes_ref": self.codes_ref,
            "language": self.language.value,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DatasetRecord":
        return cls(
            clip_id=d["clip_id"],
            instruction=TimbreInstruction.from_dict(d["instruction"]),
            transcript=Transcript.from_dict(d["transcript"]),
            codes_ref=d["codes_ref"],
            language=Language(d["language"]),
        )


@dataclass(frozen=True)
class EmbeddingVector:
    """Fixed-dimension real vector in the shared instruction/audio space."""

    dim: int
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        _require(self.dim > 0, "dim must be positive")
        _require(len(self.values) == self.dim, f"expected {self.dim} values, got {len(self.values)}")
        _require(all(math.isfinite(v) for v in self.values), "embedding values must be finite")

    def norm(self) -> float:
        return math.sqrt(math.fsum(v * v for v in self.values))

    def unit(self) -> "EmbeddingVector":
        n = self.norm()
        _require(n > 0, "cannot normalize a zero vector")
        return EmbeddingVector(self.dim, tuple(v / n for v in self.values))

    def to_dict(self) -> dict[str, Any]:
        return {"dim": self.dim, "values": list(self.values)}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EmbeddingVector":
        return cls(int(d["dim"]), tuple(float(v) for v in d["values"]))


def validate_unique_instructions(
    items: "Iterable[DatasetRecord | TimbreInstruction]",
) -> None:
    """(clip_id, variant_index) must be unique across a collection."""
    seen: set[tuple[str, int]] = set()
    for item in items:
        instruction = item.instruction if isinstance(item, DatasetRecord) else item
        key = (instruction.clip_id, instruction.variant_index)
        _require(key not in seen, f"duplicate instruction key {key}")
        seen.add(key)


# --- JSON / JSONL helpers -------------------------------------------------

def canonical_dumps(obj: Any) -> str:
    """Stable JSON encoding: sorted keys, no whitespace, UTF-8 passthrough."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def read_jsonl(path: str | Path) -> Iterator[dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON line: {exc}") from exc


def write_jsonl(path: str | Path, rows: Iterable[dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(canonical_dumps(row))
            fh.write("\n")


def dataclass_field_names(obj: Any) -> tuple[str, ...]:
    return tuple(f.name for f in fields(obj))
