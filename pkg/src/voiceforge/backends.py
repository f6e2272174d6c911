"""Model-service protocol: one JSON-over-HTTP route per backend kind, plus
deterministic in-process stubs for testing and simulation.

Every stub response is a pure function of (seed, request), so two runs with
equal seeds produce byte-identical manifests. Responses are validated
against the per-kind schema before being accepted, on both the HTTP and
stub paths.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping, Protocol

import requests

from .corpus import CaptionVocabulary, DEFAULT_VOCABULARY, QualityReport, AudioClip
from .detrand import choice, gauss, hash64, unit_float, weighted_choice


class BackendKind(str, Enum):
    DIARIZE = "diarize"
    DENOISE = "denoise"
    QUALITY = "quality"
    TRANSCRIBE = "transcribe"
    LANGID = "langid"
    CAPTION = "caption"
    INSTRUCT = "instruct"
    EMBED = "embed"
    REWRITE = "rewrite"
    JUDGE = "judge"


class BackendError(Exception):
    """Base class for backend call failures."""


class BackendRetryableError(BackendError):
    """Transport-level failure that persisted through all retries."""


class BackendPermanentError(BackendError):
    """Schema violation or declared-permanent failure; never retried."""


@dataclass(frozen=True)
class BackendEndpoint:
    """Where one backend kind lives and how patiently we call it."""

    kind: BackendKind
    url: str
    timeout_ms: int = 10_000
    max_retries: int = 2

    def __post_init__(self) -> None:
        if self.timeout_ms <= 0:
            raise ValueError(f"timeout_ms must be > 0, got {self.timeout_ms}")
        if self.max_retries < 0:
            raise ValueError(f"max_retries must be >= 0, got {self.max_retries}")


@dataclass(frozen=True)
class GaussParams:
    mean: float
    stddev: float

    def __post_init__(self) -> None:
        if self.stddev <= 0:
            raise ValueError(f"stddev must be > 0, got {self.stddev}")

    def to_dict(self) -> dict[str, float]:
        return {"mean": self.mean, "stddev": self.stddev}


# Defaults put P(dnsmos >= 3.0) at 5% before denoising and 47.5% after,
# matching the observed retention of cinematic audio through the quality
# gate. Clamping to [1, 5] never moves a sample across the 3.0 boundary,
# so the calibration survives truncation.
DNSMOS_PRE_DEFAULT = GaussParams(mean=2.1775731865242639, stddev=0.5)
DNSMOS_POST_DEFAULT = GaussParams(mean=2.9686466110283931, stddev=0.5)


@dataclass(frozen=True)
class StubConfig:
    """Knobs for the deterministic stub backends.

    The distribution parameters are calibration knobs, not ground truth
    about any real quality scorer.
    """

    seed: int = 0
    dnsmos_pre_denoise: GaussParams = DNSMOS_PRE_DEFAULT
    dnsmos_post_denoise: GaussParams = DNSMOS_POST_DEFAULT
    single_speaker_rate: float = 0.85
    language_mix: Mapping[str, float] = field(
        default_factory=lambda: {"zh": 0.6, "en": 0.3, "other": 0.1}
    )
    segments_min: int = 1
    segments_max: int = 3
    empty_transcript_rate: float = 0.02
    duplicate_text_rate: float = 0.03
    embed_dim: int = 16
    judge_pass_rate: float = 0.8

    def __post_init__(self) -> None:
        for name in ("single_speaker_rate", "empty_transcript_rate", "duplicate_text_rate", "judge_pass_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        unknown = set(self.language_mix) - {"zh", "en", "other"}
        if unknown:
            raise ValueError(f"language_mix keys must be zh/en/other, got {sorted(unknown)}")
        if any(not 0.0 <= p <= 1.0 for p in self.language_mix.values()):
            raise ValueError("language_mix probabilities must lie in [0, 1]")
        total = sum(self.language_mix.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"language_mix must sum to 1 (got {total})")
        if not 1 <= self.segments_min <= self.segments_max:
            raise ValueError("need 1 <= segments_min <= segments_max")
        if self.embed_dim <= 0:
            raise ValueError("embed_dim must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "dnsmos_pre_denoise": self.dnsmos_pre_denoise.to_dict(),
            "dnsmos_post_denoise": self.dnsmos_post_denoise.to_dict(),
            "single_speaker_rate": self.single_speaker_rate,
            "language_mix": dict(sorted(self.language_mix.items())),
            "segments_min": self.segments_min,
            "segments_max": self.segments_max,
            "empty_transcript_rate": self.empty_transcript_rate,
            "duplicate_text_rate": self.duplicate_text_rate,
            "embed_dim": self.embed_dim,
            "judge_pass_rate": self.judge_pass_rate,
        }


# --- response schemas -------------------------------------------------------

def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_str(v: Any) -> bool:
    return isinstance(v, str)


def _is_bool(v: Any) -> bool:
    return isinstance(v, bool)


def _is_number_list(v: Any) -> bool:
    return isinstance(v, list) and all(_is_number(x) for x in v)


def _is_str_list(v: Any) -> bool:
    return isinstance(v, list) and all(_is_str(x) for x in v)


def _is_segment_list(v: Any) -> bool:
    if not isinstance(v, list):
        return False
    for seg in v:
        if not isinstance(seg, dict):
            return False
        if not (_is_number(seg.get("start_s")) and _is_number(seg.get("end_s"))):
            return False
        if not _is_str(seg.get("speaker_label")):
            return False
    return True


#: Required response fields per kind; extra fields are tolerated.
RESPONSE_SCHEMAS: dict[BackendKind, dict[str, Any]] = {
    BackendKind.DIARIZE: {"segments": _is_segment_list},
    BackendKind.DENOISE: {"payload_ref": _is_str},
    BackendKind.QUALITY: {"dnsmos": _is_number},
    BackendKind.TRANSCRIBE: {"text": _is_str, "language": _is_str},
    BackendKind.LANGID: {"language": _is_str},
    BackendKind.CAPTION: {
        "gender": _is_str,
        "age_bracket": _is_str,
        "emotion_tone": _is_str,
        "voice_texture": _is_str,
        "free_text": _is_str,
    },
    BackendKind.INSTRUCT: {"instruction_text": _is_str},
    BackendKind.EMBED: {"values": _is_number_list},
    BackendKind.REWRITE: {"variants": _is_str_list},
    BackendKind.JUDGE: {"verdict": _is_bool},
}


def validate_response(kind: BackendKind, payload: Any) -> dict[str, Any]:
    """Check required fields and types; raise BackendPermanentError otherwise."""
    if not isinstance(payload, dict):
        raise BackendPermanentError(f"{kind.value}: response must be a JSON object")
    schema = RESPONSE_SCHEMAS[kind]
    problems = []
    for name, check in schema.items():
        if name not in payload:
            problems.append(f"missing required field {name!r}")
        elif not check(payload[name]):
            problems.append(f"field {name!r} has wrong type/shape")
    if problems:
        raise BackendPermanentError(f"{kind.value}: " + "; ".join(problems))
    return payload


class Backend(Protocol):
    """Anything that can answer a kind-specific request with a schema-valid dict."""

    def call(self, kind: BackendKind, request: dict[str, Any]) -> dict[str, Any]: ...


# --- HTTP client -------------------------------------------------------------

def call_backend(
    endpoint: BackendEndpoint,
    request: dict[str, Any],
    session: requests.Session | None = None,
) -> dict[str, Any]:
    """POST the request as JSON and return the schema-validated response.

    Transport failures and 5xx responses are retried up to max_retries;
    4xx responses, non-JSON bodies, and schema violations are permanent.
    """
    sess = session or requests
    timeout = endpoint.timeout_ms / 1000.0
    last_error: Exception | None = None
    for _attempt in range(endpoint.max_retries + 1):
        try:
            resp = sess.post(endpoint.url, json=request, timeout=timeout)
        except requests.RequestException as exc:
            last_error = exc
            continue
        if resp.status_code >= 500:
            last_error = BackendRetryableError(f"{endpoint.kind.value}: HTTP {resp.status_code}")
            continue
        if resp.status_code != 200:
            raise BackendPermanentError(
                f"{endpoint.kind.value}: HTTP {resp.status_code} from {endpoint.url}"
            )
        try:
            payload = resp.json()
        except ValueError as exc:
            raise BackendPermanentError(f"{endpoint.kind.value}: non-JSON response body") from exc
        return validate_response(endpoint.kind, payload)
    raise BackendRetryableError(
        f"{endpoint.kind.value}: transport failure after {endpoint.max_retries + 1} attempts: {last_error}"
    )


ENDPOINT_ENV_PREFIX = "VOICEFORGE_ENDPOINT_"


def apply_endpoint_env_overrides(
    endpoints: Mapping[BackendKind, BackendEndpoint],
    environ: Mapping[str, str] | None = None,
) -> dict[BackendKind, BackendEndpoint]:
    """Let VOICEFORGE_ENDPOINT_<KIND> env vars override (or add) URLs."""
    import os
    from dataclasses import replace

    env = environ if environ is not None else os.environ
    out = dict(endpoints)
    for kind in BackendKind:
        url = env.get(ENDPOINT_ENV_PREFIX + kind.value.upper())
        if not url:
            continue
        if kind in out:
            out[kind] = replace(out[kind], url=url)
        else:
            out[kind] = BackendEndpoint(kind=kind, url=url)
    return out


class HttpBackend:
    """Routes kinds to configured endpoints with a bounded in-flight count."""

    def __init__(
        self,
        endpoints: Mapping[BackendKind, BackendEndpoint],
        max_inflight: int = 8,
        session: requests.Session | None = None,
    ):
        self._endpoints = apply_endpoint_env_overrides(endpoints)
        self._session = session or requests.Session()
        self._gates = {kind: threading.Semaphore(max_inflight) for kind in self._endpoints}

    def call(self, kind: BackendKind, request: dict[str, Any]) -> dict[str, Any]:
        try:
            endpoint = self._endpoints[kind]
        except KeyError:
            raise BackendPermanentError(f"no endpoint configured for kind {kind.value!r}")
        with self._gates[kind]:
            return call_backend(endpoint, request, session=self._session)


# --- deterministic stubs ------------------------------------------------------

_STUB_WORDS = (
    "river", "lantern", "quiet", "marble", "orchard", "thunder", "velvet", "harbor",
    "ember", "willow", "copper", "meadow", "signal", "paper", "winter", "garden",
    "shadow", "bridge", "timber", "violet", "saffron", "anchor", "breeze", "canyon",
    "drift", "echo", "fable", "glacier", "hollow", "island", "jasper", "kettle",
)

# Small shared pool so a configurable fraction of stub transcripts collide,
# exercising duplicate removal.
_STUB_DUPLICATE_POOL = (
    "pure music playing",
    "background noise only",
    "la la la la",
    "instrumental theme music",
    "wind and rain sounds",
    "applause and cheering",
)

_STUB_REWRITE_OPENERS = (
    "Please give me", "I want", "Produce", "I am looking for",
    "Generate", "Could you create", "Render", "Design",
)
_STUB_REWRITE_CLOSERS = (
    "thanks", "if possible", "for this line", "please",
    "as described", "exactly so", "for the recording", "in this style",
)


def stub_quality_score(clip: AudioClip, denoised: bool, cfg: StubConfig) -> QualityReport:
    """Deterministic perceptual score: hash(seed, clip_id) through the
    pre- or post-denoise Gaussian, clamped to [1.0, 5.0]."""
    params = cfg.dnsmos_post_denoise if denoised else cfg.dnsmos_pre_denoise
    raw = gauss(cfg.seed, params.mean, params.stddev, "dnsmos", clip.clip_id, int(denoised))
    return QualityReport(clip.clip_id, min(5.0, max(1.0, raw)), denoised)


def _marker(request: dict[str, Any], tag: str) -> bool:
    ref = str(request.get("payload_ref", "")) + "\x1f" + str(request.get("instruction_text", ""))
    return tag in ref


def _article(word: str) -> str:
    return "an" if word[:1].lower() in "aeiou" else "a"


class StubBackend:
    """In-process stand-in for every backend kind.

    Failure paths are driven by markers embedded in the opaque payload_ref
    ("#dead=<kind>" forces a permanent error; "#empty" forces an empty
    transcript; "#badcaption" emits an out-of-vocabulary emotion tag;
    "#norewrite" makes the rewriter return degenerate variants). Markers
    are part of the request, so purity is preserved.
    """

    def __init__(self, cfg: StubConfig, vocab: CaptionVocabulary | None = None):
        self.cfg = cfg
        self.vocab = vocab if vocab is not None else DEFAULT_VOCABULARY

    def call(self, kind: BackendKind, request: dict[str, Any]) -> dict[str, Any]:
        if _marker(request, f"#dead={kind.value}"):
            raise BackendPermanentError(f"{kind.value}: injected permanent failure")
        handler = getattr(self, f"_{kind.value}")
        return validate_response(kind, handler(request))

    # Each handler mirrors the wire schema of its kind.

    def _diarize(self, req: dict[str, Any]) -> dict[str, Any]:
        if req.get("task") == "speaker_check":
            return self._speaker_check(req)
        clip_id = req["clip_id"]
        duration = float(req["duration_s"])
        cfg = self.cfg
        span = cfg.segments_max - cfg.segments_min + 1
        n = cfg.segments_min + hash64(cfg.seed, "diar_n", clip_id) % span
        slot = duration / n
        segments = []
        for i in range(n):
            head = 0.02 + 0.06 * unit_float(cfg.seed, "diar_a", clip_id, i)
            tail = 0.02 + 0.06 * unit_float(cfg.seed, "diar_b", clip_id, i)
            segments.append(
                {
                    "start_s": (i + head) * slot,
                    "end_s": (i + 1 - tail) * slot,
                    "speaker_label": f"S{i}",
                }
            )
        return {"segments": segments}

    def _speaker_check(self, req: dict[str, Any]) -> dict[str, Any]:
        clip_id = req["clip_id"]
        duration = float(req["duration_s"])
        cfg = self.cfg
        single = unit_float(cfg.seed, "sspk", clip_id) < cfg.single_speaker_rate
        if single:
            segments = [
                {
                    "start_s": 0.0,
                    "end_s": duration,
                    "speaker_label": "S0",
                    "text": self._words(clip_id, "sspk_text", 3),
                }
            ]
        else:
            segments = [
                {
                    "start_s": 0.0,
                    "end_s": duration / 2,
                    "speaker_label": "S0",
                    "text": self._words(clip_id, "sspk_text_a", 3),
                },
                {
                    "start_s": duration / 2,
                    "end_s": duration,
                    "speaker_label": "S1",
                    "text": self._words(clip_id, "sspk_text_b", 3),
                },
            ]
        return {"segments": segments}

    def _denoise(self, req: dict[str, Any]) -> dict[str, Any]:
        return {"payload_ref": str(req["payload_ref"]) + ".denoised"}

    def _quality(self, req: dict[str, Any]) -> dict[str, Any]:
        cfg = self.cfg
        denoised = bool(req.get("denoised", False))
        params = cfg.dnsmos_post_denoise if denoised else cfg.dnsmos_pre_denoise
        raw = gauss(cfg.seed, params.mean, params.stddev, "dnsmos", req["clip_id"], int(denoised))
        return {"dnsmos": min(5.0, max(1.0, raw))}

    def _transcribe(self, req: dict[str, Any]) -> dict[str, Any]:
        cfg = self.cfg
        clip_id = req["clip_id"]
        lang = weighted_choice(cfg.seed, dict(cfg.language_mix), "lang", clip_id)
        if _marker(req, "#empty") or unit_float(cfg.seed, "empty", clip_id) < cfg.empty_transcript_rate:
            return {"text": "", "language": lang}
        if unit_float(cfg.seed, "dup", clip_id) < cfg.duplicate_text_rate:
            return {"text": choice(cfg.seed, _STUB_DUPLICATE_POOL, "dup_pick", clip_id), "language": lang}
        n_words = 4 + hash64(cfg.seed, "tlen", clip_id) % 6
        return {"text": self._words(clip_id, "ttext", n_words).capitalize() + ".", "language": lang}

    def _langid(self, req: dict[str, Any]) -> dict[str, Any]:
        lang = weighted_choice(self.cfg.seed, dict(self.cfg.language_mix), "lang", req["clip_id"])
        return {"language": lang}

    def _caption(self, req: dict[str, Any]) -> dict[str, Any]:
        cfg, v = self.cfg, self.vocab
        clip_id = req["clip_id"]
        emotion = choice(cfg.seed, v.emotion_tone, "cap_emotion", clip_id)
        if _marker(req, "#badcaption"):
            emotion = "__not_in_vocabulary__"
        caption = {
            "gender": choice(cfg.seed, v.gender, "cap_gender", clip_id),
            "age_bracket": choice(cfg.seed, v.age_bracket, "cap_age", clip_id),
            "emotion_tone": emotion,
            "voice_texture": choice(cfg.seed, v.voice_texture, "cap_texture", clip_id),
        }
        age = caption["age_bracket"].replace("_", " ")
        caption["free_text"] = (
            f"{_article(age).capitalize()} {age} {caption['gender']} speaker, "
            f"{caption['emotion_tone']} in tone with {_article(caption['voice_texture'])} "
            f"{caption['voice_texture']} texture."
        )
        return caption

    def _instruct(self, req: dict[str, Any]) -> dict[str, Any]:
        # Pure function of the caption fields: identical captions yield
        # identical instructions, and every attribute term appears verbatim.
        age = str(req["age_bracket"]).replace("_", " ")
        texture = str(req["voice_texture"])
        text = (
            f"Use {_article(age)} {age} {req['gender']} voice with {_article(texture)} "
            f"{texture} texture, sounding {req['emotion_tone']}."
        )
        return {"instruction_text": text}

    def _embed(self, req: dict[str, Any]) -> dict[str, Any]:
        cfg = self.cfg
        key = req.get("text") or req.get("clip_id") or ""
        values = [gauss(cfg.seed, 0.0, 1.0, "embed", key, i) for i in range(cfg.embed_dim)]
        return {"values": values}

    def _rewrite(self, req: dict[str, Any]) -> dict[str, Any]:
        cfg = self.cfg
        base = str(req["instruction_text"])
        n = int(req.get("n_variants", 2))
        attempt = int(req.get("attempt", 0))
        if _marker(req, "#norewrite"):
            return {"variants": [base] * n}
        if n > len(_STUB_REWRITE_OPENERS):
            raise BackendPermanentError(f"rewrite: cannot produce {n} distinct variants")
        h = hash64(cfg.seed, "rw", base, attempt)
        variants = []
        for i in range(n):
            opener = _STUB_REWRITE_OPENERS[(h + i) % len(_STUB_REWRITE_OPENERS)]
            closer = _STUB_REWRITE_CLOSERS[(h // 7 + i) % len(_STUB_REWRITE_CLOSERS)]
            body = base[0].lower() + base[1:] if base else base
            variants.append(f"{opener} the following: {body.rstrip('.')}, {closer}.")
        return {"variants": variants}

    def _judge(self, req: dict[str, Any]) -> dict[str, Any]:
        key = req.get("item_id") or req.get("clip_id") or ""
        passed = unit_float(self.cfg.seed, "judge", key, req.get("task", ""), req.get("language", "")) \
            < self.cfg.judge_pass_rate
        return {"verdict": bool(passed)}

    def _words(self, clip_id: str, label: str, n: int) -> str:
        cfg = self.cfg
        picks = [choice(cfg.seed, _STUB_WORDS, label, clip_id, i) for i in range(n)]
        return " ".join(picks)
