"""Run configuration: TOML file with one section per concern, strict key
checking, range validation, and a canonical hash for resume integrity."""

from __future__ import annotations

import hashlib
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .backends import BackendEndpoint, BackendKind, GaussParams, StubConfig
from .corpus import CaptionVocabulary, DEFAULT_VOCABULARY, canonical_dumps
from .delaypattern import ChatTemplate


class ConfigError(ValueError):
    """Carries every validation problem found, not just the first."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("; ".join(errors))


_INT64_MIN = -(2**63)
_UINT64_MAX = 2**64 - 1


@dataclass(frozen=True)
class RunConfig:
    """Fully-typed engine configuration with defaults applied."""

    seed: int = 0
    workers: int | None = None  # None = machine core count
    dnsmos_threshold: float = 3.0
    min_segment_s: float = 1.0
    denoise_enabled: bool = True
    checkpoint_every: int = 1000
    backend_mode: str = "stub"  # "stub" or "http"
    stub: StubConfig = field(default_factory=StubConfig)
    endpoints: Mapping[BackendKind, BackendEndpoint] = field(default_factory=dict)
    max_inflight: int = 8
    mining_k: int = 50
    similarity_floor: float | None = None
    rewrite_n: int = 2
    rewrite_max_retries: int = 3
    contamination_threshold: float = 0.9
    vocab: CaptionVocabulary = field(default_factory=CaptionVocabulary)
    template: ChatTemplate = field(default_factory=ChatTemplate)

    def canonical_dict(self) -> dict[str, Any]:
        """Semantic content only: execution knobs (workers, checkpoint
        granularity) do not change outputs and stay out of the hash."""
        return {
            "seed": self.seed,
            "dnsmos_threshold": self.dnsmos_threshold,
            "min_segment_s": self.min_segment_s,
            "denoise_enabled": self.denoise_enabled,
            "backend_mode": self.backend_mode,
            "stub": self.stub.to_dict(),
            "endpoints": {
                kind.value: {
                    "url": ep.url,
                    "timeout_ms": ep.timeout_ms,
                    "max_retries": ep.max_retries,
                }
                for kind, ep in sorted(self.endpoints.items(), key=lambda kv: kv[0].value)
            },
            "mining_k": self.mining_k,
            "similarity_floor": self.similarity_floor,
            "rewrite_n": self.rewrite_n,
            "rewrite_max_retries": self.rewrite_max_retries,
            "contamination_threshold": self.contamination_threshold,
            "vocab": self.vocab.to_dict(),
            "template": self.template.to_dict(),
        }

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_dumps(self.canonical_dict()).encode("utf-8")).hexdigest()

    def effective_workers(self) -> int:
        if self.workers is not None:
            return self.workers
        return os.cpu_count() or 1


_TOP_KEYS = {"seed", "workers", "stages", "pipeline", "backends", "mining", "rewrite", "contamination", "vocab", "template"}
_STAGE_KEYS = {"dnsmos_threshold", "min_segment_s", "denoise_enabled"}
_PIPELINE_KEYS = {"checkpoint_every"}
_BACKENDS_KEYS = {"mode", "stub", "http"}
_STUB_KEYS = {
    "seed",
    "dnsmos_pre_denoise",
    "dnsmos_post_denoise",
    "single_speaker_rate",
    "language_mix",
    "segments_min",
    "segments_max",
    "empty_transcript_rate",
    "duplicate_text_rate",
    "embed_dim",
    "judge_pass_rate",
}
_GAUSS_KEYS = {"mean", "stddev"}
_HTTP_KEYS = {"endpoints", "max_inflight"}
_ENDPOINT_KEYS = {"url", "timeout_ms", "max_retries"}
_MINING_KEYS = {"k", "similarity_floor"}
_REWRITE_KEYS = {"n_variants", "max_retries"}
_CONTAMINATION_KEYS = {"threshold"}
_VOCAB_KEYS = {"gender", "age_bracket", "emotion_tone", "voice_texture"}
_TEMPLATE_KEYS = {"instruction_open", "instruction_close", "transcript_open", "transcript_close", "audio_open"}


def _check_unknown(section: str, data: Mapping[str, Any], allowed: set[str], errors: list[str]) -> None:
    for key in data:
        if key not in allowed:
            errors.append(f"{section}: unknown key {key!r}")


def _get_number(section: str, data: Mapping[str, Any], key: str, default: float, errors: list[str]) -> float:
    v = data.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        errors.append(f"{section}.{key}: expected a number, got {type(v).__name__}")
        return default
    return float(v)


def _get_int(section: str, data: Mapping[str, Any], key: str, default: int, errors: list[str]) -> int:
    v = data.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        errors.append(f"{section}.{key}: expected an integer, got {type(v).__name__}")
        return default
    return v


def _parse_gauss(section: str, data: Any, default: GaussParams, errors: list[str]) -> GaussParams:
    if data is None:
        return default
    if not isinstance(data, Mapping):
        errors.append(f"{section}: expected a table with mean/stddev")
        return default
    _check_unknown(section, data, _GAUSS_KEYS, errors)
    mean = _get_number(section, data, "mean", default.mean, errors)
    stddev = _get_number(section, data, "stddev", default.stddev, errors)
    if stddev <= 0:
        errors.append(f"{section}.stddev: must be > 0, got {stddev}")
        return default
    return GaussParams(mean=mean, stddev=stddev)


def parse_config(data: Mapping[str, Any]) -> RunConfig:
    """Validate a parsed TOML mapping into a RunConfig.

    Raises ConfigError listing every violation with its field name and the
    constraint it broke. Unknown keys are errors (strict mode).
    """
    errors: list[str] = []
    _check_unknown("config", data, _TOP_KEYS, errors)

    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        errors.append("seed: expected an integer")
        seed = 0
    elif not _INT64_MIN <= seed <= _UINT64_MAX:
        errors.append(f"seed: must fit in 64 bits, got {seed}")
        seed = 0

    workers: int | None = data.get("workers")
    if workers is not None:
        if isinstance(workers, bool) or not isinstance(workers, int):
            errors.append("workers: expected an integer")
            workers = None
        elif workers < 1:
            errors.append(f"workers: must be >= 1, got {workers}")
            workers = None

    stages = data.get("stages", {})
    if not isinstance(stages, Mapping):
        errors.append("stages: expected a table")
        stages = {}
    _check_unknown("stages", stages, _STAGE_KEYS, errors)
    dnsmos_threshold = _get_number("stages", stages, "dnsmos_threshold", 3.0, errors)
    if not 1.0 <= dnsmos_threshold <= 5.0:
        errors.append(f"stages.dnsmos_threshold: must lie in [1.0, 5.0], got {dnsmos_threshold}")
        dnsmos_threshold = 3.0
    min_segment_s = _get_number("stages", stages, "min_segment_s", 1.0, errors)
    if min_segment_s < 0:
        errors.append(f"stages.min_segment_s: must be >= 0, got {min_segment_s}")
        min_segment_s = 1.0
    denoise_enabled = stages.get("denoise_enabled", True)
    if not isinstance(denoise_enabled, bool):
        errors.append("stages.denoise_enabled: expected a boolean")
        denoise_enabled = True

    pipeline = data.get("pipeline", {})
    if not isinstance(pipeline, Mapping):
        errors.append("pipeline: expected a table")
        pipeline = {}
    _check_unknown("pipeline", pipeline, _PIPELINE_KEYS, errors)
    checkpoint_every = _get_int("pipeline", pipeline, "checkpoint_every", 1000, errors)
    if checkpoint_every < 1:
        errors.append(f"pipeline.checkpoint_every: must be >= 1, got {checkpoint_every}")
        checkpoint_every = 1000

    backends = data.get("backends", {})
    if not isinstance(backends, Mapping):
        errors.append("backends: expected a table")
        backends = {}
    _check_unknown("backends", backends, _BACKENDS_KEYS, errors)
    backend_mode = backends.get("mode", "stub")
    if backend_mode not in ("stub", "http"):
        errors.append(f"backends.mode: must be 'stub' or 'http', got {backend_mode!r}")
        backend_mode = "stub"

    stub_data = backends.get("stub", {})
    if not isinstance(stub_data, Mapping):
        errors.append("backends.stub: expected a table")
        stub_data = {}
    _check_unknown("backends.stub", stub_data, _STUB_KEYS, errors)
    stub_seed = stub_data.get("seed", seed)
    if isinstance(stub_seed, bool) or not isinstance(stub_seed, int):
        errors.append("backends.stub.seed: expected an integer")
        stub_seed = seed
    pre = _parse_gauss("backends.stub.dnsmos_pre_denoise", stub_data.get("dnsmos_pre_denoise"),
                       StubConfig.__dataclass_fields__["dnsmos_pre_denoise"].default, errors)
    post = _parse_gauss("backends.stub.dnsmos_post_denoise", stub_data.get("dnsmos_post_denoise"),
                        StubConfig.__dataclass_fields__["dnsmos_post_denoise"].default, errors)
    single_rate = _get_number("backends.stub", stub_data, "single_speaker_rate", 0.85, errors)
    mix = stub_data.get("language_mix", {"zh": 0.6, "en": 0.3, "other": 0.1})
    if not isinstance(mix, Mapping):
        errors.append("backends.stub.language_mix: expected a table of language -> probability")
        mix = {"zh": 0.6, "en": 0.3, "other": 0.1}
    segments_min = _get_int("backends.stub", stub_data, "segments_min", 1, errors)
    segments_max = _get_int("backends.stub", stub_data, "segments_max", 3, errors)
    empty_rate = _get_number("backends.stub", stub_data, "empty_transcript_rate", 0.02, errors)
    dup_rate = _get_number("backends.stub", stub_data, "duplicate_text_rate", 0.03, errors)
    embed_dim = _get_int("backends.stub", stub_data, "embed_dim", 16, errors)
    judge_rate = _get_number("backends.stub", stub_data, "judge_pass_rate", 0.8, errors)
    stub = StubConfig()
    if not errors:
        try:
            stub = StubConfig(
                seed=stub_seed,
                dnsmos_pre_denoise=pre,
                dnsmos_post_denoise=post,
                single_speaker_rate=single_rate,
                language_mix=dict(mix),
                segments_min=segments_min,
                segments_max=segments_max,
                empty_transcript_rate=empty_rate,
                duplicate_text_rate=dup_rate,
                embed_dim=embed_dim,
                judge_pass_rate=judge_rate,
            )
        except ValueError as exc:
            errors.append(f"backends.stub: {exc}")

    endpoints: dict[BackendKind, BackendEndpoint] = {}
    max_inflight = 8
    http_data = backends.get("http", {})
    if not isinstance(http_data, Mapping):
        errors.append("backends.http: expected a table")
        http_data = {}
    _check_unknown("backends.http", http_data, _HTTP_KEYS, errors)
    max_inflight = _get_int("backends.http", http_data, "max_inflight", 8, errors)
    if max_inflight < 1:
        errors.append(f"backends.http.max_inflight: must be >= 1, got {max_inflight}")
        max_inflight = 8
    ep_data = http_data.get("endpoints", {})
    if not isinstance(ep_data, Mapping):
        errors.append("backends.http.endpoints: expected a table")
        ep_data = {}
    valid_kinds = {k.value for k in BackendKind}
    for name, ep in ep_data.items():
        if name not in valid_kinds:
            errors.append(f"backends.http.endpoints.{name}: unknown backend kind")
            continue
        if not isinstance(ep, Mapping):
            errors.append(f"backends.http.endpoints.{name}: expected a table")
            continue
        _check_unknown(f"backends.http.endpoints.{name}", ep, _ENDPOINT_KEYS, errors)
        url = ep.get("url")
        if not isinstance(url, str) or not url:
            errors.append(f"backends.http.endpoints.{name}.url: required non-empty string")
            continue
        timeout_ms = _get_int(f"backends.http.endpoints.{name}", ep, "timeout_ms", 10_000, errors)
        max_retries = _get_int(f"backends.http.endpoints.{name}", ep, "max_retries", 2, errors)
        try:
            endpoints[BackendKind(name)] = BackendEndpoint(
                kind=BackendKind(name), url=url, timeout_ms=timeout_ms, max_retries=max_retries
            )
        except ValueError as exc:
            errors.append(f"backends.http.endpoints.{name}: {exc}")
    if backend_mode == "http" and not endpoints:
        errors.append("backends.http.endpoints: required when backends.mode = 'http'")

    mining = data.get("mining", {})
    if not isinstance(mining, Mapping):
        errors.append("mining: expected a table")
        mining = {}
    _check_unknown("mining", mining, _MINING_KEYS, errors)
    mining_k = _get_int("mining", mining, "k", 50, errors)
    if mining_k < 1:
        errors.append(f"mining.k: must be >= 1, got {mining_k}")
        mining_k = 50
    floor = mining.get("similarity_floor")
    similarity_floor: float | None = None
    if floor is not None:
        if isinstance(floor, bool) or not isinstance(floor, (int, float)):
            errors.append("mining.similarity_floor: expected a number")
        elif not -1.0 <= float(floor) <= 1.0:
            errors.append(f"mining.similarity_floor: must lie in [-1, 1], got {floor}")
        else:
            similarity_floor = float(floor)

    rewrite = data.get("rewrite", {})
    if not isinstance(rewrite, Mapping):
        errors.append("rewrite: expected a table")
        rewrite = {}
    _check_unknown("rewrite", rewrite, _REWRITE_KEYS, errors)
    rewrite_n = _get_int("rewrite", rewrite, "n_variants", 2, errors)
    if rewrite_n < 1:
        errors.append(f"rewrite.n_variants: must be >= 1, got {rewrite_n}")
        rewrite_n = 2
    rewrite_retries = _get_int("rewrite", rewrite, "max_retries", 3, errors)
    if rewrite_retries < 0:
        errors.append(f"rewrite.max_retries: must be >= 0, got {rewrite_retries}")
        rewrite_retries = 3

    contamination = data.get("contamination", {})
    if not isinstance(contamination, Mapping):
        errors.append("contamination: expected a table")
        contamination = {}
    _check_unknown("contamination", contamination, _CONTAMINATION_KEYS, errors)
    cont_threshold = _get_number("contamination", contamination, "threshold", 0.9, errors)
    if not 0.0 <= cont_threshold <= 1.0:
        errors.append(f"contamination.threshold: must lie in [0, 1], got {cont_threshold}")
        cont_threshold = 0.9

    vocab_data = data.get("vocab", {})
    if not isinstance(vocab_data, Mapping):
        errors.append("vocab: expected a table")
        vocab_data = {}
    _check_unknown("vocab", vocab_data, _VOCAB_KEYS, errors)
    vocab = DEFAULT_VOCABULARY
    vocab_kwargs: dict[str, tuple[str, ...]] = {}
    for key in _VOCAB_KEYS:
        if key in vocab_data:
            values = vocab_data[key]
            if not isinstance(values, list) or not all(isinstance(v, str) for v in values):
                errors.append(f"vocab.{key}: expected a list of strings")
            else:
                vocab_kwargs[key] = tuple(values)
    if vocab_kwargs and not errors:
        try:
            vocab = CaptionVocabulary(
                **{
                    key: vocab_kwargs.get(key, getattr(DEFAULT_VOCABULARY, key))
                    for key in ("gender", "age_bracket", "emotion_tone", "voice_texture")
                }
            )
        except ValueError as exc:
            errors.append(f"vocab: {exc}")

    template_data = data.get("template", {})
    if not isinstance(template_data, Mapping):
        errors.append("template: expected a table")
        template_data = {}
    _check_unknown("template", template_data, _TEMPLATE_KEYS, errors)
    template = ChatTemplate()
    tmpl_kwargs = {}
    for key in _TEMPLATE_KEYS:
        if key in template_data:
            v = template_data[key]
            if not isinstance(v, str):
                errors.append(f"template.{key}: expected a string")
            else:
                tmpl_kwargs[key] = v
    if tmpl_kwargs and not errors:
        try:
            template = ChatTemplate(
                **{key: tmpl_kwargs.get(key, getattr(ChatTemplate(), key)) for key in _TEMPLATE_KEYS}
            )
        except ValueError as exc:
            errors.append(f"template: {exc}")

    if errors:
        raise ConfigError(errors)

    return RunConfig(
        seed=seed,
        workers=workers,
        dnsmos_threshold=dnsmos_threshold,
        min_segment_s=min_segment_s,
        denoise_enabled=denoise_enabled,
        checkpoint_every=checkpoint_every,
        backend_mode=backend_mode,
        stub=stub,
        endpoints=endpoints,
        max_inflight=max_inflight,
        mining_k=mining_k,
        similarity_floor=similarity_floor,
        rewrite_n=rewrite_n,
        rewrite_max_retries=rewrite_retries,
        contamination_threshold=cont_threshold,
        vocab=vocab,
        template=template,
    )


def validate_config(path: str | Path) -> RunConfig:
    """Parse and validate a TOML config file.

    Raises ConfigError with the full error list, or OSError if unreadable.
    """
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError([f"config: invalid TOML: {exc}"]) from exc
    return parse_config(data)


def config_from_canonical(
    d: Mapping[str, Any],
    workers: int | None = None,
    checkpoint_every: int = 1000,
) -> RunConfig:
    """Rebuild a RunConfig from its canonical dict (as stored in a run dir).

    Execution knobs are not part of the canonical form and are supplied
    separately.
    """
    stub_d = d["stub"]
    stub = StubConfig(
        seed=stub_d["seed"],
        dnsmos_pre_denoise=GaussParams(**stub_d["dnsmos_pre_denoise"]),
        dnsmos_post_denoise=GaussParams(**stub_d["dnsmos_post_denoise"]),
        single_speaker_rate=stub_d["single_speaker_rate"],
        language_mix=dict(stub_d["language_mix"]),
        segments_min=stub_d["segments_min"],
        segments_max=stub_d["segments_max"],
        empty_transcript_rate=stub_d["empty_transcript_rate"],
        duplicate_text_rate=stub_d["duplicate_text_rate"],
        embed_dim=stub_d["embed_dim"],
        judge_pass_rate=stub_d["judge_pass_rate"],
    )
    endpoints = {
        BackendKind(name): BackendEndpoint(
            kind=BackendKind(name),
            url=ep["url"],
            timeout_ms=ep["timeout_ms"],
            max_retries=ep["max_retries"],
        )
        for name, ep in d.get("endpoints", {}).items()
    }
    return RunConfig(
        seed=d["seed"],
        workers=workers,
        dnsmos_threshold=d["dnsmos_threshold"],
        min_segment_s=d["min_segment_s"],
        denoise_enabled=d["denoise_enabled"],
        checkpoint_every=checkpoint_every,
        backend_mode=d["backend_mode"],
        stub=stub,
        endpoints=endpoints,
        mining_k=d["mining_k"],
        similarity_floor=d.get("similarity_floor"),
        rewrite_n=d["rewrite_n"],
        rewrite_max_retries=d["rewrite_max_retries"],
        contamination_threshold=d["contamination_threshold"],
        vocab=CaptionVocabulary.from_dict(d["vocab"]),
        template=ChatTemplate(**d["template"]),
    )
