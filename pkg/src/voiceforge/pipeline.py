"""Stage orchestration over manifests: retention accounting, batch
checkpointing, resumable runs, and deterministic output ordering.

Records flow through the fixed stage order diarize -> segment_filter ->
denoise -> quality -> single_speaker -> transcribe -> rule_filter ->
language_filter -> caption_instruct (denoise may be disabled). Every stage
satisfies in_count == kept + dropped + dead_lettered; diarization reports
its expansion in children_out, and the conservation check uses that count
for the diarize edge.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Sequence

from .backends import Backend, BackendError, BackendKind, HttpBackend, StubBackend
from .config import RunConfig
from .corpus import (
    AudioClip,
    Caption,
    Language,
    QualityReport,
    SpeakerSegment,
    StageState,
    TimbreInstruction,
    Transcript,
    canonical_dumps,
    read_jsonl,
)
from .stages import (
    DedupIndex,
    DropReason,
    StageOutcome,
    Verdict,
    stage_caption_and_instruct,
    stage_diarize,
    stage_language_filter,
    stage_quality_gate,
    stage_rule_filter,
    stage_segment_filter,
    stage_single_speaker,
)

log = logging.getLogger("voiceforge.pipeline")

STAGE_NAMES = (
    "diarize",
    "segment_filter",
    "denoise",
    "quality",
    "single_speaker",
    "transcribe",
    "rule_filter",
    "language_filter",
    "caption_instruct",
)

MANIFEST_OUT = "manifest.out.jsonl"
DEAD_LETTER_OUT = "dead_letter.jsonl"
REPORTS_OUT = "reports.json"
CHECKPOINT_FILE = "checkpoint.json"
RUN_CONFIG_FILE = "run_config.json"


class DataError(ValueError):
    """Unreadable or structurally invalid input data; fatal for the run."""


class CheckpointError(ValueError):
    """Corrupt checkpoint or config mismatch on resume."""


class PipelineInterrupted(RuntimeError):
    """Raised by the stop-after hooks once the requested progress is committed."""


@dataclass(frozen=True)
class RecordEnvelope:
    """A clip plus everything the stages have attached to it so far."""

    clip: AudioClip
    quality_raw: QualityReport | None = None
    quality: QualityReport | None = None
    transcript: Transcript | None = None
    caption: Caption | None = None
    instruction: TimbreInstruction | None = None

    @property
    def clip_id(self) -> str:
        return self.clip.clip_id

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"clip": self.clip.to_dict()}
        if self.quality_raw is not None:
            d["quality_raw"] = self.quality_raw.to_dict()
        if self.quality is not None:
            d["quality"] = self.quality.to_dict()
        if self.transcript is not None:
            d["transcript"] = self.transcript.to_dict()
        if self.caption is not None:
            d["caption"] = self.caption.to_dict()
        if self.instruction is not None:
            d["instruction"] = self.instruction.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RecordEnvelope":
        return cls(
            clip=AudioClip.from_dict(d["clip"]),
            quality_raw=QualityReport.from_dict(d["quality_raw"]) if "quality_raw" in d else None,
            quality=QualityReport.from_dict(d["quality"]) if "quality" in d else None,
            transcript=Transcript.from_dict(d["transcript"]) if "transcript" in d else None,
            caption=Caption.from_dict(d["caption"]) if "caption" in d else None,
            instruction=TimbreInstruction.from_dict(d["instruction"]) if "instruction" in d else None,
        )


@dataclass(frozen=True)
class StageReport:
    """Retention accounting for one stage.

    children_out is present only for expanding stages (diarization) and
    counts the records emitted to the next stage.
    """

    stage_name: str
    in_count: int
    kept: int
    dropped: int
    dead_lettered: int
    drop_reason_histogram: dict[str, int]
    retention_rate: float
    children_out: int | None = None

    def __post_init__(self) -> None:
        if self.in_count != self.kept + self.dropped + self.dead_lettered:
            raise ValueError(
                f"{self.stage_name}: in_count {self.in_count} != kept {self.kept} "
                f"+ dropped {self.dropped} + dead_lettered {self.dead_lettered}"
            )
        if sum(self.drop_reason_histogram.values()) != self.dropped:
            raise ValueError(f"{self.stage_name}: drop_reason_histogram does not sum to dropped")
        expected = self.kept / self.in_count if self.in_count > 0 else 1.0
        if abs(self.retention_rate - expected) > 1e-12:
            raise ValueError(f"{self.stage_name}: retention_rate must equal kept/in_count")

    @property
    def out_count(self) -> int:
        """Records this stage handed to the next one."""
        return self.children_out if self.children_out is not None else self.kept

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "stage_name": self.stage_name,
            "in_count": self.in_count,
            "kept": self.kept,
            "dropped": self.dropped,
            "dead_lettered": self.dead_lettered,
            "drop_reason_histogram": dict(sorted(self.drop_reason_histogram.items())),
            "retention_rate": self.retention_rate,
        }
        if self.children_out is not None:
            d["children_out"] = self.children_out
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "StageReport":
        return cls(
            stage_name=d["stage_name"],
            in_count=d["in_count"],
            kept=d["kept"],
            dropped=d["dropped"],
            dead_lettered=d["dead_lettered"],
            drop_reason_histogram=dict(d["drop_reason_histogram"]),
            retention_rate=d["retention_rate"],
            children_out=d.get("children_out"),
        )


def check_conservation(reports: Sequence[StageReport]) -> bool:
    """Each stage's input must equal the previous stage's output count."""
    for prev, cur in zip(reports, reports[1:]):
        if cur.in_count != prev.out_count:
            return False
    return True


@dataclass(frozen=True)
class DeadLetter:
    clip_id: str
    stage: str
    error: str
    envelope: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {"clip_id": self.clip_id, "stage": self.stage, "error": self.error, "envelope": self.envelope}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DeadLetter":
        return cls(d["clip_id"], d["stage"], d["error"], d["envelope"])


@dataclass
class OutcomeRecord:
    """One stage application: the verdict plus the records flowing onward."""

    verdict: Verdict
    in_clip_id: str
    drop_reason: DropReason | None = None
    error: str | None = None
    out: list[RecordEnvelope] = field(default_factory=list)
    dead_env: RecordEnvelope | None = None

    @classmethod
    def from_outcome(cls, outcome: StageOutcome, env: RecordEnvelope, out_env: RecordEnvelope | None) -> "OutcomeRecord":
        if outcome.verdict == Verdict.DROP:
            if outcome.is_dead_letter:
                return cls(
                    verdict=outcome.verdict,
                    in_clip_id=env.clip_id,
                    drop_reason=outcome.drop_reason,
                    error=outcome.error,
                    dead_env=env,
                )
            return cls(verdict=outcome.verdict, in_clip_id=env.clip_id, drop_reason=outcome.drop_reason)
        assert out_env is not None
        return cls(verdict=outcome.verdict, in_clip_id=env.clip_id, out=[out_env])

    @classmethod
    def dead(cls, env: RecordEnvelope, error: str) -> "OutcomeRecord":
        return cls(
            verdict=Verdict.DROP,
            in_clip_id=env.clip_id,
            drop_reason=DropReason.BACKEND_DEAD_LETTER,
            error=error,
            dead_env=env,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "verdict": self.verdict.value,
            "in_clip_id": self.in_clip_id,
            "drop_reason": self.drop_reason.value if self.drop_reason else None,
            "error": self.error,
            "out": [e.to_dict() for e in self.out],
            "dead_env": self.dead_env.to_dict() if self.dead_env else None,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "OutcomeRecord":
        return cls(
            verdict=Verdict(d["verdict"]),
            in_clip_id=d["in_clip_id"],
            drop_reason=DropReason(d["drop_reason"]) if d.get("drop_reason") else None,
            error=d.get("error"),
            out=[RecordEnvelope.from_dict(e) for e in d.get("out", [])],
            dead_env=RecordEnvelope.from_dict(d["dead_env"]) if d.get("dead_env") else None,
        )


def build_stage_report(name: str, outcomes: Sequence[OutcomeRecord], expanding: bool) -> StageReport:
    kept = sum(1 for o in outcomes if o.verdict in (Verdict.KEEP, Verdict.TRANSFORMED))
    dead = sum(1 for o in outcomes if o.drop_reason == DropReason.BACKEND_DEAD_LETTER)
    histogram: dict[str, int] = {}
    for o in outcomes:
        if o.drop_reason is not None and o.drop_reason != DropReason.BACKEND_DEAD_LETTER:
            histogram[o.drop_reason.value] = histogram.get(o.drop_reason.value, 0) + 1
    dropped = sum(histogram.values())
    in_count = len(outcomes)
    return StageReport(
        stage_name=name,
        in_count=in_count,
        kept=kept,
        dropped=dropped,
        dead_lettered=dead,
        drop_reason_histogram=histogram,
        retention_rate=kept / in_count if in_count > 0 else 1.0,
        children_out=sum(len(o.out) for o in outcomes) if expanding else None,
    )


@dataclass
class PartialStage:
    stage_index: int
    outcomes: list[OutcomeRecord]

    def to_dict(self) -> dict[str, Any]:
        return {"stage_index": self.stage_index, "outcomes": [o.to_dict() for o in self.outcomes]}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PartialStage":
        return cls(d["stage_index"], [OutcomeRecord.from_dict(o) for o in d["outcomes"]])


@dataclass
class RunState:
    run_id: str
    config_hash: str
    stage_names: list[str]
    live: list[RecordEnvelope]
    dead: list[DeadLetter] = field(default_factory=list)
    reports: list[StageReport] = field(default_factory=list)
    dedup_seen: list[str] = field(default_factory=list)
    partial: PartialStage | None = None
    next_stage: int = 0
    batches_committed: int = 0
    done: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "config_hash": self.config_hash,
            "stage_names": list(self.stage_names),
            "live": [e.to_dict() for e in self.live],
            "dead": [d.to_dict() for d in self.dead],
            "reports": [r.to_dict() for r in self.reports],
            "dedup_seen": list(self.dedup_seen),
            "partial": self.partial.to_dict() if self.partial else None,
            "next_stage": self.next_stage,
            "batches_committed": self.batches_committed,
            "done": self.done,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunState":
        return cls(
            run_id=d["run_id"],
            config_hash=d["config_hash"],
            stage_names=list(d["stage_names"]),
            live=[RecordEnvelope.from_dict(e) for e in d["live"]],
            dead=[DeadLetter.from_dict(x) for x in d["dead"]],
            reports=[StageReport.from_dict(r) for r in d["reports"]],
            dedup_seen=list(d["dedup_seen"]),
            partial=PartialStage.from_dict(d["partial"]) if d.get("partial") else None,
            next_stage=d["next_stage"],
            batches_committed=d["batches_committed"],
            done=d["done"],
        )


@dataclass
class RunResult:
    out_dir: Path
    records: list[RecordEnvelope]
    reports: list[StageReport]
    dead_letters: list[DeadLetter]

    @property
    def manifest_path(self) -> Path:
        return self.out_dir / MANIFEST_OUT

    @property
    def dead_letter_path(self) -> Path:
        return self.out_dir / DEAD_LETTER_OUT

    @property
    def reports_path(self) -> Path:
        return self.out_dir / REPORTS_OUT

    def report_by_name(self, name: str) -> StageReport:
        for r in self.reports:
            if r.stage_name == name:
                return r
        raise KeyError(name)


def build_backend(config: RunConfig) -> Backend:
    if config.backend_mode == "http":
        return HttpBackend(config.endpoints, max_inflight=config.max_inflight)
    return StubBackend(config.stub, vocab=config.vocab)


def load_input_manifest(path: str | Path) -> list[RecordEnvelope]:
    """Read clips (flat dicts) or full envelopes; clip_id must be unique."""
    envelopes: list[RecordEnvelope] = []
    seen: set[str] = set()
    try:
        for row in read_jsonl(path):
            env = RecordEnvelope.from_dict(row) if "clip" in row else RecordEnvelope(clip=AudioClip.from_dict(row))
            if env.clip_id in seen:
                raise DataError(f"duplicate clip_id in input manifest: {env.clip_id}")
            seen.add(env.clip_id)
            envelopes.append(env)
    except (KeyError, ValueError, OSError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"unreadable input manifest {path}: {exc}") from exc
    envelopes.sort(key=lambda e: e.clip_id)
    return envelopes


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


class PipelineRunner:
    """Drives records through the configured stages with checkpointing."""

    def __init__(self, config: RunConfig, backend: Backend | None = None):
        self.cfg = config
        self.backend = backend if backend is not None else build_backend(config)
        self.dedup = DedupIndex()

    def stage_names(self) -> list[str]:
        names = list(STAGE_NAMES)
        if not self.cfg.denoise_enabled:
            names.remove("denoise")
        return names

    # -- public entry points --------------------------------------------------

    def run(
        self,
        records: Sequence[RecordEnvelope],
        out_dir: str | Path,
        stop_after_stage: int | None = None,
        stop_after_batches: int | None = None,
    ) -> RunResult:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        config_hash = self.cfg.config_hash()
        _atomic_write(
            out / RUN_CONFIG_FILE,
            canonical_dumps(
                {
                    "config": self.cfg.canonical_dict(),
                    "config_hash": config_hash,
                    "checkpoint_every": self.cfg.checkpoint_every,
                }
            ),
        )
        state = RunState(
            run_id=f"run-{config_hash[:12]}",
            config_hash=config_hash,
            stage_names=self.stage_names(),
            live=sorted(records, key=lambda e: e.clip_id),
        )
        self.dedup = DedupIndex()
        return self._drive(state, out, stop_after_stage, stop_after_batches)

    def resume(
        self,
        out_dir: str | Path,
        stop_after_stage: int | None = None,
        stop_after_batches: int | None = None,
    ) -> RunResult:
        out = Path(out_dir)
        state = load_checkpoint(out)
        if state.config_hash != self.cfg.config_hash():
            raise CheckpointError(
                f"config mismatch: checkpoint was written under {state.config_hash[:12]}, "
                f"current config hashes to {self.cfg.config_hash()[:12]}"
            )
        if state.stage_names != self.stage_names():
            raise CheckpointError("config mismatch: stage list differs from checkpoint")
        self.dedup = DedupIndex(state.dedup_seen)
        if state.done:
            log.info("resume: run %s already complete; re-emitting outputs", state.run_id)
            return self._finish(state, out)
        return self._drive(state, out, stop_after_stage, stop_after_batches)

    # -- engine ----------------------------------------------------------------

    def _drive(
        self,
        state: RunState,
        out: Path,
        stop_after_stage: int | None,
        stop_after_batches: int | None,
    ) -> RunResult:
        names = state.stage_names
        adapters = self._adapters()
        for si in range(state.next_stage, len(names)):
            name = names[si]
            adapter = adapters[name]
            if state.partial is not None and state.partial.stage_index == si:
                outcomes = state.partial.outcomes
            else:
                state.partial = PartialStage(si, [])
                outcomes = state.partial.outcomes
            while len(outcomes) < len(state.live):
                done = len(outcomes)
                batch = state.live[done : done + self.cfg.checkpoint_every]
                outcomes.extend(self._run_batch(adapter, batch, name))
                self._checkpoint(state, out)
                state.batches_committed += 1
                if stop_after_batches is not None and state.batches_committed >= stop_after_batches:
                    raise PipelineInterrupted(f"stopped after {state.batches_committed} batch commits")
            report = build_stage_report(name, outcomes, expanding=(name == "diarize"))
            state.reports.append(report)
            for o in outcomes:
                if o.drop_reason == DropReason.BACKEND_DEAD_LETTER:
                    assert o.dead_env is not None
                    log.warning("stage=%s record=%s dead-lettered: %s", name, o.in_clip_id, o.error)
                    state.dead.append(
                        DeadLetter(o.in_clip_id, name, o.error or "", o.dead_env.to_dict())
                    )
            state.live = sorted(
                (env for o in outcomes for env in o.out), key=lambda e: e.clip_id
            )
            state.partial = None
            state.next_stage = si + 1
            self._checkpoint(state, out)
            log.info(
                "stage=%s in=%d kept=%d dropped=%d dead=%d out=%d",
                name, report.in_count, report.kept, report.dropped,
                report.dead_lettered, report.out_count,
            )
            if stop_after_stage is not None and state.next_stage >= stop_after_stage:
                raise PipelineInterrupted(f"stopped after stage {name}")
        state.done = True
        self._checkpoint(state, out)
        return self._finish(state, out)

    def _run_batch(
        self, adapter: Callable[[RecordEnvelope], OutcomeRecord], batch: Sequence[RecordEnvelope], name: str
    ) -> list[OutcomeRecord]:
        workers = self.cfg.effective_workers()
        # Dedup registration must observe records in clip_id order, so the
        # rule filter runs sequentially; everything else is per-record pure.
        if workers <= 1 or name == "rule_filter" or len(batch) <= 1:
            return [adapter(env) for env in batch]
        with ThreadPoolExecutor(max_workers=min(workers, len(batch))) as ex:
            return list(ex.map(adapter, batch))

    def _checkpoint(self, state: RunState, out: Path) -> None:
        state.dedup_seen = self.dedup.snapshot()
        payload = canonical_dumps(state.to_dict())
        digest = hashlib.sha256(payload.encode("utf-8")).hexdigest()
        _atomic_write(out / CHECKPOINT_FILE, canonical_dumps({"sha256": digest}) + "\n" + payload)

    def _finish(self, state: RunState, out: Path) -> RunResult:
        records = sorted(state.live, key=lambda e: e.clip_id)
        manifest_text = "".join(canonical_dumps(e.to_dict()) + "\n" for e in records)
        _atomic_write(out / MANIFEST_OUT, manifest_text)
        dead_text = "".join(canonical_dumps(d.to_dict()) + "\n" for d in state.dead)
        _atomic_write(out / DEAD_LETTER_OUT, dead_text)
        reports_doc = {
            "run_id": state.run_id,
            "config_hash": state.config_hash,
            "input_count": state.reports[0].in_count if state.reports else 0,
            "output_count": len(records),
            "conservation_ok": check_conservation(state.reports),
            "stages": [r.to_dict() for r in state.reports],
        }
        _atomic_write(out / REPORTS_OUT, json.dumps(reports_doc, sort_keys=True, ensure_ascii=False, indent=2) + "\n")
        return RunResult(out_dir=out, records=records, reports=list(state.reports), dead_letters=list(state.dead))

    # -- stage adapters ----------------------------------------------------------

    def _adapters(self) -> dict[str, Callable[[RecordEnvelope], OutcomeRecord]]:
        return {
            "diarize": self._stage_diarize,
            "segment_filter": self._stage_segment_filter,
            "denoise": self._stage_denoise,
            "quality": self._stage_quality,
            "single_speaker": self._stage_single_speaker,
            "transcribe": self._stage_transcribe,
            "rule_filter": self._stage_rule_filter,
            "language_filter": self._stage_language_filter,
            "caption_instruct": self._stage_caption_instruct,
        }

    def _stage_diarize(self, env: RecordEnvelope) -> OutcomeRecord:
        clip = env.clip
        try:
            resp = self.backend.call(
                BackendKind.DIARIZE,
                {
                    "clip_id": clip.clip_id,
                    "payload_ref": clip.payload_ref,
                    "duration_s": clip.duration_s,
                    "task": "segment",
                },
            )
            segments = [
                SpeakerSegment(clip.clip_id, s["start_s"], s["end_s"], s["speaker_label"])
                for s in resp["segments"]
            ]
            children = stage_diarize(clip, segments)
        except (BackendError, ValueError) as exc:
            return OutcomeRecord.dead(env, str(exc))
        if not children:
            # A diarizer finding no speech segments leaves nothing usable.
            return OutcomeRecord(
                verdict=Verdict.DROP, in_clip_id=clip.clip_id, drop_reason=DropReason.LOW_QUALITY
            )
        return OutcomeRecord(
            verdict=Verdict.TRANSFORMED,
            in_clip_id=clip.clip_id,
            out=[replace(env, clip=child) for child in children],
        )

    def _stage_segment_filter(self, env: RecordEnvelope) -> OutcomeRecord:
        outcome = stage_segment_filter(env.clip, self.cfg.min_segment_s)
        out_env = replace(env, clip=outcome.payload) if outcome.verdict != Verdict.DROP else None
        return OutcomeRecord.from_outcome(outcome, env, out_env)

    def _stage_denoise(self, env: RecordEnvelope) -> OutcomeRecord:
        clip = env.clip
        try:
            resp = self.backend.call(
                BackendKind.DENOISE, {"clip_id": clip.clip_id, "payload_ref": clip.payload_ref}
            )
        except BackendError as exc:
            return OutcomeRecord.dead(env, str(exc))
        new_clip = clip.with_payload(resp["payload_ref"]).advanced(StageState.DENOISED)
        return OutcomeRecord(
            verdict=Verdict.TRANSFORMED, in_clip_id=clip.clip_id, out=[replace(env, clip=new_clip)]
        )

    def _stage_quality(self, env: RecordEnvelope) -> OutcomeRecord:
        clip = env.clip
        denoised = self.cfg.denoise_enabled
        try:
            quality_raw = env.quality_raw
            if denoised:
                # The gate acts on the denoised score; the raw score is
                # recorded alongside for accounting.
                raw_resp = self.backend.call(
                    BackendKind.QUALITY,
                    {"clip_id": clip.clip_id, "payload_ref": clip.payload_ref, "denoised": False},
                )
                quality_raw = QualityReport(clip.clip_id, float(raw_resp["dnsmos"]), False)
            resp = self.backend.call(
                BackendKind.QUALITY,
                {"clip_id": clip.clip_id, "payload_ref": clip.payload_ref, "denoised": denoised},
            )
            report = QualityReport(clip.clip_id, float(resp["dnsmos"]), denoised)
        except (BackendError, ValueError) as exc:
            return OutcomeRecord.dead(env, str(exc))
        outcome = stage_quality_gate(clip, report, self.cfg.dnsmos_threshold)
        if outcome.verdict == Verdict.DROP:
            return OutcomeRecord.from_outcome(outcome, env, None)
        out_env = replace(env, clip=outcome.payload, quality=report, quality_raw=quality_raw)
        return OutcomeRecord.from_outcome(outcome, env, out_env)

    def _stage_single_speaker(self, env: RecordEnvelope) -> OutcomeRecord:
        clip = env.clip
        try:
            resp = self.backend.call(
                BackendKind.DIARIZE,
                {
                    "clip_id": clip.clip_id,
                    "payload_ref": clip.payload_ref,
                    "duration_s": clip.duration_s,
                    "task": "speaker_check",
                },
            )
        except BackendError as exc:
            return OutcomeRecord.dead(env, str(exc))
        pairs = [(s["speaker_label"], str(s.get("text", ""))) for s in resp["segments"]]
        outcome = stage_single_speaker(clip, pairs)
        out_env = replace(env, clip=outcome.payload) if outcome.verdict != Verdict.DROP else None
        return OutcomeRecord.from_outcome(outcome, env, out_env)

    def _stage_transcribe(self, env: RecordEnvelope) -> OutcomeRecord:
        clip = env.clip
        try:
            tresp = self.backend.call(
                BackendKind.TRANSCRIBE, {"clip_id": clip.clip_id, "payload_ref": clip.payload_ref}
            )
            lresp = self.backend.call(
                BackendKind.LANGID,
                {"clip_id": clip.clip_id, "payload_ref": clip.payload_ref, "text": tresp["text"]},
            )
            language = Language(lresp["language"])
            transcript = Transcript(clip.clip_id, tresp["text"], language)
        except (BackendError, ValueError) as exc:
            return OutcomeRecord.dead(env, str(exc))
        out_env = replace(env, transcript=transcript, clip=clip.advanced(StageState.TRANSCRIBED))
        return OutcomeRecord(verdict=Verdict.TRANSFORMED, in_clip_id=clip.clip_id, out=[out_env])

    def _stage_rule_filter(self, env: RecordEnvelope) -> OutcomeRecord:
        assert env.transcript is not None
        outcome = stage_rule_filter(env.transcript, self.dedup)
        out_env = (
            replace(env, clip=env.clip.advanced(StageState.RULE_FILTERED))
            if outcome.verdict != Verdict.DROP
            else None
        )
        return OutcomeRecord.from_outcome(outcome, env, out_env)

    def _stage_language_filter(self, env: RecordEnvelope) -> OutcomeRecord:
        assert env.transcript is not None
        outcome = stage_language_filter(env.transcript)
        if outcome.verdict == Verdict.DROP:
            return OutcomeRecord.from_outcome(outcome, env, None)
        new_clip = env.clip.with_language(env.transcript.detected_language).advanced(
            StageState.LANGUAGE_FILTERED
        )
        return OutcomeRecord(
            verdict=Verdict.TRANSFORMED, in_clip_id=env.clip_id, out=[replace(env, clip=new_clip)]
        )

    def _stage_caption_instruct(self, env: RecordEnvelope) -> OutcomeRecord:
        clip = env.clip
        try:
            cresp = self.backend.call(
                BackendKind.CAPTION, {"clip_id": clip.clip_id, "payload_ref": clip.payload_ref}
            )
            iresp = self.backend.call(
                BackendKind.INSTRUCT,
                {
                    "clip_id": clip.clip_id,
                    "gender": cresp["gender"],
                    "age_bracket": cresp["age_bracket"],
                    "emotion_tone": cresp["emotion_tone"],
                    "voice_texture": cresp["voice_texture"],
                },
            )
            caption, instruction = stage_caption_and_instruct(
                clip, cresp, iresp["instruction_text"], self.cfg.vocab
            )
        except (BackendError, ValueError) as exc:
            return OutcomeRecord.dead(env, str(exc))
        out_env = replace(
            env, caption=caption, instruction=instruction, clip=clip.advanced(StageState.ANNOTATED)
        )
        return OutcomeRecord(verdict=Verdict.TRANSFORMED, in_clip_id=clip.clip_id, out=[out_env])


def load_checkpoint(out_dir: Path) -> RunState:
    """Read and integrity-check the checkpoint in a run directory."""
    path = out_dir / CHECKPOINT_FILE
    if not path.exists():
        raise CheckpointError(f"no checkpoint found in {out_dir}")
    text = path.read_text(encoding="utf-8")
    try:
        header, payload = text.split("\n", 1)
        expected = json.loads(header)["sha256"]
    except (ValueError, KeyError) as exc:
        raise CheckpointError(f"corrupt checkpoint header in {path}") from exc
    actual = hashlib.sha256(payload.encode("utf-8")).hexdigest()
    if actual != expected:
        raise CheckpointError(
            f"checkpoint integrity hash mismatch in {path}: expected {expected[:12]}, got {actual[:12]}"
        )
    try:
        return RunState.from_dict(json.loads(payload))
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint state in {path}: {exc}") from exc


def load_run_config_hash(out_dir: Path) -> tuple[dict[str, Any], str, int]:
    """Read the config dict, hash, and checkpoint granularity from a run dir."""
    path = Path(out_dir) / RUN_CONFIG_FILE
    if not path.exists():
        raise CheckpointError(f"no {RUN_CONFIG_FILE} found in {out_dir}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    config = doc["config"]
    stored_hash = doc["config_hash"]
    recomputed = hashlib.sha256(canonical_dumps(config).encode("utf-8")).hexdigest()
    if recomputed != stored_hash:
        raise CheckpointError(f"{RUN_CONFIG_FILE} hash mismatch: file was modified after the run started")
    return config, stored_hash, int(doc.get("checkpoint_every", 1000))


def run_pipeline(
    config: RunConfig,
    records: Sequence[RecordEnvelope],
    out_dir: str | Path,
    backend: Backend | None = None,
    stop_after_stage: int | None = None,
    stop_after_batches: int | None = None,
) -> RunResult:
    """Run all configured stages over the records and write the output set."""
    runner = PipelineRunner(config, backend=backend)
    return runner.run(records, out_dir, stop_after_stage, stop_after_batches)


def resume_pipeline(
    config: RunConfig,
    out_dir: str | Path,
    backend: Backend | None = None,
) -> RunResult:
    """Continue an interrupted run; completing it matches an uninterrupted run byte-for-byte."""
    runner = PipelineRunner(config, backend=backend)
    return runner.resume(out_dir)
