from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from voiceforge.backends import BackendKind, StubBackend, StubConfig
from voiceforge.corpus import Language, QualityReport, SpeakerSegment, StageState, normalize_text
from voiceforge.stages import (
    DedupIndex,
    DropReason,
    SegmentGeometryError,
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

from conftest import make_clip, make_transcript


class TestStageOutcome:
    def test_drop_requires_reason(self):
        with pytest.raises(ValueError):
            StageOutcome(Verdict.DROP)
        with pytest.raises(ValueError):
            StageOutcome(Verdict.KEEP, drop_reason=DropReason.LOW_QUALITY)

    def test_dead_letter_requires_error(self):
        with pytest.raises(ValueError):
            StageOutcome(Verdict.DROP, drop_reason=DropReason.BACKEND_DEAD_LETTER)
        ok = StageOutcome.dead_letter("boom")
        assert ok.is_dead_letter


class TestDiarize:
    def test_two_segments_make_two_children(self):
        clip = make_clip(duration_s=10.0)
        segments = [
            SpeakerSegment("c1", 0.0, 4.0, "A"),
            SpeakerSegment("c1", 5.0, 10.0, "B"),
        ]
        children = stage_diarize(clip, segments)
        assert [c.duration_s for c in children] == [4.0, 5.0]
        assert [c.clip_id for c in children] == ["c1/00", "c1/01"]
        assert all(c.stage_state == StageState.DIARIZED for c in children)
        assert all(c.source_id == clip.source_id for c in children)

    def test_full_span_single_segment(self):
        clip = make_clip(duration_s=7.5)
        children = stage_diarize(clip, [SpeakerSegment("c1", 0.0, 7.5, "A")])
        assert len(children) == 1
        assert children[0].duration_s == 7.5

    def test_stub_driven_three_segments_conserve_duration(self):
        # Children come from the stub diarizer; their spans must sum to at
        # most the parent duration.
        stub = StubBackend(StubConfig(seed=11, segments_min=3, segments_max=3))
        clip = make_clip(duration_s=12.0)
        resp = stub.call(
            BackendKind.DIARIZE,
            {"clip_id": clip.clip_id, "payload_ref": "p", "duration_s": clip.duration_s, "task": "segment"},
        )
        segments = [SpeakerSegment(clip.clip_id, s["start_s"], s["end_s"], s["speaker_label"]) for s in resp["segments"]]
        children = stage_diarize(clip, segments)
        assert len(children) == 3
        assert sum(c.duration_s for c in children) <= clip.duration_s

    def test_segment_past_clip_end_rejected(self):
        clip = make_clip(duration_s=5.0)
        with pytest.raises(SegmentGeometryError):
            stage_diarize(clip, [SpeakerSegment("c1", 0.0, 5.5, "A")])

    def test_overlapping_segments_rejected(self):
        clip = make_clip(duration_s=10.0)
        with pytest.raises(SegmentGeometryError):
            stage_diarize(clip, [SpeakerSegment("c1", 0.0, 5.0, "A"), SpeakerSegment("c1", 4.0, 9.0, "B")])

    def test_no_segments_no_children(self):
        assert stage_diarize(make_clip(), []) == []


class TestSegmentFilter:
    def test_short_child_dropped_low_quality(self):
        out = stage_segment_filter(make_clip(duration_s=0.5), min_segment_s=1.0)
        assert out.verdict == Verdict.DROP
        assert out.drop_reason == DropReason.LOW_QUALITY

    def test_boundary_kept(self):
        out = stage_segment_filter(make_clip(duration_s=1.0), min_segment_s=1.0)
        assert out.verdict == Verdict.KEEP


class TestQualityGate:
    def test_exactly_at_threshold_kept(self):
        clip = make_clip()
        out = stage_quality_gate(clip, QualityReport("c1", 3.0, True), threshold=3.0)
        assert out.verdict == Verdict.KEEP

    def test_just_below_threshold_dropped(self):
        clip = make_clip()
        out = stage_quality_gate(clip, QualityReport("c1", 3.0 - 1e-9, True), threshold=3.0)
        assert out.verdict == Verdict.DROP
        assert out.drop_reason == DropReason.LOW_QUALITY

    def test_2999_dropped(self):
        out = stage_quality_gate(make_clip(), QualityReport("c1", 2.999, False), threshold=3.0)
        assert out.verdict == Verdict.DROP

    @pytest.mark.parametrize("threshold", [1.0, 3.0, 4.5, 5.0])
    def test_maximum_score_always_kept(self, threshold):
        out = stage_quality_gate(make_clip(), QualityReport("c1", 5.0, True), threshold=threshold)
        assert out.verdict == Verdict.KEEP

    def test_mismatched_report_rejected(self):
        with pytest.raises(ValueError, match="applied to"):
            stage_quality_gate(make_clip("c1"), QualityReport("c2", 3.5, True))


class TestSingleSpeaker:
    # Enumerated against the distinct-nonempty-speaker-count rule.
    @pytest.mark.parametrize(
        "pairs,verdict,reason",
        [
            ([("S1", "hello")], Verdict.KEEP, None),
            ([("S1", "hi"), ("S2", "yes")], Verdict.DROP, DropReason.MULTI_SPEAKER),
            ([("S1", "hi"), ("S2", "")], Verdict.KEEP, None),
            ([("S1", "hi"), ("S1", "more")], Verdict.KEEP, None),
            ([("S1", ""), ("S2", "")], Verdict.DROP, DropReason.EMPTY_TRANSCRIPT),
            ([], Verdict.DROP, DropReason.EMPTY_TRANSCRIPT),
            ([("S1", "a"), ("S2", "b"), ("S3", "c")], Verdict.DROP, DropReason.MULTI_SPEAKER),
            ([("S1", "  ")], Verdict.DROP, DropReason.EMPTY_TRANSCRIPT),
        ],
    )
    def test_enumerated_cases(self, pairs, verdict, reason):
        out = stage_single_speaker(make_clip(), pairs)
        assert out.verdict == verdict
        assert out.drop_reason == reason


class TestRuleFilter:
    def test_empty_text_dropped(self):
        out = stage_rule_filter(make_transcript(""), DedupIndex())
        assert out.drop_reason == DropReason.EMPTY_TRANSCRIPT

    def test_punctuation_only_text_dropped(self):
        out = stage_rule_filter(make_transcript("!!! ..."), DedupIndex())
        assert out.drop_reason == DropReason.EMPTY_TRANSCRIPT

    def test_duplicate_by_normalization(self):
        index = DedupIndex()
        first = stage_rule_filter(make_transcript("hello world", "c1"), index)
        assert first.verdict == Verdict.KEEP
        # Normalizes identically to the first text, so it must drop.
        assert normalize_text("Hello, World!") == normalize_text("hello world")
        second = stage_rule_filter(make_transcript("Hello, World!", "c2"), index)
        assert second.drop_reason == DropReason.DUPLICATE_TRANSCRIPT

    def test_unique_text_kept(self):
        out = stage_rule_filter(make_transcript("something new"), DedupIndex())
        assert out.verdict == Verdict.KEEP

    @given(st.lists(st.text(max_size=30), min_size=1, max_size=50))
    def test_no_two_kept_share_normalized_text(self, texts):
        index = DedupIndex()
        kept = []
        for i, text in enumerate(texts):
            out = stage_rule_filter(make_transcript(text, f"c{i}"), index)
            if out.verdict == Verdict.KEEP:
                kept.append(out.payload.normalized_text)
        assert len(kept) == len(set(kept))

    def test_k_by_m_duplication(self):
        # k distinct normalized texts, each duplicated m times, keep exactly k.
        k, m = 20, 5
        index = DedupIndex()
        kept = 0
        for rep in range(m):
            for i in range(k):
                out = stage_rule_filter(make_transcript(f"text number {i}", f"c{rep}_{i}"), index)
                kept += out.verdict == Verdict.KEEP
        assert kept == k


class TestLanguageFilter:
    @pytest.mark.parametrize(
        "language,verdict",
        [
            (Language.ZH, Verdict.KEEP),
            (Language.EN, Verdict.KEEP),
            (Language.OTHER, Verdict.DROP),
        ],
    )
    def test_gate(self, language, verdict):
        out = stage_language_filter(make_transcript("hello", language=language))
        assert out.verdict == verdict
        if verdict == Verdict.DROP:
            assert out.drop_reason == DropReason.UNSUPPORTED_LANGUAGE


class TestCaptionAndInstruct:
    def test_builds_validated_pair(self):
        clip = make_clip()
        fields = {
            "gender": "female",
            "age_bracket": "elderly",
            "emotion_tone": "angry",
            "voice_texture": "raspy",
            "free_text": "x",
        }
        caption, instruction = stage_caption_and_instruct(clip, fields, "an elderly angry raspy voice")
        assert caption.clip_id == clip.clip_id
        assert instruction.variant_index == 0

    def test_out_of_vocabulary_emotion_raises(self):
        fields = {
            "gender": "female",
            "age_bracket": "elderly",
            "emotion_tone": "__nope__",
            "voice_texture": "raspy",
        }
        with pytest.raises(ValueError, match="vocabulary"):
            stage_caption_and_instruct(make_clip(), fields, "text")


class TestDedupIndex:
    def test_check_and_insert(self):
        index = DedupIndex()
        assert index.add_if_new("a")
        assert not index.add_if_new("a")
        assert "a" in index
        assert len(index) == 1

    def test_snapshot_restores(self):
        index = DedupIndex()
        index.add_if_new("b")
        index.add_if_new("a")
        restored = DedupIndex(index.snapshot())
        assert not restored.add_if_new("a")
        assert not restored.add_if_new("b")
        assert restored.add_if_new("c")

    def test_concurrent_insertions_keep_exactly_one(self):
        import threading

        index = DedupIndex()
        results = []
        lock = threading.Lock()

        def worker():
            r = index.add_if_new("same")
            with lock:
                results.append(r)

        threads = [threading.Thread(target=worker) for _ in range(16)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert sum(results) == 1
