"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines alongside pytest's own pass/fail output.
"""

from __future__ import annotations

import itertools
import math
import random
import time
from collections import Counter

import pytest

from voiceforge.backends import StubBackend, StubConfig
from voiceforge.config import RunConfig
from voiceforge.corpus import Language, QualityReport, Transcript, normalize_text
from voiceforge.delaypattern import (
    CodeGrid,
    DelaySequence,
    MalformedSequenceError,
    apply_delay,
    invert_delay,
    pad_id,
)
from voiceforge.evaluation import (
    PresentationOrder,
    RawVote,
    Resolved,
    Task,
    aggregate_accuracy,
    resolve_votes,
)
from voiceforge.mining import Query, build_index, mine, rewrite_instructions
from voiceforge.pipeline import (
    PipelineInterrupted,
    RecordEnvelope,
    check_conservation,
    resume_pipeline,
    run_pipeline,
)
from voiceforge.profiler import ProfileRecord, contamination_check, profile, transcript_similarity
from voiceforge.stages import DedupIndex, DropReason, Verdict, stage_quality_gate, stage_rule_filter
from voiceforge.synth import synthetic_clips, synthetic_english_records
from voiceforge.corpus import EmbeddingVector

from conftest import make_clip
from test_mining import brute_force_mine, random_instance
from test_profiler import reference_levenshtein
from test_evaluation import oracle_majority


def _ok(criterion: int, name: str) -> None:
    print(f"[acceptance] criterion {criterion:02d} ({name}): PASS")


def _run_config(seed: int, denoise: bool, **stub_kwargs) -> RunConfig:
    return RunConfig(
        seed=seed,
        workers=1,
        denoise_enabled=denoise,
        stub=StubConfig(seed=seed, **stub_kwargs),
        checkpoint_every=10_000,
    )


class TestCriterion01RetentionSimulation:
    def test_retention_windows_and_runtime(self, tmp_path):
        n = 10_000
        # One segment per clip keeps the quality-gate population at
        # exactly the input clip count.
        records = [RecordEnvelope(clip=c) for c in synthetic_clips(n, seed=7)]

        started = time.monotonic()
        raw = run_pipeline(
            _run_config(7, denoise=False, segments_min=1, segments_max=1),
            records, tmp_path / "raw",
        )
        denoised = run_pipeline(
            _run_config(7, denoise=True, segments_min=1, segments_max=1),
            records, tmp_path / "denoised",
        )
        elapsed = time.monotonic() - started

        raw_quality = raw.report_by_name("quality")
        den_quality = denoised.report_by_name("quality")
        assert raw_quality.in_count == n
        assert den_quality.in_count == n
        assert 0.03 <= raw_quality.retention_rate <= 0.07, raw_quality.retention_rate
        assert 0.43 <= den_quality.retention_rate <= 0.52, den_quality.retention_rate
        assert elapsed < 60.0, f"two {n}-clip runs took {elapsed:.1f}s"
        _ok(1, f"retention {raw_quality.retention_rate:.1%} raw / {den_quality.retention_rate:.1%} denoised in {elapsed:.1f}s")


class TestCriterion02DelayPatternRoundTrip:
    def test_thousand_random_grids_round_trip(self):
        rng = random.Random(20260810)
        vocab = 4096
        for _ in range(1000):
            L = rng.randint(1, 16)
            T = rng.randint(0, 128)
            grid = CodeGrid(
                L, T, vocab,
                tuple(tuple(rng.randrange(vocab) for _ in range(T)) for _ in range(L)),
            )
            assert invert_delay(apply_delay(grid)) == grid
        _ok(2, "1000-grid round-trip")

    def test_malformed_sequences_rejected_totally(self):
        rng = random.Random(555)
        vocab = 4096
        rejected = trials = 0
        while trials < 300:
            L = rng.randint(2, 16)  # L >= 2 guarantees forced-PAD slots
            T = rng.randint(1, 64)
            grid = CodeGrid(
                L, T, vocab,
                tuple(tuple(rng.randrange(vocab) for _ in range(T)) for _ in range(L)),
            )
            seq = apply_delay(grid)
            pad = pad_id(vocab)
            slots = [
                (s, i)
                for s, step in enumerate(seq.steps)
                for i, v in enumerate(step)
                if v == pad
            ]
            s, i = slots[rng.randrange(len(slots))]
            steps = [list(x) for x in seq.steps]
            steps[s][i] = rng.randrange(vocab)  # code token in a forced-PAD slot
            trials += 1
            try:
                invert_delay(DelaySequence(L, vocab, tuple(tuple(x) for x in steps)))
            except MalformedSequenceError:
                rejected += 1
        assert rejected == trials, f"only {rejected}/{trials} malformed sequences rejected"
        _ok(2, f"malformed rejection {rejected}/{trials}")


class TestCriterion03MiningOracleEquivalence:
    def test_fifty_random_instances(self):
        rng = random.Random(31337)
        instances = 0
        for k in (1, 5, 50):
            for _ in range(17):
                items, query_list = random_instance(rng, pool_max=200, queries_max=20)
                idx = build_index(items)
                queries = [Query(q, EmbeddingVector(len(v), tuple(v))) for q, v in query_list]
                got = mine(queries, idx, k=k)
                expected = brute_force_mine(items, query_list, k=k)
                # Bitwise: ids and cosine floats must match exactly.
                assert [(a.query_id, list(a.selected)) for a in got] == [
                    (qid, sel) for qid, sel in expected
                ]
                seen = [c for a in got for c, _ in a.selected]
                assert len(seen) == len(set(seen)), "clip selected twice"
                instances += 1
        assert instances == 51
        _ok(3, f"oracle equivalence on {instances} instances")


class TestCriterion04StageAccounting:
    def test_count_laws_and_conservation(self, tmp_path):
        cfg = _run_config(11, denoise=True)
        records = [
            RecordEnvelope(clip=c)
            for c in synthetic_clips(800, seed=11, dead_letter_rate=0.03, empty_rate=0.02)
        ]
        result = run_pipeline(cfg, records, tmp_path / "run")
        for r in result.reports:
            assert r.in_count == r.kept + r.dropped + r.dead_lettered, r.stage_name
            assert sum(r.drop_reason_histogram.values()) == r.dropped, r.stage_name
        assert check_conservation(result.reports)
        diarize = result.report_by_name("diarize")
        assert diarize.children_out is not None
        assert result.report_by_name("segment_filter").in_count == diarize.children_out
        assert sum(r.dead_lettered for r in result.reports) == len(result.dead_letters) > 0
        _ok(4, "stage accounting + conservation")


class TestCriterion05QualityGateBoundary:
    def test_inclusive_threshold(self):
        clip = make_clip()
        at = stage_quality_gate(clip, QualityReport("c1", 3.0, True), threshold=3.0)
        below = stage_quality_gate(clip, QualityReport("c1", 3.0 - 1e-9, True), threshold=3.0)
        assert at.verdict == Verdict.KEEP
        assert below.verdict == Verdict.DROP
        assert below.drop_reason == DropReason.LOW_QUALITY
        _ok(5, "inclusive >= 3.0 boundary")


class TestCriterion06Dedup:
    @pytest.mark.parametrize("k,m", [(1, 1), (3, 100), (100, 3), (100, 100)])
    def test_k_distinct_times_m_duplicates(self, k, m):
        index = DedupIndex()
        kept = 0
        for rep in range(m):
            for i in range(k):
                # Same normalized text across reps, distinct across i.
                text = f"Sentence number {i}!" if rep % 2 else f"sentence NUMBER {i}"
                out = stage_rule_filter(Transcript(f"c{rep}_{i}", text, Language.EN), index)
                kept += out.verdict == Verdict.KEEP
        assert kept == k, f"k={k} m={m}: kept {kept}"
        if (k, m) == (100, 100):
            _ok(6, "dedup keeps exactly k of k*m")


class TestCriterion07RewriteAugmentation:
    def test_five_hundred_records_doubled(self):
        records = synthetic_english_records(500, seed=17)
        backend = StubBackend(StubConfig(seed=17))
        out, failures = rewrite_instructions(records, 2, backend)
        assert not failures
        assert len(out) == 1000
        originals = {r.clip_id: r for r in records}
        per_clip: dict[str, list[str]] = {}
        for r in out:
            per_clip.setdefault(r.clip_id, []).append(r.instruction.instruction_text)
        for clip_id, texts in per_clip.items():
            assert len(texts) == 2
            norms = {normalize_text(t) for t in texts}
            assert len(norms) == 2, "siblings collide"
            assert normalize_text(originals[clip_id].instruction.instruction_text) not in norms
        for r in out:
            o = originals[r.clip_id]
            assert r.transcript.to_dict() == o.transcript.to_dict()
            assert r.codes_ref == o.codes_ref
        _ok(7, "500 -> 1000 rewrite augmentation")


class TestCriterion08VoteResolution:
    def test_exhaustive_triples_and_derandomization(self):
        all_distinct_ties = 0
        for triple in itertools.product(list(RawVote), repeat=3):
            votes = [(f"w{i}", v) for i, v in enumerate(triple)]
            for order in PresentationOrder:
                assert resolve_votes(votes, order) == oracle_majority(list(triple), order)
            if len(set(triple)) == 3:
                all_distinct_ties += 1
                assert resolve_votes(votes, PresentationOrder.AB) == Resolved.TIE
                assert resolve_votes(votes, PresentationOrder.BA) == Resolved.TIE
        assert all_distinct_ties == 6
        swap = {RawVote.FIRST: RawVote.SECOND, RawVote.SECOND: RawVote.FIRST, RawVote.TIE: RawVote.TIE}
        for triple in itertools.product(list(RawVote), repeat=3):
            votes = [(f"w{i}", v) for i, v in enumerate(triple)]
            swapped = [(f"w{i}", swap[v]) for i, v in enumerate(triple)]
            assert resolve_votes(votes, PresentationOrder.AB) == resolve_votes(swapped, PresentationOrder.BA)
            assert resolve_votes(votes, PresentationOrder.BA) == resolve_votes(swapped, PresentationOrder.AB)
        _ok(8, "27 triples x 2 orders vs oracle; 6 no-majority ties")


class TestCriterion09Profiler:
    def test_hours_distributions_and_reproducibility(self):
        zh_total_s = 18_025 * 3600
        en_total_s = 7_047 * 3600
        ages = ("child", "young_adult", "middle_aged", "elderly")
        emotions = ("neutral", "happy", "angry", "sad")
        textures = ("clear", "raspy", "warm")
        rng = random.Random(2)
        records = []
        for lang, total_s, count in (("zh", zh_total_s, 1000), ("en", en_total_s, 600)):
            per = total_s / count
            for i in range(count):
                records.append(
                    ProfileRecord(
                        clip_id=f"{lang}{i:05d}",
                        language=lang,
                        duration_s=per,
                        categories={
                            "age_bracket": rng.choice(ages),
                            "emotion_tone": rng.choice(emotions),
                            "voice_texture": rng.choice(textures),
                        },
                    )
                )
        result = profile(records, sample_per_language=400, seed=7)
        assert abs(result.per_language_hours["zh"] - 18_025.0) <= 1e-3
        assert abs(result.per_language_hours["en"] - 7_047.0) <= 1e-3
        for dim, cats in result.distributions.items():
            assert abs(math.fsum(cats.values()) - 1.0) <= 1e-6, dim
        again = profile(records, sample_per_language=400, seed=7)
        assert again == result
        _ok(9, "hour totals within 1e-3h; distributions sum to 1")


class TestCriterion10Contamination:
    def test_planted_duplicates_monotonicity_and_oracle(self):
        rng = random.Random(77)
        words = ["voice", "bright", "storm", "garden", "river", "slow", "deep", "night"]
        train = [(f"t{i}", " ".join(rng.choices(words, k=rng.randint(3, 8)))) for i in range(60)]
        test = [(f"e{i}", " ".join(rng.choices(words, k=rng.randint(3, 8)))) for i in range(30)]
        planted = [(f"p{i}", f"planted unique sentence number {i} with rare tokens") for i in range(10)]
        train_all = train + planted
        test_all = test + [(f"q{i}", f"Planted; UNIQUE sentence number {i} with rare tokens!") for i in range(10)]

        report = contamination_check(train_all, test_all, threshold=0.9)
        flagged = {(a, b) for a, b, _ in report.pairs}
        for i in range(10):
            assert (f"p{i}", f"q{i}") in flagged, "planted duplicate missed"
            sim = next(s for a, b, s in report.pairs if a == f"p{i}" and b == f"q{i}")
            assert sim == 1.0

        counts = [
            contamination_check(train_all, test_all, threshold=th).flagged_count
            for th in (0.2, 0.4, 0.6, 0.8, 0.9, 0.95, 1.0)
        ]
        assert counts == sorted(counts, reverse=True)

        for _ in range(100):
            a = " ".join(rng.choices(words, k=rng.randint(0, 8)))
            b = " ".join(rng.choices(words, k=rng.randint(0, 8)))
            na, nb = normalize_text(a), normalize_text(b)
            longest = max(len(na), len(nb))
            expected = 1.0 if longest == 0 else 1.0 - reference_levenshtein(na, nb) / longest
            assert transcript_similarity(a, b) == expected
        _ok(10, "planted dups 100%; monotone threshold; oracle-equal similarity")


class TestCriterion11EndToEndDeterminism:
    def test_byte_identical_runs_and_resume(self, tmp_path):
        cfg = RunConfig(
            seed=42,
            workers=1,
            stub=StubConfig(seed=42),
            checkpoint_every=1000,
        )
        records = [
            RecordEnvelope(clip=c)
            for c in synthetic_clips(5000, seed=42, dead_letter_rate=0.005, empty_rate=0.01)
        ]
        a = run_pipeline(cfg, records, tmp_path / "a")
        b = run_pipeline(cfg, records, tmp_path / "b")
        names = ("manifest.out.jsonl", "dead_letter.jsonl", "reports.json")
        for name in names:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name

        with pytest.raises(PipelineInterrupted):
            run_pipeline(cfg, records, tmp_path / "c", stop_after_stage=4)
        resumed = resume_pipeline(cfg, tmp_path / "c")
        for name in names:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "c" / name).read_bytes(), name
        assert len(resumed.records) == len(a.records) > 0
        assert a.dead_letters
        _ok(11, f"{len(records)}-clip runs byte-identical; resume matches")


class TestCriterion12AccuracyAggregation:
    def test_known_counts_reproduce_exact_ratios(self):
        spec = {
            (Task.APS, Language.EN): (682, 1000),
            (Task.DSD, Language.EN): (820, 1000),
            (Task.RP, Language.EN): (687, 1000),
            (Task.APS, Language.ZH): (780, 1000),
            (Task.DSD, Language.ZH): (800, 1000),
            (Task.RP, Language.ZH): (740, 1000),
        }
        verdicts = []
        for (task, lang), (passed, total) in spec.items():
            verdicts.extend((task, lang, i < passed) for i in range(total))
        table = aggregate_accuracy(verdicts)
        for (task, lang), (passed, total) in spec.items():
            assert table.accuracy(task, lang) == passed / total
        cell = table.to_dict()["DSD"]["en"]
        assert cell["accuracy"] == 0.820
        assert cell["accuracy_pct"] == 82.0
        recount = Counter((t.value, l.value) for t, l, p in verdicts if p)
        for (task, lang), (passed, _) in spec.items():
            assert recount[(task.value, lang.value)] == passed
        _ok(12, "exact per-cell ratios incl. 820/1000 -> 0.820")
