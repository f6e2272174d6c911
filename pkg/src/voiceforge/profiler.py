"""Corpus profiling (perceptual-dimension distributions, per-language hours)
and train/test contamination screening via fuzzy transcript matching."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from .corpus import normalize_text
from .detrand import hash64

PROFILE_DIMENSIONS = ("age_bracket", "emotion_tone", "voice_texture")


@dataclass(frozen=True)
class CorpusProfile:
    """Hours over the full population; category proportions over a sample."""

    per_language_hours: dict[str, float]
    population_n: dict[str, int]
    sampled_n: dict[str, int]
    distributions: dict[str, dict[str, float]]  # dimension -> category -> proportion
    seed: int
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "per_language_hours": dict(sorted(self.per_language_hours.items())),
            "population_n": dict(sorted(self.population_n.items())),
            "sampled_n": dict(sorted(self.sampled_n.items())),
            "distributions": {
                dim: dict(sorted(cats.items())) for dim, cats in sorted(self.distributions.items())
            },
            "seed": self.seed,
            "notes": list(self.notes),
        }


@dataclass(frozen=True)
class ProfileRecord:
    """The slice of a manifest record the profiler needs."""

    clip_id: str
    language: str
    duration_s: float
    categories: dict[str, str]  # dimension -> category


def profile(
    records: Sequence[ProfileRecord],
    sample_per_language: int,
    seed: int,
) -> CorpusProfile:
    """Uniformly sample per language and profile the perceptual dimensions.

    Sampling ranks records by a keyed hash of (language, clip_id) and takes
    the n smallest, which is uniform without replacement, reproducible from
    the seed alone, and invariant to manifest order. Hours come from the
    full population, not the sample.
    """
    if sample_per_language < 1:
        raise ValueError("sample_per_language must be >= 1")
    by_language: dict[str, list[ProfileRecord]] = {}
    for r in records:
        by_language.setdefault(r.language, []).append(r)

    hours: dict[str, float] = {}
    population_n: dict[str, int] = {}
    sampled_n: dict[str, int] = {}
    notes: list[str] = []
    combined_sample: list[ProfileRecord] = []
    for lang in sorted(by_language):
        group = by_language[lang]
        population_n[lang] = len(group)
        hours[lang] = round(math.fsum(r.duration_s for r in group) / 3600.0, 3)
        n = min(sample_per_language, len(group))
        if n < sample_per_language:
            notes.append(
                f"{lang}: requested sample {sample_per_language} exceeds population {len(group)}; used all"
            )
        ranked = sorted(group, key=lambda r: (hash64(seed, "sample", lang, r.clip_id), r.clip_id))
        combined_sample.extend(ranked[:n])
        sampled_n[lang] = n

    distributions: dict[str, dict[str, float]] = {}
    total = len(combined_sample)
    for dim in PROFILE_DIMENSIONS:
        counts: dict[str, int] = {}
        for r in combined_sample:
            if dim not in r.categories:
                raise ValueError(f"record {r.clip_id} missing caption dimension {dim!r}")
            cat = r.categories[dim]
            counts[cat] = counts.get(cat, 0) + 1
        distributions[dim] = {cat: c / total for cat, c in sorted(counts.items())} if total else {}
    return CorpusProfile(
        per_language_hours=hours,
        population_n=population_n,
        sampled_n=sampled_n,
        distributions=distributions,
        seed=seed,
        notes=tuple(notes),
    )


# --- contamination screening ---------------------------------------------------


@dataclass(frozen=True)
class ContaminationReport:
    """Train/test transcript pairs at or above the similarity threshold."""

    pairs: tuple[tuple[str, str, float], ...]
    threshold: float
    flagged_count: int = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "flagged_count", len(self.pairs))
        for _, _, sim in self.pairs:
            if sim < self.threshold:
                raise ValueError("report contains a pair below its own threshold")

    def to_dict(self) -> dict[str, Any]:
        return {
            "threshold": self.threshold,
            "flagged_count": self.flagged_count,
            "pairs": [
                {"train_clip_id": a, "test_item_id": b, "similarity": s}
                for a, b, s in self.pairs
            ],
        }


def levenshtein(a: str, b: str) -> int:
    """Classic two-row edit distance."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def transcript_similarity(a: str, b: str) -> float:
    """1 - normalized edit distance over normalized text; symmetric."""
    na, nb = normalize_text(a), normalize_text(b)
    longest = max(len(na), len(nb))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(na, nb) / longest


def contamination_check(
    train_transcripts: Iterable[tuple[str, str]],
    test_transcripts: Iterable[tuple[str, str]],
    threshold: float = 0.9,
) -> ContaminationReport:
    """Flag every (train, test) pair whose similarity reaches the threshold.

    Pairs whose lengths already force the similarity below the threshold
    are skipped without computing the distance; the bound |len(a)-len(b)|
    <= levenshtein(a, b) makes the pruning exact, so results match a full
    pairwise scan at any threshold. Exact duplicates always flag
    (similarity 1.0 >= any threshold <= 1.0).
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    train = [(tid, normalize_text(text)) for tid, text in train_transcripts]
    test = [(tid, normalize_text(text)) for tid, text in test_transcripts]
    if not train or not test:
        raise ValueError("both transcript sets must be non-empty")
    pairs: list[tuple[str, str, float]] = []
    for train_id, a in train:
        for test_id, b in test:
            longest = max(len(a), len(b))
            if longest == 0:
                sim = 1.0
            else:
                if abs(len(a) - len(b)) > (1.0 - threshold) * longest:
                    continue
                sim = 1.0 - levenshtein(a, b) / longest
            if sim >= threshold:
                pairs.append((train_id, test_id, sim))
    pairs.sort(key=lambda p: (p[0], p[1]))
    return ContaminationReport(pairs=tuple(pairs), threshold=threshold)
