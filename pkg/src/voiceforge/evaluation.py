"""Blind pairwise-preference study harness and judge-verdict aggregation.

The study presents two systems' audio for the same instruction in a
randomized order; three workers vote per item, each worker covering only
one dimension of a given pair, and the label is the majority vote with
no-majority triples resolving to tie.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable, Sequence

from .corpus import Language
from .detrand import unit_float


class Dimension(str, Enum):
    OVERALL = "overall"
    INSTRUCTION_FOLLOWING = "instruction_following"
    NATURALNESS = "naturalness"


class PresentationOrder(str, Enum):
    AB = "AB"
    BA = "BA"


class RawVote(str, Enum):
    """A vote in presentation space: which of the two played clips won."""

    FIRST = "first"
    SECOND = "second"
    TIE = "tie"


class Resolved(str, Enum):
    """An outcome in system space, after de-randomizing the order."""

    WIN_A = "win_a"
    WIN_B = "win_b"
    TIE = "tie"


class Task(str, Enum):
    APS = "APS"
    DSD = "DSD"
    RP = "RP"


@dataclass(frozen=True)
class StudyPair:
    """One instruction with the two systems' audio for it."""

    pair_id: str
    instruction_text: str
    audio_a_ref: str
    audio_b_ref: str
    language: Language
    baseline: str = "baseline"

    def __post_init__(self) -> None:
        if self.language not in (Language.ZH, Language.EN):
            raise ValueError(f"study pairs must be zh or en, got {self.language.value}")


@dataclass(frozen=True)
class PreferenceItem:
    """One blind comparison: a pair crossed with one evaluation dimension."""

    item_id: str
    instruction_text: str
    system_a_ref: str
    system_b_ref: str
    presented_order: PresentationOrder
    dimension: Dimension
    language: Language
    baseline: str = "baseline"

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "instruction_text": self.instruction_text,
            "system_a_ref": self.system_a_ref,
            "system_b_ref": self.system_b_ref,
            "presented_order": self.presented_order.value,
            "dimension": self.dimension.value,
            "language": self.language.value,
            "baseline": self.baseline,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PreferenceItem":
        return cls(
            item_id=d["item_id"],
            instruction_text=d["instruction_text"],
            system_a_ref=d["system_a_ref"],
            system_b_ref=d["system_b_ref"],
            presented_order=PresentationOrder(d["presented_order"]),
            dimension=Dimension(d["dimension"]),
            language=Language(d["language"]),
            baseline=d.get("baseline", "baseline"),
        )


@dataclass(frozen=True)
class StudyItem:
    """A preference item plus the workers assigned to vote on it."""

    item: PreferenceItem
    annotators: tuple[str, str, str]

    def to_dict(self) -> dict[str, Any]:
        d = self.item.to_dict()
        d["annotators"] = list(self.annotators)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "StudyItem":
        annotators = tuple(d["annotators"])
        item = PreferenceItem.from_dict({k: v for k, v in d.items() if k != "annotators"})
        return cls(item=item, annotators=annotators)  # type: ignore[arg-type]


DEFAULT_ANNOTATOR_POOL = tuple(f"w{i:02d}" for i in range(9))


def build_study(
    pairs: Sequence[StudyPair],
    seed: int,
    dimensions: Sequence[Dimension] = tuple(Dimension),
    annotator_pool: Sequence[str] = DEFAULT_ANNOTATOR_POOL,
) -> list[StudyItem]:
    """Cross pairs with dimensions, randomizing presentation per item.

    Worker assignment is round-robin by pair index over the pool, blocked
    so that within one pair each worker sees exactly one dimension.
    """
    if not dimensions:
        raise ValueError("dimensions must be non-empty")
    if len(set(dimensions)) != len(dimensions):
        raise ValueError("dimensions must be distinct")
    need = 3 * len(dimensions)
    if len(annotator_pool) < need:
        raise ValueError(
            f"annotator pool of {len(annotator_pool)} cannot cover {len(dimensions)} dimensions "
            f"x 3 votes per pair (need >= {need})"
        )
    if len(set(annotator_pool)) != len(annotator_pool):
        raise ValueError("annotator pool has duplicate ids")
    seen_ids = set()
    for p in pairs:
        if p.pair_id in seen_ids:
            raise ValueError(f"duplicate pair_id {p.pair_id!r}")
        seen_ids.add(p.pair_id)

    items: list[StudyItem] = []
    pool_n = len(annotator_pool)
    for pair_index, pair in enumerate(pairs):
        for dim_index, dim in enumerate(dimensions):
            order = (
                PresentationOrder.AB
                if unit_float(seed, "order", pair.pair_id, dim.value) < 0.5
                else PresentationOrder.BA
            )
            annotators = tuple(
                annotator_pool[(pair_index + 3 * dim_index + r) % pool_n] for r in range(3)
            )
            items.append(
                StudyItem(
                    item=PreferenceItem(
                        item_id=f"{pair.pair_id}:{dim.value}",
                        instruction_text=pair.instruction_text,
                        system_a_ref=pair.audio_a_ref,
                        system_b_ref=pair.audio_b_ref,
                        presented_order=order,
                        dimension=dim,
                        language=pair.language,
                        baseline=pair.baseline,
                    ),
                    annotators=annotators,  # type: ignore[arg-type]
                )
            )
    return items


def derandomize(vote: RawVote, presented_order: PresentationOrder) -> Resolved:
    """Map a presentation-space vote onto systems A/B."""
    if vote == RawVote.TIE:
        return Resolved.TIE
    first_is_a = presented_order == PresentationOrder.AB
    if vote == RawVote.FIRST:
        return Resolved.WIN_A if first_is_a else Resolved.WIN_B
    return Resolved.WIN_B if first_is_a else Resolved.WIN_A


def resolve_votes(
    votes: Sequence[tuple[str, RawVote]], presented_order: PresentationOrder
) -> Resolved:
    """Majority vote over exactly three de-randomized ballots.

    A strict majority (at least 2 of 3) wins; the six all-distinct triples
    have no majority and resolve to tie.
    """
    if len(votes) != 3:
        raise ValueError(f"exactly 3 votes required, got {len(votes)}")
    annotators = [a for a, _ in votes]
    if len(set(annotators)) != 3:
        raise ValueError("votes must come from 3 distinct annotators")
    mapped = [derandomize(v, presented_order) for _, v in votes]
    for outcome in Resolved:
        if mapped.count(outcome) >= 2:
            return outcome
    return Resolved.TIE


@dataclass(frozen=True)
class VoteSet:
    """Three ballots for one item and the outcome they resolve to."""

    item_id: str
    votes: tuple[tuple[str, RawVote], ...]
    resolved: Resolved

    @classmethod
    def build(
        cls,
        item_id: str,
        votes: Sequence[tuple[str, RawVote]],
        presented_order: PresentationOrder,
    ) -> "VoteSet":
        return cls(item_id=item_id, votes=tuple(votes), resolved=resolve_votes(votes, presented_order))

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "votes": [{"annotator_id": a, "vote": v.value} for a, v in self.votes],
            "resolved": self.resolved.value,
        }


@dataclass(frozen=True)
class PreferenceCell:
    """Win/Tie/Lose tally for one (dimension, baseline) bucket."""

    wins: int
    ties: int
    losses: int

    @property
    def total(self) -> int:
        return self.wins + self.ties + self.losses

    def to_dict(self) -> dict[str, Any]:
        n = self.total
        return {
            "wins": self.wins,
            "ties": self.ties,
            "losses": self.losses,
            "total": n,
            "win_pct": 100.0 * self.wins / n,
            "tie_pct": 100.0 * self.ties / n,
            "lose_pct": 100.0 * self.losses / n,
        }


def aggregate_preferences(
    resolved_items: Iterable[tuple[PreferenceItem, Resolved]],
) -> dict[tuple[Dimension, str], PreferenceCell]:
    """Tally outcomes per (dimension, baseline), from system A's perspective."""
    tallies: dict[tuple[Dimension, str], list[int]] = {}
    for item, outcome in resolved_items:
        key = (item.dimension, item.baseline)
        wtl = tallies.setdefault(key, [0, 0, 0])
        if outcome == Resolved.WIN_A:
            wtl[0] += 1
        elif outcome == Resolved.TIE:
            wtl[1] += 1
        else:
            wtl[2] += 1
    return {key: PreferenceCell(w, t, l) for key, (w, t, l) in tallies.items()}


@dataclass(frozen=True)
class AccuracyTable:
    """Per (task, language) pass ratios over judge verdicts.

    Cells with zero verdicts are absent, not reported as 0.
    """

    cells: dict[tuple[Task, Language], tuple[int, int]]  # (passed, total)

    def accuracy(self, task: Task, language: Language) -> float:
        passed, total = self.cells[(task, language)]
        return passed / total

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for (task, lang), (passed, total) in sorted(
            self.cells.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)
        ):
            cell = {
                "passed": passed,
                "total": total,
                "accuracy": passed / total,
                "accuracy_pct": round(100.0 * passed / total, 1),
            }
            out.setdefault(task.value, {})[lang.value] = cell
        return out


def aggregate_accuracy(
    verdicts: Iterable[tuple[Task, Language, bool]],
) -> AccuracyTable:
    """Count passes per (task, language) cell."""
    counts: dict[tuple[Task, Language], list[int]] = {}
    for task, language, passed in verdicts:
        if not isinstance(task, Task):
            raise ValueError(f"invalid task {task!r}")
        if language not in (Language.ZH, Language.EN):
            raise ValueError(f"invalid verdict language {language!r}")
        cell = counts.setdefault((task, language), [0, 0])
        cell[0] += int(bool(passed))
        cell[1] += 1
    return AccuracyTable(cells={k: (p, t) for k, (p, t) in counts.items()})
