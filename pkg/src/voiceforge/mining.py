"""Corpus scale-up: style-guided retrieval over a shared embedding space,
and instruction-rewrite augmentation for English records.

Retrieval is exact top-k by cosine with greedy pool exclusion: each query
takes its best matches from whatever is still eligible, and those clips
leave the pool before the next query runs, so no clip is selected twice.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Iterable, Sequence

import numpy as np

from .backends import Backend, BackendError, BackendKind, BackendPermanentError
from .corpus import (
    DatasetRecord,
    EmbeddingVector,
    Language,
    TimbreInstruction,
    normalize_text,
)


class IndexBuildError(ValueError):
    """Fatal index construction problem (dimension mismatch, duplicate id)."""


@dataclass
class EmbeddingIndex:
    """Unit-normalized vectors keyed by clip id, plus the eligible pool.

    rejected lists (clip_id, reason) for items the build refused, e.g.
    zero vectors that cannot be normalized.
    """

    dim: int
    entries: dict[str, np.ndarray]
    active_pool: set[str]
    rejected: tuple[tuple[str, str], ...] = ()

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class Query:
    query_id: str
    vector: EmbeddingVector
    instruction_text: str = ""


@dataclass(frozen=True)
class MiningAssignment:
    """Clips one query claimed, sorted by cosine descending (ties by id)."""

    query_id: str
    instruction_text: str
    selected: tuple[tuple[str, float], ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "query_id": self.query_id,
            "instruction_text": self.instruction_text,
            "selected": [{"clip_id": c, "cosine": s} for c, s in self.selected],
        }


def _as_array(vec: EmbeddingVector | Sequence[float]) -> np.ndarray:
    values = vec.values if isinstance(vec, EmbeddingVector) else tuple(vec)
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise IndexBuildError("embedding vectors must be one-dimensional")
    return arr


def build_index(items: Iterable[tuple[str, EmbeddingVector | Sequence[float]]]) -> EmbeddingIndex:
    """Normalize and register vectors; zero vectors are rejected per item."""
    entries: dict[str, np.ndarray] = {}
    rejected: list[tuple[str, str]] = []
    dim: int | None = None
    for clip_id, vec in items:
        arr = _as_array(vec)
        if dim is None:
            dim = arr.shape[0]
        elif arr.shape[0] != dim:
            raise IndexBuildError(
                f"dimension mismatch for {clip_id!r}: got {arr.shape[0]}, index has {dim}"
            )
        if clip_id in entries:
            raise IndexBuildError(f"duplicate clip_id {clip_id!r}")
        if not np.all(np.isfinite(arr)):
            rejected.append((clip_id, "non-finite values"))
            continue
        norm = float(np.linalg.norm(arr))
        if norm == 0.0:
            rejected.append((clip_id, "zero vector"))
            continue
        entries[clip_id] = arr / norm
    if dim is None:
        raise IndexBuildError("cannot build an index from zero items")
    return EmbeddingIndex(
        dim=dim,
        entries=entries,
        active_pool=set(entries),
        rejected=tuple(rejected),
    )


def mine(
    queries: Sequence[Query],
    index: EmbeddingIndex,
    k: int = 50,
    similarity_floor: float | None = None,
) -> list[MiningAssignment]:
    """Serve queries strictly in order, each over the current pool.

    Selected clips are removed before the next query, so the union of all
    selections never repeats a clip. An exhausted pool yields empty
    selections rather than an error. The optional similarity floor drops
    candidates below it; by default even weak matches are taken.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    assignments = []
    for q in queries:
        qarr = _as_array(q.vector)
        if qarr.shape[0] != index.dim:
            raise ValueError(
                f"query {q.query_id!r} has dim {qarr.shape[0]}, index has {index.dim}"
            )
        qnorm = float(np.linalg.norm(qarr))
        if qnorm == 0.0:
            raise ValueError(f"query {q.query_id!r} is a zero vector")
        qunit = qarr / qnorm
        # Per-candidate np.dot keeps the value bit-identical to any checker
        # using the same primitive, independent of pool size or ordering.
        scored = [
            (clip_id, float(np.dot(index.entries[clip_id], qunit)))
            for clip_id in sorted(index.active_pool)
        ]
        if similarity_floor is not None:
            scored = [(c, s) for c, s in scored if s >= similarity_floor]
        scored.sort(key=lambda cs: (-cs[1], cs[0]))
        take = scored[: min(k, len(scored))]
        index.active_pool.difference_update(c for c, _ in take)
        assignments.append(MiningAssignment(q.query_id, q.instruction_text, tuple(take)))
    return assignments


# --- instruction-rewrite augmentation ------------------------------------------


@dataclass(frozen=True)
class RewriteFailure:
    clip_id: str
    instruction_text: str
    error: str

    def to_dict(self) -> dict[str, str]:
        return {
            "clip_id": self.clip_id,
            "instruction_text": self.instruction_text,
            "error": self.error,
        }


def _distinct_variants(original: str, variants: Sequence[str]) -> str | None:
    """Return a complaint when variants collide (after normalization), else None."""
    norms = [normalize_text(v) for v in variants]
    base = normalize_text(original)
    if any(not n for n in norms):
        return "rewrite produced an empty variant"
    if any(n == base for n in norms):
        return "variant normalizes equal to the original"
    if len(set(norms)) != len(norms):
        return "variants normalize equal to each other"
    return None


def rewrite_instructions(
    records: Sequence[DatasetRecord],
    n_variants: int,
    backend: Backend,
    max_retries: int = 3,
) -> tuple[list[DatasetRecord], list[RewriteFailure]]:
    """Produce n_variants rewritten records per input record.

    Inputs must all be English. Each output keeps the transcript and code
    reference bit-identical and carries variant_index 1..n. Backends that
    keep returning colliding variants exhaust the retry budget and the
    record is dead-lettered instead of silently passed through.
    """
    if n_variants < 1:
        raise ValueError(f"n_variants must be >= 1, got {n_variants}")
    for r in records:
        if r.language != Language.EN:
            raise ValueError(f"rewrite augmentation applies to English records only: {r.clip_id}")
    out: list[DatasetRecord] = []
    failures: list[RewriteFailure] = []
    for r in records:
        base = r.instruction.instruction_text
        variants: list[str] | None = None
        error = ""
        for attempt in range(max_retries + 1):
            try:
                resp = backend.call(
                    BackendKind.REWRITE,
                    {"instruction_text": base, "n_variants": n_variants, "attempt": attempt},
                )
            except BackendError as exc:
                error = str(exc)
                if isinstance(exc, BackendPermanentError):
                    break
                continue
            got = list(resp["variants"])
            if len(got) != n_variants:
                error = f"expected {n_variants} variants, got {len(got)}"
                continue
            complaint = _distinct_variants(base, got)
            if complaint is None:
                variants = got
                break
            error = complaint
        if variants is None:
            failures.append(RewriteFailure(r.clip_id, base, error))
            continue
        for i, text in enumerate(variants, start=1):
            out.append(
                replace(r, instruction=TimbreInstruction(r.clip_id, text, variant_index=i))
            )
    return out, failures


# --- persistence ----------------------------------------------------------------


def index_rows(index: EmbeddingIndex) -> Iterable[dict[str, Any]]:
    for clip_id in sorted(index.entries):
        vec = index.entries[clip_id]
        yield {"clip_id": clip_id, "dim": index.dim, "values": [float(v) for v in vec]}


def load_index_rows(rows: Iterable[dict[str, Any]]) -> EmbeddingIndex:
    return build_index((d["clip_id"], [float(v) for v in d["values"]]) for d in rows)


def load_query_rows(rows: Iterable[dict[str, Any]]) -> list[Query]:
    queries = []
    for d in rows:
        values = tuple(float(v) for v in d["values"])
        queries.append(
            Query(
                query_id=d["query_id"],
                vector=EmbeddingVector(len(values), values),
                instruction_text=d.get("instruction_text", ""),
            )
        )
    return queries
