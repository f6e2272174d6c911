#!/usr/bin/env python3
"""Style-guided mining demo: build an embedding index from stub embeddings,
retrieve top-k matches per instruction with greedy pool exclusion, and show
that no clip is selected twice.

Usage:
    python scripts/mining_demo.py --pool 500 --queries 12 --k 10
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from voiceforge.backends import BackendKind, StubBackend, StubConfig
from voiceforge.corpus import EmbeddingVector
from voiceforge.mining import Query, build_index, mine

STYLE_PROMPTS = (
    "a raspy elderly narrator, slow and wistful",
    "an excited young sports commentator",
    "a calm deep late-night radio host",
    "a playful child telling a joke",
    "an angry drill sergeant barking orders",
    "a tender lullaby voice, soft and breathy",
    "a crisp formal news anchor",
    "a warm storyteller by a campfire",
    "a nervous interview applicant",
    "a cheerful tour guide, bright and quick",
    "a gravelly villain, menacing and low",
    "a serene meditation guide",
)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--pool", type=int, default=500)
    parser.add_argument("--queries", type=int, default=12)
    parser.add_argument("--k", type=int, default=10)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    stub = StubBackend(StubConfig(seed=args.seed, embed_dim=32))
    items = []
    for i in range(args.pool):
        clip_id = f"clip{i:05d}"
        values = stub.call(BackendKind.EMBED, {"clip_id": clip_id})["values"]
        items.append((clip_id, values))
    index = build_index(items)

    queries = []
    for i in range(args.queries):
        text = STYLE_PROMPTS[i % len(STYLE_PROMPTS)] + (f" #{i}" if i >= len(STYLE_PROMPTS) else "")
        values = stub.call(BackendKind.EMBED, {"text": text})["values"]
        queries.append(Query(f"q{i:02d}", EmbeddingVector(len(values), tuple(values)), text))

    assignments = mine(queries, index, k=args.k)
    taken: set[str] = set()
    for a in assignments:
        ids = [c for c, _ in a.selected]
        assert not taken & set(ids), "pool exclusion violated"
        taken.update(ids)
        top = ", ".join(f"{c}:{s:.3f}" for c, s in a.selected[:3])
        print(f"{a.query_id}  [{len(ids):>3} clips]  {a.instruction_text[:44]:<46} top: {top}")
    print(f"\n{len(taken)} distinct clips selected across {len(assignments)} queries "
          f"(pool {args.pool}); remaining pool {len(index.active_pool)}")


if __name__ == "__main__":
    main()
