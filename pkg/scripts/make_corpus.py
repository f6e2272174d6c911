#!/usr/bin/env python3
"""Emit a synthetic raw-clip manifest (JSONL) for pipeline runs.

Usage:
    python scripts/make_corpus.py --clips 5000 --seed 7 --out corpus.jsonl
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from voiceforge.corpus import write_jsonl
from voiceforge.synth import synthetic_clips


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--clips", type=int, default=5000)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--dead-letter-rate", type=float, default=0.0)
    parser.add_argument("--empty-rate", type=float, default=0.0)
    parser.add_argument("--out", required=True)
    args = parser.parse_args()
    clips = synthetic_clips(
        args.clips,
        seed=args.seed,
        dead_letter_rate=args.dead_letter_rate,
        empty_rate=args.empty_rate,
    )
    write_jsonl(args.out, (c.to_dict() for c in clips))
    print(f"wrote {len(clips)} clips to {args.out}")


if __name__ == "__main__":
    main()
