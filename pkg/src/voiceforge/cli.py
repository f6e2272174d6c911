"""Unified command-line entry point.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 backend
failure. Logs go to stderr as structured lines; data goes to files only.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

from .backends import BackendError
from .config import ConfigError, RunConfig, config_from_canonical, validate_config
from .corpus import (
    DatasetRecord,
    Language,
    canonical_dumps,
    read_jsonl,
    write_jsonl,
)
from .delaypattern import (
    DelaySequence,
    MalformedSequenceError,
    apply_delay,
    invert_delay,
    read_grid,
    write_grid,
)
from .evaluation import (
    Dimension,
    RawVote,
    StudyItem,
    StudyPair,
    Task,
    VoteSet,
    aggregate_accuracy,
    aggregate_preferences,
    build_study,
)
from .mining import load_index_rows, load_query_rows, mine, rewrite_instructions
from .pipeline import (
    CheckpointError,
    DataError,
    PipelineInterrupted,
    PipelineRunner,
    build_backend,
    load_input_manifest,
    load_run_config_hash,
)
from .profiler import ProfileRecord, contamination_check, profile

log = logging.getLogger("voiceforge")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_BACKEND = 3

CONFIG_ENV_VAR = "VOICEFORGE_CONFIG"


class CliParser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _setup_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(
        logging.Formatter("%(asctime)s %(levelname)s %(name)s %(message)s", "%Y-%m-%dT%H:%M:%S")
    )
    root = logging.getLogger("voiceforge")
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


def _load_config(path: str | None) -> RunConfig:
    resolved = path or os.environ.get(CONFIG_ENV_VAR)
    if not resolved:
        return RunConfig()
    return validate_config(resolved)


def _write_json(path: str | Path, doc: Any) -> None:
    Path(path).write_text(
        json.dumps(doc, sort_keys=True, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )


# --- subcommand handlers -----------------------------------------------------


def _cmd_pipeline_run(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    records = load_input_manifest(args.infile)
    runner = PipelineRunner(cfg)
    result = runner.run(
        records,
        args.out,
        stop_after_stage=args.stop_after_stage,
        stop_after_batches=args.stop_after_batches,
    )
    log.info(
        "pipeline complete: %d in, %d out, %d dead-lettered -> %s",
        len(records), len(result.records), len(result.dead_letters), result.out_dir,
    )
    return EXIT_OK


def _cmd_pipeline_resume(args: argparse.Namespace) -> int:
    run_dir = Path(args.run)
    stored_config, stored_hash, checkpoint_every = load_run_config_hash(run_dir)
    if args.config:
        cfg = validate_config(args.config)
        if cfg.config_hash() != stored_hash:
            raise CheckpointError(
                "config mismatch: --config does not hash to the config this run started with"
            )
    else:
        cfg = config_from_canonical(stored_config, workers=args.workers, checkpoint_every=checkpoint_every)
    runner = PipelineRunner(cfg)
    result = runner.resume(run_dir)
    log.info("resume complete: %d records out -> %s", len(result.records), result.out_dir)
    return EXIT_OK


def _cmd_mine(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    index = load_index_rows(read_jsonl(args.index))
    for clip_id, reason in index.rejected:
        log.warning("index: rejected %s (%s)", clip_id, reason)
    queries = load_query_rows(read_jsonl(args.queries))
    k = args.k if args.k is not None else cfg.mining_k
    assignments = mine(queries, index, k=k, similarity_floor=cfg.similarity_floor)
    write_jsonl(args.out, (a.to_dict() for a in assignments))
    log.info("mined %d queries over %d clips -> %s", len(queries), len(index), args.out)
    return EXIT_OK


def _cmd_augment_rewrite(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    records = [DatasetRecord.from_dict(d) for d in read_jsonl(args.infile)]
    backend = build_backend(cfg)
    n = args.n if args.n is not None else cfg.rewrite_n
    variants, failures = rewrite_instructions(
        records, n, backend, max_retries=cfg.rewrite_max_retries
    )
    out_records = (records + variants) if args.include_originals else variants
    write_jsonl(args.out, (r.to_dict() for r in out_records))
    if failures:
        dead_path = Path(args.out).with_suffix(".dead.jsonl")
        write_jsonl(dead_path, (f.to_dict() for f in failures))
        log.warning("%d records failed rewriting -> %s", len(failures), dead_path)
    log.info("rewrote %d records into %d variants -> %s", len(records), len(variants), args.out)
    return EXIT_OK


def _cmd_sequence_pack(args: argparse.Namespace) -> int:
    grid = read_grid(args.grid)
    seq = apply_delay(grid)
    _write_json(args.out, seq.to_dict())
    log.info("packed %dx%d grid into %d steps -> %s", grid.n_layers, grid.n_frames, seq.n_steps, args.out)
    return EXIT_OK


def _cmd_sequence_unpack(args: argparse.Namespace) -> int:
    doc = json.loads(Path(args.sequence).read_text(encoding="utf-8"))
    seq = DelaySequence.from_dict(doc)
    grid = invert_delay(seq)
    write_grid(grid, args.out)
    log.info("unpacked %d steps into %dx%d grid -> %s", seq.n_steps, grid.n_layers, grid.n_frames, args.out)
    return EXIT_OK


def _cmd_profile(args: argparse.Namespace) -> int:
    records = []
    for row in read_jsonl(args.infile):
        clip = row.get("clip", row)
        caption = row.get("caption")
        if caption is None:
            raise DataError(f"record {clip.get('clip_id')!r} has no caption; profile needs annotated manifests")
        records.append(
            ProfileRecord(
                clip_id=clip["clip_id"],
                language=clip["language"],
                duration_s=float(clip["duration_s"]),
                categories={
                    "age_bracket": caption["age_bracket"],
                    "emotion_tone": caption["emotion_tone"],
                    "voice_texture": caption["voice_texture"],
                },
            )
        )
    result = profile(records, sample_per_language=args.sample, seed=args.seed)
    _write_json(args.out, result.to_dict())
    log.info("profiled %d records -> %s", len(records), args.out)
    return EXIT_OK


def _read_transcript_file(path: str) -> list[tuple[str, str]]:
    """Accept envelopes, dataset records, or bare {id, text} rows."""
    out = []
    for row in read_jsonl(path):
        if "transcript" in row and isinstance(row["transcript"], dict):
            out.append((row.get("clip_id") or row["transcript"]["clip_id"], row["transcript"]["text"]))
        elif "text" in row:
            out.append((row.get("id") or row.get("clip_id") or row.get("item_id") or "", row["text"]))
        else:
            raise DataError(f"{path}: row has neither transcript nor text: {sorted(row)}")
    return out


def _cmd_contamination(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    threshold = args.threshold if args.threshold is not None else cfg.contamination_threshold
    report = contamination_check(
        _read_transcript_file(args.train),
        _read_transcript_file(args.test),
        threshold=threshold,
    )
    _write_json(args.out, report.to_dict())
    log.info("contamination: %d pairs flagged at threshold %.3f -> %s", report.flagged_count, threshold, args.out)
    return EXIT_OK


def _cmd_study_build(args: argparse.Namespace) -> int:
    pairs = []
    for row in read_jsonl(args.pairs):
        pairs.append(
            StudyPair(
                pair_id=row["pair_id"],
                instruction_text=row["instruction_text"],
                audio_a_ref=row["audio_a_ref"],
                audio_b_ref=row["audio_b_ref"],
                language=Language(row["language"]),
                baseline=row.get("baseline", "baseline"),
            )
        )
    dimensions = [Dimension(d) for d in args.dimensions.split(",")] if args.dimensions else list(Dimension)
    items = build_study(pairs, seed=args.seed, dimensions=dimensions)
    write_jsonl(args.out, (item.to_dict() for item in items))
    log.info("built %d study items from %d pairs -> %s", len(items), len(pairs), args.out)
    return EXIT_OK


def _cmd_study_resolve(args: argparse.Namespace) -> int:
    items = {d["item_id"]: StudyItem.from_dict(d) for d in read_jsonl(args.study)}
    votes_by_item: dict[str, list[tuple[str, RawVote]]] = {}
    annotator_counts: dict[str, int] = {}
    for row in read_jsonl(args.votes):
        item_id = row["item_id"]
        if item_id not in items:
            raise DataError(f"vote references unknown item {item_id!r}")
        votes_by_item.setdefault(item_id, []).append((row["annotator_id"], RawVote(row["vote"])))
        annotator_counts[row["annotator_id"]] = annotator_counts.get(row["annotator_id"], 0) + 1
    resolved_pairs = []
    vote_sets = []
    for item_id in sorted(votes_by_item):
        study_item = items[item_id]
        vs = VoteSet.build(item_id, votes_by_item[item_id], study_item.item.presented_order)
        vote_sets.append(vs)
        resolved_pairs.append((study_item.item, vs.resolved))
    cells = aggregate_preferences(resolved_pairs)
    doc = {
        "items": [vs.to_dict() for vs in vote_sets],
        "annotator_counts": dict(sorted(annotator_counts.items())),
        "per_dimension": {
            dim.value: {
                baseline: cell.to_dict()
                for (d, baseline), cell in sorted(cells.items(), key=lambda kv: kv[0][1])
                if d == dim
            }
            for dim in Dimension
            if any(d == dim for d, _ in cells)
        },
    }
    _write_json(args.out, doc)
    log.info("resolved %d items -> %s", len(vote_sets), args.out)
    return EXIT_OK


def _cmd_accuracy(args: argparse.Namespace) -> int:
    verdicts = []
    for row in read_jsonl(args.verdicts):
        verdicts.append((Task(row["task"]), Language(row["language"]), bool(row["passed"])))
    table = aggregate_accuracy(verdicts)
    _write_json(args.out, table.to_dict())
    log.info("aggregated %d verdicts over %d cells -> %s", len(verdicts), len(table.cells), args.out)
    return EXIT_OK


def _cmd_config_validate(args: argparse.Namespace) -> int:
    path = args.path or os.environ.get(CONFIG_ENV_VAR)
    if not path:
        print("no config path given (argument or VOICEFORGE_CONFIG)", file=sys.stderr)
        return EXIT_USAGE
    cfg = validate_config(path)
    print(canonical_dumps({"config_hash": cfg.config_hash(), "config": cfg.canonical_dict()}))
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def build_parser() -> CliParser:
    parser = CliParser(prog="voiceforge", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_pipe = sub.add_parser("pipeline", help="staged filtering and annotation")
    pipe_sub = p_pipe.add_subparsers(dest="pipeline_command", required=True)
    p_run = pipe_sub.add_parser("run", help="run all stages over an input manifest")
    p_run.add_argument("--config", help=f"TOML config (default: ${CONFIG_ENV_VAR})")
    p_run.add_argument("--in", dest="infile", required=True, help="input manifest (JSONL)")
    p_run.add_argument("--out", required=True, help="output run directory")
    p_run.add_argument("--workers", type=int, help="parallel workers (default: core count)")
    p_run.add_argument("--stop-after-stage", type=int, help=argparse.SUPPRESS)
    p_run.add_argument("--stop-after-batches", type=int, help=argparse.SUPPRESS)
    p_run.set_defaults(func=_cmd_pipeline_run)
    p_res = pipe_sub.add_parser("resume", help="continue an interrupted run")
    p_res.add_argument("--run", required=True, help="run directory with a checkpoint")
    p_res.add_argument("--config", help="optional config cross-check")
    p_res.add_argument("--workers", type=int)
    p_res.set_defaults(func=_cmd_pipeline_resume)

    p_mine = sub.add_parser("mine", help="style-guided retrieval with pool exclusion")
    p_mine.add_argument("--config", help=f"TOML config (default: ${CONFIG_ENV_VAR})")
    p_mine.add_argument("--index", required=True, help="embedding index (JSONL)")
    p_mine.add_argument("--queries", required=True, help="query embeddings (JSONL)")
    p_mine.add_argument("--k", type=int, help="matches per query (default from config: 50)")
    p_mine.add_argument("--out", required=True, help="assignments output (JSONL)")
    p_mine.set_defaults(func=_cmd_mine)

    p_aug = sub.add_parser("augment", help="dataset augmentation")
    aug_sub = p_aug.add_subparsers(dest="augment_command", required=True)
    p_rw = aug_sub.add_parser("rewrite", help="instruction-rewrite English records")
    p_rw.add_argument("--config", help=f"TOML config (default: ${CONFIG_ENV_VAR})")
    p_rw.add_argument("--in", dest="infile", required=True, help="dataset records (JSONL)")
    p_rw.add_argument("--n", type=int, help="variants per record (default from config: 2)")
    p_rw.add_argument("--include-originals", action="store_true", help="emit originals too")
    p_rw.add_argument("--out", required=True, help="augmented records (JSONL)")
    p_rw.set_defaults(func=_cmd_augment_rewrite)

    p_seq = sub.add_parser("sequence", help="delay-pattern packing")
    seq_sub = p_seq.add_subparsers(dest="sequence_command", required=True)
    p_pack = seq_sub.add_parser("pack", help="grid -> delay sequence")
    p_pack.add_argument("--grid", required=True, help="grid file (.json or binary)")
    p_pack.add_argument("--out", required=True, help="sequence output (JSON)")
    p_pack.set_defaults(func=_cmd_sequence_pack)
    p_unpack = seq_sub.add_parser("unpack", help="delay sequence -> grid")
    p_unpack.add_argument("--sequence", required=True, help="sequence file (JSON)")
    p_unpack.add_argument("--out", required=True, help="grid output (.json or binary)")
    p_unpack.set_defaults(func=_cmd_sequence_unpack)

    p_prof = sub.add_parser("profile", help="corpus statistics")
    p_prof.add_argument("--in", dest="infile", required=True, help="annotated manifest (JSONL)")
    p_prof.add_argument("--sample", type=int, default=150_000, help="sample size per language")
    p_prof.add_argument("--seed", type=int, default=7)
    p_prof.add_argument("--out", required=True, help="profile output (JSON)")
    p_prof.set_defaults(func=_cmd_profile)

    p_cont = sub.add_parser("contamination", help="train/test transcript overlap check")
    p_cont.add_argument("--config", help=f"TOML config (default: ${CONFIG_ENV_VAR})")
    p_cont.add_argument("--train", required=True, help="training transcripts (JSONL)")
    p_cont.add_argument("--test", required=True, help="evaluation transcripts (JSONL)")
    p_cont.add_argument("--threshold", type=float, help="similarity threshold (default 0.9)")
    p_cont.add_argument("--out", required=True, help="report output (JSON)")
    p_cont.set_defaults(func=_cmd_contamination)

    p_study = sub.add_parser("study", help="pairwise preference study")
    study_sub = p_study.add_subparsers(dest="study_command", required=True)
    p_sb = study_sub.add_parser("build", help="build blind randomized study items")
    p_sb.add_argument("--pairs", required=True, help="instruction/audio pairs (JSONL)")
    p_sb.add_argument("--seed", type=int, default=7)
    p_sb.add_argument("--dimensions", help="comma-separated dimension subset")
    p_sb.add_argument("--out", required=True, help="study items (JSONL)")
    p_sb.set_defaults(func=_cmd_study_build)
    p_sr = study_sub.add_parser("resolve", help="majority-vote resolution and aggregation")
    p_sr.add_argument("--votes", required=True, help="vote file (JSONL: item_id, annotator_id, vote)")
    p_sr.add_argument("--study", required=True, help="study items (JSONL)")
    p_sr.add_argument("--out", required=True, help="results output (JSON)")
    p_sr.set_defaults(func=_cmd_study_resolve)

    p_acc = sub.add_parser("accuracy", help="aggregate judge verdicts")
    p_acc.add_argument("--verdicts", required=True, help="verdicts (JSONL: task, language, passed)")
    p_acc.add_argument("--out", required=True, help="accuracy table (JSON)")
    p_acc.set_defaults(func=_cmd_accuracy)

    p_cfg = sub.add_parser("config", help="configuration tools")
    cfg_sub = p_cfg.add_subparsers(dest="config_command", required=True)
    p_cv = cfg_sub.add_parser("validate", help="validate a config file")
    p_cv.add_argument("path", nargs="?", help=f"config path (default: ${CONFIG_ENV_VAR})")
    p_cv.set_defaults(func=_cmd_config_validate)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return args.func(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except PipelineInterrupted as exc:
        print(f"run interrupted ({exc}); checkpoint committed, continue with 'pipeline resume'", file=sys.stderr)
        return EXIT_DATA
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DataError, MalformedSequenceError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
