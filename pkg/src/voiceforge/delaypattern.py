"""Delay-pattern serialization of layered codec token grids.

A grid holds L codebook layers by T frames. Serialized, layer j emits its
tokens j-1 steps later than layer 1, so step u carries layer j's frame
u-(j-1); slots outside [1, T] hold PAD. The serialized length is T + L - 1
steps, and the mapping is exactly invertible.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .corpus import TimbreInstruction, Transcript

MAX_LAYERS = 16


class MalformedSequenceError(ValueError):
    """A step sequence no valid (L, T) grid explains."""


@dataclass(frozen=True)
class CodeGrid:
    """L x T matrix of codec token ids, each in [0, vocab_size)."""

    n_layers: int
    n_frames: int
    vocab_size: int
    codes: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        if not 1 <= self.n_layers <= MAX_LAYERS:
            raise ValueError(f"n_layers must lie in [1, {MAX_LAYERS}], got {self.n_layers}")
        if self.n_frames < 0:
            raise ValueError(f"n_frames must be >= 0, got {self.n_frames}")
        if self.vocab_size <= 0:
            raise ValueError("vocab_size must be positive")
        if len(self.codes) != self.n_layers:
            raise ValueError(f"expected {self.n_layers} rows, got {len(self.codes)}")
        for j, row in enumerate(self.codes):
            if len(row) != self.n_frames:
                raise ValueError(f"row {j} has {len(row)} frames, expected {self.n_frames}")
            for t, v in enumerate(row):
                if not 0 <= v < self.vocab_size:
                    raise ValueError(f"code id {v} at ({j}, {t}) outside [0, {self.vocab_size})")

    def to_dict(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "n_frames": self.n_frames,
            "vocab_size": self.vocab_size,
            "codes": [list(row) for row in self.codes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CodeGrid":
        return cls(
            int(d["n_layers"]),
            int(d["n_frames"]),
            int(d["vocab_size"]),
            tuple(tuple(int(v) for v in row) for row in d["codes"]),
        )


def pad_id(vocab_size: int) -> int:
    return vocab_size


def bos_id(vocab_size: int) -> int:
    return vocab_size + 1


def eos_id(vocab_size: int) -> int:
    return vocab_size + 2


@dataclass(frozen=True)
class DelaySequence:
    """Delay-shifted serialization of a grid: a list of L-wide steps.

    Sentinel ids sit just above the code vocabulary (PAD = vocab_size,
    BOS = vocab_size + 1, EOS = vocab_size + 2), so they can never collide
    with code ids.
    """

    n_layers: int
    vocab_size: int
    steps: tuple[tuple[int, ...], ...]

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    def to_dict(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "vocab_size": self.vocab_size,
            "steps": [list(s) for s in self.steps],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DelaySequence":
        return cls(
            int(d["n_layers"]),
            int(d["vocab_size"]),
            tuple(tuple(int(v) for v in s) for s in d["steps"]),
        )


def apply_delay(grid: CodeGrid) -> DelaySequence:
    """Serialize a grid into T + L - 1 delay-shifted steps.

    An empty grid (T == 0) serializes to zero steps; the all-PAD
    alternative would make inversion ambiguous.
    """
    L, T, pad = grid.n_layers, grid.n_frames, pad_id(grid.vocab_size)
    if T == 0:
        return DelaySequence(L, grid.vocab_size, ())
    steps = []
    for s in range(T + L - 1):
        step = []
        for i in range(L):
            t = s - i
            step.append(grid.codes[i][t] if 0 <= t < T else pad)
        steps.append(tuple(step))
    return DelaySequence(L, grid.vocab_size, tuple(steps))


def invert_delay(seq: DelaySequence) -> CodeGrid:
    """Recover the original grid; inverse of apply_delay on all valid grids.

    Raises MalformedSequenceError when the PAD placement is inconsistent
    with every (L, T), including code tokens in forced-PAD slots and
    sentinels inside the code region. A trailing all-EOS step is allowed
    and stripped.
    """
    L, vocab = seq.n_layers, seq.vocab_size
    pad, eos = pad_id(vocab), eos_id(vocab)
    steps = seq.steps
    if steps and any(v == eos for v in steps[-1]):
        if not all(v == eos for v in steps[-1]):
            raise MalformedSequenceError("trailing EOS step mixes EOS with other ids")
        steps = steps[:-1]
    for u, step in enumerate(steps):
        if len(step) != L:
            raise MalformedSequenceError(f"step {u} has width {len(step)}, expected {L}")
    if not steps:
        return CodeGrid(L, 0, vocab, tuple(() for _ in range(L)))
    T = len(steps) - L + 1
    if T < 1:
        raise MalformedSequenceError(
            f"{len(steps)} steps of width {L}: no frame count T >= 1 explains this "
            f"(an empty grid serializes to zero steps)"
        )
    rows: list[list[int]] = [[0] * T for _ in range(L)]
    for s, step in enumerate(steps):
        for i, v in enumerate(step):
            t = s - i
            if 0 <= t < T:
                if not 0 <= v < vocab:
                    raise MalformedSequenceError(
                        f"sentinel/out-of-range id {v} at step {s}, layer {i}: rule requires a code token"
                    )
                rows[i][t] = v
            elif v != pad:
                raise MalformedSequenceError(
                    f"code token {v} at step {s}, layer {i}: rule requires PAD"
                )
    return CodeGrid(L, T, vocab, tuple(tuple(r) for r in rows))


# --- chat-template assembly ---------------------------------------------------


@dataclass(frozen=True)
class ChatTemplate:
    """Delimiters that frame the instruction, transcript, and audio regions."""

    instruction_open: str = "<|instruction|>"
    instruction_close: str = "<|/instruction|>"
    transcript_open: str = "<|text|>"
    transcript_close: str = "<|/text|>"
    audio_open: str = "<|audio|>"

    def __post_init__(self) -> None:
        for name in (
            "instruction_open",
            "instruction_close",
            "transcript_open",
            "transcript_close",
            "audio_open",
        ):
            if not getattr(self, name):
                raise ValueError(f"chat template delimiter {name} must be non-empty")

    def render(self, instruction_text: str, transcript_text: str) -> str:
        return (
            f"{self.instruction_open}{instruction_text}{self.instruction_close}"
            f"{self.transcript_open}{transcript_text}{self.transcript_close}"
            f"{self.audio_open}"
        )

    def to_dict(self) -> dict:
        return {
            "instruction_open": self.instruction_open,
            "instruction_close": self.instruction_close,
            "transcript_open": self.transcript_open,
            "transcript_close": self.transcript_close,
            "audio_open": self.audio_open,
        }


@dataclass(frozen=True)
class TrainingSequence:
    """Rendered text token ids followed by the audio steps plus one EOS step.

    Steps stay L-wide tuples; flattening into a single stream is the
    trainer's concern, not ours. Region boundaries are recoverable by
    construction (the two fields).
    """

    n_layers: int
    vocab_size: int
    text_ids: tuple[int, ...]
    steps: tuple[tuple[int, ...], ...]

    def audio_region(self) -> DelaySequence:
        return DelaySequence(self.n_layers, self.vocab_size, self.steps)


def stub_text_tokenizer(text: str) -> list[int]:
    """Deterministic stand-in for an LLM tokenizer: UTF-8 byte ids."""
    return list(text.encode("utf-8"))


def assemble_training_sequence(
    instruction: TimbreInstruction,
    transcript: Transcript,
    grid: CodeGrid,
    template: ChatTemplate,
    text_tokenizer: Callable[[str], Sequence[int]] = stub_text_tokenizer,
) -> TrainingSequence:
    """Render the chat template, tokenize it, and append the delayed audio."""
    rendered = template.render(instruction.instruction_text, transcript.text)
    text_ids = tuple(int(i) for i in text_tokenizer(rendered))
    if any(i < 0 for i in text_ids):
        raise ValueError("text tokenizer produced a negative id")
    delayed = apply_delay(grid)
    eos_step = (eos_id(grid.vocab_size),) * grid.n_layers
    return TrainingSequence(
        n_layers=grid.n_layers,
        vocab_size=grid.vocab_size,
        text_ids=text_ids,
        steps=delayed.steps + (eos_step,),
    )


# --- persistence --------------------------------------------------------------

_HEADER = struct.Struct("<III")


def write_grid_binary(grid: CodeGrid, path: str | Path) -> None:
    """Header (L, T, vocab_size as little-endian u32) then row-major u32 ids."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(grid.n_layers, grid.n_frames, grid.vocab_size))
        for row in grid.codes:
            fh.write(struct.pack(f"<{len(row)}I", *row) if row else b"")


def read_grid_binary(path: str | Path) -> CodeGrid:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated grid header")
    L, T, vocab = _HEADER.unpack_from(data, 0)
    expected = _HEADER.size + 4 * L * T
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for {L}x{T} grid, got {len(data)}")
    flat = struct.unpack_from(f"<{L * T}I", data, _HEADER.size) if L * T else ()
    rows = tuple(tuple(flat[j * T : (j + 1) * T]) for j in range(L))
    return CodeGrid(L, T, vocab, rows)


def read_grid(path: str | Path) -> CodeGrid:
    """Read either the binary layout or the JSON debug form, by extension."""
    p = Path(path)
    if p.suffix == ".json":
        return CodeGrid.from_dict(json.loads(p.read_text(encoding="utf-8")))
    return read_grid_binary(p)


def write_grid(grid: CodeGrid, path: str | Path) -> None:
    p = Path(path)
    if p.suffix == ".json":
        p.write_text(json.dumps(grid.to_dict(), sort_keys=True), encoding="utf-8")
    else:
        write_grid_binary(grid, p)
