"""Incremental simultaneous decoding with READ/WRITE traces."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Optional, Protocol, Sequence

import torch

from .lattice import BLANK, collapse

Mode = Literal["literal", "exact"]
MODES = ("literal", "exact")


class SessionStateError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# traces


@dataclass(frozen=True)
class TraceEvent:
    kind: Literal["read", "write"]
    value: object  # source index (read, 1-based) or token (write)
    tokens_read: int

    def to_json(self) -> str:
        key = "index" if self.kind == "read" else "token"
        return json.dumps({"type": self.kind, key: self.value, "tokens_read": self.tokens_read}, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "TraceEvent":
        rec = json.loads(line)
        kind = rec["type"]
        if kind not in ("read", "write"):
            raise ValueError(f"unknown trace event type {kind!r}")
        value = rec["index"] if kind == "read" else rec["token"]
        return cls(kind, value, int(rec["tokens_read"]))


@dataclass
class ReadWriteTrace:
    events: list[TraceEvent] = field(default_factory=list)

    def read(self, index: int) -> None:
        self.events.append(TraceEvent("read", index, index))

    def write(self, token, tokens_read: int) -> None:
        self.events.append(TraceEvent("write", token, tokens_read))

    @property
    def delays(self) -> list[int]:
        """g(t): source tokens read when target token t was written."""
        return [e.tokens_read for e in self.events if e.kind == "write"]

    @property
    def tokens(self) -> list:
        return [e.value for e in self.events if e.kind == "write"]

    @property
    def source_length(self) -> int:
        return sum(1 for e in self.events if e.kind == "read")

    def map_tokens(self, fn) -> "ReadWriteTrace":
        return ReadWriteTrace(
            [TraceEvent(e.kind, fn(e.value) if e.kind == "write" else e.value, e.tokens_read) for e in self.events]
        )

    def to_lines(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.events)

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "ReadWriteTrace":
        return cls([TraceEvent.from_json(line) for line in lines if line.strip()])


def write_traces(path, traces: Sequence[ReadWriteTrace]) -> None:
    """One event per line; a blank line terminates each sentence's trace."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for tr in traces:
            fh.write(tr.to_lines())
            fh.write("\n")


def read_traces(path) -> list[ReadWriteTrace]:
    traces, block = [], []
    for line in Path(path).read_text(encoding="utf-8").split("\n"):
        if line.strip():
            block.append(line)
        elif block:
            traces.append(ReadWriteTrace.from_lines(block))
            block = []
    if block:
        traces.append(ReadWriteTrace.from_lines(block))
    return traces


# ---------------------------------------------------------------------------
# chunk sources


class ChunkDecoder(Protocol):
    lam: int

    def chunks(self, source: Sequence[int], n_visible: int, indices: Sequence[int]) -> list[list[int]]:
        """Raw argmax alignment for each 1-based chunk index."""


class ModelChunkDecoder:
    """Greedy chunk decoding from a NAST model, caching each decoded chunk."""

    def __init__(self, model, k: int = 0):
        self.model = model
        self.lam = model.lam
        self.k = k
        self.cache: dict[int, torch.Tensor] = {}
        self.encoder_cache: Optional[torch.Tensor] = None

    def chunks(self, source, n_visible, indices):
        self.encoder_cache, lp = self.model.infer(source, n_visible=n_visible, k=self.k)
        out = []
        for i in indices:
            rows = lp[(i - 1) * self.lam : i * self.lam]
            self.cache[i] = rows
            out.append(rows.argmax(-1).tolist())
        return out


class AlignmentChunkDecoder:
    """Serves slices of a fixed raw alignment; model-free testing aid."""

    def __init__(self, alignment: Sequence[int], lam: int):
        self.alignment = list(alignment)
        self.lam = lam

    def chunks(self, source, n_visible, indices):
        return [self.alignment[(i - 1) * self.lam : i * self.lam] for i in indices]


# ---------------------------------------------------------------------------
# merging


@dataclass
class ChunkOutput:
    raw: list[int]
    collapsed: list[int]


def merge_chunk(prefix: Sequence[int], carried: Optional[int], raw: Sequence[int], mode: Mode) -> list[int]:
    """Tokens a chunk adds to the prefix.

    ``literal`` drops the chunk's first token when it equals the prefix's last
    token. ``exact`` merges only when the previous chunk's final raw symbol
    (blank included) equals this chunk's first raw symbol, which makes the
    concatenation identical to collapsing the whole alignment.
    """
    out = collapse(raw)
    if not out:
        return out
    if mode == "literal":
        if prefix and prefix[-1] == out[0]:
            return out[1:]
        return out
    if mode == "exact":
        if carried is not None and raw[0] != BLANK and raw[0] == carried:
            return out[1:]
        return out
    raise ValueError(f"unknown collapse mode {mode!r}")


class StreamSession:
    """Consumes source tokens one at a time and emits target tokens.

    Chunk ``i`` is decoded once ``i + k`` source tokens have been read; the
    remaining chunks are decoded with the full source at ``finalize``.
    """

    def __init__(self, decoder: ChunkDecoder, k: int = 0, mode: Mode = "literal"):
        if mode not in MODES:
            raise ValueError(f"unknown collapse mode {mode!r}")
        self.decoder = decoder
        self.lam = decoder.lam
        self.k = k
        self.mode = mode
        self.source: list[int] = []
        self.prefix: list[int] = []
        self.carried: Optional[int] = None
        self.decoded = 0
        self.chunk_outputs: list[ChunkOutput] = []
        self.trace = ReadWriteTrace()
        self.finalized = False

    @property
    def tokens_read(self) -> int:
        return len(self.source)

    def _emit(self, raws: Sequence[Sequence[int]]) -> list[int]:
        emitted = []
        for raw in raws:
            new = merge_chunk(self.prefix, self.carried, raw, self.mode)
            self.chunk_outputs.append(ChunkOutput(list(raw), collapse(raw)))
            self.carried = raw[-1]
            self.decoded += 1
            for tok in new:
                self.prefix.append(tok)
                self.trace.write(tok, self.tokens_read)
            emitted.extend(new)
        return emitted

    def push(self, token: int) -> list[int]:
        if self.finalized:
            raise SessionStateError("push after finalize")
        self.source.append(int(token))
        self.trace.read(self.tokens_read)
        chunk = self.tokens_read - self.k
        if chunk < 1:
            return []
        raws = self.decoder.chunks(self.source, self.tokens_read, [chunk])
        return self._emit(raws)

    def finalize(self) -> tuple[list[int], ReadWriteTrace]:
        if self.finalized:
            raise SessionStateError("session already finalized")
        if not self.source:
            raise SessionStateError("finalize before any source token")
        pending = list(range(self.decoded + 1, self.tokens_read + 1))
        emitted = []
        if pending:
            emitted = self._emit(self.decoder.chunks(self.source, self.tokens_read, pending))
        self.finalized = True
        return emitted, self.trace


def stream_translate(decoder: ChunkDecoder, source: Sequence[int], k: int = 0, mode: Mode = "literal"):
    """Run a full session; returns (tokens, trace)."""
    session = StreamSession(decoder, k=k, mode=mode)
    for tok in source:
        session.push(tok)
    session.finalize()
    return list(session.prefix), session.trace


def merge_offline(alignment: Sequence[int], lam: int, mode: Mode) -> list[int]:
    """Output of a complete raw alignment under a collapse mode."""
    if mode == "exact":
        return collapse(alignment)
    if mode != "literal":
        raise ValueError(f"unknown collapse mode {mode!r}")
    out: list[int] = []
    for start in range(0, len(alignment), lam):
        piece = collapse(alignment[start : start + lam])
        if piece and out and out[-1] == piece[0]:
            piece = piece[1:]
        out.extend(piece)
    return out


def offline_reference_decode(model, source: Sequence[int], mode: Mode = "literal", k: Optional[int] = None) -> list[int]:
    """Full-source forward pass, greedy alignment, then collapse under ``mode``."""
    lp = model.posterior(source, k=k)
    return merge_offline(lp.argmax(-1).tolist(), model.lam, mode)
