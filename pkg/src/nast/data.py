"""Corpora, synthetic reordering tasks, link files and config files."""
from __future__ import annotations

import configparser
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .lattice import is_feasible
from .vocab import BLANK, Vocab

logger = logging.getLogger(__name__)

TASKS = ("copy", "local-swap", "sov2svo")

Links = list[tuple[int, int]]  # (target index, source index), 0-based


class ConfigError(ValueError):
    pass


@dataclass
class ParallelCorpus:
    src: list[list[str]]
    tgt: list[list[str]]
    links: Optional[list[Links]] = None
    dropped: int = field(default=0, compare=False)

    def __post_init__(self):
        if len(self.src) != len(self.tgt):
            raise ValueError(f"{len(self.src)} source lines but {len(self.tgt)} target lines")
        if self.links is not None and len(self.links) != len(self.src):
            raise ValueError("link sets do not match the number of sentence pairs")

    def __len__(self) -> int:
        return len(self.src)

    def encode(self, vocab: Vocab) -> list[tuple[list[int], list[int]]]:
        return [(vocab.encode(s), vocab.encode(t)) for s, t in zip(self.src, self.tgt)]

    def subset(self, indices: Sequence[int]) -> "ParallelCorpus":
        links = None if self.links is None else [self.links[i] for i in indices]
        return ParallelCorpus([self.src[i] for i in indices], [self.tgt[i] for i in indices], links)


# ---------------------------------------------------------------------------
# synthetic tasks


def _tokens(prefix: str, n: int) -> list[str]:
    return [f"{prefix}{i}" for i in range(n)]


def synth_generate(
    task: str,
    n: int,
    min_len: int = 5,
    max_len: int = 20,
    vocab_size: int = 32,
    seed: int = 0,
) -> ParallelCorpus:
    """Generate a synthetic parallel corpus; deterministic under ``seed``.

    ``copy`` targets equal sources. ``local-swap`` swaps each disjoint
    adjacent pair with probability 0.5. ``sov2svo`` draws subject, object
    and verb phrases from disjoint token classes and reorders S O V into
    S V O. ``vocab_size`` counts corpus tokens, excluding reserved ids.
    """
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")
    if not 1 <= min_len <= max_len:
        raise ConfigError("need 1 <= min_len <= max_len")
    rng = np.random.default_rng(seed)
    src, tgt, links = [], [], []
    if task in ("copy", "local-swap"):
        if vocab_size < 1:
            raise ConfigError("vocab_size must be positive")
        words = _tokens("w", vocab_size)
        for _ in range(n):
            length = int(rng.integers(min_len, max_len + 1))
            sent = [words[i] for i in rng.integers(0, vocab_size, size=length)]
            perm = list(range(length))
            if task == "local-swap":
                for i in range(0, length - 1, 2):
                    if rng.random() < 0.5:
                        perm[i], perm[i + 1] = perm[i + 1], perm[i]
            src.append(sent)
            tgt.append([sent[j] for j in perm])
            links.append([(t, j) for t, j in enumerate(perm)])
        return ParallelCorpus(src, tgt, links)

    # sov2svo
    per_class = vocab_size // 3
    if per_class < 2:
        raise ConfigError("sov2svo needs vocab_size >= 6 to fill three token classes")
    if min_len < 3:
        raise ConfigError("sov2svo needs min_len >= 3 (one token per phrase)")
    subj, obj, verb = _tokens("s", per_class), _tokens("o", per_class), _tokens("v", per_class)
    for _ in range(n):
        length = int(rng.integers(min_len, max_len + 1))
        n_v = int(rng.integers(1, max(1, length // 4) + 1))
        n_s = int(rng.integers(1, max(1, (length - n_v) // 2) + 1))
        n_o = length - n_v - n_s
        S = [subj[i] for i in rng.integers(0, per_class, size=n_s)]
        O = [obj[i] for i in rng.integers(0, per_class, size=n_o)]
        V = [verb[i] for i in rng.integers(0, per_class, size=n_v)]
        src.append(S + O + V)
        tgt.append(S + V + O)
        order = list(range(n_s)) + list(range(n_s + n_o, length)) + list(range(n_s, n_s + n_o))
        links.append([(t, j) for t, j in enumerate(order)])
    return ParallelCorpus(src, tgt, links)


def filter_feasible(pairs, lam: int):
    """Drop id pairs whose target cannot fit in ``lam * |x|`` alignment slots."""
    kept = []
    dropped = 0
    for s, t in pairs:
        if BLANK in s or BLANK in t:
            raise ValueError("corpus contains the blank id")
        if len(s) >= 1 and is_feasible(t, lam * len(s)):
            kept.append((s, t))
        else:
            dropped += 1
    if dropped:
        logger.info("dropped %d infeasible pairs (lam=%d)", dropped, lam)
    return kept, dropped


# ---------------------------------------------------------------------------
# files


def _split_lines(text: str) -> list[str]:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def read_lines(path) -> list[list[str]]:
    return [line.split() for line in _split_lines(Path(path).read_text(encoding="utf-8"))]


def write_lines(path, sentences: Sequence[Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sent in sentences:
            fh.write(" ".join(sent) + "\n")


def format_links(links: Links) -> str:
    return " ".join(f"{t}-{s}" for t, s in links)


def parse_links(line: str) -> Links:
    out = []
    for item in line.split():
        t, _, s = item.partition("-")
        if not _:
            raise ValueError(f"malformed link {item!r}; expected 't-s'")
        out.append((int(t), int(s)))
    return out


def read_links(path) -> list[Links]:
    return [parse_links(line) for line in _split_lines(Path(path).read_text(encoding="utf-8"))]


def write_links(path, link_sets: Sequence[Links]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for links in link_sets:
            fh.write(format_links(links) + "\n")


def save_corpus(corpus: ParallelCorpus, out_dir, name: str = "train") -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"src": out / f"{name}.src", "tgt": out / f"{name}.tgt"}
    write_lines(paths["src"], corpus.src)
    write_lines(paths["tgt"], corpus.tgt)
    if corpus.links is not None:
        paths["links"] = out / f"{name}.links"
        write_links(paths["links"], corpus.links)
    return paths


def load_corpus(src_path, tgt_path, links_path=None) -> ParallelCorpus:
    links = read_links(links_path) if links_path else None
    return ParallelCorpus(read_lines(src_path), read_lines(tgt_path), links)


def read_config(path) -> dict[str, dict[str, str]]:
    """``key = value`` lines under ``[model]`` / ``[train]`` style headers."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if not parser.read(path, encoding="utf-8"):
        raise FileNotFoundError(path)
    return {section: dict(parser[section]) for section in parser.sections()}


def write_config(path, sections: dict[str, dict]) -> None:
    parser = configparser.ConfigParser()
    for name, values in sections.items():
        parser[name] = {k: "none" if v is None else str(v) for k, v in values.items()}
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)
