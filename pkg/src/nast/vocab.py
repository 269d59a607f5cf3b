"""Joint symbol table with reserved blank, pad and unk ids."""
from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

BLANK, PAD, UNK = 0, 1, 2
RESERVED = ("<blank>", "<pad>", "<unk>")


class Vocab:
    """Dense ids; the three reserved symbols precede corpus tokens."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {s: i for i, s in enumerate(self.itos)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token in RESERVED:
            raise ValueError(f"{token!r} is a reserved symbol")
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]]) -> "Vocab":
        seen: dict[str, None] = {}
        for sent in sentences:
            for tok in sent:
                seen.setdefault(tok)
        return cls(seen)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.itos[len(RESERVED):]), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(line for line in lines if line)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos
