"""Latency metrics, BLEU, hallucination rate and reordering difficulty."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class InvalidTraceError(ValueError):
    pass


@dataclass
class PolicyRecord:
    delays: list[int]  # g(t) for each emitted token
    src_len: int
    tgt_len: int

    def __post_init__(self):
        if self.tgt_len != len(self.delays):
            raise InvalidTraceError(f"{len(self.delays)} delays for a target of length {self.tgt_len}")
        if self.src_len < 1 or self.tgt_len < 1:
            raise InvalidTraceError("policy needs non-empty source and target")
        if any(b < a for a, b in zip(self.delays, self.delays[1:])):
            raise InvalidTraceError("delays must be non-decreasing")
        if self.delays[0] < 1 or self.delays[-1] > self.src_len:
            raise InvalidTraceError(f"delays must lie in 1..{self.src_len}")

    @property
    def ratio(self) -> float:
        return self.tgt_len / self.src_len

    @classmethod
    def from_trace(cls, trace) -> "PolicyRecord":
        delays = trace.delays
        return cls(delays, trace.source_length, len(delays))


def average_lagging(p: PolicyRecord, strict: bool = True) -> float:
    """AL over tokens up to the first one written with the whole source read.

    With ``strict=False`` a policy that never reaches ``|x|`` is averaged
    over all its tokens instead of raising.
    """
    reached = [t for t, g in enumerate(p.delays, 1) if g == p.src_len]
    if reached:
        tau = reached[0]
    elif strict:
        raise InvalidTraceError("policy never reads the full source before writing")
    else:
        tau = p.tgt_len
    r = p.ratio
    return sum(p.delays[t - 1] - (t - 1) / r for t in range(1, tau + 1)) / tau


def average_proportion(p: PolicyRecord) -> float:
    return sum(p.delays) / (p.src_len * p.tgt_len)


def consecutive_wait(p: PolicyRecord) -> float:
    """Mean length of the non-empty read bursts preceding writes."""
    prev, bursts = 0, []
    for g in p.delays:
        if g > prev:
            bursts.append(g - prev)
        prev = g
    return sum(bursts) / len(bursts)


def differentiable_average_lagging(p: PolicyRecord) -> float:
    step = 1.0 / p.ratio
    total, prev = 0.0, None
    for t, g in enumerate(p.delays, 1):
        cur = g if prev is None else max(g, prev + step)
        total += cur - (t - 1) / p.ratio
        prev = cur
    return total / p.tgt_len


def latency_metrics(p: PolicyRecord, strict: bool = True) -> dict[str, float]:
    return {
        "AL": average_lagging(p, strict),
        "AP": average_proportion(p),
        "CW": consecutive_wait(p),
        "DAL": differentiable_average_lagging(p),
    }


# ---------------------------------------------------------------------------
# BLEU


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses: Sequence[Sequence[str]], references: Sequence[Sequence[str]], max_n: int = 4) -> float:
    """Corpus BLEU in [0, 100]; add-one smoothing on orders two and up."""
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not hypotheses:
        raise ValueError("empty corpus")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    if hyp_len == 0 or matches[0] == 0:
        return 0.0
    log_p = math.log(matches[0] / totals[0])
    for n in range(1, max_n):
        log_p += math.log((matches[n] + 1) / (totals[n] + 1))
    bp = 1.0 if hyp_len > ref_len else math.exp(1 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p / max_n)


# ---------------------------------------------------------------------------
# alignment-link analyses


def hallucination_rate(hyp_len: int, links: Sequence[tuple[int, int]]) -> float:
    """Fraction of hypothesis tokens with no link to any source token."""
    if hyp_len == 0:
        return 0.0
    covered = set()
    for t, s in links:
        if not 0 <= t < hyp_len or s < 0:
            raise ValueError(f"link ({t}, {s}) outside a hypothesis of length {hyp_len}")
        covered.add(t)
    return 1.0 - len(covered) / hyp_len


def cross_count(links: Sequence[tuple[int, int]]) -> int:
    """Number of link pairs that cross each other."""
    links = list(links)
    return sum(
        1
        for a in range(len(links))
        for b in range(a + 1, len(links))
        if (links[a][0] - links[b][0]) * (links[a][1] - links[b][1]) < 0
    )


def partition_by_difficulty(link_sets: Sequence[Sequence[tuple[int, int]]]) -> dict[str, list[int]]:
    """Split sentence indices into easy/medium/hard thirds by cross count."""
    counts = [cross_count(ls) for ls in link_sets]
    order = sorted(range(len(counts)), key=lambda i: counts[i])
    parts = np.array_split(np.array(order, dtype=int), 3)
    return {name: part.tolist() for name, part in zip(("easy", "medium", "hard"), parts)}


def format_report(values: dict) -> str:
    lines = []
    for key, val in values.items():
        lines.append(f"{key} = {val:.4f}" if isinstance(val, float) else f"{key} = {val}")
    return "\n".join(lines) + "\n"
