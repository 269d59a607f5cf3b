"""Brute-force ground truth over every alignment of a small posterior."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .lattice import BLANK

MAX_STATES = 10**6


class OracleRefusal(ValueError):
    """State space too large to enumerate."""


@dataclass
class Enumeration:
    alignments: np.ndarray  # (N, T)
    log_probs: np.ndarray  # (N,)
    collapsed: np.ndarray  # (N, T), -1 padded
    lengths: np.ndarray  # (N,)
    reserved: np.ndarray  # (N, T) bool

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)


def enumerate_alignments(log_probs, cap: int = MAX_STATES) -> Enumeration:
    lp = np.asarray(log_probs, dtype=np.float64)
    T, V = lp.shape
    if V**T > cap:
        raise OracleRefusal(f"|V|^T = {V}^{T} exceeds the enumeration cap of {cap}")
    grids = np.indices((V,) * T).reshape(T, -1).T if T > 0 else np.zeros((1, 0), dtype=int)
    logp = lp[np.arange(T), grids].sum(axis=1) if T > 0 else np.zeros(1)

    reserved = grids != BLANK
    reserved[:, 1:] &= grids[:, 1:] != grids[:, :-1]
    pos = np.cumsum(reserved, axis=1) - 1
    collapsed = np.full(grids.shape, -1, dtype=np.int64)
    rows, cols = np.nonzero(reserved)
    collapsed[rows, pos[rows, cols]] = grids[rows, cols]
    return Enumeration(grids, logp, collapsed, reserved.sum(axis=1), reserved)


def _logsumexp(x: np.ndarray) -> float:
    if x.size == 0:
        return -np.inf
    top = x.max()
    if top == -np.inf:
        return -np.inf
    return float(top + np.log(np.exp(x - top).sum()))


def _matches(en: Enumeration, y: Sequence[int]) -> np.ndarray:
    y = np.asarray(list(y), dtype=np.int64)
    ok = en.lengths == len(y)
    if len(y):
        ok &= (en.collapsed[:, : len(y)] == y).all(axis=1)
    return ok


def _moment_vector(n: int, lam: int, src_len: int, k: int) -> np.ndarray:
    chunk = np.arange(n) // lam + 1
    return np.minimum(chunk + k, src_len).astype(np.float64)


def enumerate_oracle(
    log_probs,
    query: str,
    *,
    y: Optional[Sequence[int]] = None,
    bigram: Optional[tuple[int, int]] = None,
    lam: int = 1,
    src_len: Optional[int] = None,
    k: int = 0,
):
    """Answer one query exactly by enumerating all ``|V|^T`` alignments.

    Queries: ``marginal`` and ``log_marginal`` of ``y``; ``bigram`` expected
    count; ``tau`` and ``lag_sum`` (reserved positions before the last chunk,
    unweighted and moment-weighted); ``argmax`` alignment over beta(y; T),
    returned with its log-probability; ``al_per_sample`` and ``al_exact``
    (expected Average Lagging of sampled alignments, the latter without the
    length-ratio approximation, both conditioned on at least one reserved
    position).
    """
    en = enumerate_alignments(log_probs)
    p = en.probs
    if query in ("marginal", "log_marginal"):
        lm = _logsumexp(en.log_probs[_matches(en, y)])
        return lm if query == "log_marginal" else float(np.exp(lm))
    if query == "bigram":
        g1, g2 = bigram
        hits = (en.collapsed[:, :-1] == g1) & (en.collapsed[:, 1:] == g2)
        return float((p * hits.sum(axis=1)).sum())
    if query == "argmax":
        ok = _matches(en, y)
        if not ok.any():
            return None, -np.inf
        idx = np.flatnonzero(ok)
        best = idx[np.argmax(en.log_probs[idx])]
        return en.alignments[best].tolist(), float(en.log_probs[best])

    T = en.alignments.shape[1]
    if src_len is None:
        src_len = T // lam
    n = (src_len - 1) * lam
    kept = en.reserved[:, :n]
    m = _moment_vector(n, lam, src_len, k)
    tau = kept.sum(axis=1).astype(np.float64)
    lag = (kept * m).sum(axis=1)
    if query == "tau":
        return float((p * tau).sum())
    if query == "lag_sum":
        return float((p * lag).sum())
    if query in ("al_per_sample", "al_exact"):
        ok = tau > 0
        if not ok.any():
            return float("nan")
        if query == "al_per_sample":
            al = (lag[ok] - 0.5 * src_len * (tau[ok] - 1)) / tau[ok]
        else:
            r = en.lengths[ok] / src_len
            al = (lag[ok] - tau[ok] * (tau[ok] - 1) / (2 * r)) / tau[ok]
        w = p[ok]
        return float((w * al).sum() / w.sum())
    raise ValueError(f"unknown oracle query {query!r}")
