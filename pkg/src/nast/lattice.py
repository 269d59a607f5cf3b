"""Latent-alignment mathematics over a blank-extended vocabulary.

Every function takes a ``(T, V)`` matrix of per-position log-probabilities
(an alignment posterior) with the blank symbol at id 0. Scalar results are
float64 tensors so they can be differentiated with torch autograd.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import torch

from .numeric import NEG_INF

BLANK = 0
EPS_DIV = 1e-6


class LatticeError(ValueError):
    pass


class InfeasibleAlignmentError(LatticeError):
    """No length-T alignment collapses to the requested target."""


class DegenerateTargetError(LatticeError):
    """Target too short for the requested loss."""


def collapse(alignment: Iterable[int], blank: int = BLANK) -> list[int]:
    out: list[int] = []
    prev = None
    for tok in alignment:
        tok = int(tok)
        if tok != blank and tok != prev:
            out.append(tok)
        prev = tok
    return out


def min_alignment_length(y: Sequence[int]) -> int:
    """Shortest T for which some alignment collapses to ``y``."""
    repeats = sum(1 for a, b in zip(y, y[1:]) if a == b)
    return len(y) + repeats


def is_feasible(y: Sequence[int], T: int) -> bool:
    return min_alignment_length(y) <= T


def _check_target(y: Sequence[int], vocab_size: int) -> list[int]:
    y = [int(t) for t in y]
    for t in y:
        if t == BLANK:
            raise LatticeError("target contains the blank symbol")
        if not 0 <= t < vocab_size:
            raise LatticeError(f"target id {t} outside vocabulary of size {vocab_size}")
    return y


def _as_posterior(log_probs) -> torch.Tensor:
    lp = torch.as_tensor(log_probs)
    if lp.dim() != 2:
        raise LatticeError(f"expected a (T, V) posterior, got shape {tuple(lp.shape)}")
    return lp.double()


# ---------------------------------------------------------------------------
# CTC marginal likelihood and best path


def _label_states(targets: Sequence[Sequence[int]], device=None):
    """Blank-interleaved state labels, validity mask and skip mask for a batch."""
    L = max((len(y) for y in targets), default=0)
    S = 2 * L + 1
    B = len(targets)
    labels = torch.zeros(B, S, dtype=torch.long, device=device)
    valid = torch.zeros(B, S, dtype=torch.bool, device=device)
    for b, y in enumerate(targets):
        if y:
            labels[b, 1 : 2 * len(y) : 2] = torch.tensor(y, dtype=torch.long)
        valid[b, : 2 * len(y) + 1] = True
    skip = torch.zeros(B, S, dtype=torch.bool, device=device)
    if S > 3:
        skip[:, 3::2] = labels[:, 3::2] != labels[:, 1:-2:2]
    return labels, valid, skip


def ctc_log_likelihood_batch(
    log_probs: torch.Tensor,
    lengths: Sequence[int],
    targets: Sequence[Sequence[int]],
) -> torch.Tensor:
    """Batched log p(y|x) by the 2|y|+1 state forward recursion.

    ``log_probs`` is ``(B, T, V)``; example ``b`` uses its first
    ``lengths[b]`` rows. Infeasible pairs come back as ``-inf``.
    """
    lp = log_probs.double()
    B, T, V = lp.shape
    labels, valid, skip = _label_states(targets, lp.device)
    S = labels.shape[1]
    lengths_t = torch.as_tensor(list(lengths), dtype=torch.long, device=lp.device)
    emit = lp.gather(2, labels.unsqueeze(1).expand(B, T, S)).clamp_min(NEG_INF)

    neg = torch.full((B, S), NEG_INF, dtype=lp.dtype, device=lp.device)
    start = torch.zeros(B, S, dtype=torch.bool, device=lp.device)
    start[:, : min(2, S)] = True
    alpha = torch.where(start & valid, emit[:, 0], neg)
    pad1 = torch.full((B, 1), NEG_INF, dtype=lp.dtype, device=lp.device)
    pad2 = torch.full((B, 2), NEG_INF, dtype=lp.dtype, device=lp.device)
    for t in range(1, T):
        from1 = torch.cat([pad1, alpha[:, :-1]], dim=1)
        from2 = torch.where(skip, torch.cat([pad2, alpha[:, :-2]], dim=1)[:, :S], neg)
        step = torch.logsumexp(torch.stack([alpha, from1, from2]), dim=0) + emit[:, t]
        step = torch.where(valid, step, neg)
        alpha = torch.where((lengths_t > t).unsqueeze(1), step, alpha)

    n = torch.tensor([len(y) for y in targets], dtype=torch.long, device=lp.device)
    last = alpha.gather(1, (2 * n).unsqueeze(1)).squeeze(1)
    prev = alpha.gather(1, (2 * n - 1).clamp_min(0).unsqueeze(1)).squeeze(1)
    prev = torch.where(n > 0, prev, torch.full_like(prev, NEG_INF))
    total = torch.logaddexp(last, prev)
    return torch.where(total < NEG_INF / 2, torch.full_like(total, -math.inf), total)


def ctc_log_prob(y: Sequence[int], log_probs) -> torch.Tensor:
    """log of the total probability of all alignments collapsing to ``y``."""
    lp = _as_posterior(log_probs)
    y = _check_target(y, lp.shape[1])
    return ctc_log_likelihood_batch(lp.unsqueeze(0), [lp.shape[0]], [y])[0]


def viterbi_batch(
    log_probs: torch.Tensor,
    lengths: Sequence[int],
    targets: Sequence[Sequence[int]],
) -> tuple[list[Optional[list[int]]], torch.Tensor]:
    """Most probable alignment in beta(y; T_b) for each batch element.

    Ties prefer a blank predecessor state, then staying in place. Infeasible
    elements yield ``None``. Returns the alignments and their log scores.
    """
    lp = log_probs.detach().double()
    B, T, V = lp.shape
    labels, valid, skip = _label_states(targets, lp.device)
    S = labels.shape[1]
    lengths_t = torch.as_tensor(list(lengths), dtype=torch.long, device=lp.device)
    emit = lp.gather(2, labels.unsqueeze(1).expand(B, T, S)).clamp_min(NEG_INF)
    odd = torch.zeros(S, dtype=torch.bool, device=lp.device)
    odd[1::2] = True

    neg = torch.full((B, S), NEG_INF, dtype=lp.dtype, device=lp.device)
    start = torch.zeros(B, S, dtype=torch.bool, device=lp.device)
    start[:, : min(2, S)] = True
    score = torch.where(start & valid, emit[:, 0], neg)
    back = torch.zeros(B, T, S, dtype=torch.long, device=lp.device)
    shift_of = torch.tensor([[0, 1, 2], [1, 0, 2]], device=lp.device)  # row 1 for label states
    pad1 = torch.full((B, 1), NEG_INF, dtype=lp.dtype, device=lp.device)
    pad2 = torch.full((B, 2), NEG_INF, dtype=lp.dtype, device=lp.device)
    for t in range(1, T):
        stay = score
        from1 = torch.cat([pad1, score[:, :-1]], dim=1)
        from2 = torch.where(skip, torch.cat([pad2, score[:, :-2]], dim=1)[:, :S], neg)
        # candidates in order of preference; argmax keeps the first maximum
        first = torch.where(odd, from1, stay)
        second = torch.where(odd, stay, from1)
        cand = torch.stack([first, second, from2], dim=-1)
        best, choice = cand.max(dim=-1)
        shift = shift_of[odd.long()].expand(B, S, 3).gather(2, choice.unsqueeze(-1)).squeeze(-1)
        active = (lengths_t > t).unsqueeze(1)
        score = torch.where(active, torch.where(valid, best + emit[:, t], neg), score)
        back[:, t] = torch.where(active, shift, torch.zeros_like(shift))

    results: list[Optional[list[int]]] = []
    scores = torch.empty(B, dtype=torch.float64)
    for b, y in enumerate(targets):
        n = len(y)
        s_last = 2 * n
        best_score = score[b, s_last]
        state = s_last
        if n > 0 and score[b, s_last - 1] > best_score:
            best_score = score[b, s_last - 1]
            state = s_last - 1
        if best_score < NEG_INF / 2:
            results.append(None)
            scores[b] = -math.inf
            continue
        Tb = int(lengths_t[b])
        path = [0] * Tb
        for t in range(Tb - 1, -1, -1):
            path[t] = int(labels[b, state])
            if t > 0:
                state -= int(back[b, t, state])
        results.append(path)
        scores[b] = best_score
    return results, scores


def viterbi_alignment(y: Sequence[int], log_probs) -> list[int]:
    """Argmax alignment among those collapsing to ``y``."""
    lp = _as_posterior(log_probs)
    y = _check_target(y, lp.shape[1])
    paths, _ = viterbi_batch(lp.unsqueeze(0), [lp.shape[0]], [y])
    if paths[0] is None:
        raise InfeasibleAlignmentError(
            f"no alignment of length {lp.shape[0]} collapses to a target of length {len(y)}"
        )
    return paths[0]


def alignment_log_prob(alignment: Sequence[int], log_probs) -> float:
    lp = _as_posterior(log_probs)
    idx = torch.as_tensor(list(alignment), dtype=torch.long)
    return float(lp[torch.arange(len(idx)), idx].sum())


# ---------------------------------------------------------------------------
# Expected bigram matching


@dataclass
class BigramTable:
    """Reference and expected counts over the bigrams of a target."""

    grams: list[tuple[int, int]]
    reference: torch.Tensor
    expected: torch.Tensor

    def as_dict(self) -> dict[tuple[int, int], tuple[int, float]]:
        return {
            g: (int(r), float(e)) for g, r, e in zip(self.grams, self.reference, self.expected)
        }


def _gap_matrices(lp: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Blank-gap products between position pairs.

    ``full[t, u]`` is the probability that every position strictly between
    ``t`` and ``u`` is blank (1 for ``u = t+1``), zero unless ``u > t``.
    ``gapped`` additionally zeroes ``u = t+1``.
    """
    T = lp.shape[0]
    blank = lp[:, BLANK]
    ar = torch.arange(T, device=lp.device)
    after = ar.unsqueeze(0) > ar.unsqueeze(1)  # [t, s]: s > t
    partial = torch.cumsum(torch.where(after, blank.unsqueeze(0), torch.zeros_like(blank).unsqueeze(0)), dim=1)
    gap = torch.cat([torch.zeros(T, 1, dtype=lp.dtype, device=lp.device), partial[:, :-1]], dim=1)
    zero = torch.zeros((), dtype=lp.dtype, device=lp.device)
    full = torch.where(after, gap.exp(), zero)
    gapped = torch.where(ar.unsqueeze(0) > ar.unsqueeze(1) + 1, gap.exp(), zero)
    return full, gapped


def _expected_counts(lp: torch.Tensor, grams: Sequence[tuple[int, int]]) -> torch.Tensor:
    if lp.shape[0] < 2 or not grams:
        return torch.zeros(len(grams), dtype=lp.dtype, device=lp.device)
    p = lp.exp()
    first = torch.tensor([g[0] for g in grams], dtype=torch.long, device=lp.device)
    second = torch.tensor([g[1] for g in grams], dtype=torch.long, device=lp.device)
    p1 = p[:, first].T  # (G, T)
    p2 = p[:, second].T
    full, gapped = _gap_matrices(lp)
    distinct = ((p1 @ full) * p2).sum(-1)
    same = ((p1 @ gapped) * p2).sum(-1)
    return torch.where(first == second, same, distinct)


def expected_bigram_counts(bigrams: Iterable[tuple[int, int]], log_probs) -> dict[tuple[int, int], torch.Tensor]:
    """Expected number of occurrences of each bigram in the collapsed output."""
    lp = _as_posterior(log_probs)
    grams = [(int(a), int(b)) for a, b in bigrams]
    for g in grams:
        if BLANK in g:
            raise LatticeError(f"bigram {g} contains the blank symbol")
    counts = _expected_counts(lp, grams)
    return {g: counts[i] for i, g in enumerate(grams)}


def bigram_table(y: Sequence[int], log_probs) -> BigramTable:
    lp = _as_posterior(log_probs)
    y = _check_target(y, lp.shape[1])
    ref = Counter(zip(y, y[1:]))
    grams = list(ref)
    reference = torch.tensor([ref[g] for g in grams], dtype=lp.dtype)
    return BigramTable(grams, reference, _expected_counts(lp, grams))


def nmla_loss(y: Sequence[int], log_probs) -> torch.Tensor:
    """Negative F1 of expected against reference bigram counts, in [-1, 0]."""
    if len(y) < 2:
        raise DegenerateTargetError("bigram matching needs a target of at least two tokens")
    table = bigram_table(y, log_probs)
    ref, exp = table.reference, table.expected
    # ties route the gradient through the expectation
    matched = torch.where(exp <= ref, exp, ref)
    return -2.0 * matched.sum() / (ref.sum() + exp.sum())


# ---------------------------------------------------------------------------
# Expected latency


def reservation_probs(log_probs: torch.Tensor) -> torch.Tensor:
    """Probability that each position survives collapsing.

    Works on ``(..., T, V)``. The first position has no predecessor and keeps
    ``1 - p(blank)``.
    """
    p = torch.as_tensor(log_probs).double().exp()
    keep = 1.0 - p[..., BLANK]
    repeat = (p[..., 1:, 1:] * p[..., :-1, 1:]).sum(-1)
    return torch.cat([keep[..., :1], keep[..., 1:] - repeat], dim=-1)


def moments(n_positions: int, lam: int, src_len: int, k: int = 0) -> torch.Tensor:
    """Source tokens observed at each alignment position (1-based chunks)."""
    chunk = torch.arange(n_positions, dtype=torch.long) // lam + 1
    return torch.clamp(chunk + k, max=src_len).double()


def expected_lag_terms(log_probs, lam: int, src_len: int, k: int = 0) -> tuple[torch.Tensor, torch.Tensor]:
    """E[tau] and E[sum m(i) 1(a_i)] over positions before the last chunk."""
    if src_len < 2:
        raise LatticeError("expected lagging needs a source of at least two tokens")
    lp = _as_posterior(log_probs)
    n = (src_len - 1) * lam
    if lp.shape[0] < n:
        raise LatticeError(f"posterior has {lp.shape[0]} rows, needs at least {n}")
    r = reservation_probs(lp)[:n]
    return r.sum(), (moments(n, lam, src_len, k) * r).sum()


def expected_al(log_probs, lam: int, src_len: int, k: int = 0, eps: float = EPS_DIV) -> torch.Tensor:
    """Ratio-of-expectations estimate of the expected Average Lagging."""
    e_tau, e_lag = expected_lag_terms(log_probs, lam, src_len, k)
    return (e_lag - 0.5 * src_len * (e_tau - 1.0)) / e_tau.clamp_min(eps)


def expected_al_batch(
    log_probs: torch.Tensor, src_lens: Sequence[int], lam: int, k: int = 0, eps: float = EPS_DIV
) -> torch.Tensor:
    """``expected_al`` for a padded ``(B, T, V)`` batch; returns ``(B,)``."""
    r = reservation_probs(log_probs)
    B, T = r.shape
    src = torch.as_tensor(list(src_lens), dtype=torch.long, device=r.device)
    if bool((src < 2).any()):
        raise LatticeError("expected lagging needs sources of at least two tokens")
    pos = torch.arange(T, device=r.device)
    chunk = (pos // lam + 1).unsqueeze(0)
    m = torch.minimum(chunk + k, src.unsqueeze(1)).double()
    mask = pos.unsqueeze(0) < ((src - 1) * lam).unsqueeze(1)
    r = torch.where(mask, r, torch.zeros_like(r))
    e_tau = r.sum(-1)
    e_lag = (m * r).sum(-1)
    return (e_lag - 0.5 * src.double() * (e_tau - 1.0)) / e_tau.clamp_min(eps)


def latency_loss(log_probs, l_min: float, lam: int, src_len: int, k: int = 0, eps: float = EPS_DIV) -> torch.Tensor:
    return clip_latency(expected_al(log_probs, lam, src_len, k, eps), l_min)


def clip_latency(al: torch.Tensor, l_min: float) -> torch.Tensor:
    """max(al, l_min) with zero gradient below the threshold."""
    if l_min == -math.inf:
        return al
    floor = torch.full_like(al, float(l_min))
    return torch.where(al > l_min, al, floor)
