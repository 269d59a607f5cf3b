"""Randomized cross-checks: lattice DP against enumeration, gradients against finite differences."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .lattice import (
    alignment_log_prob,
    collapse,
    ctc_log_prob,
    expected_bigram_counts,
    expected_lag_terms,
    is_feasible,
    latency_loss,
    nmla_loss,
    viterbi_alignment,
)
from .numeric import grad_check
from .oracle import enumerate_oracle
from .training import Batch, stage1_loss


@dataclass
class SuiteResult:
    name: str
    checks: int = 0
    worst: float = 0.0
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def record(self, err: float, tol: float, what: str) -> None:
        self.checks += 1
        if not math.isfinite(err) or err > tol:
            self.failures.append(f"{what}: error {err:.3g} > {tol:g}")
        if math.isfinite(err):
            self.worst = max(self.worst, err)
        else:
            self.worst = math.inf

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.checks} checks, worst error {self.worst:.3g}"


def random_posterior(rng: np.random.Generator, T: int, V: int, scale: float = 2.0) -> torch.Tensor:
    logits = torch.as_tensor(rng.normal(0.0, scale, size=(T, V)))
    return torch.log_softmax(logits, dim=-1)


def random_target(rng: np.random.Generator, T: int, V: int, max_len: Optional[int] = None) -> list[int]:
    """A target feasible in ``T`` slots over labels ``1..V-1``."""
    while True:
        n = int(rng.integers(0, (max_len if max_len is not None else T) + 1))
        y = rng.integers(1, V, size=n).tolist()
        if is_feasible(y, T):
            return y


def _abs_rel(a: float, b: float) -> float:
    """Absolute error for small values, relative above one."""
    return abs(a - b) / max(1.0, abs(b))


def lattice_oracle_suite(n: int = 500, seed: int = 0, tol: float = 1e-6, max_T: int = 8, max_V: int = 4) -> SuiteResult:
    """Compare every lattice quantity with brute-force enumeration on random instances."""
    rng = np.random.default_rng(seed)
    res = SuiteResult("lattice-oracle")
    for i in range(n):
        V = int(rng.integers(2, max_V + 1))
        lam = int(rng.integers(1, 4))
        src_len = int(rng.integers(2, max(2, max_T // lam) + 1))
        T = min(lam * src_len, max_T)
        src_len = T // lam
        if src_len < 2:
            lam, src_len = 1, T
        k = int(rng.integers(0, 3))
        lp = random_posterior(rng, T, V, scale=float(rng.uniform(0.5, 3.0)))
        y = random_target(rng, T, V)

        got = float(ctc_log_prob(y, lp).exp())
        want = enumerate_oracle(lp, "marginal", y=y)
        res.record(_abs_rel(got, want), tol, f"#{i} marginal")

        grams = [tuple(int(v) for v in rng.integers(1, V, size=2)) for _ in range(2)]
        counts = expected_bigram_counts(grams, lp)
        for g in grams:
            res.record(_abs_rel(float(counts[g]), enumerate_oracle(lp, "bigram", bigram=g)), tol, f"#{i} bigram {g}")

        if src_len >= 2:
            e_tau, e_lag = expected_lag_terms(lp, lam, src_len, k)
            res.record(_abs_rel(float(e_tau), enumerate_oracle(lp, "tau", lam=lam, src_len=src_len, k=k)), tol, f"#{i} E[tau]")
            res.record(
                _abs_rel(float(e_lag), enumerate_oracle(lp, "lag_sum", lam=lam, src_len=src_len, k=k)), tol, f"#{i} E[lag]"
            )

        path = viterbi_alignment(y, lp)
        best, best_lp = enumerate_oracle(lp, "argmax", y=y)
        # ties may pick a different path; the score must match and the path must be valid
        res.record(_abs_rel(alignment_log_prob(path, lp), best_lp), tol, f"#{i} viterbi score")
        if collapse(path) != list(y):
            res.failures.append(f"#{i} viterbi path does not collapse to the target")
    return res


def gradient_suite(n: int = 50, seed: int = 0, tol: float = 1e-4, h: float = 1e-5) -> SuiteResult:
    """Finite-difference checks of the CTC, bigram-matching and latency losses w.r.t. logits."""
    rng = np.random.default_rng(seed)
    res = SuiteResult("gradients")
    for i in range(n):
        V = int(rng.integers(3, 6))
        lam = int(rng.integers(1, 4))
        src_len = int(rng.integers(2, 4))
        T = lam * src_len
        logits = rng.normal(0.0, 1.0, size=(T, V))
        y = random_target(rng, T, V)
        while len(y) < 2:
            y = random_target(rng, T, V)

        batch = Batch(torch.ones(1, src_len, dtype=torch.long), torch.tensor([src_len]), [y])
        rep = grad_check(
            lambda z: stage1_loss(torch.log_softmax(z, -1).unsqueeze(0), batch, lam, smoothing=0.01), logits, h=h, tol=tol
        )
        res.record(rep.max_rel_error, tol, f"#{i} stage-1 ({rep.failure or 'ok'})")

        rep = grad_check(lambda z: nmla_loss(y, torch.log_softmax(z, -1)), logits, h=h, tol=tol)
        res.record(rep.max_rel_error, tol, f"#{i} nmla ({rep.failure or 'ok'})")

        k = int(rng.integers(0, 2))
        # unclipped, then clipped everywhere (zero gradient on both sides)
        for l_min in (-math.inf, 1e3):
            rep = grad_check(
                lambda z: latency_loss(torch.log_softmax(z, -1), l_min, lam, src_len, k), logits, h=h, tol=tol
            )
            res.record(rep.max_rel_error, tol, f"#{i} latency l_min={l_min} ({rep.failure or 'ok'})")
    return res
