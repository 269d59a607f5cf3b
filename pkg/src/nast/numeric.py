"""Numeric substrate: stable reductions, probability floors and gradient checking.

Dense tensors and reverse-mode differentiation come from torch. This module
adds the handful of primitives the lattice losses rely on plus a central
finite-difference checker that is independent of autograd.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch

PROB_FLOOR = 1e-12
# finite stand-in for log(0) inside dynamic programs; keeps autograd free of nan
NEG_INF = -1e30


def log_sum_exp(values: Sequence[float]) -> float:
    """Shift-stable ``log(sum(exp(values)))``; all ``-inf`` input gives ``-inf``."""
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("log_sum_exp of an empty vector")
    top = max(vals)
    if top == -math.inf:
        return -math.inf
    if top == math.inf:
        return math.inf
    return top + math.log(math.fsum(math.exp(v - top) for v in vals))


def softmax_row(logits: Sequence[float]) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("softmax_row expects a non-empty vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("softmax_row got non-finite logits")
    e = np.exp(x - x.max())
    return e / e.sum()


def log_softmax(logits: torch.Tensor, dim: int = -1, floor: Optional[float] = None) -> torch.Tensor:
    """Log-softmax with an optional probability floor applied inside the log."""
    out = torch.log_softmax(logits, dim=dim)
    if floor is not None:
        out = out.clamp_min(math.log(floor))
    return out


def floor_log_probs(log_probs: torch.Tensor, floor: Optional[float] = PROB_FLOOR) -> torch.Tensor:
    if floor is None:
        return log_probs
    return log_probs.clamp_min(math.log(floor))


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)


def set_test_mode(threads: int = 1) -> None:
    """Pin reductions to a single deterministic schedule."""
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True)


@dataclass
class GradReport:
    max_rel_error: float
    passed: bool
    worst_index: Optional[int] = None
    tolerance: float = 1e-4
    failure: Optional[str] = None
    errors: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    def __bool__(self) -> bool:
        return self.passed


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def grad_check(
    loss_fn: Callable[[torch.Tensor], torch.Tensor],
    point,
    h: float = 1e-3,
    tol: float = 1e-4,
    grad=None,
    coords: Optional[Sequence[int]] = None,
) -> GradReport:
    """Compare an analytic gradient with central finite differences.

    ``loss_fn`` maps a float64 tensor shaped like ``point`` to a scalar. The
    analytic gradient is ``grad`` when given, otherwise torch autograd.
    ``coords`` restricts the probe to a subset of flat indices.
    """
    x0 = torch.as_tensor(np.asarray(point, dtype=np.float64)).clone()
    flat = x0.reshape(-1)
    idx = list(range(flat.numel())) if coords is None else list(coords)

    if grad is None:
        x = x0.clone().requires_grad_(True)
        value = loss_fn(x)
        if not torch.isfinite(value):
            return GradReport(math.inf, False, None, tol, "loss non-finite at the base point")
        (g,) = torch.autograd.grad(value, x, allow_unused=True)
        g = torch.zeros_like(x0) if g is None else g
        analytic = g.detach().reshape(-1).numpy()
    else:
        analytic = np.asarray(grad, dtype=np.float64).reshape(-1)

    numeric = np.zeros(len(idx))
    with torch.no_grad():
        for n, i in enumerate(idx):
            probes = []
            for sign in (1.0, -1.0):
                xp = flat.clone()
                xp[i] += sign * h
                val = float(loss_fn(xp.reshape(x0.shape)))
                if not math.isfinite(val):
                    return GradReport(math.inf, False, i, tol, f"loss non-finite at coordinate {i} ({'+' if sign > 0 else '-'}h)")
                probes.append(val)
            numeric[n] = (probes[0] - probes[1]) / (2 * h)

    errs = relative_error(analytic[idx], numeric)
    worst = int(np.argmax(errs)) if len(errs) else 0
    max_err = float(errs[worst]) if len(errs) else 0.0
    return GradReport(max_err, max_err < tol, idx[worst] if len(idx) else None, tol, None, errs)
