"""Two-stage NAST training: CTC first, then bigram matching plus latency."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .lattice import (
    DegenerateTargetError,
    clip_latency,
    ctc_log_likelihood_batch,
    expected_al_batch,
    nmla_loss,
    viterbi_batch,
)
from .model import NASTModel, evaluating
from .numeric import PROB_FLOOR, floor_log_probs
from .vocab import PAD

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    stage: int = 1
    steps: int = 1000
    batch_tokens: int = 1024
    lr: float = 5e-4
    warmup: int = 500
    weight_decay: float = 0.01
    label_smoothing: float = 0.01
    glance_start: float = 0.5
    glance_end: float = 0.3
    glance_anneal_steps: int = 1000
    l_min: Optional[float] = None
    k: int = 0
    seed: int = 1
    clip_norm: float = 0.0
    prob_floor: Optional[float] = PROB_FLOOR
    log_every: int = 100
    ctc_drift_threshold: float = 1.0

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValueError("stage must be 1 or 2")

    @property
    def latency_active(self) -> bool:
        return self.stage == 2 and self.k == 0 and self.l_min is not None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, val in d.items():
            if key not in types:
                continue
            if isinstance(val, str):
                val = val.strip()
                if val.lower() in ("none", "", "-"):
                    val = None
            if val is None:
                kwargs[key] = None
            elif key in ("lr", "weight_decay", "label_smoothing", "glance_start", "glance_end",
                         "l_min", "clip_norm", "prob_floor", "ctc_drift_threshold"):
                kwargs[key] = float(val)
            else:
                kwargs[key] = int(val)
        return cls(**kwargs)


@dataclass
class Batch:
    src: torch.Tensor  # (B, S), PAD padded
    src_lens: torch.Tensor  # (B,)
    targets: list[list[int]]

    @property
    def size(self) -> int:
        return len(self.targets)


def collate(pairs: Sequence[tuple[Sequence[int], Sequence[int]]]) -> Batch:
    S = max(len(s) for s, _ in pairs)
    src = torch.full((len(pairs), S), PAD, dtype=torch.long)
    for b, (s, _) in enumerate(pairs):
        src[b, : len(s)] = torch.tensor(list(s), dtype=torch.long)
    lens = torch.tensor([len(s) for s, _ in pairs], dtype=torch.long)
    return Batch(src, lens, [list(t) for _, t in pairs])


def make_batches(pairs, batch_tokens: int, rng: np.random.Generator) -> list[Batch]:
    """Shuffle and pack pairs so padded token count stays under ``batch_tokens``."""
    order = rng.permutation(len(pairs))
    batches, current, longest = [], [], 0
    for i in order:
        src, tgt = pairs[i]
        size = max(len(src), len(tgt))
        if current and (len(current) + 1) * max(longest, size) > batch_tokens:
            batches.append(collate(current))
            current, longest = [], 0
        current.append(pairs[i])
        longest = max(longest, size)
    if current:
        batches.append(collate(current))
    return batches


# ---------------------------------------------------------------------------
# schedules and glancing


def anneal_ratio(step: int, start: float, end: float, anneal_steps: int) -> float:
    """Linear interpolation from ``start`` to ``end``, then held at ``end``."""
    if anneal_steps <= 0 or step >= anneal_steps:
        return end
    return start + (end - start) * step / anneal_steps


def inverse_sqrt(step: int, warmup: int) -> float:
    """LR multiplier: linear warmup, then decay with 1/sqrt(step)."""
    step = max(step, 1)
    if warmup <= 0:
        return 1.0
    if step < warmup:
        return step / warmup
    return math.sqrt(warmup / step)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class GlancingPlan:
    alignment: Optional[list[int]]
    positions: list[int] = field(default_factory=list)
    ratio: float = 0.0
    mismatches: int = 0


def glancing_replace(dec_ids, y, log_probs, ratio: float, rng: np.random.Generator):
    """Replace decoder inputs at sampled positions with the best alignment's tokens.

    ``dec_ids`` is the ``(T,)`` decoder input id sequence and ``log_probs``
    the model's current ``(T, V)`` posterior. The number of replaced
    positions is ``ratio`` times the Hamming distance between the greedy
    alignment and the best alignment of ``y``, rounded half up.
    """
    dec_ids = torch.as_tensor(dec_ids)
    lp = torch.as_tensor(log_probs)
    T = lp.shape[0]
    paths, _ = viterbi_batch(lp.unsqueeze(0), [T], [list(y)])
    best = paths[0]
    if best is None:
        return dec_ids.clone(), GlancingPlan(None, [], 0.0, 0)
    greedy = lp.argmax(-1)
    best_t = torch.tensor(best, dtype=torch.long)
    d = int((greedy != best_t).sum())
    n = _round_half_up(ratio * d)
    out = dec_ids.clone()
    positions: list[int] = []
    if n > 0:
        positions = sorted(int(p) for p in rng.choice(T, size=min(n, T), replace=False))
        out[positions] = best_t[positions]
    return out, GlancingPlan(best, positions, n / T if T else 0.0, d)


# ---------------------------------------------------------------------------
# losses


def _lengths(batch: Batch, lam: int) -> list[int]:
    return (batch.src_lens * lam).tolist()


def smoothing_term(log_probs: torch.Tensor, lengths: Sequence[int]) -> torch.Tensor:
    """Per-example mean over positions of KL(uniform || p)."""
    B, T, V = log_probs.shape
    lens = torch.as_tensor(list(lengths), device=log_probs.device)
    mask = torch.arange(T, device=log_probs.device).unsqueeze(0) < lens.unsqueeze(1)
    kl = -math.log(V) - log_probs.double().mean(-1)
    return (kl * mask).sum(-1) / lens


def stage1_loss(log_probs: torch.Tensor, batch: Batch, lam: int, smoothing: float = 0.0,
                prob_floor: Optional[float] = None) -> torch.Tensor:
    """Mean negative CTC log-likelihood plus optional smoothing regularizer."""
    lengths = _lengths(batch, lam)
    lp = floor_log_probs(log_probs, prob_floor)
    ll = ctc_log_likelihood_batch(lp, lengths, batch.targets)
    if not bool(torch.isfinite(ll).all()):
        bad = [i for i, v in enumerate(ll.tolist()) if not math.isfinite(v)]
        raise ValueError(f"infeasible target(s) reached the CTC loss at batch rows {bad}")
    loss = -ll
    if smoothing > 0:
        loss = loss + smoothing * smoothing_term(log_probs, lengths)
    return loss.mean()


def stage2_loss(log_probs: torch.Tensor, batch: Batch, lam: int, l_min: Optional[float], k: int = 0,
                prob_floor: Optional[float] = None, parts: Optional[dict] = None) -> torch.Tensor:
    """Mean of bigram-matching loss plus clipped expected lagging.

    The latency term is used only for ``k == 0`` with a threshold set, and
    only on sources of two or more tokens. Targets shorter than two tokens
    fall back to the CTC loss.
    """
    lengths = _lengths(batch, lam)
    lp = floor_log_probs(log_probs, prob_floor)
    per_example = []
    fallback = []
    for b, y in enumerate(batch.targets):
        rows = lp[b, : lengths[b]]
        try:
            per_example.append(nmla_loss(y, rows))
        except DegenerateTargetError:
            fallback.append(b)
            per_example.append(None)
    if fallback:
        ll = ctc_log_likelihood_batch(lp[fallback], [lengths[b] for b in fallback], [batch.targets[b] for b in fallback])
        for j, b in enumerate(fallback):
            per_example[b] = -ll[j]
    match = torch.stack(per_example)
    total = match
    lat_mean = None
    if k == 0 and l_min is not None:
        long_enough = (batch.src_lens >= 2).nonzero().flatten().tolist()
        lat = torch.zeros_like(match)
        if long_enough:
            al = expected_al_batch(lp[long_enough], batch.src_lens[long_enough].tolist(), lam, k=0)
            lat = lat.index_put((torch.tensor(long_enough),), clip_latency(al, l_min))
            lat_mean = float(al.detach().mean())
        total = match + lat
    if parts is not None:
        parts["nmla"] = float(match.detach().mean())
        parts["n_fallback"] = len(fallback)
        if lat_mean is not None:
            parts["expected_al"] = lat_mean
    return total.mean()


@torch.no_grad()
def validation_ctc(model: NASTModel, pairs, batch_tokens: int = 2048) -> float:
    """Mean negative CTC log-likelihood with dropout off."""
    total, n = 0.0, 0
    with evaluating(model):
        for batch in make_batches(pairs, batch_tokens, np.random.default_rng(0)):
            lp = model(batch.src, batch.src_lens)
            ll = ctc_log_likelihood_batch(lp, _lengths(batch, model.lam), batch.targets)
            total += float(-ll.sum())
            n += batch.size
    return total / max(n, 1)


# ---------------------------------------------------------------------------
# loop


class Trainer:
    """Optimizes a NAST model for one stage.

    ``train`` runs until ``cfg.steps`` updates or until ``callback`` returns
    True. Each logged record holds the step, learning rate and loss parts.
    """

    def __init__(self, model: NASTModel, cfg: TrainConfig, log_file=None):
        self.model = model
        self.cfg = cfg
        self.log_file = log_file
        self.rng = np.random.default_rng(cfg.seed)
        torch.manual_seed(cfg.seed)
        self.optimizer = torch.optim.AdamW(
            model.parameters(), lr=cfg.lr, betas=(0.9, 0.98), eps=1e-8, weight_decay=cfg.weight_decay
        )
        self.scheduler = torch.optim.lr_scheduler.LambdaLR(
            self.optimizer, lambda s: inverse_sqrt(s + 1, cfg.warmup)
        )
        self.step_count = 0
        self.history: list[dict] = []
        self.glance_skipped = 0

    def glance(self, batch: Batch, ratio: float) -> Optional[torch.Tensor]:
        if ratio <= 0:
            return None
        model = self.model
        lam = model.lam
        with torch.no_grad(), evaluating(model):
            lp = model(batch.src, batch.src_lens, k=self.cfg.k)
        dec_ids = model.decoder_inputs(batch.src)
        lengths = _lengths(batch, lam)
        paths, _ = viterbi_batch(lp, lengths, batch.targets)
        greedy = lp.argmax(-1)
        for b, best in enumerate(paths):
            if best is None:
                self.glance_skipped += 1
                continue
            T = lengths[b]
            best_t = torch.tensor(best, dtype=torch.long)
            d = int((greedy[b, :T] != best_t).sum())
            n = _round_half_up(ratio * d)
            if n:
                pos = torch.as_tensor(self.rng.choice(T, size=min(n, T), replace=False))
                dec_ids[b, pos] = best_t[pos]
        return dec_ids

    def loss(self, batch: Batch, parts: dict) -> torch.Tensor:
        cfg = self.cfg
        ratio = (
            anneal_ratio(self.step_count, cfg.glance_start, cfg.glance_end, cfg.glance_anneal_steps)
            if cfg.stage == 1
            else cfg.glance_end
        )
        dec_ids = self.glance(batch, ratio)
        lp = self.model(batch.src, batch.src_lens, k=cfg.k, dec_ids=dec_ids)
        parts["glance_ratio"] = ratio
        if cfg.stage == 1:
            return stage1_loss(lp, batch, self.model.lam, cfg.label_smoothing, cfg.prob_floor)
        l_min = cfg.l_min if cfg.latency_active else None
        return stage2_loss(lp, batch, self.model.lam, l_min, cfg.k, cfg.prob_floor, parts)

    def step(self, batch: Batch) -> dict:
        self.model.train()
        parts: dict = {}
        loss = self.loss(batch, parts)
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        if self.cfg.clip_norm > 0:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.clip_norm)
        self.optimizer.step()
        self.scheduler.step()
        self.step_count += 1
        record = {"step": self.step_count, "loss": float(loss.detach()), "lr": self.scheduler.get_last_lr()[0], **parts}
        return record

    def _log(self, record: dict) -> None:
        line = " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in record.items())
        logger.info(line)
        if self.log_file is not None:
            self.log_file.write(line + "\n")
            self.log_file.flush()

    def train(
        self,
        pairs,
        steps: Optional[int] = None,
        callback: Optional[Callable[[int, "Trainer"], bool]] = None,
        valid_pairs=None,
        eval_every: int = 0,
    ) -> list[dict]:
        steps = self.cfg.steps if steps is None else steps
        if not pairs:
            raise ValueError("no training pairs")
        baseline = None
        if self.cfg.stage == 2 and valid_pairs:
            baseline = validation_ctc(self.model, valid_pairs)
            self._log({"step": self.step_count, "valid_ctc": baseline})
        drift_checked = False
        done = 0
        while done < steps:
            for batch in make_batches(pairs, self.cfg.batch_tokens, self.rng):
                record = self.step(batch)
                done += 1
                if self.cfg.log_every and self.step_count % self.cfg.log_every == 0:
                    self._log(record)
                self.history.append(record)
                if baseline is not None and not drift_checked and eval_every and done % eval_every == 0:
                    drift = validation_ctc(self.model, valid_pairs) - baseline
                    drift_checked = True
                    self._log({"step": self.step_count, "valid_ctc_drift": drift})
                    if drift > self.cfg.ctc_drift_threshold:
                        logger.warning("stage-2 warm start raised validation CTC loss by %.3f", drift)
                if callback is not None and callback(self.step_count, self):
                    return self.history
                if done >= steps:
                    break
        return self.history
