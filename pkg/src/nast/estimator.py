"""scikit-learn style wrapper around vocab building, two-stage training and decoding."""
from __future__ import annotations

import copy
import logging
from typing import Optional, Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from .data import filter_feasible
from .metrics import PolicyRecord, corpus_bleu, latency_metrics
from .model import ModelConfig, NASTModel, evaluating
from .streaming import MODES, AlignmentChunkDecoder, ModelChunkDecoder, stream_translate
from .training import Trainer, TrainConfig, collate
from .vocab import Vocab

logger = logging.getLogger(__name__)


def check_sequences(X, name: str = "X", allow_empty_items: bool = False) -> list[list[str]]:
    """Normalize a corpus to a list of token lists.

    Accepts whitespace-tokenized strings or sequences of string tokens.
    """
    if isinstance(X, (str, bytes)):
        raise TypeError(f"{name} must be a sequence of sentences, not a single string")
    try:
        items = list(X)
    except TypeError:
        raise TypeError(f"{name} must be iterable, got {type(X).__name__}") from None
    if not items:
        raise ValueError(f"{name} is empty")
    out = []
    for i, item in enumerate(items):
        toks = item.split() if isinstance(item, str) else [str(t) for t in item]
        if not toks and not allow_empty_items:
            raise ValueError(f"{name}[{i}] is an empty sentence")
        out.append(toks)
    return out


def check_pairs(X, y) -> tuple[list[list[str]], list[list[str]]]:
    src = check_sequences(X, "X")
    tgt = check_sequences(y, "y")
    if len(src) != len(tgt):
        raise ValueError(f"X has {len(src)} sentences but y has {len(tgt)}")
    return src, tgt


class NASTTranslator(BaseEstimator):
    """Simultaneous translator trained with CTC, then bigram matching.

    With ``warm_start=True`` a second ``fit`` continues from the fitted
    model and vocabulary instead of starting over, which is how a stage-2
    run is stacked on a stage-1 run.
    """

    def __init__(
        self,
        lam: int = 3,
        k: int = 0,
        embed_dim: int = 64,
        enc_layers: int = 2,
        dec_layers: int = 2,
        heads: int = 4,
        ffn_dim: int = 128,
        dropout: float = 0.1,
        max_positions: int = 64,
        stage1_steps: int = 1000,
        stage2_steps: int = 0,
        batch_tokens: int = 1024,
        lr: float = 5e-4,
        stage2_lr: Optional[float] = None,
        warmup: int = 500,
        weight_decay: float = 0.01,
        label_smoothing: float = 0.01,
        glance_start: float = 0.5,
        glance_end: float = 0.3,
        glance_anneal_steps: int = 1000,
        l_min: Optional[float] = None,
        decode_mode: str = "literal",
        warm_start: bool = False,
        seed: int = 1,
        log_every: int = 0,
    ):
        self.lam = lam
        self.k = k
        self.embed_dim = embed_dim
        self.enc_layers = enc_layers
        self.dec_layers = dec_layers
        self.heads = heads
        self.ffn_dim = ffn_dim
        self.dropout = dropout
        self.max_positions = max_positions
        self.stage1_steps = stage1_steps
        self.stage2_steps = stage2_steps
        self.batch_tokens = batch_tokens
        self.lr = lr
        self.stage2_lr = stage2_lr
        self.warmup = warmup
        self.weight_decay = weight_decay
        self.label_smoothing = label_smoothing
        self.glance_start = glance_start
        self.glance_end = glance_end
        self.glance_anneal_steps = glance_anneal_steps
        self.l_min = l_min
        self.decode_mode = decode_mode
        self.warm_start = warm_start
        self.seed = seed
        self.log_every = log_every

    # -- configuration -----------------------------------------------------

    def _validate_params(self) -> None:
        if self.decode_mode not in MODES:
            raise ValueError(f"decode_mode must be one of {MODES}, got {self.decode_mode!r}")
        if self.stage1_steps < 0 or self.stage2_steps < 0:
            raise ValueError("step counts must be non-negative")
        if self.l_min is not None and self.l_min < 0:
            raise ValueError("l_min must be non-negative")

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            embed_dim=self.embed_dim,
            enc_layers=self.enc_layers,
            dec_layers=self.dec_layers,
            heads=self.heads,
            ffn_dim=self.ffn_dim,
            lam=self.lam,
            k=self.k,
            dropout=self.dropout,
            max_positions=self.max_positions,
        )

    def train_config(self, stage: int) -> TrainConfig:
        lr = self.lr if stage == 1 or self.stage2_lr is None else self.stage2_lr
        return TrainConfig(
            stage=stage,
            steps=self.stage1_steps if stage == 1 else self.stage2_steps,
            batch_tokens=self.batch_tokens,
            lr=lr,
            warmup=self.warmup,
            weight_decay=self.weight_decay,
            label_smoothing=self.label_smoothing,
            glance_start=self.glance_start,
            glance_end=self.glance_end,
            glance_anneal_steps=self.glance_anneal_steps,
            l_min=self.l_min,
            k=self.k,
            seed=self.seed,
            log_every=self.log_every,
        )

    # -- fitting -----------------------------------------------------------

    def fit(self, X, y, callback=None, log_file=None):
        self._validate_params()
        src, tgt = check_pairs(X, y)
        resume = self.warm_start and hasattr(self, "model_")
        if not resume:
            torch.manual_seed(self.seed)
            self.vocab_ = Vocab.build(src + tgt)
            self.model_ = NASTModel(self.model_config(len(self.vocab_)))
            self.history_ = []
        else:
            self.model_.cfg.k = self.k
        pairs = [(self.vocab_.encode(s), self.vocab_.encode(t)) for s, t in zip(src, tgt)]
        too_long = sum(len(s) > self.max_positions for s, _ in pairs)
        if too_long:
            raise ValueError(f"{too_long} source sentences exceed max_positions={self.max_positions}")
        pairs, self.n_filtered_ = filter_feasible(pairs, self.lam)
        if not pairs:
            raise ValueError("no sentence pair is feasible under the chunk upsample ratio")
        for stage, steps in ((1, self.stage1_steps), (2, self.stage2_steps)):
            if steps:
                trainer = Trainer(self.model_, self.train_config(stage), log_file)
                self.history_ += [dict(r, stage=stage) for r in trainer.train(pairs, steps, callback)]
        self.model_.eval()
        return self

    # -- decoding ----------------------------------------------------------

    def _encode_sources(self, X) -> list[list[int]]:
        check_is_fitted(self, ["model_", "vocab_"])
        src = check_sequences(X, "X")
        return [self.vocab_.encode(s) for s in src]

    @torch.no_grad()
    def alignments(self, X, k: Optional[int] = None, batch_size: int = 64) -> list[list[int]]:
        """Greedy raw alignments from full-source batched forward passes."""
        ids = self._encode_sources(X)
        k = self.k if k is None else k
        out: list[list[int]] = []
        model = self.model_
        with evaluating(model):
            for start in range(0, len(ids), batch_size):
                chunk = ids[start : start + batch_size]
                batch = collate([(s, []) for s in chunk])
                lp = model(batch.src, batch.src_lens, k=k)
                best = lp.argmax(-1)
                for b, s in enumerate(chunk):
                    out.append(best[b, : len(s) * self.lam].tolist())
        return out

    def stream(self, X, k: Optional[int] = None, mode: Optional[str] = None, incremental: bool = False):
        """Simulated streaming; returns ``(hypotheses, traces)`` with string tokens.

        ``incremental=True`` recomputes the model at every READ, exactly as a
        live session would. Otherwise each sentence's alignment comes from one
        full-source pass and is replayed through the same session logic;
        the chunk masks make the two agree.
        """
        k = self.k if k is None else k
        mode = self.decode_mode if mode is None else mode
        if mode not in MODES:
            raise ValueError(f"unknown collapse mode {mode!r}")
        ids = self._encode_sources(X)
        if incremental:
            decoders = [ModelChunkDecoder(self.model_, k) for _ in ids]
        else:
            decoders = [AlignmentChunkDecoder(a, self.lam) for a in self.alignments(X, k)]
        hyps, traces = [], []
        for src, dec in zip(ids, decoders):
            toks, trace = stream_translate(dec, src, k=k, mode=mode)
            hyps.append(self.vocab_.decode(toks))
            traces.append(trace.map_tokens(lambda t: self.vocab_.itos[t]))
        return hyps, traces

    def predict(self, X, k: Optional[int] = None, mode: Optional[str] = None) -> list[list[str]]:
        return self.stream(X, k=k, mode=mode)[0]

    def evaluate(self, X, y, k: Optional[int] = None, mode: Optional[str] = None) -> dict[str, float]:
        """BLEU, exact-match rate and mean latency metrics over a corpus."""
        src, ref = check_pairs(X, y)
        hyps, traces = self.stream(src, k=k, mode=mode)
        report = {
            "BLEU": corpus_bleu(hyps, ref),
            "exact_match": float(np.mean([h == r for h, r in zip(hyps, ref)])),
        }
        lat = {"AL": [], "AP": [], "CW": [], "DAL": []}
        empty = 0
        for tr in traces:
            if not tr.delays:
                empty += 1
                continue
            vals = latency_metrics(PolicyRecord.from_trace(tr), strict=False)
            for key in lat:
                lat[key].append(vals[key])
        for key, vals in lat.items():
            report[key] = float(np.mean(vals)) if vals else float("nan")
        report["empty_outputs"] = empty
        return report

    def score(self, X, y) -> float:
        return self.evaluate(X, y)["BLEU"]

    def clone_fitted(self, **params) -> "NASTTranslator":
        """Deep copy of a fitted estimator with some parameters changed."""
        if not hasattr(self, "model_"):
            raise NotFittedError("clone_fitted needs a fitted estimator")
        other = copy.deepcopy(self)
        return other.set_params(**params)
