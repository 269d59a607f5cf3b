"""Tiny NAST transformer: causal encoder plus chunked non-autoregressive decoder."""
from __future__ import annotations

import contextlib
import math
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import torch
from torch import nn

from .vocab import PAD


class SourceLengthError(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    embed_dim: int = 64
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 4
    ffn_dim: int = 128
    lam: int = 3
    k: int = 0
    dropout: float = 0.1
    attn_dropout: float = 0.0
    max_positions: int = 64

    def __post_init__(self):
        if self.lam < 1:
            raise ValueError("chunk upsample ratio must be >= 1")
        if self.k < 0:
            raise ValueError("chunk wait k must be >= 0")
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, val in d.items():
            if key not in known:
                continue
            kwargs[key] = float(val) if key in ("dropout", "attn_dropout") else int(val)
        return cls(**kwargs)


def moment(i: int, lam: int, k: int, src_len: int) -> int:
    """Source tokens visible to every position of chunk ``i`` (1-based)."""
    if not 1 <= i <= src_len:
        raise ValueError(f"chunk index {i} outside 1..{src_len}")
    return min(i + k, src_len)


def build_masks(src_len: int, lam: int, k: int) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Boolean attention masks (True = may attend) for one source of length ``src_len``.

    Returns the encoder self mask ``(S, S)``, the block-causal decoder self
    mask ``(T, T)`` and the chunk wait-k cross mask ``(T, S)``, ``T = lam * S``.
    """
    if src_len < 1:
        raise ValueError("source must contain at least one token")
    enc = _causal(src_len)
    dec = _block_causal(src_len * lam, lam)
    cross = _cross(torch.tensor([src_len]), src_len, lam, k)[0]
    return enc, dec, cross


def _causal(n: int) -> torch.Tensor:
    return torch.ones(n, n, dtype=torch.bool).tril()


def _block_causal(T: int, lam: int) -> torch.Tensor:
    chunk = torch.arange(T) // lam
    return chunk.unsqueeze(0) <= chunk.unsqueeze(1)


def _cross(src_lens: torch.Tensor, S: int, lam: int, k: int) -> torch.Tensor:
    chunk = torch.arange(S * lam) // lam + 1
    m = torch.minimum(chunk.unsqueeze(0) + k, src_lens.unsqueeze(1))  # (B, T)
    return torch.arange(S).view(1, 1, S) < m.unsqueeze(-1)


def sinusoidal(n: int, dim: int) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float32).unsqueeze(1)
    rate = torch.exp(torch.arange(0, dim, 2, dtype=torch.float32) * (-math.log(10000.0) / dim))
    table = torch.zeros(n, dim)
    table[:, 0::2] = torch.sin(pos * rate)
    table[:, 1::2] = torch.cos(pos * rate)
    return table


class MultiheadAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, query: torch.Tensor, key: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        B, Tq, D = query.shape
        Tk = key.shape[1]
        q = self.q_proj(query).view(B, Tq, self.heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(key).view(B, Tk, self.heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(key).view(B, Tk, self.heads, self.head_dim).transpose(1, 2)
        scores = (q @ k.transpose(-1, -2)) / math.sqrt(self.head_dim)
        if mask.dim() == 2:
            mask = mask.unsqueeze(0)
        scores = scores.masked_fill(~mask.unsqueeze(1), float("-inf"))
        weights = self.dropout(torch.softmax(scores, dim=-1))
        out = (weights @ v).transpose(1, 2).reshape(B, Tq, D)
        return self.out_proj(out)


class FeedForward(nn.Sequential):
    def __init__(self, dim: int, hidden: int, dropout: float):
        super().__init__(nn.Linear(dim, hidden), nn.ReLU(), nn.Dropout(dropout), nn.Linear(hidden, dim))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.attn_norm = nn.LayerNorm(cfg.embed_dim)
        self.attn = MultiheadAttention(cfg.embed_dim, cfg.heads, cfg.attn_dropout)
        self.ffn_norm = nn.LayerNorm(cfg.embed_dim)
        self.ffn = FeedForward(cfg.embed_dim, cfg.ffn_dim, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, mask):
        h = self.attn_norm(x)
        x = x + self.drop(self.attn(h, h, mask))
        return x + self.drop(self.ffn(self.ffn_norm(x)))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.self_norm = nn.LayerNorm(cfg.embed_dim)
        self.self_attn = MultiheadAttention(cfg.embed_dim, cfg.heads, cfg.attn_dropout)
        self.cross_norm = nn.LayerNorm(cfg.embed_dim)
        self.cross_attn = MultiheadAttention(cfg.embed_dim, cfg.heads, cfg.attn_dropout)
        self.ffn_norm = nn.LayerNorm(cfg.embed_dim)
        self.ffn = FeedForward(cfg.embed_dim, cfg.ffn_dim, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, h, enc, self_mask, cross_mask):
        z = self.self_norm(h)
        h = h + self.drop(self.self_attn(z, z, self_mask))
        h = h + self.drop(self.cross_attn(self.cross_norm(h), enc, cross_mask))
        return h + self.drop(self.ffn(self.ffn_norm(h)))


class NASTModel(nn.Module):
    """Unidirectional encoder and lambda-upsampled chunk decoder.

    Source and target share one blank-extended vocabulary and one embedding
    table; the output projection is tied to it.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        D = cfg.embed_dim
        self.embed = nn.Embedding(cfg.vocab_size, D, padding_idx=PAD)
        nn.init.normal_(self.embed.weight, mean=0.0, std=D**-0.5)
        with torch.no_grad():
            self.embed.weight[PAD].zero_()
        self.register_buffer("positions", sinusoidal(cfg.max_positions * cfg.lam, D), persistent=False)
        self.encoder = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.enc_layers))
        self.enc_norm = nn.LayerNorm(D)
        self.decoder = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.dec_layers))
        self.dec_norm = nn.LayerNorm(D)
        self.drop = nn.Dropout(cfg.dropout)

    @property
    def lam(self) -> int:
        return self.cfg.lam

    def _check_length(self, S: int) -> None:
        if S > self.cfg.max_positions:
            raise SourceLengthError(f"source length {S} exceeds max_positions={self.cfg.max_positions}")

    def _embed(self, ids: torch.Tensor) -> torch.Tensor:
        x = self.embed(ids) * math.sqrt(self.cfg.embed_dim)
        return self.drop(x + self.positions[: ids.shape[1]])

    def encode(self, src: torch.Tensor) -> torch.Tensor:
        """``(B, S)`` ids -> ``(B, S, D)`` states; state i sees only ``x[:i+1]``."""
        self._check_length(src.shape[1])
        x = self._embed(src)
        mask = _causal(src.shape[1]).to(src.device)
        for layer in self.encoder:
            x = layer(x, mask)
        return self.enc_norm(x)

    def decoder_inputs(self, src: torch.Tensor) -> torch.Tensor:
        return src.repeat_interleave(self.cfg.lam, dim=1)

    def decode(
        self,
        enc: torch.Tensor,
        src_lens: torch.Tensor,
        dec_ids: torch.Tensor,
        k: Optional[int] = None,
    ) -> torch.Tensor:
        k = self.cfg.k if k is None else k
        S = enc.shape[1]
        h = self._embed(dec_ids)
        self_mask = _block_causal(dec_ids.shape[1], self.cfg.lam).to(enc.device)
        cross_mask = _cross(src_lens, S, self.cfg.lam, k).to(enc.device)
        for layer in self.decoder:
            h = layer(h, enc, self_mask, cross_mask)
        logits = self.dec_norm(h) @ self.embed.weight.T
        return torch.log_softmax(logits, dim=-1)

    def forward(
        self,
        src: torch.Tensor,
        src_lens: torch.Tensor,
        k: Optional[int] = None,
        dec_ids: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        """Alignment log-posterior ``(B, lam * S, V)`` for a padded batch."""
        enc = self.encode(src)
        if dec_ids is None:
            dec_ids = self.decoder_inputs(src)
        return self.decode(enc, src_lens, dec_ids, k)

    # -- single-sentence inference on a fixed-width canvas ------------------
    #
    # Every inference call runs at width max_positions so that outputs are
    # bitwise independent of how much of the source is known.

    def _canvas(self, src: Sequence[int], n_visible: Optional[int]) -> tuple[torch.Tensor, int]:
        src = list(src)
        n = len(src) if n_visible is None else n_visible
        if not 1 <= n <= len(src):
            raise ValueError(f"n_visible={n} outside 1..{len(src)}")
        self._check_length(n)
        canvas = torch.full((1, self.cfg.max_positions), PAD, dtype=torch.long)
        canvas[0, :n] = torch.tensor(src[:n], dtype=torch.long)
        return canvas, n

    @torch.no_grad()
    def infer(self, src: Sequence[int], n_visible: Optional[int] = None, k: Optional[int] = None):
        """Encoder states ``(n, D)`` and log-posterior ``(lam * n, V)`` with the first ``n`` tokens known."""
        canvas, n = self._canvas(src, n_visible)
        with evaluating(self):
            enc = self.encode(canvas)
            lp = self.decode(enc, torch.tensor([n]), self.decoder_inputs(canvas), k)
        return enc[0, :n], lp[0, : n * self.cfg.lam]

    def posterior(self, src: Sequence[int], n_visible: Optional[int] = None, k: Optional[int] = None) -> torch.Tensor:
        return self.infer(src, n_visible, k)[1]

    def encoder_states(self, src: Sequence[int], n_visible: Optional[int] = None) -> torch.Tensor:
        return self.infer(src, n_visible)[0]


@contextlib.contextmanager
def evaluating(module: nn.Module):
    was_training = module.training
    module.eval()
    try:
        yield module
    finally:
        module.train(was_training)
