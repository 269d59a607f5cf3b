"""Non-autoregressive streaming Transformer for simultaneous translation."""
from .estimator import NASTTranslator, check_sequences
from .lattice import (
    collapse,
    ctc_log_prob,
    expected_al,
    expected_bigram_counts,
    latency_loss,
    nmla_loss,
    reservation_probs,
    viterbi_alignment,
)
from .metrics import PolicyRecord, corpus_bleu, cross_count, hallucination_rate, latency_metrics, partition_by_difficulty
from .model import ModelConfig, NASTModel
from .streaming import StreamSession, offline_reference_decode, stream_translate
from .vocab import Vocab

__version__ = "0.1.0"

__all__ = [
    "NASTTranslator",
    "check_sequences",
    "collapse",
    "ctc_log_prob",
    "expected_al",
    "expected_bigram_counts",
    "latency_loss",
    "nmla_loss",
    "reservation_probs",
    "viterbi_alignment",
    "PolicyRecord",
    "corpus_bleu",
    "cross_count",
    "hallucination_rate",
    "latency_metrics",
    "partition_by_difficulty",
    "ModelConfig",
    "NASTModel",
    "StreamSession",
    "offline_reference_decode",
    "stream_translate",
    "Vocab",
]
