import numpy as np
import pytest
import torch

from nast.lattice import collapse
from nast.model import ModelConfig, NASTModel
from nast.streaming import (
    AlignmentChunkDecoder,
    ModelChunkDecoder,
    ReadWriteTrace,
    SessionStateError,
    StreamSession,
    TraceEvent,
    merge_chunk,
    merge_offline,
    offline_reference_decode,
    read_traces,
    stream_translate,
    write_traces,
)

A, B, C = 3, 4, 5


class RecordingDecoder(AlignmentChunkDecoder):
    def __init__(self, alignment, lam):
        super().__init__(alignment, lam)
        self.calls = []

    def chunks(self, source, n_visible, indices):
        self.calls.append((n_visible, list(indices)))
        return super().chunks(source, n_visible, indices)


def test_push_examples():
    s = StreamSession(AlignmentChunkDecoder([A, A, 0, 0], 2), k=0)
    assert s.push(7) == [A]
    assert s.push(8) == []


def test_literal_merge_drops_repeated_boundary_token():
    assert merge_chunk([A, B], None, [B, C], "literal") == [C]
    assert merge_chunk([A, B], B, [B, C], "exact") == [C]
    assert merge_chunk([A, B], 0, [B, C], "exact") == [B, C]
    with pytest.raises(ValueError):
        merge_chunk([], None, [A], "other")


def test_divergence_case():
    raw = [A, 0, A, B]
    assert merge_offline(raw, 2, "literal") == [A, B]
    assert merge_offline(raw, 2, "exact") == [A, A, B]
    for mode, want in (("literal", [A, B]), ("exact", [A, A, B])):
        out, _ = stream_translate(AlignmentChunkDecoder(raw, 2), [9, 9], k=0, mode=mode)
        assert out == want


def test_modes_agree_without_blank_boundaries():
    raw = [A, A, A, B, C, 0]
    assert merge_offline(raw, 2, "literal") == merge_offline(raw, 2, "exact")
    assert merge_offline([A, 0, A], 3, "literal") == merge_offline([A, 0, A], 3, "exact") == [A, A]


def test_finalize_schedule():
    dec = RecordingDecoder([A] * 10, 2)
    s = StreamSession(dec, k=2)
    for t in range(5):
        s.push(t + 3)
    s.finalize()
    assert dec.calls[-1] == (5, [4, 5])
    # k=0: every chunk is decoded on its own push; nothing is left for finalize
    dec = RecordingDecoder([A] * 6, 2)
    s = StreamSession(dec, k=0)
    for t in range(3):
        s.push(t + 3)
    assert dec.calls == [(1, [1]), (2, [2]), (3, [3])]
    assert s.finalize()[0] == []


def test_session_state_errors():
    s = StreamSession(AlignmentChunkDecoder([A, 0], 2))
    with pytest.raises(SessionStateError):
        s.finalize()
    s.push(3)
    s.finalize()
    with pytest.raises(SessionStateError):
        s.push(3)
    with pytest.raises(SessionStateError):
        s.finalize()


def test_streaming_equals_offline_on_random_alignments():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        lam = int(rng.integers(1, 4))
        n = int(rng.integers(1, 7))
        k = int(rng.integers(0, 4))
        raw = rng.integers(0, 3, size=lam * n).tolist()
        for mode in ("literal", "exact"):
            out, trace = stream_translate(AlignmentChunkDecoder(raw, lam), list(range(n)), k=k, mode=mode)
            assert out == merge_offline(raw, lam, mode)
            if mode == "exact":
                assert out == collapse(raw)
            assert len(trace.delays) == len(out)


def test_trace_validity():
    rng = np.random.default_rng(1)
    lam, n, k = 2, 6, 1
    raw = rng.integers(0, 4, size=lam * n).tolist()
    s = StreamSession(AlignmentChunkDecoder(raw, lam), k=k)
    chunk_of = []
    for t in range(n):
        before = len(s.prefix)
        s.push(t)
        chunk_of += [t + 1 - k] * (len(s.prefix) - before)
    before = len(s.prefix)
    s.finalize()
    g = s.trace.delays
    assert g == sorted(g)
    assert len(g) == len(s.prefix)
    for gi, ci in zip(g, chunk_of):
        assert gi >= min(ci + k, n)


def test_trace_serialization(tmp_path):
    tr = ReadWriteTrace()
    tr.read(1)
    tr.write("héllo", 1)
    tr.read(2)
    line = tr.events[1].to_json()
    assert TraceEvent.from_json(line) == tr.events[1]
    path = tmp_path / "t.jsonl"
    write_traces(path, [tr, tr])
    back = read_traces(path)
    assert [b.events for b in back] == [tr.events, tr.events]
    assert path.read_bytes().decode("utf-8").endswith("\n\n")


def test_model_streaming_matches_offline_and_cache():
    torch.manual_seed(0)
    model = NASTModel(ModelConfig(vocab_size=9, embed_dim=16, heads=2, ffn_dim=32, lam=2, max_positions=10)).eval()
    rng = np.random.default_rng(0)
    for k in (0, 2):
        for _ in range(5):
            src = rng.integers(3, 9, size=int(rng.integers(1, 9))).tolist()
            for mode in ("literal", "exact"):
                dec = ModelChunkDecoder(model, k)
                out, _ = stream_translate(dec, src, k=k, mode=mode)
                assert out == offline_reference_decode(model, src, mode, k=k)
            full = model.posterior(src, k=k)
            for i, rows in dec.cache.items():
                assert torch.equal(rows, full[(i - 1) * 2 : i * 2])
