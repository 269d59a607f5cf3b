"""Binary checkpoint format.

Layout (little endian)::

    b"NASTCKPT"  uint32 version
    uint32 config_len, config text (UTF-8, INI sections)
    uint32 n_tensors
    per tensor: uint32 name_len, name, uint32 rank, rank x uint32 dims,
                prod(dims) x float32 values
"""
from __future__ import annotations

import configparser
import io
import struct
from pathlib import Path
from typing import BinaryIO, Optional

import numpy as np
import torch

from .model import ModelConfig, NASTModel
from .vocab import Vocab

MAGIC = b"NASTCKPT"
VERSION = 1


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    def __init__(self, message: str, tensor: Optional[str] = None):
        super().__init__(message)
        self.tensor = tensor


class UnknownTensorError(CheckpointError):
    def __init__(self, name: str):
        super().__init__(f"checkpoint holds unknown tensor {name!r}")
        self.tensor = name


def _config_text(model: NASTModel, vocab: Optional[Vocab], extra: Optional[dict]) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser["model"] = {k: str(v) for k, v in model.cfg.to_dict().items()}
    for name, values in (extra or {}).items():
        parser[name] = {k: "none" if v is None else str(v) for k, v in values.items()}
    if vocab is not None:
        parser["vocab"] = {"tokens": " ".join(vocab.itos[3:])}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def write_checkpoint(fh: BinaryIO, model: NASTModel, vocab: Optional[Vocab] = None, extra: Optional[dict] = None) -> None:
    config = _config_text(model, vocab, extra).encode("utf-8")
    state = model.state_dict()
    fh.write(MAGIC)
    fh.write(struct.pack("<I", VERSION))
    fh.write(struct.pack("<I", len(config)))
    fh.write(config)
    fh.write(struct.pack("<I", len(state)))
    for name, tensor in state.items():
        raw = name.encode("utf-8")
        arr = tensor.detach().cpu().numpy().astype("<f4", copy=False)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr).tobytes())


def save_checkpoint(path, model: NASTModel, vocab: Optional[Vocab] = None, extra: Optional[dict] = None) -> None:
    with open(path, "wb") as fh:
        write_checkpoint(fh, model, vocab, extra)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str, tensor: Optional[str] = None) -> bytes:
        if self.pos + n > len(self.data):
            where = f" in tensor {tensor!r}" if tensor else ""
            raise TruncatedCheckpointError(f"checkpoint truncated while reading {what}{where}", tensor)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str, tensor: Optional[str] = None) -> int:
        return struct.unpack("<I", self.take(4, what, tensor))[0]


def read_checkpoint(data: bytes) -> tuple[NASTModel, Optional[Vocab], dict]:
    r = _Reader(data)
    if len(data) < len(MAGIC) or r.take(len(MAGIC), "magic") != MAGIC:
        raise BadMagicError("not a NAST checkpoint (bad magic)")
    version = r.u32("version")
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint format version {version}, expected {VERSION}")
    text = r.take(r.u32("config length"), "config").decode("utf-8")
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(text)
    sections = {s: dict(parser[s]) for s in parser.sections()}
    cfg = ModelConfig.from_dict(sections.get("model", {}))
    vocab = None
    if "vocab" in sections:
        vocab = Vocab(sections["vocab"]["tokens"].split())
    model = NASTModel(cfg)
    expected = model.state_dict()
    loaded = {}
    for _ in range(r.u32("tensor count")):
        name = r.take(r.u32("tensor name length"), "tensor name").decode("utf-8")
        rank = r.u32("rank", name)
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, "dims", name))
        count = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(r.take(4 * count, "values", name), dtype="<f4").reshape(dims)
        if name not in expected:
            raise UnknownTensorError(name)
        if tuple(expected[name].shape) != tuple(dims):
            raise CheckpointError(f"tensor {name!r} has shape {dims}, model expects {tuple(expected[name].shape)}")
        loaded[name] = torch.from_numpy(values.astype(np.float32))
    missing = set(expected) - set(loaded)
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors: {sorted(missing)}")
    model.load_state_dict(loaded)
    return model, vocab, sections


def load_checkpoint(path) -> tuple[NASTModel, Optional[Vocab], dict]:
    return read_checkpoint(Path(path).read_bytes())


def checkpoint_roundtrip(model: NASTModel, vocab: Optional[Vocab] = None) -> tuple[NASTModel, Optional[Vocab], dict]:
    buf = io.BytesIO()
    write_checkpoint(buf, model, vocab)
    return read_checkpoint(buf.getvalue())
